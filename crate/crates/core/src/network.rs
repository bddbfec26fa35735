//! The 3-conv-layer digit classifier: offline training, the exact reference
//! forward pass, the photonic forward pass built on the optical convolution
//! unit, evaluation, and scheduling onto a weighting-bank mesh.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::device_models::{build_vt_database, map_weights};
use crate::error::{Error, Result};
use crate::grid::Matrix;
use crate::ocu::{conv2d_optical, conv2d_reference, OcuConfig};

/// One convolution layer: K kernels of N x N taps over C input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernels: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    /// 2x2 max pool, stride 2, after the activation.
    pub pool: bool,
}

/// Network architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub classes: usize,
}

impl NetworkSpec {
    /// Feature-map side length after each conv layer (post pooling).
    pub fn layer_output_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        let mut out = Vec::new();
        for layer in &self.conv_layers {
            size = size - layer.kernel_size + 1;
            if layer.pool {
                size /= 2;
            }
            out.push(size);
        }
        out
    }

    /// Flattened feature-vector length at the classifier input.
    pub fn flatten_len(&self) -> usize {
        let sizes = self.layer_output_sizes();
        let last = *sizes.last().expect("at least one conv layer");
        last * last * self.conv_layers.last().unwrap().kernels
    }

    /// Input image size of layer `l` (the M of its 2-D convolutions).
    pub fn layer_input_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        let mut out = Vec::new();
        for layer in &self.conv_layers {
            out.push(size);
            size = size - layer.kernel_size + 1;
            if layer.pool {
                size /= 2;
            }
        }
        out
    }
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_size: 28,
            conv_layers: vec![
                ConvLayerSpec { kernels: 2, kernel_size: 3, in_channels: 1, pool: true },
                ConvLayerSpec { kernels: 4, kernel_size: 3, in_channels: 2, pool: true },
                ConvLayerSpec { kernels: 4, kernel_size: 3, in_channels: 4, pool: false },
            ],
            classes: 10,
        }
    }
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_accuracy: f64,
}

/// Trained parameters: nonnegative conv kernels plus a real-valued classifier.
#[derive(Debug, Clone)]
pub struct WeightsBundle {
    pub spec: NetworkSpec,
    /// kernels[layer][kernel][channel], each N x N.
    pub conv_kernels: Vec<Vec<Vec<Matrix>>>,
    /// Classifier weights, out-major: classes x flatten_len.
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    spec: NetworkSpec,
    meta: TrainingMeta,
    /// Order of the flat f64 payload.
    layout: String,
    values: usize,
}

const BUNDLE_LAYOUT: &str =
    "conv kernels layer-major, kernel-major, channel-major, row-major; then fc weights out-major; then fc bias";

impl WeightsBundle {
    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.conv_kernels {
            for kernel in layer {
                for channel in kernel {
                    out.extend_from_slice(channel.as_slice());
                }
            }
        }
        out.extend_from_slice(&self.fc_weights);
        out.extend_from_slice(&self.fc_bias);
        out
    }

    /// Write `<stem>.json` (metadata) and `<stem>.bin` (little-endian f64).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let values = self.flat_values();
        let header = BundleHeader {
            spec: self.spec.clone(),
            meta: self.meta.clone(),
            layout: BUNDLE_LAYOUT.to_string(),
            values: values.len(),
        };
        let json = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::Format(format!("bundle header: {e}")))?;
        let mut bin = Vec::with_capacity(values.len() * 8);
        for v in values {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(stem.with_extension("json"), json)?;
        fs::write(stem.with_extension("bin"), bin)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json = fs::read_to_string(stem.with_extension("json"))?;
        let header: BundleHeader =
            serde_json::from_str(&json).map_err(|e| Error::Format(format!("bundle header: {e}")))?;
        let bin = fs::read(stem.with_extension("bin"))?;
        if bin.len() != header.values * 8 {
            return Err(Error::Format(format!(
                "weights binary holds {} bytes, expected {}",
                bin.len(),
                header.values * 8
            )));
        }
        let mut values = bin
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

        let mut conv_kernels = Vec::new();
        for layer in &header.spec.conv_layers {
            let mut kernels = Vec::new();
            for _ in 0..layer.kernels {
                let mut channels = Vec::new();
                for _ in 0..layer.in_channels {
                    let data = take(layer.kernel_size * layer.kernel_size);
                    channels.push(Matrix::square(layer.kernel_size, data)?);
                }
                kernels.push(channels);
            }
            conv_kernels.push(kernels);
        }
        let flat = header.spec.flatten_len();
        let fc_weights = take(header.spec.classes * flat);
        let fc_bias = take(header.spec.classes);
        if fc_bias.len() != header.spec.classes {
            return Err(Error::Format("weights binary shorter than the layout".into()));
        }
        Ok(Self {
            spec: header.spec,
            conv_kernels,
            fc_weights,
            fc_bias,
            meta: header.meta,
        })
    }

    /// Classifier scores for a feature vector.
    pub fn classify(&self, ffv: &[f64]) -> Vec<f64> {
        let flat = self.spec.flatten_len();
        let mut scores: Vec<f64> = (0..self.spec.classes)
            .map(|k| {
                let row = &self.fc_weights[k * flat..(k + 1) * flat];
                row.iter().zip(ffv).map(|(&w, &x)| w * x).sum::<f64>() + self.fc_bias[k]
            })
            .collect();
        softmax(&mut scores);
        scores
    }
}

fn softmax(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// 2x2 max pool, stride 2; odd trailing rows/columns are dropped.
fn max_pool2(m: &Matrix) -> Matrix {
    let side = m.rows() / 2;
    let mut out = Matrix::zeros(side, side);
    for r in 0..side {
        for c in 0..side {
            let v = m
                .get(2 * r, 2 * c)
                .max(m.get(2 * r, 2 * c + 1))
                .max(m.get(2 * r + 1, 2 * c))
                .max(m.get(2 * r + 1, 2 * c + 1));
            out.set(r, c, v);
        }
    }
    out
}

/// Flatten kernel-major, row-major.
fn flatten_maps(maps: &[Matrix]) -> Vec<f64> {
    let mut out = Vec::new();
    for m in maps {
        out.extend_from_slice(m.as_slice());
    }
    out
}

/// Per-layer feature maps, feature vector and class scores of one pass.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub feature_maps: Vec<Vec<Matrix>>,
    pub ffv: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ForwardResult {
    pub fn prediction(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Exact-arithmetic forward pass.
pub fn forward_reference(image: &Matrix, bundle: &WeightsBundle) -> Result<ForwardResult> {
    let mut inputs = vec![image.clone()];
    let mut feature_maps = Vec::new();
    for (layer_spec, layer_kernels) in bundle.spec.conv_layers.iter().zip(&bundle.conv_kernels) {
        if inputs.len() != layer_spec.in_channels {
            return Err(Error::Dimension(format!(
                "layer expects {} channels, got {}",
                layer_spec.in_channels,
                inputs.len()
            )));
        }
        let mut outputs = Vec::with_capacity(layer_spec.kernels);
        for kernel in layer_kernels {
            let mut acc: Option<Matrix> = None;
            for (input, channel_kernel) in inputs.iter().zip(kernel) {
                let conv = conv2d_reference(input, channel_kernel)?;
                acc = Some(match acc {
                    None => conv,
                    Some(a) => {
                        let mut sum = a;
                        for (idx, v) in conv.as_slice().iter().enumerate() {
                            let r = idx / sum.cols();
                            let c = idx % sum.cols();
                            sum.set(r, c, sum.get(r, c) + v);
                        }
                        sum
                    }
                });
            }
            let mut out = relu(&acc.expect("at least one channel"));
            if layer_spec.pool {
                out = max_pool2(&out);
            }
            outputs.push(out);
        }
        feature_maps.push(outputs.clone());
        inputs = outputs;
    }
    let ffv = flatten_maps(&inputs);
    let scores = bundle.classify(&ffv);
    Ok(ForwardResult { feature_maps, ffv, scores })
}

/// Replace every conv kernel with the transmission the weighting bank
/// realizes for it under `config` (database resolution, mapping mode).
/// The classifier is untouched. Forwarding through this bundle gives
/// FFV_reference + WeightingError exactly.
pub fn realized_bundle(bundle: &WeightsBundle, config: &OcuConfig) -> Result<WeightsBundle> {
    let db = build_vt_database(&config.mrr, config.v_max, config.dac_bits)?;
    let mut out = bundle.clone();
    for layer in out.conv_kernels.iter_mut() {
        for kernel in layer.iter_mut() {
            for channel in kernel.iter_mut() {
                let mapping = map_weights(&db, channel, config.mapping_mode)?;
                *channel = mapping.realized_kernel();
            }
        }
    }
    Ok(out)
}

/// Weighting-bank mesh geometry: rows carry kernels, columns carry channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub rows: usize,
    pub cols: usize,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { rows: 4, cols: 4 }
    }
}

/// Occupancy of one layer on the mesh.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub periods: usize,
    /// Occupied bank fraction per period, averaged over the layer's periods.
    pub utilization: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSchedule {
    pub per_layer: Vec<LayerSchedule>,
    pub average_utilization: f64,
}

/// Group the C x K convolution passes of each layer onto the mesh.
pub fn mesh_schedule(spec: &NetworkSpec, mesh: &MeshSpec) -> Result<MeshSchedule> {
    if mesh.rows < 1 || mesh.cols < 1 {
        return Err(Error::Parameter("mesh must have at least one slot".into()));
    }
    let slots = mesh.rows * mesh.cols;
    let mut per_layer = Vec::new();
    for layer in &spec.conv_layers {
        let periods = layer.in_channels.div_ceil(mesh.cols) * layer.kernels.div_ceil(mesh.rows);
        let occupied = layer.in_channels * layer.kernels;
        per_layer.push(LayerSchedule {
            periods,
            utilization: occupied as f64 / (periods * slots) as f64,
        });
    }
    let average_utilization =
        per_layer.iter().map(|l| l.utilization).sum::<f64>() / per_layer.len() as f64;
    Ok(MeshSchedule { per_layer, average_utilization })
}

/// Aggregate nonidealities of a photonic forward pass.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhotonicDiagnostics {
    /// Optical periods spent per layer (serial single-OCU without a mesh).
    pub periods_per_layer: Vec<usize>,
    pub max_mapping_residual: f64,
    pub max_delay_rounding_s: f64,
    pub clipped_samples: usize,
}

/// Photonic forward pass result.
#[derive(Debug, Clone)]
pub struct PhotonicForward {
    pub ffv: Vec<f64>,
    pub scores: Vec<f64>,
    pub diagnostics: PhotonicDiagnostics,
}

impl PhotonicForward {
    pub fn prediction(&self) -> usize {
        argmax(&self.scores)
    }
}

/// Run every per-(channel, kernel) 2-D convolution through the optical unit;
/// channel summation, activation, pooling and the classifier stay digital.
/// A mesh changes scheduling (periods), never values.
pub fn forward_photonic(
    image: &Matrix,
    bundle: &WeightsBundle,
    config: &OcuConfig,
    mesh: Option<&MeshSpec>,
) -> Result<PhotonicForward> {
    let mut inputs = vec![image.clone()];
    let mut diag = PhotonicDiagnostics::default();
    for (layer_spec, layer_kernels) in bundle.spec.conv_layers.iter().zip(&bundle.conv_kernels) {
        let periods = match mesh {
            Some(m) => {
                layer_spec.in_channels.div_ceil(m.cols) * layer_spec.kernels.div_ceil(m.rows)
            }
            None => layer_spec.in_channels * layer_spec.kernels,
        };
        diag.periods_per_layer.push(periods);

        let mut outputs = Vec::with_capacity(layer_spec.kernels);
        for kernel in layer_kernels {
            let mut acc: Option<Matrix> = None;
            for (input, channel_kernel) in inputs.iter().zip(kernel) {
                // The modulator takes a normalized frame; undo digitally.
                let peak = input.max();
                let conv = if peak <= 0.0 {
                    let side = input.rows() - channel_kernel.rows() + 1;
                    Matrix::zeros(side, side)
                } else {
                    let normalized = input.map(|v| v / peak);
                    let (out, cdiag) = conv2d_optical(&normalized, channel_kernel, config)?;
                    for r in &cdiag.mapping.records {
                        diag.max_mapping_residual = diag.max_mapping_residual.max(r.residual.abs());
                    }
                    for e in &cdiag.delay_plan.entries {
                        diag.max_delay_rounding_s =
                            diag.max_delay_rounding_s.max(e.rounding_error_s.abs());
                    }
                    diag.clipped_samples += cdiag.clipped_samples;
                    out.map(|v| v * peak)
                };
                acc = Some(match acc {
                    None => conv,
                    Some(a) => {
                        let mut sum = a;
                        for (idx, v) in conv.as_slice().iter().enumerate() {
                            let r = idx / sum.cols();
                            let c = idx % sum.cols();
                            sum.set(r, c, sum.get(r, c) + v);
                        }
                        sum
                    }
                });
            }
            let mut out = relu(&acc.expect("at least one channel"));
            if layer_spec.pool {
                out = max_pool2(&out);
            }
            outputs.push(out);
        }
        inputs = outputs;
    }
    let ffv = flatten_maps(&inputs);
    let scores = bundle.classify(&ffv);
    Ok(PhotonicForward { ffv, scores, diagnostics: diag })
}

/// Which pipeline an evaluation runs.
#[derive(Debug, Clone)]
pub enum EvalMode {
    /// Exact digital forward with the trained kernels.
    Reference,
    /// Digital forward with the bank-realized kernels (weighting error only).
    Realized(OcuConfig),
    /// Full photonic simulation.
    Photonic(OcuConfig, Option<MeshSpec>),
}

/// Accuracy and confusion matrix over a labeled set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..self.confusion[0].len() {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in self.confusion.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluate a bundle over a dataset; samples run in parallel.
pub fn evaluate(dataset: &Dataset, bundle: &WeightsBundle, mode: &EvalMode) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Dimension("empty evaluation set".into()));
    }
    let realized = match mode {
        EvalMode::Realized(config) => Some(realized_bundle(bundle, config)?),
        _ => None,
    };
    let predictions: Result<Vec<usize>> = dataset
        .images
        .par_iter()
        .map(|img| {
            let image = Matrix::square(dataset.rows, img.clone())?;
            match mode {
                EvalMode::Reference => Ok(forward_reference(&image, bundle)?.prediction()),
                EvalMode::Realized(_) => {
                    Ok(forward_reference(&image, realized.as_ref().unwrap())?.prediction())
                }
                EvalMode::Photonic(config, mesh) => {
                    Ok(forward_photonic(&image, bundle, config, mesh.as_ref())?.prediction())
                }
            }
        })
        .collect();
    let predictions = predictions?;
    let classes = bundle.spec.classes;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0usize;
    for (&label, &pred) in dataset.labels.iter().zip(&predictions) {
        confusion[label as usize][pred] += 1;
        if label as usize == pred {
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / predictions.len() as f64,
        confusion,
        predictions,
    })
}

/// Pick the sampling offset minimizing the RMS error of the first layer's
/// optical convolutions against the exact reference on one image.
/// Exact ties resolve toward 0.5.
pub fn calibrate_sigma(
    image: &Matrix,
    bundle: &WeightsBundle,
    config: &OcuConfig,
    sigma_grid: &[f64],
) -> Result<f64> {
    if sigma_grid.is_empty() {
        return Err(Error::Parameter("empty sigma grid".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &sigma in sigma_grid {
        let cfg = OcuConfig { sigma, ..*config };
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for kernel in &bundle.conv_kernels[0] {
            let channel_kernel = &kernel[0];
            let (optical, _) = conv2d_optical(image, channel_kernel, &cfg)?;
            let reference = conv2d_reference(image, channel_kernel)?;
            for (a, b) in optical.as_slice().iter().zip(reference.as_slice()) {
                sq_sum += (a - b) * (a - b);
                count += 1;
            }
        }
        let rms = (sq_sum / count as f64).sqrt();
        let better = match best {
            None => true,
            Some((best_rms, best_sigma)) => {
                rms < best_rms
                    || (rms == best_rms
                        && (sigma - 0.5).abs() < (best_sigma - 0.5).abs())
            }
        };
        if better {
            best = Some((rms, sigma));
        }
    }
    Ok(best.unwrap().1)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Gradient workspace mirroring the bundle's conv kernels.
struct ConvGrads(Vec<Vec<Vec<Matrix>>>);

impl ConvGrads {
    fn zeros_like(bundle: &WeightsBundle) -> Self {
        Self(
            bundle
                .conv_kernels
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|kernel| {
                            kernel
                                .iter()
                                .map(|ch| Matrix::zeros(ch.rows(), ch.cols()))
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

/// Forward activations cached for backprop.
struct LayerCache {
    inputs: Vec<Matrix>,
    pre_activation: Vec<Matrix>,
    pooled: Vec<Matrix>,
}

fn forward_train(image: &Matrix, bundle: &WeightsBundle) -> Result<(Vec<LayerCache>, Vec<f64>)> {
    let mut inputs = vec![image.clone()];
    let mut caches = Vec::new();
    for (layer_spec, layer_kernels) in bundle.spec.conv_layers.iter().zip(&bundle.conv_kernels) {
        let mut pre = Vec::with_capacity(layer_spec.kernels);
        let mut pooled = Vec::with_capacity(layer_spec.kernels);
        for kernel in layer_kernels {
            let mut acc: Option<Matrix> = None;
            for (input, ck) in inputs.iter().zip(kernel) {
                let conv = conv2d_reference(input, ck)?;
                acc = Some(match acc {
                    None => conv,
                    Some(mut a) => {
                        for (idx, v) in conv.as_slice().iter().enumerate() {
                            let r = idx / a.cols();
                            let c = idx % a.cols();
                            a.set(r, c, a.get(r, c) + v);
                        }
                        a
                    }
                });
            }
            let z = acc.unwrap();
            let mut out = relu(&z);
            if layer_spec.pool {
                out = max_pool2(&out);
            }
            pre.push(z);
            pooled.push(out);
        }
        caches.push(LayerCache { inputs: inputs.clone(), pre_activation: pre.clone(), pooled: pooled.clone() });
        inputs = pooled;
    }
    Ok((caches, flatten_maps(&inputs)))
}

/// dL/dInput of a conv: full correlation of the upstream gradient with the
/// 180-degree-rotated kernel.
fn conv_input_grad(dz: &Matrix, kernel: &Matrix, input_side: usize) -> Matrix {
    let n = kernel.rows();
    let mut out = Matrix::zeros(input_side, input_side);
    for p in 0..input_side {
        for q in 0..input_side {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let (mi, mj) = (p as i64 - i as i64, q as i64 - j as i64);
                    if mi >= 0 && mj >= 0 && (mi as usize) < dz.rows() && (mj as usize) < dz.cols()
                    {
                        acc += dz.get(mi as usize, mj as usize) * kernel.get(i, j);
                    }
                }
            }
            out.set(p, q, acc);
        }
    }
    out
}

/// Route the pooled gradient back to the argmax positions.
fn pool_backward(d_pooled: &Matrix, pre_relu_activated: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(pre_relu_activated.rows(), pre_relu_activated.cols());
    for r in 0..d_pooled.rows() {
        for c in 0..d_pooled.cols() {
            let mut best = (2 * r, 2 * c);
            let mut best_v = pre_relu_activated.get(2 * r, 2 * c);
            for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                let v = pre_relu_activated.get(2 * r + dr, 2 * c + dc);
                if v > best_v {
                    best_v = v;
                    best = (2 * r + dr, 2 * c + dc);
                }
            }
            out.set(best.0, best.1, out.get(best.0, best.1) + d_pooled.get(r, c));
        }
    }
    out
}

/// Hyperparameters of the projected-SGD trainer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Learning-rate multiplier applied each epoch.
    pub lr_decay: f64,
    /// Epochs that train only the classifier before the conv kernels move.
    /// The zero-kernel state is absorbing under the nonnegativity clamp, so
    /// kernels must not follow the early, uninformative gradients.
    pub fc_warmup_epochs: usize,
    /// Conv learning rate as a fraction of the classifier's.
    pub conv_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 32,
            lr_decay: 0.93,
            fc_warmup_epochs: 3,
            conv_lr_scale: 0.1,
        }
    }
}

fn init_bundle(spec: &NetworkSpec, seed: u64) -> WeightsBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv_kernels = spec
        .conv_layers
        .iter()
        .map(|layer| {
            // Nonnegative kernels multiply nonnegative activations, so unit
            // layer gain needs mean weight ~ 1/fan_in, not He scaling.
            let fan_in = (layer.in_channels * layer.kernel_size * layer.kernel_size) as f64;
            let limit = 2.0 / fan_in;
            (0..layer.kernels)
                .map(|_| {
                    (0..layer.in_channels)
                        .map(|_| {
                            let data: Vec<f64> = (0..layer.kernel_size * layer.kernel_size)
                                .map(|_| rng.gen_range(0.0..limit))
                                .collect();
                            Matrix::square(layer.kernel_size, data).unwrap()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let flat = spec.flatten_len();
    let fc_limit = (6.0 / (flat + spec.classes) as f64).sqrt();
    let fc_weights = (0..spec.classes * flat)
        .map(|_| rng.gen_range(-fc_limit..fc_limit))
        .collect();
    let fc_bias = vec![0.0; spec.classes];
    WeightsBundle {
        spec: spec.clone(),
        conv_kernels,
        fc_weights,
        fc_bias,
        meta: TrainingMeta { seed, epochs: 0, final_train_accuracy: 0.0 },
    }
}

/// Train with SGD + momentum on cross-entropy; conv kernels are clamped to
/// >= 0 after every update so they stay realizable as transmissions.
/// Deterministic for a fixed seed. Errors if the final train accuracy stays
/// under 60%.
pub fn train_reference(
    dataset: &Dataset,
    spec: &NetworkSpec,
    epochs: usize,
    seed: u64,
    train_cfg: &TrainConfig,
) -> Result<WeightsBundle> {
    let bundle = fit(dataset, spec, epochs, seed, train_cfg)?;
    if bundle.meta.final_train_accuracy < 0.6 {
        return Err(Error::TrainingFailed(format!(
            "train accuracy {:.1}% below 60%",
            bundle.meta.final_train_accuracy * 100.0
        )));
    }
    Ok(bundle)
}

fn fit(
    dataset: &Dataset,
    spec: &NetworkSpec,
    epochs: usize,
    seed: u64,
    train_cfg: &TrainConfig,
) -> Result<WeightsBundle> {
    if dataset.is_empty() {
        return Err(Error::TrainingFailed("empty training set".into()));
    }
    for img in &dataset.images {
        if img.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Parameter("pixel outside [0,1]".into()));
        }
    }
    let mut bundle = init_bundle(spec, seed);
    let mut vel = ConvGrads::zeros_like(&bundle);
    let flat = spec.flatten_len();
    let mut fc_w_vel = vec![0.0; spec.classes * flat];
    let mut fc_b_vel = vec![0.0; spec.classes];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut lr = train_cfg.learning_rate;

    for epoch in 0..epochs {
        let conv_training = epoch >= train_cfg.fc_warmup_epochs;
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(train_cfg.batch_size) {
            let mut grads = ConvGrads::zeros_like(&bundle);
            let mut fc_w_grad = vec![0.0; spec.classes * flat];
            let mut fc_b_grad = vec![0.0; spec.classes];
            for &idx in batch {
                let image = Matrix::square(dataset.rows, dataset.images[idx].clone())?;
                let label = dataset.labels[idx] as usize;
                let (caches, ffv) = forward_train(&image, &bundle)?;
                let mut scores = bundle.classify(&ffv);
                scores[label] -= 1.0; // d cross-entropy / d logits

                for k in 0..spec.classes {
                    fc_b_grad[k] += scores[k];
                    for (x, g) in ffv.iter().zip(fc_w_grad[k * flat..(k + 1) * flat].iter_mut()) {
                        *g += scores[k] * x;
                    }
                }
                if !conv_training {
                    continue;
                }
                // gradient w.r.t. the flattened features
                let mut d_flat = vec![0.0; flat];
                for k in 0..spec.classes {
                    let row = &bundle.fc_weights[k * flat..(k + 1) * flat];
                    for (d, &w) in d_flat.iter_mut().zip(row) {
                        *d += scores[k] * w;
                    }
                }

                // unflatten into the last layer's pooled maps
                let last = caches.last().unwrap();
                let map_len = last.pooled[0].as_slice().len();
                let mut d_out: Vec<Matrix> = last
                    .pooled
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        Matrix::from_rows(
                            m.rows(),
                            m.cols(),
                            d_flat[k * map_len..(k + 1) * map_len].to_vec(),
                        )
                        .unwrap()
                    })
                    .collect();

                for l in (0..spec.conv_layers.len()).rev() {
                    let layer_spec = &spec.conv_layers[l];
                    let cache = &caches[l];
                    let mut d_inputs: Vec<Matrix> = cache
                        .inputs
                        .iter()
                        .map(|m| Matrix::zeros(m.rows(), m.cols()))
                        .collect();
                    for k in 0..layer_spec.kernels {
                        let activated = relu(&cache.pre_activation[k]);
                        let d_act = if layer_spec.pool {
                            pool_backward(&d_out[k], &activated)
                        } else {
                            d_out[k].clone()
                        };
                        // ReLU mask
                        let z = &cache.pre_activation[k];
                        let mut dz = Matrix::zeros(z.rows(), z.cols());
                        for r in 0..z.rows() {
                            for c in 0..z.cols() {
                                if z.get(r, c) > 0.0 {
                                    dz.set(r, c, d_act.get(r, c));
                                }
                            }
                        }
                        for c_in in 0..layer_spec.in_channels {
                            let x = &cache.inputs[c_in];
                            // dW = valid correlation of the input with dz
                            let dw = crate::grid::correlate_valid(x, &dz)?;
                            let g = &mut grads.0[l][k][c_in];
                            for r in 0..g.rows() {
                                for cc in 0..g.cols() {
                                    g.set(r, cc, g.get(r, cc) + dw.get(r, cc));
                                }
                            }
                            if l > 0 {
                                let dx =
                                    conv_input_grad(&dz, &bundle.conv_kernels[l][k][c_in], x.rows());
                                let d_in = &mut d_inputs[c_in];
                                for r in 0..x.rows() {
                                    for cc in 0..x.cols() {
                                        let v = d_in.get(r, cc) + dx.get(r, cc);
                                        d_in.set(r, cc, v);
                                    }
                                }
                            }
                        }
                    }
                    d_out = d_inputs;
                }
            }

            // momentum update + nonnegativity projection
            let scale = 1.0 / batch.len() as f64;
            if conv_training {
                let conv_lr = lr * train_cfg.conv_lr_scale;
                for l in 0..bundle.conv_kernels.len() {
                    for k in 0..bundle.conv_kernels[l].len() {
                        for c in 0..bundle.conv_kernels[l][k].len() {
                            let w = &mut bundle.conv_kernels[l][k][c];
                            let v = &mut vel.0[l][k][c];
                            let g = &grads.0[l][k][c];
                            for r in 0..w.rows() {
                                for cc in 0..w.cols() {
                                    let nv = train_cfg.momentum * v.get(r, cc)
                                        - conv_lr * g.get(r, cc) * scale;
                                    v.set(r, cc, nv);
                                    w.set(r, cc, (w.get(r, cc) + nv).max(0.0));
                                }
                            }
                        }
                    }
                }
            }
            for (w, (v, g)) in bundle
                .fc_weights
                .iter_mut()
                .zip(fc_w_vel.iter_mut().zip(&fc_w_grad))
            {
                *v = train_cfg.momentum * *v - lr * g * scale;
                *w += *v;
            }
            for (b, (v, g)) in bundle.fc_bias.iter_mut().zip(fc_b_vel.iter_mut().zip(&fc_b_grad)) {
                *v = train_cfg.momentum * *v - lr * g * scale;
                *b += *v;
            }
        }
        lr *= train_cfg.lr_decay;
    }

    let eval = evaluate(dataset, &bundle, &EvalMode::Reference)?;
    bundle.meta = TrainingMeta { seed, epochs, final_train_accuracy: eval.accuracy };
    Ok(bundle)
}
