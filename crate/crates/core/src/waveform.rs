//! Oversampled multi-wavelength intensity waveforms: modulation, weighting,
//! behavioral filter distortion, photodetection, quantization and output
//! sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::device_models::{transmission, MrrPhysical, WeightMapping};
use crate::error::{Error, Result};
use crate::ocu::sampling_index;

/// Multi-wavelength frame of intensity samples, one sequence per ring channel.
#[derive(Debug, Clone)]
pub struct WdmFrame {
    /// Per-channel intensity samples; channel (i-1)*N + (j-1) carries kernel
    /// element (i, j), 1-based.
    pub channels: Vec<Vec<f64>>,
    /// Symbol rate (Baud).
    pub baud_rate: f64,
    /// Samples per symbol.
    pub oversampling: usize,
}

impl WdmFrame {
    /// Kernel side N; channel count must be a perfect square.
    pub fn kernel_side(&self) -> usize {
        (self.channels.len() as f64).sqrt().round() as usize
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / (self.baud_rate * self.oversampling as f64)
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Debug dump: `time_s,channel_0..channel_{N^2-1},pd_output` CSV.
    pub fn to_csv(&self, pd_output: Option<&[f64]>) -> String {
        let mut out = String::from("time_s");
        for c in 0..self.channels.len() {
            out.push_str(&format!(",channel_{c}"));
        }
        out.push_str(",pd_output\n");
        let dt = self.sample_period();
        for s in 0..self.len() {
            out.push_str(&format!("{:.9e}", s as f64 * dt));
            for ch in &self.channels {
                out.push_str(&format!(",{:.9e}", ch[s]));
            }
            let pd = pd_output.and_then(|p| p.get(s)).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(",{pd:.9e}\n"));
        }
        out
    }
}

/// Where and how the DSP samples the detected waveform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Fractional symbol offset of the sampling instant, in [0, 1).
    pub sigma: f64,
    /// Lumped circuit delay ahead of the sampler (s).
    pub circuit_delay: f64,
    /// ADC resolution.
    pub adc_bits: u32,
    /// ADC full-scale input (intensity units).
    pub full_scale: f64,
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::Parameter(format!("sigma must be in [0,1), got {}", self.sigma)));
        }
        if !(1..=16).contains(&self.adc_bits) {
            return Err(Error::Parameter(format!(
                "adc_bits must be in [1,16], got {}",
                self.adc_bits
            )));
        }
        if !(self.full_scale > 0.0) {
            return Err(Error::Parameter(format!(
                "full_scale must be positive, got {}",
                self.full_scale
            )));
        }
        Ok(())
    }

    /// Reconstruction step of the ADC grid.
    pub fn quantization_step(&self) -> f64 {
        self.full_scale / ((1u64 << self.adc_bits) - 1) as f64
    }

    /// Half of the quantization step: the worst-case in-range rounding error.
    pub fn half_step(&self) -> f64 {
        0.5 * self.quantization_step()
    }
}

/// Modulate a flattened image onto `n_channels` identical rectangular-pulse
/// waveforms at `oversampling` samples per symbol, appending `guard_symbols`
/// zero symbols so delayed channels stay inside the frame.
pub fn modulate(
    flat_image: &[f64],
    baud_rate: f64,
    oversampling: usize,
    n_channels: usize,
    i_input: f64,
    guard_symbols: usize,
) -> Result<WdmFrame> {
    if !(baud_rate > 0.0) {
        return Err(Error::Parameter(format!("baud rate must be positive, got {baud_rate}")));
    }
    if oversampling < 4 {
        return Err(Error::Parameter(format!(
            "oversampling must be >= 4 samples/symbol, got {oversampling}"
        )));
    }
    if n_channels == 0 {
        return Err(Error::Dimension("frame needs at least one channel".into()));
    }
    let side = (n_channels as f64).sqrt().round() as usize;
    if side * side != n_channels {
        return Err(Error::Dimension(format!(
            "channel count {n_channels} is not a perfect square"
        )));
    }
    if !(i_input > 0.0) {
        return Err(Error::Parameter(format!("i_input must be positive, got {i_input}")));
    }
    for &a in flat_image {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Parameter(format!("image value {a} outside [0,1]")));
        }
    }

    let mut wave = Vec::with_capacity((flat_image.len() + guard_symbols) * oversampling);
    for &a in flat_image {
        let level = i_input * a;
        wave.extend(std::iter::repeat(level).take(oversampling));
    }
    wave.extend(std::iter::repeat(0.0).take(guard_symbols * oversampling));

    Ok(WdmFrame {
        channels: vec![wave; n_channels],
        baud_rate,
        oversampling,
    })
}

/// Scale channel (i,j) by its realized transmission T'_(i,j).
pub fn apply_weights(frame: &WdmFrame, mapping: &WeightMapping) -> Result<WdmFrame> {
    if frame.channels.len() != mapping.records.len() {
        return Err(Error::Dimension(format!(
            "{} channels vs {} mapping records",
            frame.channels.len(),
            mapping.records.len()
        )));
    }
    let mut out = frame.clone();
    for (ch, rec) in out.channels.iter_mut().zip(&mapping.records) {
        for s in ch.iter_mut() {
            *s *= rec.t_realized;
        }
    }
    Ok(out)
}

/// Pass each channel through the ring's frequency response around its
/// operating point: power gain T(params, V_chosen, f) / T(params, V_chosen, 0)
/// applied per DFT bin, symmetrized across +/-f (incoherent approximation),
/// output clamped at zero intensity.
pub fn channel_filter(
    frame: &WdmFrame,
    params: &MrrPhysical,
    mapping: &WeightMapping,
) -> Result<WdmFrame> {
    params.validate()?;
    if frame.channels.len() != mapping.records.len() {
        return Err(Error::Dimension(format!(
            "{} channels vs {} mapping records",
            frame.channels.len(),
            mapping.records.len()
        )));
    }
    let n = frame.len();
    if n == 0 {
        return Ok(frame.clone());
    }
    let fs = frame.baud_rate * frame.oversampling as f64;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut out = frame.clone();
    for (ch, rec) in out.channels.iter_mut().zip(&mapping.records) {
        let t0 = transmission(params, rec.v, 0.0)?;
        if t0 < 1e-12 {
            // Channel already extinguished by its weight; identity response.
            continue;
        }
        let mut spectrum: Vec<Complex<f64>> =
            ch.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft.process(&mut spectrum);
        for (k, bin) in spectrum.iter_mut().enumerate() {
            let f = if k <= n / 2 {
                k as f64 * fs / n as f64
            } else {
                (k as f64 - n as f64) * fs / n as f64
            };
            let gain =
                0.5 * (transmission(params, rec.v, f)? + transmission(params, rec.v, -f)?) / t0;
            *bin *= gain;
        }
        ifft.process(&mut spectrum);
        let scale = 1.0 / n as f64;
        for (s, bin) in ch.iter_mut().zip(&spectrum) {
            *s = (bin.re * scale).max(0.0);
        }
    }
    Ok(out)
}

/// Incoherent photodetection: sample-wise sum over channels plus optional
/// seeded additive Gaussian noise, clamped at zero.
pub fn photodetect(frame: &WdmFrame, noise_std: f64, seed: u64) -> Result<Vec<f64>> {
    if frame.channels.is_empty() {
        return Err(Error::Dimension("cannot photodetect an empty frame".into()));
    }
    let n = frame.len();
    let mut out = vec![0.0; n];
    for ch in &frame.channels {
        if ch.len() != n {
            return Err(Error::Dimension("channels of unequal length".into()));
        }
        for (o, &s) in out.iter_mut().zip(ch) {
            *o += s;
        }
    }
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, noise_std)
            .map_err(|e| Error::Parameter(format!("bad noise std: {e}")))?;
        for o in out.iter_mut() {
            *o = (*o + dist.sample(&mut rng)).max(0.0);
        }
    }
    Ok(out)
}

/// Uniform quantization onto 2^adc_bits levels spanning [0, full_scale];
/// inputs above full scale clip to the top level.
pub fn quantize(signal: &[f64], plan: &SamplingPlan) -> Result<Vec<f64>> {
    plan.validate()?;
    let step = plan.quantization_step();
    let top = ((1u64 << plan.adc_bits) - 1) as f64;
    Ok(signal
        .iter()
        .map(|&x| {
            let code = (x / step).round().clamp(0.0, top);
            code * step
        })
        .collect())
}

/// Read the (M-N+1)^2 convolution outputs out of the detected waveform at the
/// per-output sampling instants, row-major in (m, n).
pub fn sample_outputs(
    signal: &[f64],
    m_size: usize,
    n_size: usize,
    baud_rate: f64,
    oversampling: usize,
    plan: &SamplingPlan,
) -> Result<Vec<f64>> {
    plan.validate()?;
    let side = m_size
        .checked_sub(n_size)
        .map(|d| d + 1)
        .ok_or_else(|| Error::Dimension(format!("kernel {n_size} larger than image {m_size}")))?;
    let mut out = Vec::with_capacity(side * side);
    let samples_per_symbol = oversampling as f64;
    for m in 1..=side {
        for n in 1..=side {
            let q = sampling_index(m, n, m_size, n_size)?;
            let t_symbols = plan.circuit_delay * baud_rate + (q as f64 - 1.0) + plan.sigma;
            let idx = (t_symbols * samples_per_symbol).round() as usize;
            let v = signal.get(idx).copied().ok_or_else(|| {
                Error::Bounds(format!(
                    "sample index {idx} for output ({m},{n}) beyond signal length {}",
                    signal.len()
                ))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}
