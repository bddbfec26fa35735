//! One optical 2-D convolution period end to end, plus the exact-arithmetic
//! oracles it is checked against: direct convolution and the decomposition of
//! a 2-D convolution into summed double correlations.

use serde::{Deserialize, Serialize};

use crate::delay::{
    dispersion_delays, pmws_grid, required_delays, resource_requirements, DelayPlan,
    DispersionMedium,
};
use crate::device_models::{
    build_vt_database, map_weights, weighting_error, MappingMode, MrrPhysical, WeightMapping,
    DEFAULT_V_MAX,
};
use crate::error::{Error, Result};
use crate::grid::{correlate_valid, Matrix};
use crate::waveform::{
    apply_weights, channel_filter, modulate, photodetect, quantize, sample_outputs, SamplingPlan,
};

/// How the per-wavelength delays are realized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DelaySource {
    /// Exact delays on the sample grid.
    Ideal,
    /// Programmed multi-wavelength source through a dispersive medium.
    /// `length_km = None` uses the design-point length 1/(BR |D| d_lambda).
    Dispersion {
        delta_lambda_nm: f64,
        base_nm: f64,
        dispersion_ps_nm_km: f64,
        length_km: Option<f64>,
    },
    /// Arrayed per-channel delay lines with Gaussian trim error.
    Arrayed { delay_error_std_s: f64 },
}

/// Full configuration of one optical convolution unit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OcuConfig {
    /// Symbol rate (Baud).
    pub baud: f64,
    /// Samples per symbol.
    pub oversampling: usize,
    /// Fractional-symbol sampling offset.
    pub sigma: f64,
    pub adc_bits: u32,
    pub dac_bits: u32,
    /// Drive-voltage sweep ceiling for the weight database (V).
    pub v_max: f64,
    /// Apply the ring frequency response to each channel.
    pub filter_enabled: bool,
    /// Additive detector noise std (intensity units); 0 disables.
    pub noise_std: f64,
    /// Seed for detector noise and delay trim errors.
    pub seed: u64,
    /// Source intensity per wavelength.
    pub i_input: f64,
    /// Lumped circuit delay ahead of the sampler (s).
    pub circuit_delay: f64,
    pub mrr: MrrPhysical,
    pub mapping_mode: MappingMode,
    pub delay_source: DelaySource,
    /// ADC full scale; `None` derives it from the summed channel weights.
    pub full_scale: Option<f64>,
}

impl Default for OcuConfig {
    fn default() -> Self {
        Self {
            baud: 10e9,
            oversampling: 16,
            sigma: 0.5,
            adc_bits: 10,
            dac_bits: 10,
            v_max: DEFAULT_V_MAX,
            filter_enabled: true,
            noise_std: 0.0,
            seed: 0,
            i_input: 1.0,
            circuit_delay: 0.0,
            mrr: MrrPhysical::default(),
            mapping_mode: MappingMode::FullRange,
            delay_source: DelaySource::Ideal,
            full_scale: None,
        }
    }
}

impl OcuConfig {
    /// Distortion-free configuration: filter off, noise off, 16-bit
    /// converters. Mapping residuals remain (they are accounted separately).
    pub fn ideal() -> Self {
        Self {
            filter_enabled: false,
            adc_bits: 16,
            dac_bits: 16,
            ..Self::default()
        }
    }

    pub fn with_baud(mut self, baud: f64) -> Self {
        self.baud = baud;
        self
    }
}

/// Nonidealities surfaced by one optical convolution.
#[derive(Debug, Clone)]
pub struct ConvDiagnostics {
    /// The weight mapping used, including residuals and normalization scale.
    pub mapping: WeightMapping,
    /// Delay plan with realized delays and rounding errors.
    pub delay_plan: DelayPlan,
    /// ADC full scale used (intensity units).
    pub full_scale: f64,
    /// Worst-case quantization error in output units.
    pub half_step_output: f64,
    /// Detector samples that exceeded full scale and clipped.
    pub clipped_samples: usize,
}

impl ConvDiagnostics {
    /// Weighting error of this mapping on an image, in output units.
    pub fn weighting_error_output(&self, flat_image: &[f64]) -> Result<Vec<f64>> {
        let we = weighting_error(&self.mapping, flat_image)?;
        Ok(we.into_iter().map(|e| e * self.mapping.scale).collect())
    }
}

/// Exact-arithmetic 2-D valid convolution, Y_{m,n} = sum_{i,j} w_{i,j} *
/// A_{m+i-1, n+j-1}.
pub fn conv2d_reference(image: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    correlate_valid(image, kernel)
}

/// Symbol slice carrying output (m, n), 1-based: q = M*(m+N-2) + n + N - 1.
///
/// Derived from the delay alignment: channel (i,j) is delayed by
/// (N-i)*M + (N-j) symbols, so every term of Y_{m,n} meets in this slice.
pub fn sampling_index(m: usize, n: usize, m_size: usize, n_size: usize) -> Result<usize> {
    let side = m_size
        .checked_sub(n_size)
        .map(|d| d + 1)
        .ok_or_else(|| Error::Dimension(format!("kernel {n_size} larger than image {m_size}")))?;
    if m < 1 || n < 1 || m > side || n > side {
        return Err(Error::Bounds(format!(
            "output index ({m},{n}) outside [1,{side}]^2"
        )));
    }
    Ok(m_size * (m + n_size - 2) + n + n_size - 1)
}

/// Run one optical 2-D convolution period: modulate, weight, filter, delay,
/// detect, quantize, sample. Output values are rescaled by the mapping
/// normalization so they approximate `conv2d_reference(image, kernel)` plus
/// the weighting error.
pub fn conv2d_optical(
    image: &Matrix,
    kernel: &Matrix,
    config: &OcuConfig,
) -> Result<(Matrix, ConvDiagnostics)> {
    if image.rows() != image.cols() || kernel.rows() != kernel.cols() {
        return Err(Error::Dimension("image and kernel must be square".into()));
    }
    let m = image.rows();
    let n = kernel.rows();
    if n >= m {
        return Err(Error::Dimension(format!("need M > N, got M={m}, N={n}")));
    }

    let db = build_vt_database(&config.mrr, config.v_max, config.dac_bits)?;
    let mapping = map_weights(&db, kernel, config.mapping_mode)?;

    let flat = image.flatten();
    let guard = (n - 1) * (m + 1);
    let frame = modulate(
        &flat,
        config.baud,
        config.oversampling,
        n * n,
        config.i_input,
        guard,
    )?;
    let frame = apply_weights(&frame, &mapping)?;
    let frame = if config.filter_enabled {
        channel_filter(&frame, &config.mrr, &mapping)?
    } else {
        frame
    };

    let target_plan = required_delays(m, n, config.baud)?;
    let plan = match config.delay_source {
        DelaySource::Ideal => target_plan,
        DelaySource::Dispersion {
            delta_lambda_nm,
            base_nm,
            dispersion_ps_nm_km,
            length_km,
        } => {
            let grid = pmws_grid(m, n, delta_lambda_nm, base_nm)?;
            let length = match length_km {
                Some(l) => l,
                None => {
                    resource_requirements(m, n, delta_lambda_nm, dispersion_ps_nm_km, config.baud)?
                        .length_km
                }
            };
            let medium = DispersionMedium::new(dispersion_ps_nm_km, length)?;
            dispersion_delays(&grid, &medium)
        }
        DelaySource::Arrayed { delay_error_std_s } => {
            target_plan.with_gaussian_errors(delay_error_std_s, config.seed.wrapping_add(1))
        }
    };
    let (frame, realized_plan) = crate::delay::apply_delays(&frame, &plan)?;

    let pd = photodetect(&frame, config.noise_std, config.seed)?;

    let full_scale = config.full_scale.unwrap_or_else(|| {
        let sum_t: f64 = mapping.records.iter().map(|r| r.t_realized).sum();
        if sum_t > 0.0 {
            sum_t * config.i_input
        } else {
            1.0
        }
    });
    let clipped = pd.iter().filter(|&&x| x > full_scale).count();

    let sampling = SamplingPlan {
        sigma: config.sigma,
        circuit_delay: config.circuit_delay,
        adc_bits: config.adc_bits,
        full_scale,
    };
    let quantized = quantize(&pd, &sampling)?;
    let values = sample_outputs(&quantized, m, n, config.baud, config.oversampling, &sampling)?;

    let side = m - n + 1;
    let rescaled: Vec<f64> = values.iter().map(|&v| v * mapping.scale).collect();
    let out = Matrix::square(side, rescaled)?;
    let half_step_output = sampling.half_step() * mapping.scale;

    Ok((
        out,
        ConvDiagnostics {
            mapping,
            delay_plan: realized_plan,
            full_scale,
            half_step_output,
            clipped_samples: clipped,
        },
    ))
}

/// Both sides of the double-correlation decomposition and their difference.
#[derive(Debug, Clone)]
pub struct DecompositionCheck {
    /// Column sums of the delayed-row matrix B'.
    pub lhs: Vec<f64>,
    /// Sum over kernel rows of the double correlation route.
    pub rhs: Vec<f64>,
    pub max_diff: f64,
}

/// Cross-correlation R(x, y)(q) = sum_j y_j * x_{q+j-len(y)}, q = 1..len(x)+len(y)-1,
/// with x taken as zero outside its support.
fn cross_correlate(x: &[f64], y: &[f64]) -> Vec<f64> {
    let ny = y.len();
    let out_len = x.len() + ny - 1;
    let mut out = vec![0.0; out_len];
    for (q0, o) in out.iter_mut().enumerate() {
        let q = q0 + 1;
        let mut acc = 0.0;
        for (j0, &yj) in y.iter().enumerate() {
            let j = j0 + 1;
            let idx = q as i64 + j as i64 - ny as i64;
            if idx >= 1 && idx <= x.len() as i64 {
                acc += yj * x[(idx - 1) as usize];
            }
        }
        *o = acc;
    }
    out
}

/// Check that the delayed-row construction equals the sum of double
/// correlations: one route builds B' row by row from the channel delays and
/// sums its columns; the other correlates the image with each kernel row and
/// then with a row-selector vector that places it at the group offset.
pub fn correlation_decomposition_check(
    flat_image: &[f64],
    kernel: &Matrix,
) -> Result<DecompositionCheck> {
    let n = kernel.rows();
    if kernel.cols() != n {
        return Err(Error::Dimension("kernel must be square".into()));
    }
    let m = (flat_image.len() as f64).sqrt().round() as usize;
    if m * m != flat_image.len() {
        return Err(Error::Dimension(format!(
            "flat image length {} is not a perfect square",
            flat_image.len()
        )));
    }
    if m < n {
        return Err(Error::Dimension(format!("need M >= N, got M={m}, N={n}")));
    }

    let row_len = m * m + (n - 1) * (m + 1);

    // Route 1: delayed rows. Row (i,j) is the image vector shifted right by
    // (N-i)*M + (N-j) symbols and scaled by w_{i,j}.
    let mut lhs = vec![0.0; row_len];
    for i in 1..=n {
        for j in 1..=n {
            let w = kernel.get(i - 1, j - 1);
            let shift = (n - i) * m + (n - j);
            for (p, &a) in flat_image.iter().enumerate() {
                lhs[shift + p] += w * a;
            }
        }
    }

    // Route 2: per-row 1-D correlation with the kernel row, then a second
    // correlation with the selector that lands the group at offset (N-i)*M.
    let mut rhs = vec![0.0; row_len];
    for i in 1..=n {
        let row: Vec<f64> = (1..=n).map(|j| kernel.get(i - 1, j - 1)).collect();
        let u = cross_correlate(flat_image, &row);
        let mut selector = vec![0.0; n * m];
        selector[i * m - 1] = 1.0;
        let placed = cross_correlate(&u, &selector);
        for (q, &v) in placed.iter().enumerate() {
            if q < row_len {
                rhs[q] += v;
            }
        }
    }

    let max_diff = lhs
        .iter()
        .zip(&rhs)
        .map(|(&a, &b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(DecompositionCheck { lhs, rhs, max_diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device_models::MappingMode;

    fn det_image(m: usize, seed: u64) -> Matrix {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        Matrix::square(m, (0..m * m).map(|_| next()).collect()).unwrap()
    }

    #[test]
    fn reference_ones_case() {
        let img = Matrix::square(3, vec![1.0; 9]).unwrap();
        let ker = Matrix::square(2, vec![1.0; 4]).unwrap();
        let out = conv2d_reference(&img, &ker).unwrap();
        assert_eq!(out.as_slice(), &[4.0; 4]);
    }

    #[test]
    fn reference_identity_kernel() {
        let img = det_image(4, 3);
        let ker = Matrix::square(1, vec![1.0]).unwrap();
        let out = conv2d_reference(&img, &ker).unwrap();
        assert_eq!(out.as_slice(), img.as_slice());
    }

    #[test]
    fn reference_matches_loop_oracle() {
        let img = Matrix::square(5, (0..25).map(|i| ((i * 7 + 3) % 11) as f64).collect()).unwrap();
        let ker = Matrix::square(3, (0..9).map(|i| ((i * 5 + 1) % 7) as f64).collect()).unwrap();
        let out = conv2d_reference(&img, &ker).unwrap();
        for m in 0..3 {
            for n in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += ker.get(i, j) * img.get(m + i, n + j);
                    }
                }
                assert_eq!(out.get(m, n), acc);
            }
        }
    }

    #[test]
    fn sampling_index_paper_case() {
        assert_eq!(sampling_index(1, 1, 3, 2).unwrap(), 5);
        assert_eq!(sampling_index(1, 2, 3, 2).unwrap(), 6);
        assert_eq!(sampling_index(2, 1, 3, 2).unwrap(), 8);
        assert_eq!(sampling_index(2, 2, 3, 2).unwrap(), 9);
    }

    #[test]
    fn sampling_index_bounds() {
        assert!(sampling_index(0, 1, 3, 2).is_err());
        assert!(sampling_index(3, 1, 3, 2).is_err());
        assert!(sampling_index(1, 3, 3, 2).is_err());
        // q never exceeds M^2
        for m_size in 2..=8 {
            for n_size in 1..m_size {
                let side = m_size - n_size + 1;
                let q_max = sampling_index(side, side, m_size, n_size).unwrap();
                assert_eq!(q_max, m_size * m_size);
                let q_min = sampling_index(1, 1, m_size, n_size).unwrap();
                assert_eq!(q_min, (n_size - 1) * (m_size + 1) + 1);
            }
        }
    }

    #[test]
    fn optical_ones_case_matches_reference() {
        let img = Matrix::square(3, vec![1.0; 9]).unwrap();
        let ker = Matrix::square(2, vec![1.0; 4]).unwrap();
        let (out, diag) = conv2d_optical(&img, &ker, &OcuConfig::ideal()).unwrap();
        let we = diag.weighting_error_output(&img.flatten()).unwrap();
        for (idx, &v) in out.as_slice().iter().enumerate() {
            let expect = 4.0 + we[idx];
            assert!(
                (v - expect).abs() <= diag.half_step_output + 1e-12,
                "output {v} vs {expect}"
            );
        }
    }

    #[test]
    fn optical_random_case_matches_reference_plus_weighting_error() {
        let img = det_image(6, 11);
        let ker = det_image(3, 5);
        let (out, diag) = conv2d_optical(&img, &ker, &OcuConfig::ideal()).unwrap();
        let reference = conv2d_reference(&img, &ker).unwrap();
        let we = diag.weighting_error_output(&img.flatten()).unwrap();
        for i in 0..out.as_slice().len() {
            let expect = reference.as_slice()[i] + we[i];
            let got = out.as_slice()[i];
            assert!(
                (got - expect).abs() <= diag.half_step_output + 1e-12,
                "element {i}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn optical_output_scales_with_image() {
        let img = det_image(5, 2);
        let ker = det_image(2, 9);
        let config = OcuConfig::ideal();
        let (base, diag) = conv2d_optical(&img, &ker, &config).unwrap();
        for c in [0.25, 0.5, 0.75] {
            let scaled_img = img.map(|v| c * v);
            let (scaled, sdiag) = conv2d_optical(&scaled_img, &ker, &config).unwrap();
            for i in 0..base.as_slice().len() {
                let expect = c * base.as_slice()[i];
                let got = scaled.as_slice()[i];
                let tol = diag.half_step_output + sdiag.half_step_output + 1e-12;
                assert!((got - expect).abs() <= tol, "c={c}, element {i}");
            }
        }
    }

    #[test]
    fn optical_invariant_to_sigma_when_ideal() {
        let img = det_image(5, 4);
        let ker = det_image(2, 6);
        let mut outputs = Vec::new();
        for sigma in [0.3, 0.5, 0.7] {
            let config = OcuConfig { sigma, ..OcuConfig::ideal() };
            let (out, _) = conv2d_optical(&img, &ker, &config).unwrap();
            outputs.push(out);
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[1], outputs[2]);
    }

    #[test]
    fn optical_with_dispersion_delays_matches_ideal() {
        let img = det_image(5, 8);
        let ker = det_image(2, 3);
        let ideal = OcuConfig::ideal();
        let dispersive = OcuConfig {
            delay_source: DelaySource::Dispersion {
                delta_lambda_nm: 0.2,
                base_nm: 1550.0,
                dispersion_ps_nm_km: -150.0,
                length_km: None,
            },
            ..OcuConfig::ideal()
        };
        let (a, _) = conv2d_optical(&img, &ker, &ideal).unwrap();
        let (b, _) = conv2d_optical(&img, &ker, &dispersive).unwrap();
        assert_eq!(a, b, "design-point dispersion must reproduce ideal delays");
    }

    #[test]
    fn optical_rejects_bad_geometry() {
        let img = det_image(3, 1);
        let ker = det_image(3, 2);
        assert!(conv2d_optical(&img, &ker, &OcuConfig::ideal()).is_err());
    }

    #[test]
    fn decomposition_identity_on_random_integer_inputs() {
        let mut state = 0xdeadbeefu64;
        let mut next = move |range: u64| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state % range
        };
        for _ in 0..200 {
            let n = 1 + (next(3) as usize);
            let m = n + 1 + (next(6) as usize);
            let image: Vec<f64> = (0..m * m).map(|_| next(10) as f64).collect();
            let kernel =
                Matrix::square(n, (0..n * n).map(|_| next(10) as f64).collect()).unwrap();
            let check = correlation_decomposition_check(&image, &kernel).unwrap();
            assert_eq!(check.max_diff, 0.0, "identity must hold exactly");
        }
    }

    #[test]
    fn decomposition_paper_case_slices() {
        let check = correlation_decomposition_check(
            &[1.0; 9],
            &Matrix::square(2, vec![1.0; 4]).unwrap(),
        )
        .unwrap();
        for q in [5usize, 6, 8, 9] {
            assert_eq!(check.lhs[q - 1], 4.0);
            assert_eq!(check.rhs[q - 1], 4.0);
        }
        assert_eq!(check.max_diff, 0.0);
    }

    #[test]
    fn decomposition_group_sums_match_row_correlations() {
        // Each group's sum along B' equals the 1-D cross-correlation of the
        // image vector with the corresponding kernel row.
        let image: Vec<f64> = (0..16).map(|i| ((i * 3 + 2) % 7) as f64).collect();
        let kernel = Matrix::square(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let n = 2usize;
        for i in 1..=n {
            let row: Vec<f64> = (1..=n).map(|j| kernel.get(i - 1, j - 1)).collect();
            let u = cross_correlate(&image, &row);
            // oracle: direct sliding sum
            for q in 1..=(image.len() + n - 1) {
                let mut acc = 0.0;
                for j in 1..=n {
                    let idx = q as i64 + j as i64 - n as i64;
                    if idx >= 1 && idx <= image.len() as i64 {
                        acc += row[j - 1] * image[(idx - 1) as usize];
                    }
                }
                assert_eq!(u[q - 1], acc);
            }
        }
    }

    #[test]
    fn decomposition_conv_values_appear_at_sampling_slices() {
        // The LHS column sums at the sampling indices are the convolution.
        let m = 6usize;
        let n = 3usize;
        let img = det_image(m, 13);
        let ker = det_image(n, 17);
        let reference = conv2d_reference(&img, &ker).unwrap();
        let check = correlation_decomposition_check(&img.flatten(), &ker).unwrap();
        let side = m - n + 1;
        for mm in 1..=side {
            for nn in 1..=side {
                let q = sampling_index(mm, nn, m, n).unwrap();
                let got = check.lhs[q - 1];
                let expect = reference.get(mm - 1, nn - 1);
                assert!(
                    (got - expect).abs() < 1e-12,
                    "slice {q} carries {got}, expected Y({mm},{nn}) = {expect}"
                );
            }
        }
    }

    #[test]
    fn optical_quasi_linear_mode_runs() {
        let img = det_image(4, 21);
        let ker = det_image(2, 22);
        let config = OcuConfig { mapping_mode: MappingMode::QuasiLinear, ..OcuConfig::ideal() };
        let (out, diag) = conv2d_optical(&img, &ker, &config).unwrap();
        let reference = conv2d_reference(&img, &ker).unwrap();
        let we = diag.weighting_error_output(&img.flatten()).unwrap();
        for i in 0..out.as_slice().len() {
            let expect = reference.as_slice()[i] + we[i];
            assert!((out.as_slice()[i] - expect).abs() <= diag.half_step_output + 1e-12);
        }
    }
}
