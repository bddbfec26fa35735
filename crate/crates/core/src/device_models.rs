//! Micro-ring resonator models: through-port transmission, quantized
//! voltage-to-transmission databases, weight-to-voltage mapping, and the
//! precision/error figures of the mapping process.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{correlate_valid, Matrix};

/// Default voltage sweep ceiling (V).
pub const DEFAULT_V_MAX: f64 = 1.2;
/// Default half-wave voltage (V). Together with `DEFAULT_V_MAX` this places
/// a handful of resonance linewidths inside the sweep window.
pub const DEFAULT_V_PI: f64 = 20.0;
/// Default free spectral range (Hz).
pub const DEFAULT_FSR: f64 = 2.0e12;
/// Default ring finesse for the weighting bank.
pub const DEFAULT_FINESSE: f64 = 200.0;

/// Physical parameters of a single micro-ring resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrrPhysical {
    /// Amplitude transmission constant between ring and waveguide (0..1).
    pub tau: f64,
    /// Round-trip loss factor (0..1].
    pub alpha: f64,
    /// Bias phase at zero drive voltage (rad).
    pub theta0: f64,
    /// Half-wave voltage (V).
    pub v_pi: f64,
    /// Free spectral range (Hz).
    pub fsr: f64,
}

impl MrrPhysical {
    pub fn new(tau: f64, alpha: f64, theta0: f64, v_pi: f64, fsr: f64) -> Result<Self> {
        let p = Self { tau, alpha, theta0, v_pi, fsr };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Parameter(format!("tau must be in (0,1), got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Parameter(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if !(self.v_pi > 0.0) {
            return Err(Error::Parameter(format!("v_pi must be positive, got {}", self.v_pi)));
        }
        if !(self.fsr > 0.0) {
            return Err(Error::Parameter(format!("fsr must be positive, got {}", self.fsr)));
        }
        Ok(())
    }

    /// Finesse of the resonance: pi*sqrt(alpha*tau)/(1 - alpha*tau).
    pub fn finesse(&self) -> f64 {
        let at = self.alpha * self.tau;
        PI * at.sqrt() / (1.0 - at)
    }

    /// Resonance full width at half maximum in optical frequency (Hz).
    pub fn fwhm(&self) -> f64 {
        self.fsr / self.finesse()
    }

    /// Critically coupled ring (tau = alpha) of the given finesse, biased on
    /// resonance at zero volts. Critical coupling makes the transmission dip
    /// reach zero, so the voltage sweep covers the full weight range [0, ~1].
    pub fn critically_coupled_from_finesse(finesse: f64) -> Result<Self> {
        let s = coupling_for_finesse(finesse)?;
        Self::new(s, s, 0.0, DEFAULT_V_PI, DEFAULT_FSR)
    }
}

impl Default for MrrPhysical {
    fn default() -> Self {
        Self::critically_coupled_from_finesse(DEFAULT_FINESSE).expect("default finesse is valid")
    }
}

/// Solve sqrt(alpha*tau) from finesse = pi*sqrt(alpha*tau)/(1 - alpha*tau).
///
/// Substituting s = sqrt(alpha*tau) gives F*s^2 + pi*s - F = 0, whose positive
/// root is always in (0,1) for F > 0.
fn coupling_for_finesse(finesse: f64) -> Result<f64> {
    if !(finesse > 0.0) || !finesse.is_finite() {
        return Err(Error::Parameter(format!("finesse must be positive, got {finesse}")));
    }
    let s = (-PI + (PI * PI + 4.0 * finesse * finesse).sqrt()) / (2.0 * finesse);
    if s <= 0.0 || s >= 1.0 {
        return Err(Error::Infeasible(format!(
            "no coupling in (0,1) realizes finesse {finesse}"
        )));
    }
    Ok(s)
}

/// Ring parameters realizing the given finesse at the given round-trip loss.
///
/// tau is solved from finesse = pi*sqrt(alpha*tau)/(1 - alpha*tau); the bias
/// phase is zero (resonance at 0 V), v_pi and fsr take the module defaults.
pub fn params_from_finesse(finesse: f64, alpha: f64) -> Result<MrrPhysical> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must be in (0,1], got {alpha}")));
    }
    let s = coupling_for_finesse(finesse)?;
    let tau = s * s / alpha;
    if tau <= 0.0 || tau >= 1.0 {
        return Err(Error::Infeasible(format!(
            "finesse {finesse} with alpha {alpha} needs tau {tau} outside (0,1)"
        )));
    }
    MrrPhysical::new(tau, alpha, 0.0, DEFAULT_V_PI, DEFAULT_FSR)
}

/// Through-port power transmission of the ring at drive voltage `v` and
/// optical detuning `detuning` (Hz) from the carrier.
///
/// T = 1 - (1-alpha^2)(1-tau^2) / ((1-alpha*tau)^2 + 4*alpha*tau*sin^2(theta/2))
/// with theta = theta0 + pi*v/v_pi + 2*pi*detuning/fsr.
pub fn transmission(params: &MrrPhysical, v: f64, detuning: f64) -> Result<f64> {
    params.validate()?;
    if v < 0.0 {
        return Err(Error::Parameter(format!("drive voltage must be >= 0, got {v}")));
    }
    let theta = params.theta0 + PI * v / params.v_pi + 2.0 * PI * detuning / params.fsr;
    let at = params.alpha * params.tau;
    let num = (1.0 - params.alpha * params.alpha) * (1.0 - params.tau * params.tau);
    let den = (1.0 - at).powi(2) + 4.0 * at * (theta / 2.0).sin().powi(2);
    Ok((1.0 - num / den).clamp(0.0, 1.0))
}

/// Quantized voltage-to-transmission lookup built by a DAC-limited sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VtDatabase {
    /// (voltage, transmission) pairs, voltages strictly increasing 0..=v_max.
    pub entries: Vec<(f64, f64)>,
    /// Sweep resolution; entries.len() == 2^dac_bits.
    pub dac_bits: u32,
    /// Sweep ceiling (V).
    pub v_max: f64,
}

impl VtDatabase {
    /// Grid step between adjacent voltages.
    pub fn voltage_step(&self) -> f64 {
        self.v_max / ((1u64 << self.dac_bits) - 1) as f64
    }

    /// Index of a grid voltage, or a lookup error when off-grid.
    pub fn index_of(&self, v: f64) -> Result<usize> {
        let step = self.voltage_step();
        let idx = (v / step).round() as i64;
        if idx < 0 || idx as usize >= self.entries.len() {
            return Err(Error::Lookup(format!("voltage {v} outside the database grid")));
        }
        let idx = idx as usize;
        if (self.entries[idx].0 - v).abs() > 1e-9 * self.v_max.max(1.0) {
            return Err(Error::Lookup(format!("voltage {v} is not a grid point")));
        }
        Ok(idx)
    }

    /// CSV with header `voltage,transmission`, 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("voltage,transmission\n");
        for &(v, t) in &self.entries {
            out.push_str(&format!("{:.11e},{:.11e}\n", v, t));
        }
        out
    }
}

/// Sweep the ring drive with a `dac_bits` voltage source over [0, v_max] and
/// record the zero-detuning transmission at every step.
pub fn build_vt_database(params: &MrrPhysical, v_max: f64, dac_bits: u32) -> Result<VtDatabase> {
    params.validate()?;
    if !(v_max > 0.0) {
        return Err(Error::Parameter(format!("v_max must be positive, got {v_max}")));
    }
    if !(1..=16).contains(&dac_bits) {
        return Err(Error::Parameter(format!("dac_bits must be in [1,16], got {dac_bits}")));
    }
    let n = 1usize << dac_bits;
    let step = v_max / (n - 1) as f64;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i == n - 1 { v_max } else { i as f64 * step };
        entries.push((v, transmission(params, v, 0.0)?));
    }
    Ok(VtDatabase { entries, dac_bits, v_max })
}

/// Boundary of the quasi-linear region: the largest grid voltage whose
/// transmission gradient lies in the top third of the observed gradient
/// range. The region runs contiguously from 0 V to that boundary.
pub fn quasi_linear_region(db: &VtDatabase) -> Result<f64> {
    if db.entries.len() < 2 {
        return Err(Error::RegionNotFound("database has fewer than two entries".into()));
    }
    let grads: Vec<f64> = db.entries.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let gmax = grads.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gmin = grads.iter().cloned().fold(f64::INFINITY, f64::min);
    if gmax == gmin && gmax == 0.0 {
        return Err(Error::RegionNotFound("transmission is constant".into()));
    }
    // Tiny slack so float noise on a flat gradient profile cannot split it.
    let eps = 1e-12 * gmax.abs().max(gmin.abs());
    let threshold = gmin + (gmax - gmin) * 2.0 / 3.0 - eps;
    let last = grads.iter().rposition(|&g| g >= threshold);
    match last {
        // gradient i sits between entries i and i+1; the boundary voltage is
        // the upper entry of the last qualifying gradient.
        Some(i) => Ok(db.entries[i + 1].0),
        None => Err(Error::RegionNotFound("no gradient reaches the top third".into())),
    }
}

/// Mapping precision of one database step, log2(1/(T(v_i) - T(v_{i-1}))).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MappingPrecision {
    /// Resolvable step of the given precision in bits.
    Bits(f64),
    /// Zero or non-increasing transmission step: no resolution at this point.
    Flat,
}

/// Evaluate the mapping precision at grid voltage `v_i` (must have a
/// predecessor on the grid).
pub fn mapping_precision(db: &VtDatabase, v_i: f64) -> Result<MappingPrecision> {
    let idx = db.index_of(v_i)?;
    if idx == 0 {
        return Err(Error::Lookup("first grid voltage has no predecessor".into()));
    }
    let step = db.entries[idx].1 - db.entries[idx - 1].1;
    if step <= 0.0 {
        return Ok(MappingPrecision::Flat);
    }
    Ok(MappingPrecision::Bits(-step.log2()))
}

/// How kernel weights are normalized before the voltage search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingMode {
    /// Search the full voltage grid; kernels with max |w| > 1 are divided by
    /// that maximum first.
    FullRange,
    /// Scale the kernel onto the transmission span of the quasi-linear
    /// region and search only voltages inside it.
    QuasiLinear,
}

/// One mapped kernel element.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MappingRecord {
    /// Normalized target weight handed to the voltage search.
    pub w: f64,
    /// Chosen drive voltage (V).
    pub v: f64,
    /// Transmission actually realized at that voltage.
    pub t_realized: f64,
    /// t_realized - w.
    pub residual: f64,
}

/// Result of mapping an N x N kernel onto the weighting bank.
///
/// Targets are `original / scale`; multiplying realized values by `scale`
/// returns to the caller's units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightMapping {
    pub mode: MappingMode,
    /// Normalization divisor applied to the kernel before the search.
    pub scale: f64,
    /// Row-major records, one per kernel element.
    pub records: Vec<MappingRecord>,
    /// Kernel side length N.
    pub n_side: usize,
    /// Largest adjacent-transmission gap over the searched grid region.
    pub max_searched_gap: f64,
}

impl WeightMapping {
    /// Realized transmissions in normalized units, row-major.
    pub fn realized(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t_realized).collect()
    }

    /// Residuals w' = T' - w in normalized units, row-major.
    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    /// The kernel the bank actually implements, back in caller units.
    pub fn realized_kernel(&self) -> Matrix {
        let data = self.records.iter().map(|r| r.t_realized * self.scale).collect();
        Matrix::square(self.n_side, data).expect("records are N^2 by construction")
    }

    /// Residual kernel w' in normalized units.
    pub fn residual_kernel(&self) -> Matrix {
        Matrix::square(self.n_side, self.residuals()).expect("records are N^2 by construction")
    }

    /// JSON records per the `{w, v, t_realized, residual}` schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records).expect("records serialize")
    }
}

/// Map a kernel of nonnegative weights onto database transmissions by
/// nearest-value search. Ties pick the lower voltage.
pub fn map_weights(db: &VtDatabase, kernel: &Matrix, mode: MappingMode) -> Result<WeightMapping> {
    if kernel.rows() != kernel.cols() {
        return Err(Error::Dimension(format!(
            "kernel must be square, got {}x{}",
            kernel.rows(),
            kernel.cols()
        )));
    }
    for &w in kernel.as_slice() {
        if !w.is_finite() {
            return Err(Error::Parameter(format!("kernel element {w} is not finite")));
        }
        if w < 0.0 {
            return Err(Error::UnmappableWeight(format!(
                "negative weight {w}: transmissions live in [0,1]"
            )));
        }
    }

    let (search_end, scale) = match mode {
        MappingMode::FullRange => {
            let max_abs = kernel.max_abs();
            let scale = if max_abs > 1.0 { max_abs } else { 1.0 };
            (db.entries.len(), scale)
        }
        MappingMode::QuasiLinear => {
            let v_l = quasi_linear_region(db)?;
            let end = db.entries.iter().take_while(|&&(v, _)| v <= v_l).count();
            let t_max_qlr = db.entries[..end]
                .iter()
                .map(|&(_, t)| t)
                .fold(f64::NEG_INFINITY, f64::max);
            if t_max_qlr <= 0.0 {
                return Err(Error::RegionNotFound(
                    "quasi-linear region has no positive transmission".into(),
                ));
            }
            let max_w = kernel.max();
            let scale = if max_w > 0.0 { max_w / t_max_qlr } else { 1.0 };
            (end, scale)
        }
    };

    let region = &db.entries[..search_end];
    let max_searched_gap = region
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).abs())
        .fold(0.0, f64::max);

    let records = kernel
        .as_slice()
        .iter()
        .map(|&w| {
            let target = w / scale;
            let mut best = region[0];
            let mut best_err = (region[0].1 - target).abs();
            for &(v, t) in &region[1..] {
                let err = (t - target).abs();
                if err < best_err {
                    best_err = err;
                    best = (v, t);
                }
            }
            MappingRecord { w: target, v: best.0, t_realized: best.1, residual: best.1 - target }
        })
        .collect();

    Ok(WeightMapping { mode, scale, records, n_side: kernel.rows(), max_searched_gap })
}

/// Contribution of the mapping residuals to each convolution output:
/// the valid-region correlation of the image with the residual kernel w'
/// (normalized units), flattened row-major.
pub fn weighting_error(mapping: &WeightMapping, flat_image: &[f64]) -> Result<Vec<f64>> {
    let m = (flat_image.len() as f64).sqrt().round() as usize;
    if m * m != flat_image.len() {
        return Err(Error::Dimension(format!(
            "flat image length {} is not a perfect square",
            flat_image.len()
        )));
    }
    if mapping.records.len() != mapping.n_side * mapping.n_side {
        return Err(Error::Dimension("mapping record count is not N^2".into()));
    }
    let image = Matrix::square(m, flat_image.to_vec())?;
    let residuals = mapping.residual_kernel();
    Ok(correlate_valid(&image, &residuals)?.flatten())
}
