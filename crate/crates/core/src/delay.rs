//! Per-wavelength time delays: the ideal alignment plan, its realization by a
//! programmed multi-wavelength source plus dispersive medium, and frame-level
//! application.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::WdmFrame;

/// Entry of a delay plan for channel (i, j) of the kernel grid, 1-based.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DelayEntry {
    pub i: usize,
    pub j: usize,
    /// Required delay (s).
    pub delay_s: f64,
    /// Delay after rounding to the sample grid (s); equals `delay_s` until
    /// the plan is applied to a frame.
    pub realized_delay_s: f64,
    /// realized - required (s).
    pub rounding_error_s: f64,
}

/// Per-channel delays that align the interleaved wavelengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayPlan {
    /// Row-major over (i, j): index (i-1)*N + (j-1).
    pub entries: Vec<DelayEntry>,
    /// Kernel side N.
    pub n_side: usize,
}

impl DelayPlan {
    pub fn delay(&self, i: usize, j: usize) -> f64 {
        self.entries[(i - 1) * self.n_side + (j - 1)].delay_s
    }

    pub fn max_delay(&self) -> f64 {
        self.entries.iter().map(|e| e.delay_s).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("entries serialize")
    }

    /// Add independent Gaussian errors to each channel delay (the arrayed
    /// fiber-delay variant, where per-channel trimming is imperfect).
    pub fn with_gaussian_errors(mut self, sigma_s: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        if sigma_s <= 0.0 {
            return self;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, sigma_s).expect("positive sigma");
        for e in self.entries.iter_mut() {
            e.delay_s = (e.delay_s + dist.sample(&mut rng)).max(0.0);
        }
        self
    }
}

/// Programmed multi-wavelength source grid (Fig. 3 layout): N groups of N
/// lines, spacing `delta_lambda` inside a group and M*delta_lambda between
/// group heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmwsGrid {
    /// Wavelengths (nm), row-major over (i, j).
    pub wavelengths: Vec<f64>,
    pub n_side: usize,
    pub m_size: usize,
    /// Line spacing inside a group (nm).
    pub delta_lambda: f64,
    /// Wavelength of line (1,1) (nm).
    pub base: f64,
}

impl PmwsGrid {
    pub fn wavelength(&self, i: usize, j: usize) -> f64 {
        self.wavelengths[(i - 1) * self.n_side + (j - 1)]
    }

    /// Total occupied bandwidth (nm).
    pub fn span(&self) -> f64 {
        self.wavelength(self.n_side, self.n_side) - self.base
    }
}

/// Dispersive medium with flat dispersion over the source band.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DispersionMedium {
    /// Dispersion (ps/nm/km); negative for DCF.
    pub dispersion_ps_nm_km: f64,
    /// Length (km).
    pub length_km: f64,
}

impl DispersionMedium {
    pub fn new(dispersion_ps_nm_km: f64, length_km: f64) -> Result<Self> {
        if dispersion_ps_nm_km == 0.0 {
            return Err(Error::Parameter("dispersion must be nonzero".into()));
        }
        if !(length_km > 0.0) {
            return Err(Error::Parameter(format!(
                "medium length must be positive, got {length_km}"
            )));
        }
        Ok(Self { dispersion_ps_nm_km, length_km })
    }

    /// Group delay difference per nanometre of wavelength offset (s/nm).
    pub fn delay_per_nm(&self) -> f64 {
        self.dispersion_ps_nm_km * 1e-12 * self.length_km
    }
}

/// The alignment delays: delay(i,j) = [(N-i)*M + (N-j)] / BR. Channel (N,N)
/// is the reference with zero delay.
pub fn required_delays(m_size: usize, n_size: usize, baud: f64) -> Result<DelayPlan> {
    if n_size < 1 || n_size >= m_size {
        return Err(Error::Parameter(format!(
            "need M > N >= 1, got M={m_size}, N={n_size}"
        )));
    }
    if !(baud > 0.0) {
        return Err(Error::Parameter(format!("baud must be positive, got {baud}")));
    }
    let mut entries = Vec::with_capacity(n_size * n_size);
    for i in 1..=n_size {
        for j in 1..=n_size {
            let symbols = ((n_size - i) * m_size + (n_size - j)) as f64;
            let delay = symbols / baud;
            entries.push(DelayEntry {
                i,
                j,
                delay_s: delay,
                realized_delay_s: delay,
                rounding_error_s: 0.0,
            });
        }
    }
    Ok(DelayPlan { entries, n_side: n_size })
}

/// Wavelength grid satisfying the source constraints with line (1,1) at `base`.
pub fn pmws_grid(m_size: usize, n_size: usize, delta_lambda: f64, base: f64) -> Result<PmwsGrid> {
    if !(delta_lambda > 0.0) {
        return Err(Error::Parameter(format!(
            "delta_lambda must be positive, got {delta_lambda}"
        )));
    }
    if n_size < 1 {
        return Err(Error::Parameter("need N >= 1".into()));
    }
    let mut wavelengths = Vec::with_capacity(n_size * n_size);
    for i in 0..n_size {
        for j in 0..n_size {
            wavelengths.push(base + ((i * m_size + j) as f64) * delta_lambda);
        }
    }
    Ok(PmwsGrid { wavelengths, n_side: n_size, m_size, delta_lambda, base })
}

/// Delays produced by sending the source grid through the medium, re-anchored
/// so the zero-delay channel is (N,N) as in the ideal plan. Positive
/// dispersion reverses the wavelength-to-channel assignment instead of
/// producing negative delays.
pub fn dispersion_delays(grid: &PmwsGrid, medium: &DispersionMedium) -> DelayPlan {
    let n = grid.n_side;
    let per_nm = medium.delay_per_nm();
    let mut entries = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            let delay = if per_nm < 0.0 {
                (grid.wavelength(i, j) - grid.wavelength(n, n)) * per_nm
            } else {
                (grid.wavelength(n + 1 - i, n + 1 - j) - grid.base) * per_nm
            };
            entries.push(DelayEntry {
                i,
                j,
                delay_s: delay,
                realized_delay_s: delay,
                rounding_error_s: 0.0,
            });
        }
    }
    DelayPlan { entries, n_side: n }
}

/// Source and medium budget for a delay design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceRequirements {
    /// Source bandwidth (nm).
    pub bandwidth_nm: f64,
    /// Number of comb lines.
    pub lines: u64,
    /// Medium length (km).
    pub length_km: f64,
}

/// B = (M+1)(N-1)*d_lambda, k = B/d_lambda + 1, L = 1/(BR*|D|*d_lambda).
pub fn resource_requirements(
    m_size: usize,
    n_size: usize,
    delta_lambda: f64,
    dispersion_ps_nm_km: f64,
    baud: f64,
) -> Result<ResourceRequirements> {
    if !(delta_lambda > 0.0) || !(baud > 0.0) || dispersion_ps_nm_km == 0.0 || n_size < 1 {
        return Err(Error::Parameter("all design-point inputs must be nonzero".into()));
    }
    let bandwidth = (m_size as f64 + 1.0) * (n_size as f64 - 1.0) * delta_lambda;
    let lines = (bandwidth / delta_lambda + 1.0).round() as u64;
    let length_km = 1.0 / (baud * dispersion_ps_nm_km.abs() * 1e-12 * delta_lambda);
    Ok(ResourceRequirements { bandwidth_nm: bandwidth, lines, length_km })
}

/// Shift every channel right by its delay (zero-fill prefix), rounding to the
/// nearest sample. Returns the shifted frame and the plan annotated with the
/// realized delays and rounding errors.
pub fn apply_delays(frame: &WdmFrame, plan: &DelayPlan) -> Result<(WdmFrame, DelayPlan)> {
    if frame.channels.len() != plan.entries.len() {
        return Err(Error::Dimension(format!(
            "{} channels vs {} plan entries",
            frame.channels.len(),
            plan.entries.len()
        )));
    }
    let dt = frame.sample_period();
    let mut realized = plan.clone();
    let mut shifts = Vec::with_capacity(plan.entries.len());
    for e in realized.entries.iter_mut() {
        let shift = (e.delay_s / dt).round().max(0.0) as usize;
        e.realized_delay_s = shift as f64 * dt;
        e.rounding_error_s = e.realized_delay_s - e.delay_s;
        shifts.push(shift);
    }
    let max_shift = shifts.iter().copied().max().unwrap_or(0);
    let out_len = frame.len() + max_shift;
    let mut out = frame.clone();
    for (ch, &shift) in out.channels.iter_mut().zip(&shifts) {
        let mut shifted = vec![0.0; out_len];
        shifted[shift..shift + ch.len()].copy_from_slice(ch);
        *ch = shifted;
    }
    Ok((out, realized))
}

/// Agreement report between a realized plan and the required one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Largest |realized - required| (s).
    pub max_abs_deviation_s: f64,
    /// The same deviation in fractions of a symbol.
    pub max_deviation_symbols: f64,
}

/// Compare a realized delay plan against the required one.
pub fn verify_delay_feasibility(
    realized: &DelayPlan,
    target: &DelayPlan,
    baud: f64,
) -> Result<FeasibilityReport> {
    if realized.entries.len() != target.entries.len() || realized.n_side != target.n_side {
        return Err(Error::Dimension("plans have different shapes".into()));
    }
    let max_abs = realized
        .entries
        .iter()
        .zip(&target.entries)
        .map(|(r, t)| (r.delay_s - t.delay_s).abs())
        .fold(0.0, f64::max);
    Ok(FeasibilityReport {
        max_abs_deviation_s: max_abs,
        max_deviation_symbols: max_abs * baud,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::modulate;

    #[test]
    fn required_delays_small_case() {
        let plan = required_delays(3, 2, 1.0).unwrap();
        assert_eq!(plan.delay(1, 1), 4.0);
        assert_eq!(plan.delay(1, 2), 3.0);
        assert_eq!(plan.delay(2, 1), 1.0);
        assert_eq!(plan.delay(2, 2), 0.0);
    }

    #[test]
    fn required_delays_reference_channel_is_zero() {
        for (m, n) in [(3, 2), (5, 3), (28, 3)] {
            let plan = required_delays(m, n, 20e9).unwrap();
            assert_eq!(plan.delay(n, n), 0.0);
        }
    }

    #[test]
    fn required_delays_paper_scale_maximum() {
        let plan = required_delays(28, 3, 20e9).unwrap();
        assert!((plan.max_delay() - 2.9e-9).abs() < 1e-15);
    }

    #[test]
    fn required_delays_group_identities() {
        let baud = 20e9;
        let plan = required_delays(28, 3, baud).unwrap();
        for i in 1..=3 {
            for j in 2..=3 {
                let diff = plan.delay(i, j - 1) - plan.delay(i, j);
                assert!((diff - 1.0 / baud).abs() < 1e-24);
            }
        }
        for i in 1..=2 {
            for j in 1..=3 {
                let diff = plan.delay(i, j) - plan.delay(i + 1, j);
                assert!((diff - 28.0 / baud).abs() < 1e-24);
            }
        }
    }

    #[test]
    fn required_delays_rejects_bad_geometry() {
        assert!(required_delays(3, 3, 1e9).is_err());
        assert!(required_delays(3, 0, 1e9).is_err());
    }

    #[test]
    fn pmws_single_wavelength() {
        let grid = pmws_grid(28, 1, 0.2, 1550.0).unwrap();
        assert_eq!(grid.wavelengths, vec![1550.0]);
        assert_eq!(grid.span(), 0.0);
    }

    #[test]
    fn pmws_paper_span() {
        let grid = pmws_grid(28, 3, 0.2, 1550.0).unwrap();
        assert!((grid.span() - 11.6).abs() < 1e-12);
    }

    #[test]
    fn pmws_spacing_constraints() {
        let grid = pmws_grid(11, 3, 0.25, 1540.0).unwrap();
        for i in 1..=3 {
            for j in 2..=3 {
                let d = grid.wavelength(i, j) - grid.wavelength(i, j - 1);
                assert_eq!(d, 0.25);
            }
        }
        for i in 2..=3 {
            for j in 1..=3 {
                let d = grid.wavelength(i, j) - grid.wavelength(i - 1, j);
                assert_eq!(d, 11.0 * 0.25);
            }
        }
    }

    #[test]
    fn dispersion_matches_symbol_period_at_design_point() {
        // 0.2 nm * 150 ps/nm/km * 1.6667 km = 50 ps = 1/(20 GBaud)
        let grid = pmws_grid(28, 3, 0.2, 1550.0).unwrap();
        let medium = DispersionMedium::new(-150.0, 1.0 / 0.6).unwrap();
        let plan = dispersion_delays(&grid, &medium);
        let adjacent = plan.delay(1, 1) - plan.delay(1, 2);
        assert!((adjacent - 50e-12).abs() < 1e-20);
    }

    #[test]
    fn dispersion_single_wavelength_is_zero() {
        let grid = pmws_grid(28, 1, 0.2, 1550.0).unwrap();
        let medium = DispersionMedium::new(-150.0, 2.0).unwrap();
        let plan = dispersion_delays(&grid, &medium);
        assert_eq!(plan.entries[0].delay_s, 0.0);
    }

    #[test]
    fn dispersion_equals_required_at_design_length() {
        // d_lambda * |D| * L * BR = 1 makes the dispersive plan exact.
        let baud = 20e9;
        let req = resource_requirements(28, 3, 0.2, -150.0, baud).unwrap();
        let grid = pmws_grid(28, 3, 0.2, 1550.0).unwrap();
        let medium = DispersionMedium::new(-150.0, req.length_km).unwrap();
        let realized = dispersion_delays(&grid, &medium);
        let target = required_delays(28, 3, baud).unwrap();
        let report = verify_delay_feasibility(&realized, &target, baud).unwrap();
        assert!(
            report.max_deviation_symbols < 1e-9,
            "deviation {} symbols",
            report.max_deviation_symbols
        );
    }

    #[test]
    fn dispersion_positive_d_reverses_assignment() {
        let baud = 20e9;
        let req = resource_requirements(28, 3, 0.2, 150.0, baud).unwrap();
        let grid = pmws_grid(28, 3, 0.2, 1550.0).unwrap();
        let medium = DispersionMedium::new(150.0, req.length_km).unwrap();
        let realized = dispersion_delays(&grid, &medium);
        let target = required_delays(28, 3, baud).unwrap();
        let report = verify_delay_feasibility(&realized, &target, baud).unwrap();
        assert!(report.max_deviation_symbols < 1e-9);
        assert!(realized.entries.iter().all(|e| e.delay_s >= 0.0));
    }

    #[test]
    fn resources_paper_design_point() {
        let r = resource_requirements(28, 3, 0.2, -150.0, 20e9).unwrap();
        assert!((r.bandwidth_nm - 11.6).abs() < 1e-12);
        assert_eq!(r.lines, 59);
        assert!((r.length_km - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn resources_single_group() {
        let r = resource_requirements(28, 1, 0.2, -150.0, 20e9).unwrap();
        assert_eq!(r.bandwidth_nm, 0.0);
        assert_eq!(r.lines, 1);
    }

    #[test]
    fn resources_length_inverse_in_baud() {
        let a = resource_requirements(28, 3, 0.2, -150.0, 10e9).unwrap();
        let b = resource_requirements(28, 3, 0.2, -150.0, 20e9).unwrap();
        assert!((a.length_km - 2.0 * b.length_km).abs() < 1e-12);
    }

    #[test]
    fn apply_zero_plan_keeps_frame() {
        let frame = modulate(&[0.5, 0.25], 1e9, 4, 4, 1.0, 0).unwrap();
        let plan = DelayPlan {
            entries: (1..=2)
                .flat_map(|i| {
                    (1..=2).map(move |j| DelayEntry {
                        i,
                        j,
                        delay_s: 0.0,
                        realized_delay_s: 0.0,
                        rounding_error_s: 0.0,
                    })
                })
                .collect(),
            n_side: 2,
        };
        let (out, realized) = apply_delays(&frame, &plan).unwrap();
        assert_eq!(out.channels, frame.channels);
        assert!(realized.entries.iter().all(|e| e.rounding_error_s == 0.0));
    }

    #[test]
    fn apply_one_symbol_delay_prepends_zeros() {
        let baud = 1e9;
        let frame = modulate(&[1.0], baud, 4, 1, 1.0, 0).unwrap();
        let plan = DelayPlan {
            entries: vec![DelayEntry {
                i: 1,
                j: 1,
                delay_s: 1.0 / baud,
                realized_delay_s: 0.0,
                rounding_error_s: 0.0,
            }],
            n_side: 1,
        };
        let (out, _) = apply_delays(&frame, &plan).unwrap();
        assert_eq!(out.channels[0], vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn apply_impulse_readout_matches_plan() {
        let baud = 1e9;
        let s = 4usize;
        let mut image = vec![0.0; 9];
        image[0] = 1.0;
        let frame = modulate(&image, baud, s, 4, 1.0, 5).unwrap();
        let plan = required_delays(3, 2, baud).unwrap();
        let (out, _) = apply_delays(&frame, &plan).unwrap();
        for (c, expect_symbols) in [(0usize, 4usize), (1, 3), (2, 1), (3, 0)] {
            let first_nonzero = out.channels[c].iter().position(|&v| v > 0.0).unwrap();
            assert_eq!(first_nonzero, expect_symbols * s, "channel {c}");
        }
    }

    #[test]
    fn feasibility_perturbed_length() {
        let baud = 20e9;
        let req = resource_requirements(28, 3, 0.2, -150.0, baud).unwrap();
        let grid = pmws_grid(28, 3, 0.2, 1550.0).unwrap();
        let medium = DispersionMedium::new(-150.0, req.length_km * 1.01).unwrap();
        let realized = dispersion_delays(&grid, &medium);
        let target = required_delays(28, 3, baud).unwrap();
        let report = verify_delay_feasibility(&realized, &target, baud).unwrap();
        // 1% of the longest delay, 58 symbols: 0.58 symbols of deviation.
        assert!((report.max_deviation_symbols - 0.58).abs() < 1e-9);
    }

    #[test]
    fn feasibility_gaussian_errors_reported() {
        let baud = 20e9;
        let target = required_delays(28, 3, baud).unwrap();
        let noisy = target.clone().with_gaussian_errors(5e-12, 7);
        let report = verify_delay_feasibility(&noisy, &target, baud).unwrap();
        let expect = noisy
            .entries
            .iter()
            .zip(&target.entries)
            .map(|(a, b)| (a.delay_s - b.delay_s).abs())
            .fold(0.0, f64::max);
        assert_eq!(report.max_abs_deviation_s, expect);
        assert!(report.max_abs_deviation_s > 0.0);
    }
}
