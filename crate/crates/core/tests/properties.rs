//! Property tests for the spec-level invariants.

use proptest::prelude::*;

use pcnn_core::delay::required_delays;
use pcnn_core::device_models::{
    build_vt_database, map_weights, transmission, MappingMode, MrrPhysical,
};
use pcnn_core::grid::Matrix;
use pcnn_core::ocu::{
    conv2d_optical, conv2d_reference, correlation_decomposition_check, OcuConfig,
};
use pcnn_core::waveform::{modulate, photodetect, quantize, SamplingPlan};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transmission_stays_physical(
        tau in 0.01f64..0.999,
        alpha in 0.01f64..1.0,
        theta0 in -10.0f64..10.0,
        v in 0.0f64..5.0,
        detuning in -1e12f64..1e12,
    ) {
        let p = MrrPhysical::new(tau, alpha, theta0, 1.3, 2e12).unwrap();
        let t = transmission(&p, v, detuning).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn mapping_residuals_bounded_by_searched_gap(
        bits in 4u32..11,
        seed in 0u64..1000,
        n in 1usize..4,
    ) {
        let db = build_vt_database(&MrrPhysical::default(), 1.2, bits).unwrap();
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(12345);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let kernel = Matrix::square(n, (0..n * n).map(|_| next()).collect()).unwrap();
        for mode in [MappingMode::FullRange, MappingMode::QuasiLinear] {
            let mapping = map_weights(&db, &kernel, mode).unwrap();
            for r in &mapping.records {
                prop_assert!(r.residual.abs() <= mapping.max_searched_gap + 1e-12);
            }
        }
    }

    #[test]
    fn optical_matches_reference_plus_weighting_error(
        m in 3usize..8,
        n in 1usize..4,
        seed in 0u64..10_000,
    ) {
        prop_assume!(n < m);
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(7);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let image = Matrix::square(m, (0..m * m).map(|_| next()).collect()).unwrap();
        let kernel = Matrix::square(n, (0..n * n).map(|_| next()).collect()).unwrap();
        let (optical, diag) = conv2d_optical(&image, &kernel, &OcuConfig::ideal()).unwrap();
        let reference = conv2d_reference(&image, &kernel).unwrap();
        let we = diag.weighting_error_output(&image.flatten()).unwrap();
        for i in 0..optical.as_slice().len() {
            let expect = reference.as_slice()[i] + we[i];
            prop_assert!(
                (optical.as_slice()[i] - expect).abs() <= diag.half_step_output + 1e-12,
                "element {} off by more than a half-step", i
            );
        }
    }

    #[test]
    fn decomposition_identity_holds(
        m in 2usize..9,
        n in 1usize..4,
        seed in 0u64..10_000,
    ) {
        prop_assume!(n <= m);
        let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(3);
        let mut next = move |range: u64| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state % range
        };
        let image: Vec<f64> = (0..m * m).map(|_| next(16) as f64).collect();
        let kernel = Matrix::square(n, (0..n * n).map(|_| next(16) as f64).collect()).unwrap();
        let check = correlation_decomposition_check(&image, &kernel).unwrap();
        prop_assert_eq!(check.max_diff, 0.0);
    }

    #[test]
    fn photodetect_conserves_energy(
        pixels in proptest::collection::vec(0.0f64..1.0, 4..36),
        channels in 1usize..4,
    ) {
        let n_ch = channels * channels;
        let frame = modulate(&pixels, 1e9, 8, n_ch, 1.0, 2).unwrap();
        let pd = photodetect(&frame, 0.0, 0).unwrap();
        let out: f64 = pd.iter().sum();
        let input: f64 = frame.channels.iter().map(|c| c.iter().sum::<f64>()).sum();
        if input > 0.0 {
            prop_assert!((out - input).abs() / input < 1e-9);
        } else {
            prop_assert_eq!(out, 0.0);
        }
    }

    #[test]
    fn delay_plan_group_identities(
        m in 2usize..40,
        n in 1usize..6,
        baud in 1e9f64..50e9,
    ) {
        prop_assume!(n < m);
        let plan = required_delays(m, n, baud).unwrap();
        prop_assert_eq!(plan.delay(n, n), 0.0);
        for i in 1..=n {
            for j in 2..=n {
                let diff = plan.delay(i, j - 1) - plan.delay(i, j);
                prop_assert!((diff - 1.0 / baud).abs() < 1e-22);
            }
        }
        for i in 2..=n {
            for j in 1..=n {
                let diff = plan.delay(i - 1, j) - plan.delay(i, j);
                prop_assert!((diff - m as f64 / baud).abs() < 1e-22);
            }
        }
    }

    #[test]
    fn quantizer_error_bounded_and_idempotent(
        samples in proptest::collection::vec(0.0f64..2.0, 1..64),
        bits in 2u32..13,
    ) {
        let plan = SamplingPlan { sigma: 0.5, circuit_delay: 0.0, adc_bits: bits, full_scale: 2.0 };
        let q = quantize(&samples, &plan).unwrap();
        for (&x, &y) in samples.iter().zip(&q) {
            prop_assert!((x - y).abs() <= plan.half_step() + 1e-15);
        }
        let q2 = quantize(&q, &plan).unwrap();
        prop_assert_eq!(&q, &q2);
    }
}
