mod common;

use approx::{assert_abs_diff_eq, assert_relative_eq};
use frera_core::frera::{self, DistortionVector, ImportanceVector, ThresholdMode};
use frera_core::objective;
use frera_core::pipeline::{Dataset, Normalization, Split};
use frera_core::spectral::{self, TimeSeries};
use ndarray::Array2;
use proptest::prelude::*;

fn series(max_len: usize, max_ch: usize) -> impl Strategy<Value = TimeSeries> {
    (2..=max_len, 1..=max_ch).prop_flat_map(|(l, d)| {
        prop::collection::vec(-100.0f64..100.0, l * d)
            .prop_map(move |v| TimeSeries::new(Array2::from_shape_vec((l, d), v).unwrap(), None).unwrap())
    })
}

fn scores(max_len: usize) -> impl Strategy<Value = ImportanceVector> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len).prop_map(|v| ImportanceVector::new(v).unwrap())
}

fn threshold() -> impl Strategy<Value = ThresholdMode> {
    prop_oneof![
        Just(ThresholdMode::Mean),
        Just(ThresholdMode::Median),
        Just(ThresholdMode::MeanPlusStd)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip(x in series(70, 3)) {
        let back = spectral::inverse_rdft(&spectral::forward_rdft(&x));
        for (a, b) in back.values().iter().zip(x.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn parseval_and_energy_profile(x in series(70, 3)) {
        let spec = spectral::forward_rdft(&x);
        let time: f64 = x.values().iter().map(|v| v * v).sum();
        let full: f64 = spectral::full_spectrum(&spec).iter().map(|c| c.norm_sqr()).sum::<f64>()
            / x.len() as f64;
        let profile: f64 = spectral::energy_spectrum(&spec).sum();
        assert_relative_eq!(time, full, max_relative = 1e-9, epsilon = 1e-12);
        assert_relative_eq!(time, profile, max_relative = 1e-9, epsilon = 1e-12);
    }

    #[test]
    fn forward_matches_direct_sum(x in series(48, 2)) {
        let spec = spectral::forward_rdft(&x);
        for d in 0..x.channels() {
            let direct = common::direct_dft(&x.channel(d).to_vec());
            for m in 0..spec.num_components() {
                assert_abs_diff_eq!(spec.values()[[m, d]].re, direct[m].re, epsilon = 1e-9);
                assert_abs_diff_eq!(spec.values()[[m, d]].im, direct[m].im, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn mask_stays_in_open_unit_interval(
        s in scores(40),
        tau_w in 0.01f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let mask = frera::sample_crit_mask(&s, tau_w, &mut rng).unwrap();
        prop_assert!(mask.weights().iter().all(|&w| w > 0.0 && w < 1.0));
        prop_assert!(mask.derivative().iter().all(|&d| d >= 0.0 && d.is_finite()));
    }

    #[test]
    fn distortion_is_normalized_and_supported_on_low_scores(s in scores(40), mode in threshold()) {
        let dist = frera::compute_distortion(&s, mode);
        let t = dist.threshold();
        prop_assert!(t <= 0.0);
        for (i, (&w, &si)) in dist.weights().iter().zip(s.scores()).enumerate() {
            if si < t {
                prop_assert!(dist.unimportant().contains(&i));
                prop_assert!(w > 0.0 || si == 0.0);
            } else {
                prop_assert_eq!(w, 0.0);
            }
        }
        if !dist.unimportant().is_empty() {
            let mean = dist.unimportant().iter().map(|&i| dist.weights()[i]).sum::<f64>()
                / dist.unimportant().len() as f64;
            assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_ones_mask_without_distortion_is_identity(x in series(40, 2)) {
        let f = spectral::num_components(x.len());
        let mask = frera::CritMask::fixed(vec![1.0; f]);
        let view = frera::augment(&x, &mask, &DistortionVector::zeros(f, ThresholdMode::Mean)).unwrap();
        for (a, b) in view.values.iter().zip(x.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn infonce_is_nonnegative_and_bounded_by_log_batch_at_uniform(
        b in 2usize..8,
        k in 2usize..6,
        seed in any::<u64>(),
        tau in 0.05f64..2.0,
    ) {
        let mut rng = common::rng(seed);
        let a = common::random_series(b, k, &mut rng).into_values();
        let v = common::random_series(b, k, &mut rng).into_values();
        let sim = objective::cosine_similarity_matrix(&a, &v).unwrap();
        prop_assert!(sim.values.iter().all(|&c| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&c)));
        let loss = objective::infonce_loss(&sim.values, tau).unwrap();
        prop_assert!(loss >= 0.0);
        let uniform = objective::infonce_loss(&Array2::zeros((b, b)), tau).unwrap();
        assert_relative_eq!(uniform, (b as f64).ln(), max_relative = 1e-12);
    }

    #[test]
    fn normalization_standardizes_training_channels(
        n in 2usize..10,
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
        scale in 0.1f64..20.0,
    ) {
        let mut rng = common::rng(seed);
        let samples: Vec<TimeSeries> = (0..n)
            .map(|_| {
                let x = common::random_series(16, 2, &mut rng).into_values();
                TimeSeries::new(x.mapv(|v| v * scale + shift), Some(0)).unwrap()
            })
            .collect();
        let data = Dataset::new(samples, 1, Split::Train).unwrap();
        let out = Normalization::fit(&data).apply(&data).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = out.samples().iter().flat_map(|s| s.channel(c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_relative_eq!(var, 1.0, max_relative = 1e-9);
        }
    }
}
