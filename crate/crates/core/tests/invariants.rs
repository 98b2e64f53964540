use proptest::prelude::*;

use phaseret_core::aggregation::{apply_transform, EquivariantTransform, TransformKind};
use phaseret_core::projections::{project_magnitude, project_space};
use phaseret_core::rng::derive_seed;
use phaseret_core::uncertainty::{calibrate, empirical_variance, fit_isotonic, isotonic_values};
use phaseret_core::{forward, measure, pseudoinverse, ImageGrid, NoiseModel};

fn image(n: usize) -> impl Strategy<Value = ImageGrid> {
    prop::collection::vec(0.0..1.0f64, n * n).prop_map(move |px| ImageGrid::from_inner(n, 2 * n, &px).unwrap())
}

fn signed_frame(n: usize) -> impl Strategy<Value = ImageGrid> {
    let p = 2 * n;
    prop::collection::vec(-1.0..1.0f64, p * p).prop_map(move |v| ImageGrid::from_frame(n, p, v).unwrap())
}

/// Least-squares monotone fit by trying every split of the sorted points into
/// consecutive blocks.
fn brute_force_isotonic(actual: &[f64]) -> f64 {
    let n = actual.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                let b = &actual[start..=i];
                blocks.push((b.iter().sum::<f64>() / b.len() as f64, b));
                start = i + 1;
            }
        }
        if blocks.windows(2).all(|w| w[0].0 <= w[1].0) {
            let sse: f64 = blocks.iter().flat_map(|(m, b)| b.iter().map(move |v| (v - m) * (v - m))).sum();
            best = best.min(sse);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_unitary(x in signed_frame(4)) {
        let spec = forward(&x).unwrap();
        prop_assert!((spec.norm() - x.norm()).abs() < 1e-12 * (1.0 + x.norm()));
    }

    #[test]
    fn pseudoinverse_inverts_on_support(x in image(5)) {
        let back = pseudoinverse(&forward(&x).unwrap(), x.support()).unwrap();
        prop_assert!(back.distance(&x) < 1e-12);
    }

    #[test]
    fn projections_are_idempotent(x in signed_frame(4), t in image(4)) {
        let (s1, _) = project_space(&x);
        let (s2, v) = project_space(&s1);
        prop_assert_eq!(&s1, &s2);
        prop_assert!(v.is_empty());

        let y = measure(&t, &NoiseModel::new(0.0), 0).unwrap();
        let f1 = project_magnitude(&x, &y).unwrap();
        let f2 = project_magnitude(&f1, &y).unwrap();
        prop_assert!(f1.distance(&f2) < 1e-12);
        let mags = forward(&f1).unwrap().magnitudes();
        let max_err = mags.iter().zip(y.magnitudes()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(max_err < 1e-9, "{}", max_err);
    }

    #[test]
    fn twins_share_measurements(x in image(5)) {
        let t = EquivariantTransform::new(TransformKind::Rot180, 5);
        let twin = apply_transform(&x, &t);
        prop_assert_eq!(&apply_transform(&twin, &t.inverse()), &x);
        let a = forward(&x).unwrap().magnitudes();
        let b = forward(&twin).unwrap().magnitudes();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_measurement_is_exact(x in image(4), seed in any::<u64>()) {
        let y = measure(&x, &NoiseModel::new(0.0), seed).unwrap();
        let mags = forward(&x).unwrap().magnitudes();
        prop_assert_eq!(y.magnitudes(), mags.as_slice());
    }

    #[test]
    fn isotonic_matches_brute_force(actual in prop::collection::vec(-3.0..3.0f64, 2..=6)) {
        let pairs: Vec<(f64, f64)> = actual.iter().enumerate().map(|(i, a)| (i as f64, *a)).collect();
        let fit = isotonic_values(&pairs).unwrap();
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1]));
        let sse: f64 = fit.iter().zip(&actual).map(|(f, a)| (f - a) * (f - a)).sum();
        prop_assert!((sse - brute_force_isotonic(&actual)).abs() < 1e-9);
    }

    #[test]
    fn calibration_never_reorders(
        pairs in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 2..40),
        a in -1.0..6.0f64,
        b in -1.0..6.0f64,
    ) {
        let m = fit_isotonic(&pairs).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(calibrate(&m, lo) <= calibrate(&m, hi));
    }

    #[test]
    fn variance_matches_textbook_formula(samples in prop::collection::vec(image(2), 2..8)) {
        let r = empirical_variance(&samples).unwrap();
        let q = samples.len() as f64;
        for i in 0..samples[0].len() {
            let mean = samples.iter().map(|s| s.values()[i]).sum::<f64>() / q;
            let var = samples.iter().map(|s| (s.values()[i] - mean).powi(2)).sum::<f64>() / (q - 1.0);
            prop_assert!((r.per_pixel_variance[i] - var).abs() < 1e-12);
        }
        prop_assert!(r.predicted_variance >= 0.0);
    }

    #[test]
    fn derived_seeds_are_distinct(parent in any::<u64>(), s in 0u64..16, i in 0u64..1000) {
        prop_assert_eq!(derive_seed(parent, s, i), derive_seed(parent, s, i));
        prop_assert_ne!(derive_seed(parent, s, i), derive_seed(parent, s, i + 1));
        prop_assert_ne!(derive_seed(parent, s, i), derive_seed(parent, s + 1, i));
    }
}
