use linma_core::lorentz::{lorentz_norm, lp_norm, DistributionProfile};
use proptest::prelude::*;

fn field() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-50i32..50).prop_map(|k| k as f64 / 8.0), -3.0..3.0f64], 1..200)
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().any(|x| *x != 0.0)
}

proptest! {
    #[test]
    fn lpp_is_lp(v in field(), p in 1.0..5.0f64, cell in 0.001..1.0f64) {
        prop_assume!(nonzero(&v));
        let prof = DistributionProfile::from_values(&v, cell);
        let a = lorentz_norm(&prof, p, p).unwrap();
        let b = lp_norm(&v, cell, p);
        prop_assert!((a - b).abs() <= 1e-12 * b, "{a} vs {b}");
    }

    #[test]
    fn homogeneous_in_the_field(v in field(), p in 1.0..4.0f64, q in 0.5..6.0f64, c in 0.1..10.0f64) {
        prop_assume!(nonzero(&v));
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let a = lorentz_norm(&DistributionProfile::from_values(&scaled, 0.1), p, q).unwrap();
        let b = lorentz_norm(&DistributionProfile::from_values(&v, 0.1), p, q).unwrap();
        prop_assert!((a - c * b).abs() <= 1e-10 * a);
    }

    #[test]
    fn measure_scaling(v in field(), p in 1.0..4.0f64, q in 0.5..6.0f64, s in 0.1..10.0f64) {
        prop_assume!(nonzero(&v));
        let a = lorentz_norm(&DistributionProfile::from_values(&v, 0.1 * s), p, q).unwrap();
        let b = lorentz_norm(&DistributionProfile::from_values(&v, 0.1), p, q).unwrap();
        prop_assert!((a - s.powf(1.0 / p) * b).abs() <= 1e-10 * a);
    }

    #[test]
    fn distribution_is_monotone(v in field(), w in prop::collection::vec(0.0..2.0f64, 200)) {
        let prof = DistributionProfile::from_weighted(&v, &w[..v.len()]);
        for pair in prof.measures.windows(2) {
            prop_assert!(pair[0] >= pair[1]);
        }
        for pair in prof.breakpoints.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
        let mut last = prof.total;
        for t in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let m = prof.measure_above(t);
            prop_assert!(m <= last + 1e-12);
            last = m;
        }
    }

    #[test]
    fn weak_norm_is_the_smallest(v in field(), p in 1.0..4.0f64) {
        prop_assume!(nonzero(&v));
        let prof = DistributionProfile::from_values(&v, 0.05);
        let weak = lorentz_norm(&prof, p, f64::INFINITY).unwrap();
        for q in [1.0, 0.5 * (1.0 + p), p] {
            let strong = lorentz_norm(&prof, p, q).unwrap();
            // holds for q ≤ p under this normalisation
            prop_assert!(weak <= strong * (1.0 + 1e-12), "q {q}: {weak} > {strong}");
        }
    }

    #[test]
    fn layer_cake_first_moment(v in field(), w in prop::collection::vec(0.0..2.0f64, 200)) {
        prop_assume!(nonzero(&v));
        let w = &w[..v.len()];
        let prof = DistributionProfile::from_weighted(&v, w);
        let direct: f64 = v.iter().zip(w).map(|(x, w)| x.abs() * w).sum();
        prop_assume!(direct > 0.0);
        let l1 = lorentz_norm(&prof, 1.0, 1.0).unwrap();
        prop_assert!((l1 - direct).abs() <= 1e-12 * direct.max(1.0));
    }
}
