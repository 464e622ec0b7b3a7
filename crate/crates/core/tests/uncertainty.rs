use proptest::prelude::*;
use quench_core::uncertainty::*;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn small_angle_bound_holds(theta in 1e-6f64..=0.3) {
        let b = small_angle_bound(theta).unwrap();
        prop_assert!(b.exact <= b.bound);
    }

    #[test]
    fn equal_errors_give_arithmetic_mean(xs in proptest::collection::vec(-10.0f64..10.0, 1..20), d in 0.01f64..5.0) {
        let v: Vec<_> = xs.iter().map(|&x| Measured::new(x, d)).collect();
        let m = weighted_mean(&v).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!((m.value - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        prop_assert!((m.sigma - d / (xs.len() as f64).sqrt()).abs() <= 1e-12 * d);
    }

    #[test]
    fn propagation_scales_consistently(
        dv in 0.1f64..10.0, ds in 0.0f64..1.0, wv in 0.1f64..10.0, ws in 0.0f64..1.0, c in 0.01f64..100.0,
    ) {
        let base = sensitivity_uncertainty(Measured::new(dv, ds), Measured::new(wv, ws)).unwrap();
        let num = sensitivity_uncertainty(Measured::new(c * dv, c * ds), Measured::new(wv, ws)).unwrap();
        prop_assert!((num.value / base.value - c).abs() <= 1e-12 * c);
        prop_assert!((num.sigma - c * base.sigma).abs() <= 1e-12 * c * (base.sigma + 1e-300));
        let both = sensitivity_uncertainty(Measured::new(c * dv, c * ds), Measured::new(c * wv, c * ws)).unwrap();
        prop_assert!((both.value - base.value).abs() <= 1e-12 * base.value);
        prop_assert!((both.sigma - base.sigma).abs() <= 1e-12 * (base.sigma + base.value));

        let wm = weighted_mean(&[Measured::new(dv, ds + 0.01), Measured::new(wv, ws + 0.01)]).unwrap();
        let wc = weighted_mean(&[Measured::new(c * dv, c * (ds + 0.01)), Measured::new(c * wv, c * (ws + 0.01))]).unwrap();
        prop_assert!((wc.value - c * wm.value).abs() <= 1e-12 * c * (wm.value.abs() + 1.0));
        prop_assert!((wc.sigma - c * wm.sigma).abs() <= 1e-12 * c * wm.sigma);

        let f = frequency_stats(&[dv, wv, dv + ds]).unwrap();
        let fc = frequency_stats(&[c * dv, c * wv, c * (dv + ds)]).unwrap();
        prop_assert!((fc.value - c * f.value).abs() <= 1e-12 * c * f.value);
        prop_assert!((fc.sigma - c * f.sigma).abs() <= 1e-10 * c * (f.sigma + f.value));
    }
}
