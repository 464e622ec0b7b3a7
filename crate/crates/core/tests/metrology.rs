use std::f64::consts::PI;

use proptest::prelude::*;
use quench_core::metrology::*;
use quench_core::{PhysicalParams, QuenchProfile};

const TAUS: [f64; 6] = [1.95e-6, 3.77e-6, 7.24e-6, 14.9e-6, 36.6e-6, 72.9e-6];

#[test]
fn optimal_sensitivity_falls_with_ramp_time() {
    let p = PhysicalParams::paper_default();
    let fq = qfi_half_period(&p).value;
    let mut last = f64::INFINITY;
    for tau in TAUS {
        let prof = QuenchProfile::blended(&p, tau);
        let (pt, _) = optimal_sensitivity(&p, &prof, 16e-3, &Default::default()).unwrap();
        println!("tau {:5.2} us  T_opt {:6.1} us  S {:.2}", tau * 1e6, pt.t_opt * 1e6, pt.s);
        assert!(pt.s <= last, "tau {tau}: {} > {last}", pt.s);
        assert!(!bound_check(pt.s, fq).unwrap().violated);
        last = pt.s;
    }
}

#[test]
fn heating_lowers_sensitivity() {
    let p = PhysicalParams::paper_default();
    let prof = QuenchProfile::blended(&p, 1.95e-6);
    let s: Vec<f64> = [6e-3, 16e-3, 22e-3]
        .iter()
        .map(|&h| optimal_sensitivity(&p, &prof, h, &Default::default()).unwrap().0.s)
        .collect();
    assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
}

#[test]
fn sudden_quench_peak_sits_at_half_period() {
    let mut p = PhysicalParams::paper_default();
    p.heating_rate = 0.0;
    let prof = QuenchProfile::step(&p);
    let run = sensitivity_curve(&p, &prof, 0.0, &Default::default()).unwrap();
    let t = find_t_opt(&run.curve, &run.sigma_trace(), &prof, &p, T_OPT_THRESHOLD).unwrap();
    assert!((t - PI / p.omega1).abs() <= 0.5e-6);
    let (pt, _) = optimal_sensitivity(&p, &prof, 0.0, &Default::default()).unwrap();
    assert!((pt.t_opt - PI / p.omega1).abs() <= 20e-9, "{}", pt.t_opt);
    // exactly at π/ω₁ the position readout saturates the bound
    let half = PI / p.omega1;
    let exact = sensitivity_curve(
        &p,
        &prof,
        0.0,
        &SensitivityOptions {
            t_end: Some(half),
            dt_out: half / 4000.0,
            ..Default::default()
        },
    )
    .unwrap();
    let s = *exact.curve.s_values.last().unwrap();
    let ratio = bound_check(s, qfi_sudden(&p, half).value).unwrap().ratio;
    assert!((ratio - 1.0).abs() < 1e-6, "{ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn compact_form_equals_gaussian_formula(
        ratio in 1.5f64..80.0,
        nbar in 0.0f64..20.0,
        t in 0.0f64..1e-3,
    ) {
        let mut p = PhysicalParams::paper_default();
        p.omega1 = p.omega0 / ratio;
        p.nbar = nbar;
        let a = qfi_sudden(&p, t).value;
        let b = qfi_sudden_general(&p, t);
        prop_assert!(((a - b) / a).abs() <= 1e-9);
        prop_assert!(position_fisher(&p, t) <= a * (1.0 + 1e-9));
    }

    #[test]
    fn odd_half_periods_saturate(ratio in 1.5f64..80.0, k in 0usize..5) {
        let mut p = PhysicalParams::paper_default();
        p.omega1 = p.omega0 / ratio;
        let t = (2 * k + 1) as f64 * PI / p.omega1;
        let fq = qfi_sudden(&p, t).value;
        prop_assert!(((position_fisher(&p, t) - fq) / fq).abs() <= 1e-9);
        prop_assert!((fq / qfi_half_period(&p).value - 1.0).abs() <= 1e-9);
    }
}
