//! Quantum Fisher information, single-shot sensitivity and the optimal
//! measurement time.
//!
//! For a Gaussian state whose mean depends linearly on the acceleration,
//! the QFI is fᵀΣ⁻¹f with f = ∂μ⃗/∂a. After a sudden ω₀ → ω₁ quench this
//! collapses to
//!
//! ```text
//! F(t) = 2m/(ħκω₀³) · [1 + r(r − 1)(1 − cos ω₁t)²],   r = ω₀²/ω₁²
//! ```

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    default_dt, integrate_sampled, sudden_quench_covariance, Covariance, Trajectory,
    DEFAULT_DT_OUT,
};
use crate::error::{invalid, Error, Result};
use crate::params::PhysicalParams;
use crate::profile::QuenchProfile;

/// Regime boundary between the σ-minimum and the Δμ-maximum rules.
pub const T_OPT_THRESHOLD: f64 = 30e-6;

/// Default half-width of the acceleration finite difference, m/s².
pub const DEFAULT_DELTA_A: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QfiResult {
    pub value: f64,
    pub time: f64,
    pub kappa: f64,
    pub r: f64,
}

fn prefactor(params: &PhysicalParams) -> (f64, f64, f64) {
    let kappa = 2.0 * params.nbar + 1.0;
    let w0 = params.omega0;
    let r = (w0 * w0) / (params.omega1 * params.omega1);
    (2.0 * params.mass / (params.hbar * kappa * w0 * w0 * w0), kappa, r)
}

/// Compact closed form of the sudden-quench QFI.
pub fn qfi_sudden(params: &PhysicalParams, t: f64) -> QfiResult {
    let (pre, kappa, r) = prefactor(params);
    let u = 1.0 - (params.omega1 * t).cos();
    QfiResult {
        value: pre * (1.0 + r * (r - 1.0) * u * u),
        time: t,
        kappa,
        r,
    }
}

/// QFI at T₁/2, where the bracket reaches its maximum (2r − 1)².
pub fn qfi_half_period(params: &PhysicalParams) -> QfiResult {
    let (pre, kappa, r) = prefactor(params);
    QfiResult {
        value: pre * (1.0 + 4.0 * r * (r - 1.0)),
        time: PI / params.omega1,
        kappa,
        r,
    }
}

/// ∂⟨z⟩/∂a and ∂⟨p⟩/∂a after the sudden quench.
pub fn sudden_quench_response(params: &PhysicalParams, t: f64) -> (f64, f64) {
    let (w0, w1) = (params.omega0, params.omega1);
    let (s, c) = (w1 * t).sin_cos();
    let fx = 1.0 / (w1 * w1) + (1.0 / (w0 * w0) - 1.0 / (w1 * w1)) * c;
    let fp = params.mass * w1 * (1.0 / (w1 * w1) - 1.0 / (w0 * w0)) * s;
    (fx, fp)
}

/// fᵀΣ⁻¹f for a two-mode response vector and covariance.
pub fn gaussian_fisher(f: (f64, f64), cov: &Covariance) -> f64 {
    let det = cov.det();
    (f.0 * f.0 * cov.v_pp - 2.0 * f.0 * f.1 * cov.v_xp + f.1 * f.1 * cov.v_xx) / det
}

/// Sudden-quench QFI through the general Gaussian formula.
pub fn qfi_sudden_general(params: &PhysicalParams, t: f64) -> f64 {
    gaussian_fisher(
        sudden_quench_response(params, t),
        &sudden_quench_covariance(params, t),
    )
}

/// Classical Fisher information of a position readout, f_x²/V_xx.
pub fn position_fisher(params: &PhysicalParams, t: f64) -> f64 {
    let (fx, _) = sudden_quench_response(params, t);
    fx * fx / sudden_quench_covariance(params, t).v_xx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub times: Vec<f64>,
    pub s_values: Vec<f64>,
    pub dmu_da: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SensitivityCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the grid point nearest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_s", "S_s2", "dmu_da_s2", "sigma_m"])?;
        for i in 0..self.len() {
            w.write_record([
                format!("{:e}", self.times[i]),
                format!("{:e}", self.s_values[i]),
                format!("{:e}", self.dmu_da[i]),
                format!("{:e}", self.sigma[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityOptions {
    pub delta_a: f64,
    /// Table tilt added to θ₀, rad.
    pub tilt: f64,
    /// Defaults to the quench end plus 1.5 post-quench periods.
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub dt_out: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            delta_a: DEFAULT_DELTA_A,
            tilt: 0.0,
            t_end: None,
            dt: None,
            dt_out: DEFAULT_DT_OUT,
        }
    }
}

/// A sensitivity curve together with the central-acceleration trajectory.
#[derive(Debug, Clone)]
pub struct SensitivityRun {
    pub curve: SensitivityCurve,
    pub central: Trajectory,
    pub acceleration: f64,
}

impl SensitivityRun {
    pub fn sigma_trace(&self) -> Vec<(f64, f64)> {
        self.central.sigma_trace()
    }
}

pub fn default_t_end(params: &PhysicalParams, profile: &QuenchProfile) -> f64 {
    profile.quench_end() + 1.5 * params.period1()
}

/// S(t) from a central difference of ⟨z⟩ over a ± δa.
pub fn sensitivity_curve(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    heating: f64,
    opts: &SensitivityOptions,
) -> Result<SensitivityRun> {
    if !(opts.delta_a > 0.0) || !opts.delta_a.is_finite() {
        return Err(invalid("delta_a", "must be > 0"));
    }
    let p = params.with_heating_rate(heating);
    p.validate()?;
    let a = p.acceleration_from_tilt(opts.tilt);
    let t_end = opts.t_end.unwrap_or_else(|| default_t_end(&p, profile));
    let dt = opts.dt.unwrap_or_else(|| default_dt(&p));
    let run = |acc: f64| integrate_sampled(&p, profile, acc, t_end, dt, opts.dt_out);
    let lo = run(a - opts.delta_a)?;
    let mid = run(a)?;
    let hi = run(a + opts.delta_a)?;

    let n = mid.len();
    let mut first_max = 0.0f64;
    let mut second_max = 0.0f64;
    let mut dmu = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut s_values = Vec::with_capacity(n);
    for i in 0..n {
        let (zl, zm, zh) = (
            lo.states[i].mean_z,
            mid.states[i].mean_z,
            hi.states[i].mean_z,
        );
        first_max = first_max.max((zh - zl).abs());
        second_max = second_max.max((zh - 2.0 * zm + zl).abs());
        let var = mid.states[i].var_z;
        if !(var > 0.0) {
            return Err(Error::DegenerateVariance { t: mid.times[i] });
        }
        let d = (zh - zl) / (2.0 * opts.delta_a);
        let s = var.sqrt();
        dmu.push(d);
        sigma.push(s);
        s_values.push(d.abs() / s);
    }
    if second_max >= 0.01 * first_max {
        return Err(Error::Nonlinear {
            ratio: second_max / first_max,
        });
    }
    Ok(SensitivityRun {
        curve: SensitivityCurve {
            times: mid.times.clone(),
            s_values,
            dmu_da: dmu,
            sigma,
        },
        central: mid,
        acceleration: a,
    })
}

/// Picks T_opt: first σ minimum after the quench for fast ramps, otherwise
/// the maximum of |dμ/da| from the quench start.
pub fn find_t_opt(
    curve: &SensitivityCurve,
    sigma_trace: &[(f64, f64)],
    profile: &QuenchProfile,
    params: &PhysicalParams,
    threshold: f64,
) -> Result<f64> {
    if curve.is_empty() || sigma_trace.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: sigma_trace.len().min(curve.len()),
        });
    }
    let start = profile.t0;
    let span = sigma_trace[sigma_trace.len() - 1].0 - start;
    if span < params.period1() * (1.0 - 1e-9) {
        return Err(invalid(
            "sigma_trace",
            "must span at least one post-quench period",
        ));
    }
    if profile.tau_exp < threshold {
        let end = profile.quench_end();
        for i in 1..sigma_trace.len() - 1 {
            let (t, s) = sigma_trace[i];
            if t > end && s < sigma_trace[i - 1].1 && s <= sigma_trace[i + 1].1 {
                return Ok(t);
            }
        }
        Err(Error::NoExtremum)
    } else {
        let mut best: Option<(f64, f64)> = None;
        for (t, d) in curve.times.iter().zip(&curve.dmu_da) {
            if *t < start {
                continue;
            }
            if best.is_none_or(|(_, b)| d.abs() > b) {
                best = Some((*t, d.abs()));
            }
        }
        best.map(|(t, _)| t).ok_or(Error::NoExtremum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub ratio: f64,
    pub violated: bool,
}

/// S/√F_Q, flagged when it exceeds 1 by more than 1e-9.
pub fn bound_check(s: f64, fq: f64) -> Result<BoundCheck> {
    if !(fq > 0.0) {
        return Err(invalid("F_Q", "must be > 0"));
    }
    let ratio = s / fq.sqrt();
    Ok(BoundCheck {
        ratio,
        violated: ratio > 1.0 + 1e-9,
    })
}

/// Sensitivity at the optimal time for one profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalPoint {
    pub t_opt: f64,
    pub s: f64,
    pub dmu_da: f64,
    pub sigma: f64,
}

/// T_opt and S(T_opt). The coarse pick on the output grid is refined on
/// the integrator's own step grid within one output spacing on either side,
/// since the σ minimum narrows as ω₀²/ω₁² grows.
pub fn optimal_sensitivity(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    heating: f64,
    opts: &SensitivityOptions,
) -> Result<(OptimalPoint, SensitivityRun)> {
    let run = sensitivity_curve(params, profile, heating, opts)?;
    let coarse = find_t_opt(
        &run.curve,
        &run.sigma_trace(),
        profile,
        params,
        T_OPT_THRESHOLD,
    )?;
    let fine_dt = opts.dt.unwrap_or_else(|| default_dt(params));
    let window = opts.dt_out;
    let fine = sensitivity_curve(
        params,
        profile,
        heating,
        &SensitivityOptions {
            t_end: Some(coarse + window),
            dt_out: fine_dt,
            ..*opts
        },
    )?;
    let c = &fine.curve;
    let inside = |i: usize| (c.times[i] - coarse).abs() <= window;
    let idx: Vec<usize> = (0..c.len()).filter(|&i| inside(i)).collect();
    let pick = if profile.tau_exp < T_OPT_THRESHOLD {
        idx.iter()
            .copied()
            .filter(|&i| i > 0 && i + 1 < c.len())
            .filter(|&i| c.sigma[i] < c.sigma[i - 1] && c.sigma[i] <= c.sigma[i + 1])
            .min_by(|&a, &b| c.sigma[a].total_cmp(&c.sigma[b]))
    } else {
        idx.iter()
            .copied()
            .max_by(|&a, &b| c.dmu_da[a].abs().total_cmp(&c.dmu_da[b].abs()).then(b.cmp(&a)))
    };
    let i = pick.unwrap_or_else(|| c.index_at(coarse));
    let point = OptimalPoint {
        t_opt: c.times[i],
        s: c.s_values[i],
        dmu_da: c.dmu_da[i],
        sigma: c.sigma[i],
    };
    Ok((point, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn compact_and_general_agree() {
        let p = PhysicalParams::paper_default();
        for k in 0..400 {
            let t = k as f64 * 0.7e-6;
            let a = qfi_sudden(&p, t).value;
            let b = qfi_sudden_general(&p, t);
            assert!(rel(b, a) <= 1e-9, "t={t} {a} {b}");
        }
    }

    #[test]
    fn half_period_value() {
        let p = PhysicalParams::paper_default();
        let f = qfi_half_period(&p);
        assert!((f.value - 4.96e5).abs() <= 0.35e5, "{}", f.value);
        assert_eq!(f.value, qfi_sudden(&p, PI / p.omega1).value);
        let bracket = 1.0 + 4.0 * f.r * (f.r - 1.0);
        assert!(rel(bracket, (2.0 * f.r - 1.0).powi(2)) < 1e-12);
    }

    #[test]
    fn qfi_trivial_limits() {
        let p = PhysicalParams::paper_default();
        let base = 2.0 * p.mass / (p.hbar * 3.5 * p.omega0.powi(3));
        assert!(rel(qfi_sudden(&p, 0.0).value, base) < 1e-15);
        let mut same = p;
        same.omega1 = p.omega0;
        assert!(rel(qfi_half_period(&same).value, base) < 1e-12);
        let mut hot = p;
        hot.nbar = 2.0 * p.nbar + 0.5;
        assert!(rel(qfi_half_period(&hot).value, 0.5 * qfi_half_period(&p).value) < 1e-12);
    }

    #[test]
    fn saturation_at_odd_half_periods() {
        let p = PhysicalParams::paper_default();
        for k in [1, 3, 5] {
            let t = k as f64 * PI / p.omega1;
            let fi = position_fisher(&p, t);
            let fq = qfi_sudden(&p, t).value;
            assert!(rel(fi, fq) <= 1e-9, "k={k}");
        }
    }

    #[test]
    fn bound_check_cases() {
        assert_eq!(bound_check(0.0, 4.0).unwrap().ratio, 0.0);
        assert!(!bound_check(2.0, 4.0).unwrap().violated);
        assert!(bound_check(2.0 + 1e-6, 4.0).unwrap().violated);
        assert!(bound_check(1.0, 0.0).is_err());
    }

    #[test]
    fn static_sensitivity_before_quench() {
        let mut p = PhysicalParams::paper_default();
        p.heating_rate = 0.0;
        let mut prof = QuenchProfile::step(&p);
        prof.t0 = 1.0;
        let opts = SensitivityOptions {
            t_end: Some(20e-6),
            ..Default::default()
        };
        let run = sensitivity_curve(&p, &prof, 0.0, &opts).unwrap();
        let z0 = (p.hbar / (2.0 * p.mass * p.omega0)).sqrt();
        let expect = (1.0 / (p.omega0 * p.omega0)) / (3.5f64.sqrt() * z0);
        for &s in &run.curve.s_values {
            assert!(rel(s, expect) < 1e-6);
        }
        assert!((expect - 0.2013).abs() < 1e-3);
    }

    #[test]
    fn step_quench_saturates_bound() {
        let p = PhysicalParams::paper_default();
        let prof = QuenchProfile::step(&p);
        let run = sensitivity_curve(&p, &prof, 0.0, &Default::default()).unwrap();
        let t = find_t_opt(&run.curve, &run.sigma_trace(), &prof, &p, T_OPT_THRESHOLD).unwrap();
        assert!((t - PI / p.omega1).abs() <= 0.5e-6);
        for (i, &ti) in run.curve.times.iter().enumerate() {
            let fq = qfi_sudden(&p, ti).value;
            let b = bound_check(run.curve.s_values[i], fq).unwrap();
            assert!(!b.violated, "t={ti} ratio={}", b.ratio);
        }
    }

    #[test]
    fn ratio_at_fastest_ramp() {
        let p = PhysicalParams::paper_default();
        let prof = QuenchProfile::blended(&p, 1.95e-6);
        let (pt, _) = optimal_sensitivity(&p, &prof, 16e-3, &Default::default()).unwrap();
        let ratio = bound_check(pt.s, qfi_half_period(&p).value).unwrap().ratio;
        assert!((0.07..=0.13).contains(&ratio), "{ratio}");
        assert!((pt.t_opt - 89e-6).abs() < 3e-6, "{}", pt.t_opt);
    }

    #[test]
    fn slow_ramp_uses_peak_response() {
        let p = PhysicalParams::paper_default();
        let prof = QuenchProfile::blended(&p, 36.6e-6);
        let (pt, run) = optimal_sensitivity(&p, &prof, 16e-3, &Default::default()).unwrap();
        let peak = run
            .curve
            .dmu_da
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        // the refined pick can only improve on the coarse grid maximum
        assert!(pt.dmu_da.abs() >= peak);
        assert!(pt.dmu_da.abs() < peak * (1.0 + 1e-3));
    }

    #[test]
    fn intensity_unit_does_not_matter() {
        let p = PhysicalParams::paper_default();
        let prof = QuenchProfile::blended(&p, 3.77e-6);
        let mut scaled = prof;
        scaled.intensity0 *= 1e3;
        let opts = SensitivityOptions {
            t_end: Some(60e-6),
            ..Default::default()
        };
        let a = sensitivity_curve(&p, &prof, 16e-3, &opts).unwrap();
        let b = sensitivity_curve(&p, &scaled, 16e-3, &opts).unwrap();
        for (x, y) in a.curve.s_values.iter().zip(&b.curve.s_values) {
            assert!(rel(*y, *x) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_delta() {
        let p = PhysicalParams::paper_default();
        let prof = QuenchProfile::step(&p);
        let opts = SensitivityOptions {
            delta_a: 0.0,
            ..Default::default()
        };
        assert!(sensitivity_curve(&p, &prof, 0.0, &opts).is_err());
    }

    #[test]
    fn too_short_trace_is_rejected() {
        let p = PhysicalParams::paper_default();
        let prof = QuenchProfile::step(&p);
        let opts = SensitivityOptions {
            t_end: Some(20e-6),
            ..Default::default()
        };
        let run = sensitivity_curve(&p, &prof, 0.0, &opts).unwrap();
        assert!(find_t_opt(&run.curve, &run.sigma_trace(), &prof, &p, T_OPT_THRESHOLD).is_err());
    }
}
