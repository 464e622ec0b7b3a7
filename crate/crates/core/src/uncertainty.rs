//! First-order propagation of uncorrelated 1σ uncertainties.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrology::qfi_half_period;
use crate::params::PhysicalParams;

/// A value with its 1σ standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    /// σ/|value|, or zero when both vanish.
    pub fn relative(&self) -> f64 {
        if self.sigma == 0.0 {
            0.0
        } else {
            self.sigma / self.value.abs()
        }
    }
}

/// d ln F/d ln ω₀ and d ln F/d ln ω₁ of the half-period QFI.
pub fn qfi_coefficients(r: f64) -> (f64, f64) {
    let b = 1.0 + 4.0 * r * (r - 1.0);
    let c = 8.0 * r * (2.0 * r - 1.0) / b;
    (-3.0 + c, -c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QfiUncertainty {
    pub fq: Measured,
    pub relative: f64,
    pub coeff_omega0: f64,
    pub coeff_omega1: f64,
    /// Inputs whose relative error exceeds 20%, where first order is doubtful.
    pub warnings: Vec<String>,
}

/// Half-period QFI with its propagated uncertainty.
pub fn qfi_uncertainty(
    mass: Measured,
    nbar: Measured,
    omega0: Measured,
    omega1: Measured,
) -> QfiUncertainty {
    let params = PhysicalParams {
        mass: mass.value,
        nbar: nbar.value,
        omega0: omega0.value,
        omega1: omega1.value,
        ..PhysicalParams::paper_default()
    };
    let f = qfi_half_period(&params);
    let (c0, c1) = qfi_coefficients(f.r);
    let rel_kappa = 2.0 * nbar.sigma / (2.0 * nbar.value + 1.0);
    let terms = [
        mass.relative(),
        rel_kappa,
        c0 * omega0.relative(),
        c1 * omega1.relative(),
    ];
    let relative = terms.iter().map(|t| t * t).sum::<f64>().sqrt();
    let mut warnings = Vec::new();
    for (name, m) in [
        ("mass", mass),
        ("nbar", nbar),
        ("omega0", omega0),
        ("omega1", omega1),
    ] {
        if m.relative() > 0.2 {
            warnings.push(format!("{name}: relative uncertainty {:.3} > 0.2", m.relative()));
        }
    }
    QfiUncertainty {
        fq: Measured::new(f.value, f.value * relative),
        relative,
        coeff_omega0: c0,
        coeff_omega1: c1,
        warnings,
    }
}

/// S = (dμ/da)/σ with relative errors added in quadrature.
pub fn sensitivity_uncertainty(dmu_da: Measured, width: Measured) -> Result<Measured> {
    if width.value == 0.0 {
        return Err(Error::ZeroWidth);
    }
    if !(width.value > 0.0) || !(dmu_da.value > 0.0) {
        return Err(invalid("sensitivity", "dmu_da and width must be > 0"));
    }
    let s = dmu_da.value / width.value;
    let rel = dmu_da.relative().hypot(width.relative());
    Ok(Measured::new(s, s * rel))
}

/// Inverse-variance weighted mean.
pub fn weighted_mean(values: &[Measured]) -> Result<Measured> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, v) in values.iter().enumerate() {
        if !(v.sigma > 0.0) {
            return Err(Error::ZeroUncertainty(i));
        }
        let w = 1.0 / (v.sigma * v.sigma);
        num += w * v.value;
        den += w;
    }
    Ok(Measured::new(num / den, (1.0 / den).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallAngle {
    /// θ²/6.
    pub bound: f64,
    /// |sin θ − θ|/|θ|.
    pub exact: f64,
}

pub fn small_angle_bound(theta: f64) -> Result<SmallAngle> {
    if theta == 0.0 || !theta.is_finite() {
        return Err(Error::ZeroAngle);
    }
    Ok(SmallAngle {
        bound: theta * theta / 6.0,
        exact: ((theta.sin() - theta) / theta).abs(),
    })
}

/// Sample mean with the n − 1 standard deviation as its uncertainty.
pub fn frequency_stats(samples: &[f64]) -> Result<Measured> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    Ok(Measured::new(mean, (ss / (n - 1) as f64).sqrt()))
}

/// Applies a multiplicative calibration factor, combining relative errors.
pub fn apply_calibration(x: Measured, factor: Measured) -> Measured {
    let v = x.value * factor.value;
    Measured::new(v, v.abs() * x.relative().hypot(factor.relative()))
}

/// dμ/da ≈ (1/g)·|dμ/dθ|.
pub fn slope_to_dmu_da(slope: Measured, gravity: f64) -> Measured {
    Measured::new(slope.value.abs() / gravity, slope.sigma / gravity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn reference_inputs() -> (Measured, Measured, Measured, Measured) {
        let p = PhysicalParams::paper_default();
        (
            Measured::new(p.mass, 0.2e-17),
            Measured::exact(p.nbar),
            Measured::new(p.omega0, 2.0 * std::f64::consts::PI * 1e3),
            Measured::new(p.omega1, 2.0 * std::f64::consts::PI * 0.01e3),
        )
    }

    #[test]
    fn reference_qfi_band() {
        let (m, n, w0, w1) = reference_inputs();
        let u = qfi_uncertainty(m, n, w0, w1);
        assert!((u.fq.value - 4.96e5).abs() < 0.35e5);
        assert!((u.relative - 0.35 / 4.96).abs() < 0.005, "{}", u.relative);
        assert!(u.warnings.is_empty());
    }

    #[test]
    fn zero_input_sigma() {
        let p = PhysicalParams::paper_default();
        let e = Measured::exact;
        let u = qfi_uncertainty(e(p.mass), e(p.nbar), e(p.omega0), e(p.omega1));
        assert_eq!(u.fq.sigma, 0.0);
    }

    #[test]
    fn coefficients_match_finite_differences() {
        let p = PhysicalParams::paper_default();
        let lnf = |w0: f64, w1: f64| {
            let q = PhysicalParams { omega0: w0, omega1: w1, ..p };
            qfi_half_period(&q).value.ln()
        };
        let h = 1e-5;
        let d0 = (lnf(p.omega0 * (1.0 + h), p.omega1) - lnf(p.omega0 * (1.0 - h), p.omega1))
            / ((1.0 + h).ln() - (1.0 - h).ln());
        let d1 = (lnf(p.omega0, p.omega1 * (1.0 + h)) - lnf(p.omega0, p.omega1 * (1.0 - h)))
            / ((1.0 + h).ln() - (1.0 - h).ln());
        let (c0, c1) = qfi_coefficients(qfi_half_period(&p).r);
        assert!(rel(c0, d0) <= 1e-4, "{c0} {d0}");
        assert!(rel(c1, d1) <= 1e-4, "{c1} {d1}");
    }

    #[test]
    fn large_input_error_is_flagged() {
        let (m, n, w0, w1) = reference_inputs();
        let big = Measured::new(m.value, 0.3 * m.value);
        assert_eq!(qfi_uncertainty(big, n, w0, w1).warnings.len(), 1);
    }

    #[test]
    fn sensitivity_quadrature() {
        let s = sensitivity_uncertainty(Measured::exact(2.0), Measured::new(1.0, 0.1)).unwrap();
        assert!(rel(s.sigma / s.value, 0.1) < 1e-14);
        let s = sensitivity_uncertainty(Measured::new(1.0, 0.03), Measured::new(1.0, 0.04)).unwrap();
        assert!(rel(s.sigma, 0.05) < 1e-14);
        assert!(matches!(
            sensitivity_uncertainty(Measured::exact(1.0), Measured::exact(0.0)),
            Err(Error::ZeroWidth)
        ));
    }

    #[test]
    fn weighted_mean_cases() {
        let one = Measured::new(3.0, 0.5);
        assert_eq!(weighted_mean(&[one]).unwrap(), one);
        let m = weighted_mean(&[Measured::new(1.0, 0.2), Measured::new(2.0, 0.2)]).unwrap();
        assert!(rel(m.value, 1.5) < 1e-15);
        assert!(rel(m.sigma, 0.2 / 2f64.sqrt()) < 1e-15);
        let m = weighted_mean(&[Measured::new(1.0, 0.1), Measured::new(2.0, 0.2)]).unwrap();
        // (100 + 50)/(100 + 25) and 1/√125
        assert!(rel(m.value, 1.2) < 1e-14);
        assert!((m.sigma - 0.0894).abs() < 1e-4);
        assert!(matches!(
            weighted_mean(&[one, Measured::exact(1.0)]),
            Err(Error::ZeroUncertainty(1))
        ));
        assert!(weighted_mean(&[]).is_err());
    }

    #[test]
    fn small_angle_values() {
        let b = small_angle_bound(3.74f64.to_radians()).unwrap();
        assert!((b.bound - 7.1e-4).abs() < 0.05e-4, "{}", b.bound);
        assert!(b.exact <= b.bound);
        let b = small_angle_bound(1e-3).unwrap();
        assert!(rel(b.bound, 1.6667e-7) < 1e-4);
        assert!(b.exact < b.bound);
        let b = small_angle_bound(1e-4).unwrap();
        assert!(rel(b.exact, b.bound) < 1e-6);
        assert!(small_angle_bound(0.0).is_err());
    }

    #[test]
    fn frequency_stats_cases() {
        let m = frequency_stats(&[249e3, 250e3, 251e3]).unwrap();
        assert!(rel(m.value, 250e3) < 1e-15);
        assert!(rel(m.sigma, 1e3) < 1e-12);
        assert_eq!(frequency_stats(&[5.0; 4]).unwrap().sigma, 0.0);
        assert!(frequency_stats(&[1.0]).is_err());
    }

    #[test]
    fn calibration_and_slope() {
        let x = apply_calibration(Measured::new(2.0, 0.06), Measured::new(1.0, 0.04));
        assert!(rel(x.sigma, 0.1) < 1e-14);
        let d = slope_to_dmu_da(Measured::new(-9.8, 0.98), 9.8);
        assert_eq!(d.value, 1.0);
        assert!(rel(d.sigma, 0.1) < 1e-15);
    }
}
