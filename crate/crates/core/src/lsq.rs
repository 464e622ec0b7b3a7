//! Damped Gauss–Newton (Levenberg–Marquardt) with central-difference
//! Jacobians. Shared by the intensity-profile, histogram and sinusoid fits.
//!
//! The solver works on scaled coordinates `u = p / scale` so that physical
//! parameters of wildly different magnitude (microseconds next to watts)
//! get a well-conditioned normal matrix and a sensible finite-difference
//! step of `1e-6 · max(|u|, 1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquares {
    fn num_params(&self) -> usize;

    /// Residual vector (model − data) at `p`. Non-finite entries mark an
    /// infeasible point; the solver backs off from it.
    fn residuals(&self, p: &[f64], out: &mut Vec<f64>);

    /// Characteristic magnitude of each parameter.
    fn scales(&self, init: &[f64]) -> Vec<f64> {
        init.iter()
            .map(|v| if v.abs() > 0.0 { v.abs() } else { 1.0 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub xtol: f64,
    pub ftol: f64,
    pub gtol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            xtol: 1e-13,
            ftol: 1e-15,
            gtol: 1e-14,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Covariance in original parameter units.
    pub covariance: DMatrix<f64>,
    /// Σ r² at the optimum.
    pub cost: f64,
    pub iterations: usize,
    pub num_residuals: usize,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct Scaled<'a, P: LeastSquares + ?Sized> {
    inner: &'a P,
    scales: Vec<f64>,
    buf: Vec<f64>,
}

impl<P: LeastSquares + ?Sized> Scaled<'_, P> {
    fn eval(&mut self, u: &[f64], out: &mut Vec<f64>) {
        self.buf.clear();
        self.buf
            .extend(u.iter().zip(&self.scales).map(|(u, s)| u * s));
        self.inner.residuals(&self.buf, out);
    }

    fn jacobian(&mut self, u: &[f64], m: usize) -> Option<DMatrix<f64>> {
        let n = u.len();
        let mut jac = DMatrix::zeros(m, n);
        let mut up = u.to_vec();
        let mut rp = Vec::with_capacity(m);
        let mut rm = Vec::with_capacity(m);
        let mut r0 = None;
        for j in 0..n {
            let h = 1e-6 * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            self.eval(&up, &mut rp);
            up[j] = u[j] - h;
            self.eval(&up, &mut rm);
            up[j] = u[j];
            let fwd_ok = rp.iter().all(|v| v.is_finite());
            let bwd_ok = rm.iter().all(|v| v.is_finite());
            if !(fwd_ok && bwd_ok) {
                // one-sided difference next to an infeasible region
                if !(fwd_ok || bwd_ok) {
                    return None;
                }
                let base = r0.get_or_insert_with(|| {
                    let mut r = Vec::with_capacity(m);
                    self.eval(u, &mut r);
                    r
                });
                let (other, sign) = if fwd_ok { (&rp, 1.0) } else { (&rm, -1.0) };
                for i in 0..m {
                    jac[(i, j)] = sign * (other[i] - base[i]) / h;
                }
                continue;
            }
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        Some(jac)
    }
}

pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    init: &[f64],
    opts: &LmOptions,
) -> Result<LmFit> {
    let n = problem.num_params();
    assert_eq!(init.len(), n, "initial guess has wrong dimension");
    let scales = problem.scales(init);
    let mut sp = Scaled {
        inner: problem,
        scales: scales.clone(),
        buf: Vec::with_capacity(n),
    };

    let mut u: Vec<f64> = init.iter().zip(&scales).map(|(p, s)| p / s).collect();
    let mut r = Vec::new();
    sp.eval(&u, &mut r);
    let m = r.len();
    if m < n {
        return Err(Error::InsufficientData { needed: n, got: m });
    }
    let mut cost = sum_sq(&r);
    if !cost.is_finite() {
        return Err(Error::Format("initial guess gives non-finite residuals".into()));
    }

    let mut lambda = opts.initial_damping;
    let mut converged = cost == 0.0;
    let mut iterations = 0;
    let mut trial = Vec::with_capacity(m);

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let jac = sp.jacobian(&u, m).ok_or(Error::RankDeficient)?;
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        if grad.amax() <= opts.gtol * cost.max(f64::MIN_POSITIVE).sqrt() {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * jtj.max());
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            sp.eval(&cand, &mut trial);
            let new_cost = sum_sq(&trial);
            if new_cost.is_finite() && new_cost <= cost {
                let unorm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let small_step = step.norm() <= opts.xtol * (unorm + opts.xtol);
                let small_gain = cost - new_cost <= opts.ftol * cost;
                u = cand;
                std::mem::swap(&mut r, &mut trial);
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small_step || small_gain || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }

    let jac = sp.jacobian(&u, m).ok_or(Error::RankDeficient)?;
    let jtj = jac.transpose() * &jac;
    let svd = jtj.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-14 {
        return Err(Error::RankDeficient);
    }
    let inv = jtj.try_inverse().ok_or(Error::RankDeficient)?;
    let dof = (m - n).max(1) as f64;
    let s2 = cost / dof;
    let mut cov = inv * s2;
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] *= scales[i] * scales[j];
        }
    }
    let params: Vec<f64> = u.iter().zip(&scales).map(|(u, s)| u * s).collect();
    let std_errors = (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(LmFit {
        params,
        std_errors,
        covariance: cov,
        cost,
        iterations,
        num_residuals: m,
    })
}

/// Residuals of a one-dimensional model `f(x; p)` against samples.
pub struct CurveFit<'a, F> {
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    pub n_params: usize,
    pub model: F,
    pub scales: Option<Vec<f64>>,
    /// Per-sample multipliers 1/σᵢ applied to the residuals.
    pub weights: Option<&'a [f64]>,
}

impl<F: Fn(f64, &[f64]) -> f64> LeastSquares for CurveFit<'_, F> {
    fn num_params(&self) -> usize {
        self.n_params
    }

    fn residuals(&self, p: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.xs
                .iter()
                .zip(self.ys)
                .map(|(&x, &y)| (self.model)(x, p) - y),
        );
        if let Some(w) = self.weights {
            for (r, w) in out.iter_mut().zip(w) {
                *r *= w;
            }
        }
    }

    fn scales(&self, init: &[f64]) -> Vec<f64> {
        match &self.scales {
            Some(s) => s.clone(),
            None => init
                .iter()
                .map(|v| if v.abs() > 0.0 { v.abs() } else { 1.0 })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exact_exponential() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let truth = [2.5, 1.3, 0.4];
        let model = |x: f64, p: &[f64]| p[0] * (-p[1] * x).exp() + p[2];
        let ys: Vec<f64> = xs.iter().map(|&x| model(x, &truth)).collect();
        let prob = CurveFit {
            xs: &xs,
            ys: &ys,
            n_params: 3,
            model,
            scales: None,
            weights: None,
        };
        let fit = levenberg_marquardt(&prob, &[1.0, 0.5, 0.0], &LmOptions::default()).unwrap();
        for (a, b) in fit.params.iter().zip(truth) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_model_matches_normal_equations() {
        // y = 3x + 1 plus fixed perturbations: LM must land on the OLS solution
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let noise = [0.1, -0.2, 0.05, 0.0, 0.3, -0.1, -0.05, 0.2, -0.3, 0.1];
        let ys: Vec<f64> = xs.iter().zip(noise).map(|(x, e)| 3.0 * x + 1.0 + e).collect();
        let prob = CurveFit {
            xs: &xs,
            ys: &ys,
            n_params: 2,
            model: |x: f64, p: &[f64]| p[0] * x + p[1],
            scales: None,
            weights: None,
        };
        let fit = levenberg_marquardt(&prob, &[1.0, 0.0], &LmOptions::default()).unwrap();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let icpt = (sy - slope * sx) / n;
        assert!((fit.params[0] - slope).abs() < 1e-9);
        assert!((fit.params[1] - icpt).abs() < 1e-9);
        // OLS slope standard error
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - slope * x - icpt).powi(2))
            .sum();
        let se = (rss / (n - 2.0) / (sxx - sx * sx / n)).sqrt();
        assert!((fit.std_errors[0] - se).abs() < 1e-6 * se);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 0.3 * ((x * 7.0).sin())).collect();
        // p0 and p1 enter only as a product's sum: unidentifiable
        let prob = CurveFit {
            xs: &xs,
            ys: &ys,
            n_params: 2,
            model: |x: f64, p: &[f64]| (p[0] + p[1]) * x,
            scales: None,
            weights: None,
        };
        let err = levenberg_marquardt(&prob, &[1.0, 1.0], &LmOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient));
    }

    #[test]
    fn too_few_residuals() {
        let xs = [1.0];
        let ys = [2.0];
        let prob = CurveFit {
            xs: &xs,
            ys: &ys,
            n_params: 2,
            model: |x: f64, p: &[f64]| p[0] * x + p[1],
            scales: None,
            weights: None,
        };
        assert!(matches!(
            levenberg_marquardt(&prob, &[1.0, 0.0], &LmOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
