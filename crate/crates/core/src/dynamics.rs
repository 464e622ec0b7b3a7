//! Gaussian-moment dynamics of the levitated particle through the quench.
//!
//! The quantum Langevin equation along the lattice axis is linear, so a
//! Gaussian state stays Gaussian and its first and second moments obey a
//! closed set of five ODEs:
//!
//! ```text
//! ∂t⟨z⟩  = ⟨p⟩/m
//! ∂t⟨p⟩  = −mω²(t)(⟨z⟩ − z_k(t)) + ma − γ⟨p⟩
//! ∂t V_z = 2C/m
//! ∂t V_p = −2mω²(t)C − 2γV_p + 2m k_B T₀ γ
//! ∂t C   = −mω²(t)V_z + V_p/m − γC
//! ```
//!
//! These are stepped with fixed-step classical RK4. The sudden-quench
//! closed forms are provided alongside as an analytic reference.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::PhysicalParams;
use crate::profile::QuenchProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianState {
    pub mean_z: f64,
    pub mean_p: f64,
    pub var_z: f64,
    pub var_p: f64,
    pub cov_zp: f64,
}

impl GaussianState {
    #[inline]
    fn to_array(self) -> [f64; 5] {
        [self.mean_z, self.mean_p, self.var_z, self.var_p, self.cov_zp]
    }

    #[inline]
    fn from_array(y: [f64; 5]) -> Self {
        Self {
            mean_z: y[0],
            mean_p: y[1],
            var_z: y[2],
            var_p: y[3],
            cov_zp: y[4],
        }
    }

    /// det Σ = V_z V_p − C².
    pub fn covariance_det(&self) -> f64 {
        self.var_z * self.var_p - self.cov_zp * self.cov_zp
    }

    /// Σ-part of the oscillator energy, V_p/(2m) + mω²V_z/2.
    pub fn fluctuation_energy(&self, mass: f64, omega: f64) -> f64 {
        self.var_p / (2.0 * mass) + 0.5 * mass * omega * omega * self.var_z
    }

    pub fn sigma_z(&self) -> f64 {
        self.var_z.sqrt()
    }

    pub fn is_physical(&self, hbar: f64) -> bool {
        let floor = 0.25 * hbar * hbar;
        self.var_z > 0.0 && self.var_p > 0.0 && self.covariance_det() >= floor * (1.0 - 1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GaussianState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &GaussianState {
        self.states.last().expect("trajectories are nonempty")
    }

    pub fn sigma_trace(&self) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| (t, s.sigma_z()))
            .collect()
    }

    /// One row per output time, SI columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t_s",
            "mean_z_m",
            "mean_p_kg_m_per_s",
            "var_z_m2",
            "var_p_kg2_m2_per_s2",
            "cov_zp_kg_m2_per_s",
        ])?;
        for (t, s) in self.times.iter().zip(&self.states) {
            w.write_record([
                format!("{t:e}"),
                format!("{:e}", s.mean_z),
                format!("{:e}", s.mean_p),
                format!("{:e}", s.var_z),
                format!("{:e}", s.var_p),
                format!("{:e}", s.cov_zp),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Thermal state of the ω₀ trap displaced to the static equilibrium a/ω₀².
pub fn initial_state(params: &PhysicalParams, a: f64) -> GaussianState {
    let m = params.mass;
    let w0 = params.omega0;
    let occ = params.nbar + 0.5;
    GaussianState {
        mean_z: a / (w0 * w0),
        mean_p: 0.0,
        var_z: params.hbar / (m * w0) * occ,
        var_p: params.hbar * m * w0 * occ,
        cov_zp: 0.0,
    }
}

/// Default RK4 step: 200 steps per ω₀ period.
pub fn default_dt(params: &PhysicalParams) -> f64 {
    2.0 * PI / (200.0 * params.omega0)
}

/// Largest step accepted by the resolution guard: 50 steps per ω₀ period.
pub fn max_dt(params: &PhysicalParams) -> f64 {
    2.0 * PI / (50.0 * params.omega0)
}

/// Output spacing used by downstream analysis, s.
pub const DEFAULT_DT_OUT: f64 = 0.5e-6;

struct Rhs<'a> {
    mass: f64,
    w0sq: f64,
    chi: f64,
    accel: f64,
    gamma: f64,
    diffusion: f64,
    profile: &'a QuenchProfile,
}

impl Rhs<'_> {
    #[inline]
    fn eval(&self, t: f64, y: &[f64; 5]) -> [f64; 5] {
        let rel = self.profile.relative_intensity(t);
        let w2 = self.w0sq * rel;
        let zk = self.chi * (1.0 - rel);
        let m = self.mass;
        let g = self.gamma;
        [
            y[1] / m,
            -m * w2 * (y[0] - zk) + m * self.accel - g * y[1],
            2.0 * y[4] / m,
            -2.0 * m * w2 * y[4] - 2.0 * g * y[3] + self.diffusion,
            -m * w2 * y[2] + y[3] / m - g * y[4],
        ]
    }

    #[inline]
    fn rk4(&self, t: f64, y: &[f64; 5], h: f64) -> [f64; 5] {
        let add = |y: &[f64; 5], k: &[f64; 5], s: f64| {
            let mut out = *y;
            for i in 0..5 {
                out[i] += s * k[i];
            }
            out
        };
        let k1 = self.eval(t, y);
        let k2 = self.eval(t + 0.5 * h, &add(y, &k1, 0.5 * h));
        let k3 = self.eval(t + 0.5 * h, &add(y, &k2, 0.5 * h));
        let k4 = self.eval(t + h, &add(y, &k3, h));
        let mut out = *y;
        for i in 0..5 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }
}

/// Integrates from t = 0 to `t_end`, recording every step of size `dt`.
pub fn integrate(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    a: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    integrate_sampled(params, profile, a, t_end, dt, dt)
}

/// Integrates with RK4 step ≤ `dt`, recording on a grid of spacing `dt_out`.
/// The step is shrunk so that it divides `dt_out` exactly.
pub fn integrate_sampled(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    a: f64,
    t_end: f64,
    dt: f64,
    dt_out: f64,
) -> Result<Trajectory> {
    params.validate()?;
    profile.validate()?;
    let guard = max_dt(params);
    if !(dt > 0.0) || dt > guard {
        return Err(Error::ResolutionGuard { dt, max: guard });
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(crate::error::invalid("t_end", "must be > 0"));
    }
    if !(dt_out > 0.0) {
        return Err(crate::error::invalid("dt_out", "must be > 0"));
    }
    let substeps = (dt_out / dt).ceil().max(1.0) as usize;
    let h = dt_out / substeps as f64;
    let n_out = (t_end / dt_out + 1e-9).floor() as usize;

    let gamma = params.gamma_damping();
    let rhs = Rhs {
        mass: params.mass,
        w0sq: params.omega0 * params.omega0,
        chi: params.chi,
        accel: a,
        gamma,
        diffusion: 2.0 * params.mass * params.boltzmann * params.gas_temperature * gamma,
        profile,
    };

    let mut y = initial_state(params, a).to_array();
    let mut times = Vec::with_capacity(n_out + 1);
    let mut states = Vec::with_capacity(n_out + 1);
    times.push(0.0);
    states.push(GaussianState::from_array(y));
    let mut step = 0usize;
    for i in 1..=n_out {
        for _ in 0..substeps {
            let t = step as f64 * h;
            y = rhs.rk4(t, &y, h);
            step += 1;
        }
        let t = i as f64 * dt_out;
        let s = GaussianState::from_array(y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                t,
                detail: "non-finite moment".into(),
            });
        }
        if !s.is_physical(params.hbar) {
            return Err(Error::Instability {
                t,
                detail: format!(
                    "state violates the uncertainty bound (det = {:e})",
                    s.covariance_det()
                ),
            });
        }
        times.push(t);
        states.push(s);
    }
    Ok(Trajectory { times, states })
}

/// First moments after an instantaneous ω₀ → ω₁ jump at t = 0 (no damping,
/// no trap shift): the particle oscillates about a/ω₁² starting from a/ω₀²,
///
/// ⟨z⟩ = a/ω₁² + a(ω₀⁻² − ω₁⁻²) cos ω₁t,  ⟨p⟩ = −mω₁a(ω₀⁻² − ω₁⁻²) sin ω₁t.
pub fn sudden_quench_means(params: &PhysicalParams, a: f64, t: f64) -> (f64, f64) {
    let (w0, w1) = (params.omega0, params.omega1);
    let d = 1.0 / (w0 * w0) - 1.0 / (w1 * w1);
    let (s, c) = (w1 * t).sin_cos();
    (a / (w1 * w1) + a * d * c, -params.mass * w1 * a * d * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Covariance {
    pub v_xx: f64,
    pub v_pp: f64,
    pub v_xp: f64,
}

impl Covariance {
    pub fn det(&self) -> f64 {
        self.v_xx * self.v_pp - self.v_xp * self.v_xp
    }
}

/// Thermal covariance rotated by the ω₁ symplectic flow.
pub fn sudden_quench_covariance(params: &PhysicalParams, t: f64) -> Covariance {
    let (m, w0, w1, hbar) = (params.mass, params.omega0, params.omega1, params.hbar);
    let kappa = 2.0 * params.nbar + 1.0;
    let (s, c) = (w1 * t).sin_cos();
    let (s2, c2) = (s * s, c * c);
    Covariance {
        v_xx: kappa * hbar / (2.0 * m * w0) * (c2 + (w0 * w0) / (w1 * w1) * s2),
        v_pp: kappa * hbar * m * w0 / 2.0 * (c2 + (w1 * w1) / (w0 * w0) * s2),
        v_xp: kappa * hbar / 4.0 * (w0 / w1 - w1 / w0) * (2.0 * w1 * t).sin(),
    }
}
