//! Laser-intensity model of the quench, the trap frequency and trap-centre
//! shift it induces, and least-squares fitting of the model to traces.
//!
//! The blended shape is a linear ramp handed over to a normalized
//! exponential by a tanh window:
//!
//! ```text
//! I(t)    = I_lin(t) (1 − R(t)) + I_exp(t) R(t)
//! I_lin   = I₀ + I₀ (q − 1)(t − t₀)/T_s                 (held at qI₀ once reached)
//! I_exp   = I₀ − I₀ (1 − q)(1 − e^{−(t−t₀)/τ})/(1 − e^{−5})   (= qI₀ at t − t₀ = 5τ, held after)
//! R(t)    = ½ (1 + tanh((t − t_s)/T_s))
//! ```
//!
//! and I(t) = I₀ before the quench starts.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lsq::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::params::PhysicalParams;

const E5: f64 = 0.006_737_946_999_085_467; // e^{-5}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    /// Linear ramp blended into the exponential branch.
    Blended,
    /// Exponential branch alone (R ≡ 1).
    Exponential,
    /// Instantaneous jump to qI₀ at t₀.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuenchProfile {
    pub intensity0: f64,
    pub q: f64,
    pub tau_exp: f64,
    pub t0: f64,
    pub ts: f64,
    #[serde(rename = "Ts")]
    pub blend_width: f64,
    pub shape: ProfileShape,
}

impl QuenchProfile {
    /// Blended profile reaching ω₁ with 1/e constant `tau`, starting at t = 0.
    /// The blend is centred on the quench start with width τ/2.
    pub fn blended(params: &PhysicalParams, tau: f64) -> Self {
        Self {
            intensity0: 1.0,
            q: params.quench_ratio(),
            tau_exp: tau,
            t0: 0.0,
            ts: 0.0,
            blend_width: tau / 2.0,
            shape: ProfileShape::Blended,
        }
    }

    pub fn exponential(params: &PhysicalParams, tau: f64) -> Self {
        Self {
            shape: ProfileShape::Exponential,
            ..Self::blended(params, tau)
        }
    }

    pub fn step(params: &PhysicalParams) -> Self {
        Self {
            intensity0: 1.0,
            q: params.quench_ratio(),
            tau_exp: 0.0,
            t0: 0.0,
            ts: 0.0,
            blend_width: 0.0,
            shape: ProfileShape::Step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.intensity0 > 0.0) {
            return Err(invalid("intensity0", "must be > 0"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid("q", format!("must lie in (0, 1), got {}", self.q)));
        }
        if !self.t0.is_finite() {
            return Err(invalid("t0", "must be finite"));
        }
        if self.shape != ProfileShape::Step && !(self.tau_exp > 0.0 && self.tau_exp.is_finite()) {
            return Err(invalid("tau_exp", "must be > 0"));
        }
        if self.shape == ProfileShape::Blended {
            if !(self.blend_width > 0.0 && self.blend_width.is_finite()) {
                return Err(invalid("Ts", "must be > 0"));
            }
            if !self.ts.is_finite() {
                return Err(invalid("ts", "must be finite"));
            }
        }
        Ok(())
    }

    /// Intensity relative to I₀.
    #[inline]
    pub fn relative_intensity(&self, t: f64) -> f64 {
        let q = self.q;
        match self.shape {
            ProfileShape::Step => {
                if t < self.t0 {
                    1.0
                } else {
                    q
                }
            }
            _ if t <= self.t0 => 1.0,
            ProfileShape::Exponential => self.exp_branch(t),
            ProfileShape::Blended => {
                let lin = (1.0 + (q - 1.0) * (t - self.t0) / self.blend_width).max(q);
                let r = 0.5 * (1.0 + ((t - self.ts) / self.blend_width).tanh());
                lin * (1.0 - r) + self.exp_branch(t) * r
            }
        }
    }

    #[inline]
    fn exp_branch(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.tau_exp;
        if x >= 5.0 {
            self.q
        } else {
            1.0 - (1.0 - self.q) * (1.0 - (-x).exp()) / (1.0 - E5)
        }
    }

    pub fn intensity(&self, t: f64) -> f64 {
        self.intensity0 * self.relative_intensity(t)
    }

    /// Time after which the profile sits at qI₀.
    pub fn quench_end(&self) -> f64 {
        match self.shape {
            ProfileShape::Step => self.t0,
            _ => self.t0 + 5.0 * self.tau_exp,
        }
    }

    /// Time after t₀ for the intensity to cover all but 1/e of its total drop.
    pub fn tau_1e(&self) -> f64 {
        if self.shape == ProfileShape::Step {
            return 0.0;
        }
        let target = (-1.0f64).exp();
        let frac = |t: f64| (self.relative_intensity(t) - self.q) / (1.0 - self.q);
        let (mut lo, mut hi) = (self.t0, self.quench_end());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if frac(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi) - self.t0
    }
}

pub fn intensity(profile: &QuenchProfile, t: f64) -> f64 {
    profile.intensity(t)
}

/// ω(t) = ω₀ √(I(t)/I₀).
pub fn omega_of_t(params: &PhysicalParams, profile: &QuenchProfile, t: f64) -> Result<f64> {
    let rel = profile.relative_intensity(t);
    if !(rel > 0.0) {
        return Err(Error::NonPositiveIntensity {
            t,
            intensity: rel * profile.intensity0,
        });
    }
    Ok(params.omega0 * rel.sqrt())
}

/// Intensity-induced displacement of the trap centre, z_k = χ(1 − I/I₀).
pub fn trap_shift(params: &PhysicalParams, profile: &QuenchProfile, t: f64) -> f64 {
    params.chi * (1.0 - profile.relative_intensity(t))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileErrors {
    pub intensity0: f64,
    pub q: f64,
    pub tau_exp: f64,
    pub t0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    #[serde(rename = "Ts", skip_serializing_if = "Option::is_none")]
    pub blend_width: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileFit {
    pub profile: QuenchProfile,
    pub std_errors: ProfileErrors,
    /// Fitted 1/e time of the intensity drop, s.
    pub tau_1e: f64,
    pub cost: f64,
    pub iterations: usize,
    pub samples: usize,
}

struct ProfileProblem<'a> {
    samples: &'a [(f64, f64)],
    template: QuenchProfile,
}

impl ProfileProblem<'_> {
    fn n(&self) -> usize {
        match self.template.shape {
            ProfileShape::Blended => 6,
            _ => 4,
        }
    }

    fn unpack(&self, p: &[f64]) -> QuenchProfile {
        let mut prof = self.template;
        prof.intensity0 = p[0];
        prof.q = p[1];
        prof.tau_exp = p[2];
        prof.t0 = p[3];
        if prof.shape == ProfileShape::Blended {
            prof.ts = p[4];
            prof.blend_width = p[5];
        }
        prof
    }

    fn pack(prof: &QuenchProfile) -> Vec<f64> {
        let mut v = vec![prof.intensity0, prof.q, prof.tau_exp, prof.t0];
        if prof.shape == ProfileShape::Blended {
            v.extend([prof.ts, prof.blend_width]);
        }
        v
    }
}

impl LeastSquares for ProfileProblem<'_> {
    fn num_params(&self) -> usize {
        self.n()
    }

    fn residuals(&self, p: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let prof = self.unpack(p);
        // q is left free: with noisy data the fitted asymptote may cross zero
        let feasible = prof.intensity0 > 0.0
            && prof.tau_exp > 0.0
            && (prof.shape != ProfileShape::Blended || prof.blend_width > 0.0);
        if !feasible {
            out.extend(self.samples.iter().map(|_| f64::NAN));
            return;
        }
        out.extend(self.samples.iter().map(|&(t, i)| prof.intensity(t) - i));
    }

    fn scales(&self, init: &[f64]) -> Vec<f64> {
        let tscale = init[2].abs();
        let mut s = vec![init[0].abs(), init[1].abs(), tscale, tscale];
        if self.template.shape == ProfileShape::Blended {
            s.extend([tscale, tscale]);
        }
        s
    }
}

/// Least-squares fit of the profile to `(t, intensity)` samples, starting
/// from `init` (whose shape selects the model family).
pub fn fit_profile(samples: &[(f64, f64)], init: &QuenchProfile) -> Result<ProfileFit> {
    if init.shape == ProfileShape::Step {
        return Err(invalid("shape", "a step profile has no continuous parameters to fit"));
    }
    init.validate()?;
    if samples.len() < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: samples.len(),
        });
    }
    let tmin = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let tmax = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if !(tmin <= init.t0 && tmax >= init.t0 + init.tau_exp) {
        return Err(Error::Format(
            "intensity samples must span the quench start and at least one time constant".into(),
        ));
    }
    let problem = ProfileProblem {
        samples,
        template: *init,
    };
    let fit = levenberg_marquardt(&problem, &ProfileProblem::pack(init), &LmOptions::default())?;
    let profile = problem.unpack(&fit.params);
    let se = &fit.std_errors;
    let blended = profile.shape == ProfileShape::Blended;
    Ok(ProfileFit {
        profile,
        std_errors: ProfileErrors {
            intensity0: se[0],
            q: se[1],
            tau_exp: se[2],
            t0: se[3],
            ts: blended.then(|| se[4]),
            blend_width: blended.then(|| se[5]),
        },
        tau_1e: profile.tau_1e(),
        cost: fit.cost,
        iterations: fit.iterations,
        samples: samples.len(),
    })
}

/// Reads a `t_s,intensity` CSV (header required).
pub fn read_intensity_csv<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing `{name}` column")))
    };
    let (ti, ii) = (col("t_s")?, col("intensity")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::Format(format!("bad number: {e}")))
        };
        out.push((parse(ti)?, parse(ii)?));
    }
    Ok(out)
}

pub fn read_intensity_file(path: &Path) -> Result<Vec<(f64, f64)>> {
    read_intensity_csv(std::fs::File::open(path)?)
}

pub fn write_intensity_csv<W: Write>(writer: W, samples: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t_s", "intensity"])?;
    for (t, i) in samples {
        w.write_record([format!("{t:e}"), format!("{i:e}")])?;
    }
    w.flush()?;
    Ok(())
}
