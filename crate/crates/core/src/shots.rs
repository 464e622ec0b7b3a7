//! Single-shot |z| readouts and the fits built on them.
//!
//! Each shot is the absolute displacement of one realisation of the
//! Gaussian state, so a histogram of shots is a folded normal: two
//! equal-amplitude Gaussians mirrored about zero.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{default_dt, integrate_sampled, GaussianState, DEFAULT_DT_OUT};
use crate::error::{invalid, Error, Result};
use crate::lsq::{levenberg_marquardt, CurveFit, LmOptions};
use crate::params::PhysicalParams;
use crate::profile::QuenchProfile;
use crate::uncertainty::{sensitivity_uncertainty, slope_to_dmu_da, weighted_mean, Measured};

/// Repetitions per tilt used in the experiment.
pub const DEFAULT_SHOTS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub samples: Vec<f64>,
    pub measure_time: f64,
    pub tilt: f64,
    pub seed: u64,
}

/// Draws `n` values z ~ N(⟨z⟩, V_z) and keeps |z|.
pub fn sample_shots(state: &GaussianState, n: usize, seed: u64) -> Result<ShotSet> {
    sample_shots_stream(state, n, seed, 0)
}

/// As [`sample_shots`], on an independent ChaCha stream of the same seed.
pub fn sample_shots_stream(
    state: &GaussianState,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<ShotSet> {
    if n == 0 {
        return Err(invalid("n", "must be ≥ 1"));
    }
    if !(state.var_z >= 0.0) || !state.mean_z.is_finite() {
        return Err(invalid("state", "needs finite mean and var_z ≥ 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dist = Normal::new(state.mean_z, state.var_z.sqrt())
        .map_err(|e| invalid("state", e.to_string()))?;
    let samples = (0..n).map(|_| dist.sample(&mut rng).abs()).collect();
    Ok(ShotSet {
        samples,
        measure_time: 0.0,
        tilt: 0.0,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    FreedmanDiaconis,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

const MIN_BINS: usize = 8;
const MAX_BINS: usize = 10_000;

/// Histogram of the samples on [0, max].
pub fn histogram(samples: &[f64], binning: Binning) -> Result<Histogram> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let max = samples.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateHistogram);
    }
    let bins = match binning {
        Binning::Fixed(b) => {
            if b < MIN_BINS {
                return Err(invalid("bins", "must be ≥ 8"));
            }
            b
        }
        Binning::FreedmanDiaconis => {
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
            let h = 2.0 * iqr / (n as f64).cbrt();
            if h > 0.0 {
                ((max / h).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
            } else {
                MAX_BINS
            }
        }
    };
    let width = max / bins as f64;
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0.0; bins];
    for &x in samples {
        let k = ((x / width) as usize).min(bins - 1);
        counts[k] += 1.0;
    }
    if counts.iter().filter(|&&c| c > 0.0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldedFit {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    pub se_amplitude: f64,
    pub se_mu: f64,
    pub se_sigma: f64,
}

fn folded(x: f64, p: &[f64]) -> f64 {
    let s2 = 2.0 * p[2] * p[2];
    p[0] * ((-(x - p[1]).powi(2) / s2).exp() + (-(x + p[1]).powi(2) / s2).exp())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Least-squares fit of the folded-normal model to the histogram counts.
pub fn fit_folded_normal(shots: &ShotSet, binning: Binning) -> Result<(FoldedFit, Histogram)> {
    let n = shots.samples.len();
    if n < 50 {
        return Err(Error::InsufficientData { needed: 50, got: n });
    }
    let hist = histogram(&shots.samples, binning)?;
    let xs = hist.centers();
    let (mean, std) = mean_std(&shots.samples);
    if !(std > 0.0) {
        return Err(Error::DegenerateHistogram);
    }
    let peak = hist.counts.iter().cloned().fold(0.0, f64::max);
    let scales = vec![peak, mean.max(std), std];
    let opts = LmOptions::default();
    let plain = CurveFit {
        xs: &xs,
        ys: &hist.counts,
        n_params: 3,
        model: folded,
        scales: Some(scales.clone()),
        weights: None,
    };
    let first = match levenberg_marquardt(&plain, &[peak, mean, std], &opts) {
        Err(Error::RankDeficient) => return half_normal_fit(&xs, &hist, peak, std),
        r => r?,
    };
    // counts are Poisson: refit with weights from the first-pass model
    let weights: Vec<f64> = xs
        .iter()
        .map(|&x| 1.0 / folded(x, &first.params).max(1.0).sqrt())
        .collect();
    let weighted = CurveFit {
        weights: Some(&weights),
        ..plain
    };
    let fit = match levenberg_marquardt(&weighted, &first.params, &opts) {
        Err(Error::RankDeficient) => return half_normal_fit(&xs, &hist, peak, std),
        r => r?,
    };
    // the weights carry the known Poisson variance, so undo the s² rescaling;
    // empty bins on [0, max] would otherwise deflate it
    let s2 = fit.cost / (fit.num_residuals - 3).max(1) as f64;
    let unscale = if s2 > 0.0 { s2.sqrt() } else { 1.0 };
    let p = &fit.params;
    let result = FoldedFit {
        amplitude: p[0],
        mu: p[1].abs(),
        sigma: p[2].abs(),
        se_amplitude: fit.std_errors[0] / unscale,
        se_mu: fit.std_errors[1] / unscale,
        se_sigma: fit.std_errors[2] / unscale,
    };
    if !(result.sigma > 0.0) {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
        });
    }
    Ok((result, hist))
}

fn poisson_chi2(xs: &[f64], counts: &[f64], p: &[f64]) -> f64 {
    xs.iter()
        .zip(counts)
        .map(|(&x, &c)| {
            let m = folded(x, p);
            (c - m).powi(2) / m.max(1.0)
        })
        .sum()
}

/// Fallback when the data sit at μ = 0, where the folded model is flat in μ
/// to first order and the full Jacobian loses rank. A and σ come from the
/// half-normal; the μ error is where χ² has risen by one.
fn half_normal_fit(
    xs: &[f64],
    hist: &Histogram,
    peak: f64,
    std: f64,
) -> Result<(FoldedFit, Histogram)> {
    let model = |x: f64, p: &[f64]| folded(x, &[p[0], 0.0, p[1]]);
    let plain = CurveFit {
        xs,
        ys: &hist.counts,
        n_params: 2,
        model,
        scales: Some(vec![peak, std]),
        weights: None,
    };
    let opts = LmOptions::default();
    let first = levenberg_marquardt(&plain, &[0.5 * peak, std], &opts)?;
    let weights: Vec<f64> = xs
        .iter()
        .map(|&x| 1.0 / model(x, &first.params).max(1.0).sqrt())
        .collect();
    let fit = levenberg_marquardt(
        &CurveFit {
            weights: Some(&weights),
            ..plain
        },
        &first.params,
        &opts,
    )?;
    let s2 = fit.cost / (fit.num_residuals - 2).max(1) as f64;
    let unscale = if s2 > 0.0 { s2.sqrt() } else { 1.0 };
    let (a, sigma) = (fit.params[0], fit.params[1].abs());
    let chi = |mu: f64| poisson_chi2(xs, &hist.counts, &[a, mu, sigma]);
    let base = chi(0.0);
    let (mut lo, mut hi) = (0.0, sigma);
    if chi(hi) - base < 1.0 {
        lo = hi;
        hi = 3.0 * sigma;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if chi(mid) - base < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((
        FoldedFit {
            amplitude: a,
            mu: 0.0,
            sigma,
            se_amplitude: fit.std_errors[0] / unscale,
            se_mu: 0.5 * (lo + hi),
            se_sigma: fit.std_errors[1] / unscale,
        },
        hist.clone(),
    ))
}

/// Plain Gaussian description of the samples: mean and n − 1 deviation.
pub fn gaussian_moments(samples: &[f64]) -> (f64, f64) {
    mean_std(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub omega: f64,
    pub phi: f64,
    pub mu_off: f64,
    #[serde(rename = "se_A")]
    pub se_amplitude: f64,
    pub se_omega: f64,
    pub se_phi: f64,
    pub se_mu_off: f64,
}

impl SinusoidFit {
    pub fn eval(&self, t: f64) -> f64 {
        rectified(t, &[self.amplitude, self.omega, self.phi, self.mu_off])
    }
}

fn rectified(t: f64, p: &[f64]) -> f64 {
    (p[0] * (p[1] * t + p[2]).sin() + p[3]).abs()
}

/// Maps (A, ω, φ, μ) onto A ≥ 0, ω > 0, μ ≥ 0, φ ∈ [0, 2π). Each flip
/// leaves |A sin(ωt + φ) + μ| unchanged.
fn canonical(mut p: [f64; 4]) -> [f64; 4] {
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[2] = PI - p[2];
    }
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] += PI;
    }
    if p[3] < 0.0 {
        p[3] = -p[3];
        p[2] += PI;
    }
    p[2] = p[2].rem_euclid(2.0 * PI);
    p
}

/// Fits μ(t) = |A sin(ωt + φ) + μ_off| starting from `omega_init`.
pub fn fit_rectified_sinusoid(trace: &[(f64, f64)], omega_init: f64) -> Result<SinusoidFit> {
    if trace.len() < 20 {
        return Err(Error::InsufficientData {
            needed: 20,
            got: trace.len(),
        });
    }
    if !(omega_init > 0.0) {
        return Err(invalid("omega_init", "must be > 0"));
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) = trace.iter().cloned().unzip();
    let span = ts[ts.len() - 1] - ts[0];
    if span * omega_init < 4.0 * PI * (1.0 - 1e-9) {
        return Err(invalid("trace", "must span at least two periods"));
    }
    let ymax = ys.iter().cloned().fold(f64::MIN, f64::max);
    let ymin = ys.iter().cloned().fold(f64::MAX, f64::min);
    let half = 0.5 * (ymax - ymin);
    let scale = ymax.abs().max(half).max(f64::MIN_POSITIVE);
    let prob = CurveFit {
        xs: &ts,
        ys: &ys,
        n_params: 4,
        model: rectified,
        scales: Some(vec![scale, omega_init, 1.0, scale]),
        weights: None,
    };
    let opts = LmOptions::default();
    // folding hides how ymax splits between A and μ_off, so try several splits
    let starts = [
        (half, 0.5 * (ymax + ymin)),
        (ymax, 0.0),
        (0.75 * ymax, 0.25 * ymax),
        (0.5 * ymax, 0.5 * ymax),
    ];
    let mut candidates = Vec::new();
    for &(a0, m0) in &starts {
        for k in 0..8 {
            let phi0 = k as f64 * PI / 4.0;
            if let Ok(fit) = levenberg_marquardt(&prob, &[a0, omega_init, phi0, m0], &opts) {
                candidates.push(fit);
            }
        }
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .ok_or(Error::NonConvergence {
            iterations: opts.max_iterations,
        })?;
    let pb = canonical([best.params[0], best.params[1], best.params[2], best.params[3]]);
    let tie = best.cost * (1.0 + 1e-6) + 1e-30 * scale * scale;
    for c in &candidates {
        if c.cost <= tie {
            let pc = canonical([c.params[0], c.params[1], c.params[2], c.params[3]]);
            let differs = |i: usize| (pc[i] - pb[i]).abs() > 1e-3 * scale;
            if differs(0) || differs(3) {
                return Err(Error::AmbiguousFold);
            }
        }
    }
    let se = &best.std_errors;
    Ok(SinusoidFit {
        amplitude: pb[0],
        omega: pb[1],
        phi: pb[2],
        mu_off: pb[3],
        se_amplitude: se[0],
        se_omega: se[1],
        se_phi: se[2],
        se_mu_off: se[3],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltSlope {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    pub se_intercept: f64,
}

/// Weighted straight-line fit of (tilt, value, se) with weights 1/se².
pub fn tilt_sweep_slope(points: &[(f64, f64, f64)]) -> Result<TiltSlope> {
    if points.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: points.len(),
        });
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &(x, y, e)) in points.iter().enumerate() {
        if !(e > 0.0) {
            return Err(Error::ZeroUncertainty(i));
        }
        let w = 1.0 / (e * e);
        s += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let mut tilts: Vec<f64> = points.iter().map(|p| p.0).collect();
    tilts.sort_by(f64::total_cmp);
    tilts.dedup();
    if tilts.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: tilts.len(),
        });
    }
    let det = s * sxx - sx * sx;
    Ok(TiltSlope {
        slope: (s * sxy - sx * sy) / det,
        intercept: (sxx * sy - sx * sxy) / det,
        se_slope: (s / det).sqrt(),
        se_intercept: (sxx / det).sqrt(),
    })
}

/// Moment-dynamics state at time `t`.
pub fn state_at(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    a: f64,
    t: f64,
) -> Result<GaussianState> {
    let steps = (t / DEFAULT_DT_OUT).ceil().max(1.0);
    let traj = integrate_sampled(params, profile, a, t, default_dt(params), t / steps)?;
    Ok(*traj.last())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Table tilts, rad.
    pub tilts: Vec<f64>,
    pub shots_per_tilt: usize,
    pub seed: u64,
    pub binning: Binning,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        let tilts = (0..7)
            .map(|i| (-0.5 + i as f64 / 6.0).to_radians())
            .collect();
        Self {
            tilts,
            shots_per_tilt: DEFAULT_SHOTS,
            seed: 0,
            binning: Binning::FreedmanDiaconis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub fits: Vec<FoldedFit>,
    pub slope: TiltSlope,
    pub dmu_da: Measured,
    pub sigma: Measured,
    pub s: Measured,
}

/// Tilt sweep at a fixed measurement time: shots, folded fits, slope and S.
pub fn measure_sensitivity(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    heating: f64,
    t_meas: f64,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    let p = params.with_heating_rate(heating);
    let mut fits = Vec::with_capacity(opts.tilts.len());
    for (k, &tilt) in opts.tilts.iter().enumerate() {
        let state = state_at(&p, profile, p.acceleration_from_tilt(tilt), t_meas)?;
        let shots = sample_shots_stream(&state, opts.shots_per_tilt, opts.seed, k as u64)?;
        fits.push(fit_folded_normal(&shots, opts.binning)?.0);
    }
    let points: Vec<_> = opts
        .tilts
        .iter()
        .zip(&fits)
        .map(|(&t, f)| (t, f.mu, f.se_mu))
        .collect();
    let slope = tilt_sweep_slope(&points)?;
    let dmu_da = slope_to_dmu_da(Measured::new(slope.slope, slope.se_slope), p.gravity);
    let widths: Vec<_> = fits.iter().map(|f| Measured::new(f.sigma, f.se_sigma)).collect();
    let sigma = weighted_mean(&widths)?;
    let s = sensitivity_uncertainty(dmu_da, sigma)?;
    Ok(PipelineResult {
        fits,
        slope,
        dmu_da,
        sigma,
        s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotMeta {
    pub measure_time: f64,
    pub tilt: f64,
    pub seed: u64,
    pub count: usize,
    pub units: std::collections::BTreeMap<String, String>,
}

impl ShotSet {
    pub fn meta(&self) -> ShotMeta {
        let units = [("sample_m", "m"), ("measure_time", "s"), ("tilt", "rad")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        ShotMeta {
            measure_time: self.measure_time,
            tilt: self.tilt,
            seed: self.seed,
            count: self.samples.len(),
            units,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample_m"])?;
        for s in &self.samples {
            w.write_record([format!("{s:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `path` and a `.json` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(path.with_extension("json"), meta + "\n")?;
        Ok(())
    }

    /// Reads a `sample_m` CSV; the sidecar is optional.
    pub fn load(path: &Path) -> Result<Self> {
        let samples = read_samples(std::fs::File::open(path)?)?;
        let side = path.with_extension("json");
        let (measure_time, tilt, seed) = if side.exists() {
            let m: ShotMeta = serde_json::from_str(&std::fs::read_to_string(side)?)?;
            (m.measure_time, m.tilt, m.seed)
        } else {
            (0.0, 0.0, 0)
        };
        Ok(Self {
            samples,
            measure_time,
            tilt,
            seed,
        })
    }
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.len() != 1 || &headers[0] != "sample_m" {
        return Err(Error::Format("expected a single `sample_m` column".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad sample `{}`", &rec[0])))?;
        if !(v >= 0.0) {
            return Err(Error::Format(format!("sample {v} is negative")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(out)
}
