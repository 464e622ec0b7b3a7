//! Shot amplitudes to accelerations, and the overlapping Allan deviation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrology::{optimal_sensitivity, SensitivityOptions};
use crate::params::PhysicalParams;
use crate::profile::QuenchProfile;
use crate::shots::state_at;

/// Cycle rate of the experiment, Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelSeries {
    pub values: Vec<f64>,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanSeries {
    pub integration_times: Vec<f64>,
    pub deviations: Vec<f64>,
    /// Number of window differences averaged at each point.
    pub terms: Vec<usize>,
}

/// θ_k = A_k/slope + θ₀ and a_k = gθ_k.
pub fn to_acceleration(
    amplitudes: &[f64],
    slope: f64,
    theta0: f64,
    gravity: f64,
    sample_rate: f64,
) -> Result<AccelSeries> {
    if slope == 0.0 || !slope.is_finite() {
        return Err(Error::ZeroSlope);
    }
    if !(sample_rate > 0.0) {
        return Err(invalid("sample_rate", "must be > 0"));
    }
    Ok(AccelSeries {
        values: amplitudes
            .iter()
            .map(|a| gravity * (a / slope + theta0))
            .collect(),
        sample_rate,
    })
}

/// Inverse of [`to_acceleration`].
pub fn to_amplitudes(series: &AccelSeries, slope: f64, theta0: f64, gravity: f64) -> Vec<f64> {
    series
        .values
        .iter()
        .map(|a| (a / gravity - theta0) * slope)
        .collect()
}

/// Overlapping Allan deviation for m = 1 … ⌊(N−1)/2⌋,
/// σ²(m/f_s) = Σ_j (ā_{j+m} − ā_j)² / (2(N − 2m + 1)).
pub fn overlapping_allan(series: &AccelSeries) -> Result<AllanSeries> {
    let x = &series.values;
    let n = x.len();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, got: n });
    }
    if !(series.sample_rate > 0.0) {
        return Err(invalid("sample_rate", "must be > 0"));
    }
    let m_max = (n - 1) / 2;
    let mut out = AllanSeries {
        integration_times: Vec::with_capacity(m_max),
        deviations: Vec::with_capacity(m_max),
        terms: Vec::with_capacity(m_max),
    };
    // ā_{j+m} − ā_j = (1/m) Σ_{i=j}^{j+m−1} (x_{i+m} − x_i); prefix sums of
    // these differences avoid cancelling two large window means
    let mut prefix = vec![0.0; n + 1];
    for m in 1..=m_max {
        let nd = n - m;
        for i in 0..nd {
            prefix[i + 1] = prefix[i] + (x[i + m] - x[i]);
        }
        let terms = n - 2 * m + 1;
        let mut acc = 0.0;
        for j in 0..terms {
            let d = (prefix[j + m] - prefix[j]) / m as f64;
            acc += d * d;
        }
        out.integration_times.push(m as f64 / series.sample_rate);
        out.deviations.push((acc / (2.0 * terms as f64)).sqrt());
        out.terms.push(terms);
    }
    Ok(out)
}

/// Slow acceleration drift added during long-run synthesis, m/s².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftModel {
    /// m/s² per s.
    pub linear_rate: f64,
    pub sin_amplitude: f64,
    /// s; ignored when the amplitude is zero.
    pub sin_period: f64,
    pub sin_phase: f64,
}

impl DriftModel {
    pub fn none() -> Self {
        Self::default()
    }

    /// Slow ramp plus a weak 40 minute oscillation. With the single-shot
    /// noise of the fastest quench the Allan curve turns upward after a few
    /// minutes, at a floor near 1 mm/s².
    pub fn typical() -> Self {
        Self {
            linear_rate: 2.5e-6,
            sin_amplitude: 3e-4,
            sin_period: 2400.0,
            sin_phase: 0.0,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let mut d = self.linear_rate * t;
        if self.sin_amplitude != 0.0 && self.sin_period > 0.0 {
            d += self.sin_amplitude * (2.0 * PI * t / self.sin_period + self.sin_phase).sin();
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunOptions {
    pub tilt: f64,
    pub shots_per_point: usize,
    /// s.
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub drift: DriftModel,
}

impl Default for LongRunOptions {
    fn default() -> Self {
        Self {
            tilt: 0.0,
            shots_per_point: 1,
            duration: 3.0 * 3600.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
            drift: DriftModel::none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRun {
    pub series: AccelSeries,
    pub t_opt: f64,
    /// dμ/dθ used for the conversion, m/rad.
    pub slope: f64,
    /// Single-shot acceleration noise 1/S, m/s².
    pub shot_noise: f64,
}

/// Emulates a long acquisition at T_opt. The moment equations are linear
/// in a, so the state is simulated once and drift enters through dμ/da.
pub fn synthesize_long_run(
    params: &PhysicalParams,
    profile: &QuenchProfile,
    heating: f64,
    opts: &LongRunOptions,
) -> Result<LongRun> {
    if opts.shots_per_point == 0 {
        return Err(invalid("shots_per_point", "must be ≥ 1"));
    }
    if !(opts.sample_rate > 0.0) {
        return Err(invalid("sample_rate", "must be > 0"));
    }
    let n = (opts.duration * opts.sample_rate + 1e-9).floor() as usize;
    if n < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n });
    }
    let sens = SensitivityOptions {
        tilt: opts.tilt,
        ..Default::default()
    };
    let (pt, run) = optimal_sensitivity(params, profile, heating, &sens)?;
    let p = params.with_heating_rate(heating);
    let state = state_at(&p, profile, run.acceleration, pt.t_opt)?;
    let sd = state.var_z.sqrt();
    // |z| grows with a when the mean is positive and shrinks otherwise
    let slope = state.mean_z.signum() * pt.dmu_da * p.gravity;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut amplitudes = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / opts.sample_rate;
        let mean = state.mean_z + pt.dmu_da * opts.drift.at(t);
        let mut acc = 0.0;
        for _ in 0..opts.shots_per_point {
            let z: f64 = mean + sd * unit.sample(&mut rng);
            acc += z.abs();
        }
        amplitudes.push(acc / opts.shots_per_point as f64);
    }
    let series = to_acceleration(&amplitudes, slope, p.theta0, p.gravity, opts.sample_rate)?;
    Ok(LongRun {
        series,
        t_opt: pt.t_opt,
        slope,
        shot_noise: 1.0 / pt.s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeriesMeta {
    sample_rate: f64,
    count: usize,
    units: BTreeMap<String, String>,
}

impl AccelSeries {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["a_mps2"])?;
        for v in &self.values {
            w.write_record([format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `path` and a `.json` sidecar holding f_s.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        let units = [("a_mps2", "m/s^2"), ("sample_rate", "Hz")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let meta = SeriesMeta {
            sample_rate: self.sample_rate,
            count: self.values.len(),
            units,
        };
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, sample_rate: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "a_mps2" {
            return Err(Error::Format("expected a single `a_mps2` column".into()));
        }
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            values.push(
                rec[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad value `{}`", &rec[0])))?,
            );
        }
        Ok(Self {
            values,
            sample_rate,
        })
    }

    /// Reads `path`, taking f_s from the sidecar when present.
    pub fn load(path: &Path) -> Result<Self> {
        let side = path.with_extension("json");
        let rate = if side.exists() {
            let m: SeriesMeta = serde_json::from_str(&std::fs::read_to_string(side)?)?;
            m.sample_rate
        } else {
            DEFAULT_SAMPLE_RATE
        };
        Self::read_csv(std::fs::File::open(path)?, rate)
    }
}

impl AllanSeries {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_A_s", "allan_mps2", "terms"])?;
        for i in 0..self.deviations.len() {
            w.write_record([
                format!("{:e}", self.integration_times[i]),
                format!("{:e}", self.deviations[i]),
                self.terms[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Smallest deviation and its integration time.
    pub fn minimum(&self) -> Option<(f64, f64)> {
        self.deviations
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, d)| (self.integration_times[i], *d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_maps_to_offset() {
        let th0 = (-3.24f64).to_radians();
        let s = to_acceleration(&[0.0], 1e-9, th0, 9.80665, 3.0).unwrap();
        assert!((s.values[0] + 0.5546).abs() < 1e-4, "{}", s.values[0]);
        let s = to_acceleration(&[2e-9 * 0.001], 2e-9, 0.0, 9.80665, 3.0).unwrap();
        assert!((s.values[0] - 0.001 * 9.80665).abs() < 1e-15);
        assert!(matches!(
            to_acceleration(&[1.0], 0.0, 0.0, 9.8, 3.0),
            Err(Error::ZeroSlope)
        ));
    }

    #[test]
    fn conversion_inverts() {
        let amps = [0.0, 1e-10, 3.3e-10, 7e-10];
        let s = to_acceleration(&amps, -4e-9, -0.05, 9.81, 3.0).unwrap();
        for (a, b) in to_amplitudes(&s, -4e-9, -0.05, 9.81).iter().zip(amps) {
            assert!((a - b).abs() < 1e-22);
        }
    }

    #[test]
    fn constant_series_is_flat_zero() {
        let s = AccelSeries {
            values: vec![0.3; 101],
            sample_rate: 3.0,
        };
        let a = overlapping_allan(&s).unwrap();
        assert_eq!(a.deviations.len(), 50);
        assert!(a.deviations.iter().all(|&d| d == 0.0));
        assert_eq!(a.terms[0], 100);
        assert_eq!(*a.terms.last().unwrap(), 2);
    }

    #[test]
    fn ramp_signature() {
        let c = 2.5e-3;
        let fs = 3.0;
        let s = AccelSeries {
            values: (0..10_000).map(|k| c * k as f64 / fs).collect(),
            sample_rate: fs,
        };
        let a = overlapping_allan(&s).unwrap();
        for (t, d) in a.integration_times.iter().zip(&a.deviations) {
            let expect = c * t / 2f64.sqrt();
            assert!(((d - expect) / expect).abs() <= 1e-9, "t={t}");
        }
    }

    #[test]
    fn too_short() {
        let s = AccelSeries {
            values: vec![1.0; 4],
            sample_rate: 3.0,
        };
        assert!(overlapping_allan(&s).is_err());
    }

    #[test]
    fn drift_model() {
        assert_eq!(DriftModel::none().at(1e4), 0.0);
        let d = DriftModel {
            sin_amplitude: 1e-3,
            sin_period: 1800.0,
            ..DriftModel::none()
        };
        assert!((d.at(450.0) - 1e-3).abs() < 1e-15);
        let r = DriftModel {
            linear_rate: 2.0,
            ..DriftModel::none()
        };
        assert_eq!(r.at(1.5), 3.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = AccelSeries {
            values: vec![-0.55, -0.5512, 1e-7],
            sample_rate: 2.0,
        };
        let path = dir.path().join("a.csv");
        s.save(&path).unwrap();
        assert_eq!(AccelSeries::load(&path).unwrap(), s);
        let a = AllanSeries {
            integration_times: vec![0.5],
            deviations: vec![1e-3],
            terms: vec![3],
        };
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_A_s,allan_mps2,terms\n5e-1,1e-3,3\n");
    }
}
