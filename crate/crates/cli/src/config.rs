//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid by
//! command-line flags.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use quench_core::allan::{DriftModel, DEFAULT_SAMPLE_RATE};
use quench_core::heating::{GasSpec, HeatingGrid, LpnSpec};
use quench_core::shots::{Binning, PipelineOptions, DEFAULT_SHOTS};
use quench_core::{PhysicalParams, ProfileShape, QuenchProfile};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// τ₁, used when neither the config nor the flags name a time constant.
pub const DEFAULT_TAU: f64 = 1.95e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub tau_s: Option<Vec<f64>>,
    pub tilt_rad: Option<Vec<f64>>,
    pub heating_k_per_s: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Defaults to the quench end plus 1.5 post-quench periods.
    pub t_end_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    /// Extra heating columns, K/s.
    pub scenarios_k_per_s: Vec<f64>,
    pub tilts_rad: Vec<f64>,
    pub shots_per_tilt: usize,
    pub binning: Binning,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        let p = PipelineOptions::default();
        Self {
            scenarios_k_per_s: vec![6e-3, 22e-3],
            tilts_rad: p.tilts,
            shots_per_tilt: p.shots_per_tilt,
            binning: p.binning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DriftPreset {
    None,
    Typical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DriftSpec {
    Preset(DriftPreset),
    Model(DriftModel),
}

impl DriftSpec {
    pub fn model(&self) -> DriftModel {
        match self {
            DriftSpec::Preset(DriftPreset::None) => DriftModel::none(),
            DriftSpec::Preset(DriftPreset::Typical) => DriftModel::typical(),
            DriftSpec::Model(m) => *m,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllanSection {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub shots_per_point: usize,
    pub drift: DriftSpec,
}

impl Default for AllanSection {
    fn default() -> Self {
        Self {
            duration_s: 3.0 * 3600.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            shots_per_point: 1,
            drift: DriftSpec::Preset(DriftPreset::Typical),
        }
    }
}

/// One-σ input errors for the QFI report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QfiSection {
    pub mass_sigma_kg: f64,
    pub nbar_sigma: f64,
    pub omega0_sigma_rad_s: f64,
    pub omega1_sigma_rad_s: f64,
    /// Largest table tilt added to |θ₀| for the small-angle check, rad.
    pub tilt_span_rad: f64,
}

impl Default for QfiSection {
    fn default() -> Self {
        Self {
            mass_sigma_kg: 0.2e-17,
            nbar_sigma: 0.0,
            omega0_sigma_rad_s: 2.0 * PI * 1e3,
            omega1_sigma_rad_s: 2.0 * PI * 10.0,
            tilt_span_rad: 0.5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatingSection {
    /// Reported alongside pure N₂ and H₂.
    pub gas: Option<GasSpec>,
    pub lpn: LpnSpec,
    pub grid: HeatingGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotsSection {
    pub count: usize,
    /// Defaults to T_opt of the first τ.
    pub measure_time_s: Option<f64>,
    pub binning: Binning,
}

impl Default for ShotsSection {
    fn default() -> Self {
        Self {
            count: DEFAULT_SHOTS,
            measure_time_s: None,
            binning: Binning::FreedmanDiaconis,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    params: Option<serde_json::Value>,
    profile: Option<QuenchProfile>,
    #[serde(default)]
    sweep: Sweep,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    format: Option<Format>,
    workers: Option<usize>,
    #[serde(default)]
    simulate: SimulateSection,
    #[serde(default)]
    sensitivity: SensitivitySection,
    #[serde(default)]
    allan: AllanSection,
    #[serde(default)]
    qfi: QfiSection,
    #[serde(default)]
    heating: HeatingSection,
    #[serde(default)]
    shots: ShotsSection,
}

/// Flags shared by every subcommand, already converted to SI.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub workers: Option<usize>,
    pub taus: Option<Vec<f64>>,
    pub tilts: Option<Vec<f64>>,
    pub heatings: Option<Vec<f64>>,
}

/// Fully resolved configuration. The output directory and worker count do
/// not affect results and stay out of the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub params: PhysicalParams,
    pub profile: Option<QuenchProfile>,
    pub taus: Vec<f64>,
    pub tilts: Vec<f64>,
    pub heatings: Vec<f64>,
    pub seed: u64,
    pub format: Format,
    pub simulate: SimulateSection,
    pub sensitivity: SensitivitySection,
    pub allan: AllanSection,
    pub qfi: QfiSection,
    pub heating: HeatingSection,
    pub shots: ShotsSection,
    #[serde(skip)]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn nonempty(name: &str, v: Option<Vec<f64>>) -> Result<Option<Vec<f64>>, Failure> {
    match v {
        Some(v) if v.is_empty() => Err(usage(format!("sweep.{name}: list must not be empty"))),
        Some(v) if v.iter().any(|x| !x.is_finite()) => {
            Err(usage(format!("sweep.{name}: values must be finite")))
        }
        other => Ok(other),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: Overrides) -> Result<Self, Failure> {
        let file: ConfigFile = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        let params = match file.params {
            Some(v) => PhysicalParams::from_json_value(v)
                .map_err(|e| usage(format!("config params: {e}")))?,
            None => PhysicalParams::paper_default(),
        };
        if let Some(prof) = &file.profile {
            prof.validate().map_err(|e| usage(format!("config profile: {e}")))?;
        }
        let sweep = file.sweep;
        let taus = nonempty("tau_s", flags.taus.or(sweep.tau_s))?;
        let tilts = nonempty("tilt_rad", flags.tilts.or(sweep.tilt_rad))?;
        let heatings = nonempty("heating_k_per_s", flags.heatings.or(sweep.heating_k_per_s))?;
        let taus = taus.unwrap_or_else(|| {
            vec![file.profile.map(|p| p.tau_exp).filter(|t| *t > 0.0).unwrap_or(DEFAULT_TAU)]
        });
        if taus.iter().any(|t| !(*t > 0.0)) {
            return Err(usage("tau values must be > 0"));
        }
        let heatings = heatings.unwrap_or_else(|| vec![params.heating_rate]);
        if heatings.iter().any(|h| !(*h >= 0.0)) {
            return Err(usage("heating rates must be ≥ 0"));
        }
        let workers = flags
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(usage("workers must be ≥ 1"));
        }
        if file.sensitivity.scenarios_k_per_s.iter().any(|h| !(*h >= 0.0)) {
            return Err(usage("sensitivity.scenarios_k_per_s: heating rates must be ≥ 0"));
        }
        if file.shots.count == 0 {
            return Err(usage("shots.count must be ≥ 1"));
        }
        Ok(Self {
            params,
            profile: file.profile,
            taus,
            tilts: tilts.unwrap_or_else(|| vec![0.0]),
            heatings,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            format: flags.format.or(file.format).unwrap_or_default(),
            simulate: file.simulate,
            sensitivity: file.sensitivity,
            allan: file.allan,
            qfi: file.qfi,
            heating: file.heating,
            shots: file.shots,
            output_dir: flags
                .out
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            workers,
        })
    }

    /// Profile for time constant `tau`: the configured template with τ
    /// replaced, or a blended profile starting at t = 0.
    pub fn profile_for(&self, tau: f64) -> QuenchProfile {
        match self.profile {
            Some(p) if p.shape == ProfileShape::Step => p,
            Some(mut p) => {
                if p.tau_exp > 0.0 {
                    p.blend_width *= tau / p.tau_exp;
                } else {
                    p.blend_width = tau / 2.0;
                }
                p.tau_exp = tau;
                p
            }
            None => QuenchProfile::blended(&self.params, tau),
        }
    }
}
