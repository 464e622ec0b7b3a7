use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{DriftPreset, DriftSpec, Format, Overrides, RunConfig};
use quench_core::shots::Binning;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or input files.
    Usage(String),
    Core(quench_core::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<quench_core::Error> for Failure {
    fn from(e: quench_core::Error) -> Self {
        Failure::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "quench",
    version,
    about = "Quench-sensitized levitated-nanoparticle accelerometer: simulation and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads for sweeps [default: available parallelism].
    #[arg(long)]
    workers: Option<usize>,
    /// Quench time constants, µs (comma separated).
    #[arg(long = "tau-us", value_delimiter = ',', allow_hyphen_values = true)]
    tau_us: Option<Vec<f64>>,
    /// Table tilts, degrees (comma separated).
    #[arg(long = "tilt-deg", value_delimiter = ',', allow_hyphen_values = true)]
    tilt_deg: Option<Vec<f64>>,
    /// Heating rates, mK/s (comma separated).
    #[arg(long = "heating-mks", value_delimiter = ',', allow_hyphen_values = true)]
    heating_mks: Option<Vec<f64>>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let scale = |v: &Option<Vec<f64>>, k: f64| v.as_ref().map(|v| v.iter().map(|x| x * k).collect());
        let flags = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            format: self.format,
            workers: self.workers,
            taus: scale(&self.tau_us, 1e-6),
            tilts: self
                .tilt_deg
                .as_ref()
                .map(|v| v.iter().map(|d| d.to_radians()).collect()),
            heatings: scale(&self.heating_mks, 1e-3),
        };
        RunConfig::load(self.config.as_deref(), flags)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Moment trajectories, one file per (τ, tilt, heating) combination.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// End of the integration window, µs.
        #[arg(long = "t-end-us")]
        t_end_us: Option<f64>,
    },
    /// S(T_opt) against τ with heating scenarios and the QFI ratio.
    Sensitivity {
        #[command(flatten)]
        common: Common,
    },
    /// Overlapping Allan deviation of a synthetic or recorded series.
    Allan {
        #[command(flatten)]
        common: Common,
        /// Acceleration CSV (`a_mps2`) to analyse instead of synthesizing.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long = "duration-s")]
        duration_s: Option<f64>,
        #[arg(long, value_enum)]
        drift: Option<DriftPreset>,
    },
    /// Half-period QFI with propagated uncertainty.
    Qfi {
        #[command(flatten)]
        common: Common,
    },
    /// Gas and laser-phase-noise heating, optionally inferred from σ traces.
    Heating {
        #[command(flatten)]
        common: Common,
        /// σ trace CSVs (`t_s,sigma_m`), each with a `tau_s` JSON sidecar.
        #[arg(long, num_args = 1..)]
        traces: Vec<PathBuf>,
        /// Laser frequency-noise PSD, Hz²/Hz.
        #[arg(long = "lpn-psd")]
        lpn_psd: Option<f64>,
    },
    /// Fit the quench model to an intensity trace.
    FitProfile {
        #[command(flatten)]
        common: Common,
        /// Intensity CSV (`t_s,intensity`).
        #[arg(long)]
        input: PathBuf,
    },
    /// Folded-normal fit of single-shot |z| samples.
    FitHistogram {
        #[command(flatten)]
        common: Common,
        /// Shot CSV (`sample_m`); synthesized at T_opt when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        shots: Option<usize>,
        /// Fixed bin count instead of Freedman–Diaconis.
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {workers} workers: {e}")))
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Simulate { common, t_end_us } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = t_end_us {
                cfg.simulate.t_end_s = Some(t * 1e-6);
            }
            if let Some(t) = cfg.simulate.t_end_s {
                if !(t > 0.0) {
                    return Err(Failure::Usage("t_end must be > 0".into()));
                }
            }
            commands::simulate(&cfg, &pool(cfg.workers)?)
        }
        Command::Sensitivity { common } => {
            let cfg = common.resolve()?;
            commands::sensitivity(&cfg, &pool(cfg.workers)?)
        }
        Command::Allan {
            common,
            input,
            duration_s,
            drift,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(d) = duration_s {
                cfg.allan.duration_s = d;
            }
            if let Some(d) = drift {
                cfg.allan.drift = DriftSpec::Preset(d);
            }
            commands::allan(&cfg, input.as_deref())
        }
        Command::Qfi { common } => commands::qfi(&common.resolve()?),
        Command::Heating {
            common,
            traces,
            lpn_psd,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = lpn_psd {
                cfg.heating.lpn.freq_noise_psd = s;
            }
            commands::heating(&cfg, &traces, &pool(cfg.workers)?)
        }
        Command::FitProfile { common, input } => {
            commands::fit_profile_cmd(&common.resolve()?, &input)
        }
        Command::FitHistogram {
            common,
            input,
            shots,
            bins,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(n) = shots {
                if n == 0 {
                    return Err(Failure::Usage("--shots must be ≥ 1".into()));
                }
                cfg.shots.count = n;
            }
            if let Some(b) = bins {
                cfg.shots.binning = Binning::Fixed(b);
            }
            commands::fit_histogram(&cfg, input.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
