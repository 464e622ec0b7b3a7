use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use quench_core::allan::{overlapping_allan, synthesize_long_run, AccelSeries, AllanSeries, LongRunOptions};
use quench_core::dynamics::{default_dt, integrate_sampled, DEFAULT_DT_OUT};
use quench_core::heating::{
    gas_heating_rate, infer_heating_rate, lpn_heating, nitrogen_fraction_for,
    photon_recoil_heating, GasSpec, HeatingInference, LpnHeating, LpnSpec, SigmaTrace,
};
use quench_core::metrology::{
    bound_check, default_t_end, optimal_sensitivity, qfi_half_period, QfiResult,
    SensitivityOptions,
};
use quench_core::profile::{fit_profile, read_intensity_file, ProfileFit};
use quench_core::shots::{
    fit_folded_normal, gaussian_moments, measure_sensitivity, sample_shots, state_at, FoldedFit,
    PipelineOptions, ShotSet,
};
use quench_core::uncertainty::{qfi_uncertainty, small_angle_bound, Measured, QfiUncertainty};
use quench_core::{Error, Trajectory};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::output::{csv_bytes, num, tag, Output};
use crate::Failure;

type Pool = rayon::ThreadPool;

/// Independent seed for sweep entry `i`; entry 0 keeps the base seed.
fn stream_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

#[derive(Serialize)]
struct TrajectoryColumns<'a> {
    tau_s: f64,
    tilt_rad: f64,
    heating_k_per_s: f64,
    t_s: &'a [f64],
    mean_z_m: Vec<f64>,
    mean_p_kg_m_per_s: Vec<f64>,
    var_z_m2: Vec<f64>,
    var_p_kg2_m2_per_s2: Vec<f64>,
    cov_zp_kg_m2_per_s: Vec<f64>,
}

pub fn simulate(cfg: &RunConfig, pool: &Pool) -> Result<String, Failure> {
    let mut jobs = Vec::new();
    for &tau in &cfg.taus {
        for &tilt in &cfg.tilts {
            for &h in &cfg.heatings {
                jobs.push((tau, tilt, h));
            }
        }
    }
    let runs: Vec<Result<Trajectory, Error>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(tau, tilt, h)| {
                let p = cfg.params.with_heating_rate(h);
                let prof = cfg.profile_for(tau);
                let end = cfg.simulate.t_end_s.unwrap_or_else(|| default_t_end(&p, &prof));
                let a = p.acceleration_from_tilt(tilt);
                integrate_sampled(&p, &prof, a, end, default_dt(&p), DEFAULT_DT_OUT)
            })
            .collect()
    });
    let mut out = Output::create(&cfg.output_dir)?;
    for (k, (&(tau, tilt, h), run)) in jobs.iter().zip(runs).enumerate() {
        let traj = run?;
        let name = format!(
            "trajectory_{k:02}_tau{}us_tilt{}deg_h{}mKps.{}",
            tag(tau * 1e6),
            tag(tilt.to_degrees()),
            tag(h * 1e3),
            ext(cfg.format)
        );
        match cfg.format {
            Format::Csv => {
                let mut buf = Vec::new();
                traj.write_csv(&mut buf)?;
                out.write(&name, &buf)?;
            }
            Format::Json => {
                let col = |f: fn(&quench_core::GaussianState) -> f64| {
                    traj.states.iter().map(f).collect::<Vec<_>>()
                };
                out.write_json(
                    &name,
                    &TrajectoryColumns {
                        tau_s: tau,
                        tilt_rad: tilt,
                        heating_k_per_s: h,
                        t_s: &traj.times,
                        mean_z_m: col(|s| s.mean_z),
                        mean_p_kg_m_per_s: col(|s| s.mean_p),
                        var_z_m2: col(|s| s.var_z),
                        var_p_kg2_m2_per_s2: col(|s| s.var_p),
                        cov_zp_kg_m2_per_s: col(|s| s.cov_zp),
                    },
                )?;
            }
        }
    }
    let n = out.finish("simulate", cfg)?;
    Ok(format!("simulate: {n} trajectories in {}", cfg.output_dir.display()))
}

#[derive(Serialize)]
struct SensitivityRow {
    tau_s: f64,
    t_opt_s: f64,
    s_s2: f64,
    /// Propagated error of the synthetic tilt-sweep estimate.
    ds_s2: f64,
    s_pipeline_s2: f64,
    /// S(T_opt) at each scenario heating rate, keyed by mK/s.
    scenarios_s2: BTreeMap<String, f64>,
    s_over_sqrt_fq: f64,
}

#[derive(Serialize)]
struct SensitivityTable<'a> {
    heating_k_per_s: f64,
    fq_half_period_s4_per_m2: f64,
    rows: &'a [SensitivityRow],
}

pub fn sensitivity(cfg: &RunConfig, pool: &Pool) -> Result<String, Failure> {
    let h0 = cfg.heatings[0];
    let scenarios = if cfg.heatings.len() > 1 {
        cfg.heatings[1..].to_vec()
    } else {
        cfg.sensitivity.scenarios_k_per_s.clone()
    };
    let labels: Vec<String> = scenarios.iter().map(|h| tag(h * 1e3)).collect();
    let fq = qfi_half_period(&cfg.params).value;
    let opts = SensitivityOptions {
        tilt: cfg.tilts[0],
        ..Default::default()
    };
    let rows: Vec<Result<SensitivityRow, Error>> = pool.install(|| {
        cfg.taus
            .par_iter()
            .enumerate()
            .map(|(i, &tau)| {
                let prof = cfg.profile_for(tau);
                let (pt, _) = optimal_sensitivity(&cfg.params, &prof, h0, &opts)?;
                let pipeline = PipelineOptions {
                    tilts: cfg.sensitivity.tilts_rad.clone(),
                    shots_per_tilt: cfg.sensitivity.shots_per_tilt,
                    seed: stream_seed(cfg.seed, i),
                    binning: cfg.sensitivity.binning,
                };
                let measured = measure_sensitivity(&cfg.params, &prof, h0, pt.t_opt, &pipeline)?;
                let mut scenarios_s2 = BTreeMap::new();
                for (label, &h) in labels.iter().zip(&scenarios) {
                    let (q, _) = optimal_sensitivity(&cfg.params, &prof, h, &opts)?;
                    scenarios_s2.insert(label.clone(), q.s);
                }
                Ok(SensitivityRow {
                    tau_s: tau,
                    t_opt_s: pt.t_opt,
                    s_s2: pt.s,
                    ds_s2: measured.s.sigma,
                    s_pipeline_s2: measured.s.value,
                    scenarios_s2,
                    s_over_sqrt_fq: bound_check(pt.s, fq)?.ratio,
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut out = Output::create(&cfg.output_dir)?;
    let name = format!("sensitivity.{}", ext(cfg.format));
    match cfg.format {
        Format::Csv => {
            let mut header: Vec<String> = ["tau_s", "T_opt_s", "S_s2", "dS_s2", "S_pipeline_s2"]
                .map(String::from)
                .to_vec();
            header.extend(labels.iter().map(|l| format!("S_h{l}mKps_s2")));
            header.push("S_over_sqrtFQ".into());
            let body = rows.iter().map(|r| {
                let mut cells = vec![
                    num(r.tau_s),
                    num(r.t_opt_s),
                    num(r.s_s2),
                    num(r.ds_s2),
                    num(r.s_pipeline_s2),
                ];
                cells.extend(labels.iter().map(|l| num(r.scenarios_s2[l])));
                cells.push(num(r.s_over_sqrt_fq));
                cells
            });
            out.write(&name, &csv_bytes(&header, body))?;
        }
        Format::Json => out.write_json(
            &name,
            &SensitivityTable {
                heating_k_per_s: h0,
                fq_half_period_s4_per_m2: fq,
                rows: &rows,
            },
        )?,
    }
    out.finish("sensitivity", cfg)?;
    Ok(format!("sensitivity: {} rows in {}", rows.len(), cfg.output_dir.display()))
}

#[derive(Serialize)]
struct Floor {
    t_a_s: f64,
    allan_mps2: f64,
}

#[derive(Serialize)]
struct AllanSummary {
    samples: usize,
    sample_rate_hz: f64,
    duration_s: f64,
    floor: Option<Floor>,
    /// Log-log slope over the first decade of integration times.
    short_term_slope: Option<f64>,
    t_opt_s: Option<f64>,
    shot_noise_mps2: Option<f64>,
    slope_m_per_rad: Option<f64>,
}

fn short_term_slope(a: &AllanSeries) -> Option<f64> {
    let t0 = *a.integration_times.first()?;
    let pts: Vec<(f64, f64)> = a
        .integration_times
        .iter()
        .zip(&a.deviations)
        .take_while(|(t, _)| **t <= 10.0 * t0 * (1.0 + 1e-12))
        .map(|(t, d)| (t.ln(), d.ln()))
        .collect();
    if pts.len() < 2 || pts.iter().any(|p| !p.1.is_finite()) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn read_series(path: &Path, fallback_rate: f64) -> Result<AccelSeries, Failure> {
    if path.with_extension("json").exists() {
        Ok(AccelSeries::load(path)?)
    } else {
        let file = std::fs::File::open(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        Ok(AccelSeries::read_csv(file, fallback_rate)?)
    }
}

pub fn allan(cfg: &RunConfig, input: Option<&Path>) -> Result<String, Failure> {
    let mut out = Output::create(&cfg.output_dir)?;
    let (series, run) = match input {
        Some(path) => {
            out.input(path)?;
            (read_series(path, cfg.allan.sample_rate_hz)?, None)
        }
        None => {
            let opts = LongRunOptions {
                tilt: cfg.tilts[0],
                shots_per_point: cfg.allan.shots_per_point,
                duration: cfg.allan.duration_s,
                sample_rate: cfg.allan.sample_rate_hz,
                seed: cfg.seed,
                drift: cfg.allan.drift.model(),
            };
            let prof = cfg.profile_for(cfg.taus[0]);
            let run = synthesize_long_run(&cfg.params, &prof, cfg.heatings[0], &opts)?;
            (run.series.clone(), Some(run))
        }
    };
    let dev = overlapping_allan(&series)?;
    let name = format!("allan.{}", ext(cfg.format));
    match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            dev.write_csv(&mut buf)?;
            out.write(&name, &buf)?;
            if run.is_some() {
                let mut buf = Vec::new();
                series.write_csv(&mut buf)?;
                out.write("series.csv", &buf)?;
            }
        }
        Format::Json => {
            out.write_json(&name, &dev)?;
            if run.is_some() {
                out.write_json("series.json", &series)?;
            }
        }
    }
    let summary = AllanSummary {
        samples: series.values.len(),
        sample_rate_hz: series.sample_rate,
        duration_s: series.values.len() as f64 / series.sample_rate,
        floor: dev.minimum().map(|(t_a_s, allan_mps2)| Floor { t_a_s, allan_mps2 }),
        short_term_slope: short_term_slope(&dev),
        t_opt_s: run.as_ref().map(|r| r.t_opt),
        shot_noise_mps2: run.as_ref().map(|r| r.shot_noise),
        slope_m_per_rad: run.as_ref().map(|r| r.slope),
    };
    out.write_json("allan_summary.json", &summary)?;
    out.finish("allan", cfg)?;
    Ok(format!(
        "allan: {} samples, {} integration times in {}",
        summary.samples,
        dev.deviations.len(),
        cfg.output_dir.display()
    ))
}

#[derive(Serialize)]
struct SmallAngleReport {
    theta_rad: f64,
    bound: f64,
    exact: f64,
}

#[derive(Serialize)]
struct QfiReport {
    half_period: QfiResult,
    uncertainty: QfiUncertainty,
    small_angle: SmallAngleReport,
    units: BTreeMap<&'static str, &'static str>,
}

pub fn qfi(cfg: &RunConfig) -> Result<String, Failure> {
    let p = &cfg.params;
    let q = &cfg.qfi;
    let half_period = qfi_half_period(p);
    let uncertainty = qfi_uncertainty(
        Measured::new(p.mass, q.mass_sigma_kg),
        Measured::new(p.nbar, q.nbar_sigma),
        Measured::new(p.omega0, q.omega0_sigma_rad_s),
        Measured::new(p.omega1, q.omega1_sigma_rad_s),
    );
    let theta = p.theta0.abs() + q.tilt_span_rad;
    let sa = small_angle_bound(theta)?;
    let units = [
        ("value", "s^4/m^2"),
        ("time", "s"),
        ("fq", "s^4/m^2"),
        ("theta_rad", "rad"),
    ]
    .into_iter()
    .collect();
    let report = QfiReport {
        half_period,
        uncertainty,
        small_angle: SmallAngleReport {
            theta_rad: theta,
            bound: sa.bound,
            exact: sa.exact,
        },
        units,
    };
    let mut out = Output::create(&cfg.output_dir)?;
    out.write_json("qfi.json", &report)?;
    out.finish("qfi", cfg)?;
    Ok(format!(
        "qfi: F_Q(T1/2) = {:.4e} s^4/m^2 ± {:.1}%",
        report.half_period.value,
        100.0 * report.uncertainty.relative
    ))
}

#[derive(Serialize)]
struct GasReport {
    n2_k_per_s: f64,
    h2_k_per_s: f64,
    custom_k_per_s: Option<f64>,
    /// N₂ fraction of an N₂/H₂ mix reproducing the configured heating rate.
    nitrogen_fraction: f64,
}

#[derive(Serialize)]
struct LpnReport {
    spec: LpnSpec,
    /// psd in m²/Hz, energy_rate in J/s, phonon_rate in 1/s, temp_rate in K/s.
    result: LpnHeating,
}

#[derive(Serialize)]
struct HeatingReport {
    gas: GasReport,
    lpn: LpnReport,
    photon_recoil_k_per_s: f64,
    inference: Option<HeatingInference>,
}

pub fn heating(cfg: &RunConfig, traces: &[PathBuf], pool: &Pool) -> Result<String, Failure> {
    let p = &cfg.params;
    let mut out = Output::create(&cfg.output_dir)?;
    let gas = GasReport {
        n2_k_per_s: gas_heating_rate(p, &GasSpec::n2())?,
        h2_k_per_s: gas_heating_rate(p, &GasSpec::h2())?,
        custom_k_per_s: cfg
            .heating
            .gas
            .as_ref()
            .map(|g| gas_heating_rate(p, g))
            .transpose()?,
        nitrogen_fraction: nitrogen_fraction_for(p, p.heating_rate),
    };
    let lpn = LpnReport {
        spec: cfg.heating.lpn,
        result: lpn_heating(p, &cfg.heating.lpn)?,
    };
    let inference = if traces.is_empty() {
        None
    } else {
        let mut loaded = Vec::with_capacity(traces.len());
        for path in traces {
            out.input(path)?;
            out.input(&path.with_extension("json"))?;
            loaded.push(SigmaTrace::load(path)?);
        }
        let profiles: Vec<_> = loaded.iter().map(|t| cfg.profile_for(t.tau)).collect();
        Some(pool.install(|| infer_heating_rate(&loaded, p, &profiles, &cfg.heating.grid))?)
    };
    let report = HeatingReport {
        gas,
        lpn,
        photon_recoil_k_per_s: photon_recoil_heating(),
        inference,
    };
    out.write_json("heating.json", &report)?;
    out.finish("heating", cfg)?;
    let mut msg = format!(
        "heating: N2 {:.2} mK/s, H2 {:.2} mK/s",
        report.gas.n2_k_per_s * 1e3,
        report.gas.h2_k_per_s * 1e3
    );
    if let Some(inf) = &report.inference {
        msg += &format!(
            ", inferred {:.2}({:.2}) mK/s",
            inf.rate * 1e3,
            inf.uncertainty * 1e3
        );
    }
    Ok(msg)
}

#[derive(Serialize)]
struct ProfileCurve {
    t_s: Vec<f64>,
    intensity: Vec<f64>,
    model: Vec<f64>,
}

pub fn fit_profile_cmd(cfg: &RunConfig, input: &Path) -> Result<String, Failure> {
    let mut out = Output::create(&cfg.output_dir)?;
    out.input(input)?;
    let samples = read_intensity_file(input)?;
    let init = cfg.profile_for(cfg.taus[0]);
    let fit: ProfileFit = fit_profile(&samples, &init)?;
    out.write_json("profile_fit.json", &fit)?;
    let curve = ProfileCurve {
        t_s: samples.iter().map(|s| s.0).collect(),
        intensity: samples.iter().map(|s| s.1).collect(),
        model: samples.iter().map(|s| fit.profile.intensity(s.0)).collect(),
    };
    match cfg.format {
        Format::Csv => {
            let header = ["t_s", "intensity", "model"].map(String::from);
            let body = (0..curve.t_s.len())
                .map(|i| [num(curve.t_s[i]), num(curve.intensity[i]), num(curve.model[i])]);
            out.write("profile_curve.csv", &csv_bytes(&header, body))?;
        }
        Format::Json => out.write_json("profile_curve.json", &curve)?,
    }
    out.finish("fit-profile", cfg)?;
    Ok(format!(
        "fit-profile: tau_1e = {:.4} us from {} samples",
        fit.tau_1e * 1e6,
        fit.samples
    ))
}

#[derive(Serialize)]
struct HistogramReport {
    fit: FoldedFit,
    samples: usize,
    gaussian_mean_m: f64,
    gaussian_sd_m: f64,
    measure_time_s: f64,
    tilt_rad: f64,
    bins: usize,
}

#[derive(Serialize)]
struct HistogramTable {
    bin_lo_m: Vec<f64>,
    bin_hi_m: Vec<f64>,
    count: Vec<f64>,
    model: Vec<f64>,
}

fn folded_model(x: f64, f: &FoldedFit) -> f64 {
    let s2 = 2.0 * f.sigma * f.sigma;
    f.amplitude * ((-(x - f.mu).powi(2) / s2).exp() + (-(x + f.mu).powi(2) / s2).exp())
}

pub fn fit_histogram(cfg: &RunConfig, input: Option<&Path>) -> Result<String, Failure> {
    let mut out = Output::create(&cfg.output_dir)?;
    let shots = match input {
        Some(path) => {
            out.input(path)?;
            ShotSet::load(path)?
        }
        None => {
            let prof = cfg.profile_for(cfg.taus[0]);
            let h = cfg.heatings[0];
            let tilt = cfg.tilts[0];
            let t = match cfg.shots.measure_time_s {
                Some(t) => t,
                None => {
                    let opts = SensitivityOptions {
                        tilt,
                        ..Default::default()
                    };
                    optimal_sensitivity(&cfg.params, &prof, h, &opts)?.0.t_opt
                }
            };
            let p = cfg.params.with_heating_rate(h);
            let state = state_at(&p, &prof, p.acceleration_from_tilt(tilt), t)?;
            let mut set = sample_shots(&state, cfg.shots.count, cfg.seed)?;
            set.measure_time = t;
            set.tilt = tilt;
            let mut buf = Vec::new();
            set.write_csv(&mut buf)?;
            out.write("shots.csv", &buf)?;
            out.write_json("shots.json", &set.meta())?;
            set
        }
    };
    let (fit, hist) = fit_folded_normal(&shots, cfg.shots.binning)?;
    let (mean, sd) = gaussian_moments(&shots.samples);
    let table = HistogramTable {
        bin_lo_m: hist.edges[..hist.edges.len() - 1].to_vec(),
        bin_hi_m: hist.edges[1..].to_vec(),
        count: hist.counts.clone(),
        model: hist.centers().iter().map(|&x| folded_model(x, &fit)).collect(),
    };
    match cfg.format {
        Format::Csv => {
            let header = ["bin_lo_m", "bin_hi_m", "count", "model"].map(String::from);
            let body = (0..table.count.len()).map(|i| {
                [
                    num(table.bin_lo_m[i]),
                    num(table.bin_hi_m[i]),
                    num(table.count[i]),
                    num(table.model[i]),
                ]
            });
            out.write("histogram.csv", &csv_bytes(&header, body))?;
        }
        Format::Json => out.write_json("histogram.json", &table)?,
    }
    let report = HistogramReport {
        fit,
        samples: shots.samples.len(),
        gaussian_mean_m: mean,
        gaussian_sd_m: sd,
        measure_time_s: shots.measure_time,
        tilt_rad: shots.tilt,
        bins: table.count.len(),
    };
    out.write_json("folded_fit.json", &report)?;
    out.finish("fit-histogram", cfg)?;
    Ok(format!(
        "fit-histogram: mu = {:.4e} m, sigma = {:.4e} m from {} shots",
        fit.mu,
        fit.sigma,
        report.samples
    ))
}
