use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use stiffnet::compare::{epsilon_sweep, Sweep, SweepConfig};
use stiffnet::likelihood::{self, BootstrapConfig, EstimatorOutput, Method, Samples, ScaleConvention};
use stiffnet::network::{enumerate_state_space, Observable, ReactionNetwork, DEFAULT_STATE_CAP};
use stiffnet::oracle::{self, OracleReport, SensitivityRoute};
use stiffnet::rng::RngStream;
use stiffnet::ssa::{self, run_ensemble, EnsembleConfig, RecordPolicy, SimOptions};
use stiffnet::twoscale::{rescale_fast, tts_ensemble, TwoScale};
use stiffnet::Error;

use crate::{CliError, Outcome, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesMean {
    pub name: String,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamValue {
    pub name: String,
    pub estimate: f64,
    pub ci_half_width: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSensitivity {
    pub species: String,
    pub params: Vec<ParamValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointReport {
    pub time: f64,
    pub species: Vec<SpeciesMean>,
    pub sensitivities: Vec<SpeciesSensitivity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub network: String,
    pub epsilon: f64,
    pub seed: u64,
    pub n_replicates: usize,
    pub estimator: Method,
    pub scale_convention: ScaleConvention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateReport {
    pub run: RunInfo,
    /// Replicates dropped because they absorbed before the horizon.
    pub excluded: usize,
    pub checkpoints: Vec<CheckpointReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtsReport {
    pub run: RunInfo,
    pub visits: usize,
    pub nonconverged: usize,
    pub micro_jumps: usize,
    pub absorbed: usize,
    pub checkpoints: Vec<CheckpointReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaeReport {
    pub species: Vec<String>,
    pub params: Vec<String>,
    pub times: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sensitivities: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassReport {
    pub classes: Vec<Vec<Vec<i64>>>,
}

fn species_observables(net: &ReactionNetwork) -> Vec<Observable> {
    (0..net.n_species()).map(Observable::Species).collect()
}

fn run_info(cfg: &RunConfig) -> RunInfo {
    RunInfo {
        network: cfg.net_source.clone(),
        epsilon: cfg.net.epsilon(),
        seed: cfg.seed,
        n_replicates: cfg.replicates,
        estimator: cfg.estimator,
        scale_convention: cfg.scale_convention,
    }
}

fn boot(cfg: &RunConfig) -> BootstrapConfig {
    BootstrapConfig { seed: cfg.seed, ..BootstrapConfig::default() }
}

fn convert(values: &[f64], cfg: &RunConfig) -> Vec<f64> {
    match cfg.scale_convention {
        ScaleConvention::RescaledAlpha => values.to_vec(),
        ScaleConvention::OriginalAlphaEps => rescale_fast(values, &cfg.net),
    }
}

fn param_values(out: &EstimatorOutput, cfg: &RunConfig) -> Vec<ParamValue> {
    let est = convert(&out.estimate, cfg);
    let hw = convert(&out.ci_half_width, cfg);
    let se = convert(&out.std_error, cfg);
    cfg.net
        .params
        .names
        .iter()
        .enumerate()
        .map(|(p, name)| ParamValue { name: name.clone(), estimate: est[p], ci_half_width: hw[p], std_error: se[p] })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_tables(dir: &Path, prefix: &str, reports: &[CheckpointReport], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(format!("{prefix}means.csv"));
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "time,species,mean,se")?;
    for r in reports {
        for s in &r.species {
            writeln!(w, "{},{},{},{}", r.time, s.name, s.mean, s.se)?;
        }
    }
    w.flush()?;
    files.push(path);
    if reports.iter().all(|r| r.sensitivities.is_empty()) {
        return Ok(());
    }
    let path = dir.join(format!("{prefix}sensitivities.csv"));
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "time,species,param,estimate,ci_half_width,std_error")?;
    for r in reports {
        for s in &r.sensitivities {
            for p in &s.params {
                writeln!(w, "{},{},{},{},{},{}", r.time, s.species, p.name, p.estimate, p.ci_half_width, p.std_error)?;
            }
        }
    }
    w.flush()?;
    files.push(path);
    Ok(())
}

/// Single-scale ensemble: means with standard errors and likelihood-ratio
/// sensitivities of every species at each checkpoint.
pub fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let net = &cfg.net;
    let obs = species_observables(net);
    let t_final = cfg.t_final();
    let mut files = Vec::new();
    if cfg.replicates == 1 {
        let opts = SimOptions { record: RecordPolicy::Full, track_weights: true, ..SimOptions::default() };
        let rec = ssa::simulate(net, &cfg.x0, t_final, &obs, &opts, &mut RngStream::new(cfg.seed, 0))?;
        let path = cfg.out.join("trajectory.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        rec.write_csv(net, &mut w)?;
        w.flush()?;
        files.push(path);
        return Ok(Outcome { files, nonconverged: false });
    }
    let mut ens_cfg = EnsembleConfig::new(cfg.replicates, cfg.seed, t_final);
    ens_cfg.checkpoints = cfg.checkpoints.clone();
    let ens = run_ensemble(net, &cfg.x0, &obs, &ens_cfg)?;
    let mut checkpoints = Vec::new();
    for (cp, &time) in ens.times.iter().enumerate() {
        let summary = ens.summary(cp);
        let w = ens.weights(cp);
        let mut sens = Vec::new();
        for (j, s) in net.species.iter().enumerate() {
            let f = if cfg.estimator.is_ergodic() { ens.ergodic(cp, j) } else { ens.terminal(cp, j) };
            let out = likelihood::estimate(cfg.estimator, &Samples::new(&f, &w), &boot(cfg))?;
            sens.push(SpeciesSensitivity { species: s.name.clone(), params: param_values(&out, cfg) });
        }
        let species = net
            .species
            .iter()
            .enumerate()
            .map(|(j, s)| SpeciesMean { name: s.name.clone(), mean: summary.mean_terminal[j], se: summary.se_terminal[j] })
            .collect();
        checkpoints.push(CheckpointReport { time, species, sensitivities: sens });
    }
    write_tables(&cfg.out, "", &checkpoints, &mut files)?;
    let report = SimulateReport { run: run_info(cfg), excluded: ens.excluded.len(), checkpoints };
    let path = cfg.out.join("summary.json");
    write_json(&path, &report)?;
    files.push(path);
    Ok(Outcome { files, nonconverged: false })
}

/// Two-time-scale ensemble with macro sensitivities of every species.
pub fn tts(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let net = &cfg.net;
    let obs = species_observables(net);
    let t_final = cfg.t_final();
    let model = TwoScale::new(net, &obs, cfg.batch.clone())?;
    let mut files = Vec::new();
    if cfg.replicates == 1 {
        let traj = model.simulate(&cfg.x0, t_final, &cfg.checkpoints, true, &mut RngStream::new(cfg.seed, 0))?;
        let path = cfg.out.join("macro_trajectory.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        traj.write_csv(&mut w)?;
        w.flush()?;
        files.push(path);
        return Ok(Outcome { files, nonconverged: traj.nonconverged > 0 });
    }
    let ens = tts_ensemble(&model, &cfg.x0, t_final, &cfg.checkpoints, cfg.replicates, cfg.seed)?;
    let mut checkpoints = Vec::new();
    for (cp, &time) in ens.times.iter().enumerate() {
        let means = ens.mean_fbar(cp);
        let species = net
            .species
            .iter()
            .zip(&means)
            .map(|(s, &(mean, se))| SpeciesMean { name: s.name.clone(), mean, se })
            .collect();
        let mut sens = Vec::new();
        for (j, s) in net.species.iter().enumerate() {
            let out = ens.sensitivity(cp, j, cfg.estimator, &boot(cfg))?;
            sens.push(SpeciesSensitivity { species: s.name.clone(), params: param_values(&out, cfg) });
        }
        checkpoints.push(CheckpointReport { time, species, sensitivities: sens });
    }
    write_tables(&cfg.out, "tts_", &checkpoints, &mut files)?;
    let report = TtsReport {
        run: run_info(cfg),
        visits: ens.visits,
        nonconverged: ens.nonconverged,
        micro_jumps: ens.micro_jumps,
        absorbed: ens.absorbed,
        checkpoints,
    };
    let path = cfg.out.join("tts_report.json");
    write_json(&path, &report)?;
    files.push(path);
    Ok(Outcome { files, nonconverged: ens.nonconverged > 0 })
}

/// Normalized single-scale versus two-time-scale errors over the sweep.
pub fn compare(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let net = &cfg.net;
    let obs = species_observables(net);
    let sweep_cfg = SweepConfig {
        t_final: cfg.t_final(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        method: cfg.estimator,
        batch: cfg.batch.clone(),
        boot: boot(cfg),
    };
    let sweep = epsilon_sweep(net, &cfg.x0, &obs, &cfg.epsilon_sweep, &sweep_cfg)?;
    let mut files = Vec::new();
    let path = cfg.out.join("compare.csv");
    write_compare_csv(&path, &sweep)?;
    files.push(path);
    if sweep.points.len() > 1 {
        let path = cfg.out.join("compare_slopes.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "quantity,slope")?;
        let fmt = |s: Option<f64>| s.map_or(String::new(), |v| v.to_string());
        writeln!(w, "means,{}", fmt(sweep.mean_slope))?;
        for (p, s) in sweep.slow_params.iter().zip(&sweep.sens_slope) {
            writeln!(w, "d/d{p},{}", fmt(*s))?;
        }
        w.flush()?;
        files.push(path);
    }
    let path = cfg.out.join("compare.json");
    write_json(&path, &sweep)?;
    files.push(path);
    Ok(Outcome { files, nonconverged: false })
}

fn write_compare_csv(path: &Path, sweep: &Sweep) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epsilon,quantity,sts,sts_se,tts,tts_se,normalized_error")?;
    let tts = &sweep.tts;
    for pt in &sweep.points {
        let e = pt.epsilon;
        for (j, name) in sweep.observables.iter().enumerate() {
            let err = (pt.sts.mean[j] - tts.mean[j]).abs() / tts.mean[j].abs();
            writeln!(w, "{e},mean[{name}],{},{},{},{},{err}", pt.sts.mean[j], pt.sts.se[j], tts.mean[j], tts.se[j])?;
        }
        writeln!(w, "{e},means,,,,,{}", pt.mean_error)?;
        for (k, p) in sweep.slow_params.iter().enumerate() {
            for (j, name) in sweep.observables.iter().enumerate() {
                let (a, b) = (pt.sts.sens[j][k], tts.sens[j][k]);
                writeln!(
                    w,
                    "{e},d[{name}]/d{p},{a},{},{b},{},{}",
                    pt.sts.sens_se[j][k],
                    tts.sens_se[j][k],
                    (a - b).abs() / b.abs()
                )?;
            }
            writeln!(w, "{e},d/d{p},,,,,{}", pt.sens_error[k])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Stationary distribution, steady-state sensitivities, spectral gap and,
/// for linear networks, the quasi-equilibrium ODE solution.
pub fn oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let net = &cfg.net;
    let species = match &cfg.observable {
        Some(name) => net.species_index(name).expect("validated"),
        None => 0,
    };
    let obs = Observable::Species(species);
    let mut files = Vec::new();
    let report: OracleReport = match oracle::oracle_report(net, &cfg.x0, &obs, DEFAULT_STATE_CAP, SensitivityRoute::Auto) {
        Ok(r) => r,
        Err(Error::Reducible { classes }) => {
            let space = enumerate_state_space(net, &cfg.x0, DEFAULT_STATE_CAP);
            let report = ClassReport {
                classes: classes.iter().map(|c| c.iter().map(|&i| space.states[i].clone()).collect()).collect(),
            };
            let path = cfg.out.join("classes.json");
            write_json(&path, &report)?;
            warn!("chain is reducible with {} communicating classes; wrote {}", classes.len(), path.display());
            return Err(CliError::Numerical(Error::Reducible { classes }));
        }
        Err(e) => return Err(e.into()),
    };
    let path = cfg.out.join("oracle.json");
    write_json(&path, &report)?;
    files.push(path);

    let mut grid = cfg.checkpoints.clone();
    grid.extend(cfg.t_final);
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    if !grid.is_empty() {
        match oracle::linear_dae_solution(net, &cfg.x0, &grid) {
            Ok(sol) => {
                let dae = DaeReport {
                    species: net.species.iter().map(|s| s.name.clone()).collect(),
                    params: net.params.names.clone(),
                    times: sol.times,
                    means: sol.means,
                    sensitivities: sol.sensitivities,
                };
                let path = cfg.out.join("dae.json");
                write_json(&path, &dae)?;
                files.push(path);
            }
            Err(Error::NonlinearNetwork(m)) => info!("skipping quasi-equilibrium ODE: {m}"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Outcome { files, nonconverged: false })
}
