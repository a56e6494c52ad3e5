//! Exact stochastic simulation (direct method) and reproducible ensembles.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::ReweightAccumulator;
use crate::network::kinetics::CompiledObservable;
use crate::network::{Kinetics, Observable, ReactionNetwork, State, Subset};
use crate::rng::RngStream;

/// Index of the first reaction whose cumulative propensity strictly
/// exceeds `u * total`.
#[inline]
pub fn select_reaction(rates: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut cum = 0.0;
    for (k, &l) in rates.iter().enumerate() {
        cum += l;
        if cum > target {
            return k;
        }
    }
    // only reachable through rounding when u is within an ulp of 1
    rates.iter().rposition(|&l| l > 0.0).unwrap_or(rates.len() - 1)
}

/// One step of the direct method: exponential holding time and the index
/// of the reaction that fires. The absorption error carries no time here.
pub fn ssa_step(x: &[i64], net: &ReactionNetwork, rng: &mut RngStream) -> Result<(f64, usize)> {
    let (rates, total) = net.propensities(x);
    if total <= 0.0 {
        return Err(Error::AbsorbedState { time: f64::NAN });
    }
    let dt = rng.exp1() / total;
    Ok((dt, select_reaction(&rates, total, rng.uniform())))
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecordPolicy {
    /// Every jump.
    Full,
    /// Snapshots at the given times only.
    Checkpoints(Vec<f64>),
    TerminalOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsorptionPolicy {
    /// Stay in the absorbing state until the horizon.
    Hold,
    /// Return `AbsorbedState` with the absorption time.
    Fail,
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub record: RecordPolicy,
    pub track_weights: bool,
    pub absorption: AbsorptionPolicy,
    pub subset: Subset,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            record: RecordPolicy::TerminalOnly,
            track_weights: false,
            absorption: AbsorptionPolicy::Hold,
            subset: Subset::All,
        }
    }
}

/// State of the process at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub state: State,
    /// Time integral of each observable over [0, time].
    pub integrals: Vec<f64>,
    /// Girsanov weights W(time), empty unless tracked.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    /// Jump times T(n), starting with T(0) = 0 (full policy only).
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// `fired[n]` moved the process from `states[n]` to `states[n + 1]`.
    pub fired: Vec<usize>,
    /// F(n) per observable.
    pub integrals: Vec<Vec<f64>>,
    pub checkpoints: Vec<Snapshot>,
    pub terminal: Snapshot,
    pub n_jumps: usize,
    pub absorbed_at: Option<f64>,
}

impl TrajectoryRecord {
    pub fn t_final(&self) -> f64 {
        self.terminal.time
    }

    /// CSV with columns `n,time,reaction,<species...>,F`, where F is the
    /// integral of the first observable. Requires the full policy.
    pub fn write_csv<W: Write>(&self, net: &ReactionNetwork, mut out: W) -> std::io::Result<()> {
        write!(out, "n,time,reaction")?;
        for s in &net.species {
            write!(out, ",{}", s.name)?;
        }
        writeln!(out, ",F")?;
        for n in 0..self.times.len() {
            write!(out, "{},{},", n, self.times[n])?;
            if n > 0 {
                write!(out, "{}", self.fired[n - 1])?;
            }
            for v in &self.states[n] {
                write!(out, ",{}", v)?;
            }
            writeln!(out, ",{}", self.integrals[n].first().copied().unwrap_or(0.0))?;
        }
        Ok(())
    }
}

struct Engine<'a> {
    kin: Kinetics,
    obs: Vec<CompiledObservable>,
    n_params: usize,
    net: &'a ReactionNetwork,
}

impl<'a> Engine<'a> {
    fn new(net: &'a ReactionNetwork, observables: &[Observable], subset: Subset) -> Self {
        Engine {
            kin: Kinetics::new(net, subset),
            obs: observables.iter().map(|o| o.compile(net)).collect(),
            n_params: net.n_params(),
            net,
        }
    }

    fn run(&self, x0: &[i64], t_final: f64, opts: &SimOptions, rng: &mut RngStream) -> Result<TrajectoryRecord> {
        if x0.len() != self.net.n_species() || x0.iter().any(|&v| v < 0) {
            return Err(Error::Domain("initial state must be nonnegative with one entry per species".into()));
        }
        if !(t_final >= 0.0) {
            return Err(Error::Domain(format!("t_final must be nonnegative, got {t_final}")));
        }
        let nk = self.kin.len();
        let nobs = self.obs.len();
        let full = opts.record == RecordPolicy::Full;
        let mut checkpoints: Vec<f64> = match &opts.record {
            RecordPolicy::Checkpoints(c) => c.iter().copied().filter(|&c| c <= t_final).collect(),
            _ => Vec::new(),
        };
        checkpoints.sort_by(|a, b| a.total_cmp(b));
        let mut next_cp = 0;

        let mut x = x0.to_vec();
        let mut t = 0.0;
        let mut f: Vec<f64> = self.obs.iter().map(|o| o.eval(&x)).collect();
        let mut integ = vec![0.0; nobs];
        let mut acc = opts.track_weights.then(|| ReweightAccumulator::new(self.n_params));
        let mut b = vec![0.0; nk];
        let mut lam = vec![0.0; nk];
        let mut rec = TrajectoryRecord {
            times: Vec::new(),
            states: Vec::new(),
            fired: Vec::new(),
            integrals: Vec::new(),
            checkpoints: Vec::with_capacity(checkpoints.len()),
            terminal: Snapshot { time: t_final, state: Vec::new(), integrals: Vec::new(), weights: Vec::new() },
            n_jumps: 0,
            absorbed_at: None,
        };
        if full {
            rec.times.push(0.0);
            rec.states.push(x.clone());
            rec.integrals.push(integ.clone());
        }

        let snapshot = |time: f64, x: &[i64], integ: &[f64], f: &[f64], acc: &Option<ReweightAccumulator>, b: &[f64], t: f64| {
            let dt = time - t;
            let integrals = integ.iter().zip(f).map(|(i, fv)| i + fv * dt).collect();
            let weights = match acc {
                Some(a) => {
                    let mut a = a.clone();
                    a.compensate_with(&self.kin, b, dt);
                    a.w()
                }
                None => Vec::new(),
            };
            Snapshot { time, state: x.to_vec(), integrals, weights }
        };

        loop {
            let total = self.kin.fill(&x, &mut b, &mut lam);
            if total <= 0.0 {
                rec.absorbed_at = Some(t);
                if opts.absorption == AbsorptionPolicy::Fail {
                    return Err(Error::AbsorbedState { time: t });
                }
                break;
            }
            let dt = rng.exp1() / total;
            if t + dt > t_final {
                break;
            }
            let k = select_reaction(&lam, total, rng.uniform());
            while next_cp < checkpoints.len() && checkpoints[next_cp] < t + dt {
                rec.checkpoints.push(snapshot(checkpoints[next_cp], &x, &integ, &f, &acc, &b, t));
                next_cp += 1;
            }
            for (i, fv) in integ.iter_mut().zip(&f) {
                *i += fv * dt;
            }
            if let Some(a) = acc.as_mut() {
                a.jump_with(&self.kin, &b, k, dt);
            }
            self.kin.apply(k, &mut x);
            t += dt;
            rec.n_jumps += 1;
            for (fv, o) in f.iter_mut().zip(&self.obs) {
                *fv = o.eval(&x);
            }
            if full {
                rec.times.push(t);
                rec.states.push(x.clone());
                rec.fired.push(self.kin.source(k));
                rec.integrals.push(integ.clone());
            }
        }
        while next_cp < checkpoints.len() {
            rec.checkpoints.push(snapshot(checkpoints[next_cp], &x, &integ, &f, &acc, &b, t));
            next_cp += 1;
        }
        rec.terminal = snapshot(t_final, &x, &integ, &f, &acc, &b, t);
        Ok(rec)
    }
}

/// Simulates one exact trajectory on [0, t_final].
pub fn simulate(
    net: &ReactionNetwork,
    x0: &[i64],
    t_final: f64,
    observables: &[Observable],
    opts: &SimOptions,
    rng: &mut RngStream,
) -> Result<TrajectoryRecord> {
    Engine::new(net, observables, opts.subset).run(x0, t_final, opts, rng)
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub replicates: usize,
    pub seed: u64,
    pub t_final: f64,
    /// Observation times; the horizon is always included.
    pub checkpoints: Vec<f64>,
    pub track_weights: bool,
    /// Replicates absorbed before the horizon are dropped when true.
    pub exclude_absorbed: bool,
    /// Start of the window used for time averages (0 = whole run).
    pub burn_in: f64,
}

impl EnsembleConfig {
    pub fn new(replicates: usize, seed: u64, t_final: f64) -> Self {
        EnsembleConfig {
            replicates,
            seed,
            t_final,
            checkpoints: Vec::new(),
            track_weights: true,
            exclude_absorbed: true,
            burn_in: 0.0,
        }
    }
}

/// Per-replicate values at one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSample {
    pub terminal: Vec<f64>,
    pub ergodic: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateSample {
    pub stream: u64,
    pub samples: Vec<CheckpointSample>,
    pub n_jumps: usize,
    pub absorbed_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub replicates: Vec<ReplicateSample>,
    /// (replicate id, absorption time) of dropped replicates.
    pub excluded: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_replicates: usize,
    pub t_final: f64,
    pub mean_terminal: Vec<f64>,
    pub se_terminal: Vec<f64>,
    pub mean_ergodic: Vec<f64>,
    pub se_ergodic: Vec<f64>,
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    let var = if n > 1.0 { xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, (var / n).sqrt())
}

impl Ensemble {
    pub fn checkpoint_index(&self, time: f64) -> Option<usize> {
        self.times.iter().position(|&t| (t - time).abs() <= 1e-12 * time.abs().max(1.0))
    }

    pub fn terminal(&self, cp: usize, obs: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.samples[cp].terminal[obs]).collect()
    }

    pub fn ergodic(&self, cp: usize, obs: usize) -> Vec<f64> {
        self.replicates.iter().map(|r| r.samples[cp].ergodic[obs]).collect()
    }

    pub fn weights(&self, cp: usize) -> Vec<Vec<f64>> {
        self.replicates.iter().map(|r| r.samples[cp].weights.clone()).collect()
    }

    pub fn summary(&self, cp: usize) -> EnsembleSummary {
        let nobs = self.replicates.first().map_or(0, |r| r.samples[cp].terminal.len());
        let mut s = EnsembleSummary {
            n_replicates: self.replicates.len(),
            t_final: self.times[cp],
            mean_terminal: Vec::new(),
            se_terminal: Vec::new(),
            mean_ergodic: Vec::new(),
            se_ergodic: Vec::new(),
        };
        for j in 0..nobs {
            let (m, se) = mean_se(self.replicates.iter().map(|r| r.samples[cp].terminal[j]));
            s.mean_terminal.push(m);
            s.se_terminal.push(se);
            let (m, se) = mean_se(self.replicates.iter().map(|r| r.samples[cp].ergodic[j]));
            s.mean_ergodic.push(m);
            s.se_ergodic.push(se);
        }
        s
    }
}

/// Checkpoint times: sorted, deduplicated, within (0, t_final], horizon included.
pub(crate) fn observation_times(checkpoints: &[f64], t_final: f64) -> Vec<f64> {
    let mut times: Vec<f64> = checkpoints.iter().copied().filter(|&c| c > 0.0 && c < t_final).collect();
    times.push(t_final);
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    times
}

/// Runs `cfg.replicates` independent trajectories; replicate i draws from
/// `RngStream::new(cfg.seed, i)`, so results do not depend on scheduling.
pub fn run_ensemble(
    net: &ReactionNetwork,
    x0: &[i64],
    observables: &[Observable],
    cfg: &EnsembleConfig,
) -> Result<Ensemble> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    if cfg.burn_in < 0.0 || (cfg.burn_in > 0.0 && cfg.burn_in >= cfg.t_final) {
        return Err(Error::InvalidConfig("burn-in must lie in [0, t_final)".into()));
    }
    let times = observation_times(&cfg.checkpoints, cfg.t_final);
    let mut internal = times.clone();
    if cfg.burn_in > 0.0 {
        internal.push(cfg.burn_in);
    }
    let opts = SimOptions {
        record: RecordPolicy::Checkpoints(internal),
        track_weights: cfg.track_weights,
        absorption: AbsorptionPolicy::Hold,
        subset: Subset::All,
    };
    let engine = Engine::new(net, observables, Subset::All);
    let runs: Vec<Result<ReplicateSample>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, i);
            let rec = engine.run(x0, cfg.t_final, &opts, &mut rng)?;
            let burn = rec.checkpoints.iter().find(|s| s.time == cfg.burn_in);
            let samples = times
                .iter()
                .map(|&t| {
                    let snap = rec.checkpoints.iter().find(|s| s.time == t).expect("checkpoint recorded");
                    let ergodic = match burn {
                        Some(b) if t > cfg.burn_in => {
                            snap.integrals.iter().zip(&b.integrals).map(|(a, b)| (a - b) / (t - cfg.burn_in)).collect()
                        }
                        _ => snap.integrals.iter().map(|a| a / t).collect(),
                    };
                    let terminal = engine.obs.iter().map(|o| o.eval(&snap.state)).collect();
                    CheckpointSample { terminal, ergodic, weights: snap.weights.clone() }
                })
                .collect();
            Ok(ReplicateSample { stream: i, samples, n_jumps: rec.n_jumps, absorbed_at: rec.absorbed_at })
        })
        .collect();
    let mut replicates = Vec::with_capacity(cfg.replicates);
    let mut excluded = Vec::new();
    for run in runs {
        let r = run?;
        match r.absorbed_at {
            Some(t) if cfg.exclude_absorbed && t < cfg.t_final => excluded.push((r.stream, t)),
            _ => replicates.push(r),
        }
    }
    if replicates.is_empty() {
        return Err(Error::AllAbsorbed(cfg.replicates));
    }
    if !excluded.is_empty() {
        warn!("{} of {} replicates absorbed before t = {} and were excluded", excluded.len(), cfg.replicates, cfg.t_final);
    }
    Ok(Ensemble { times, replicates, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn selection_uses_strict_inequality() {
        assert_eq!(select_reaction(&[1.0, 1.0], 2.0, 0.5), 1);
        assert_eq!(select_reaction(&[1.0, 1.0], 2.0, 0.49), 0);
        assert_eq!(select_reaction(&[0.0, 3.0], 3.0, 0.0), 1);
        assert_eq!(select_reaction(&[2.0, 0.0], 2.0, 1.0), 0);
    }

    #[test]
    fn zero_horizon() {
        let net = models::isomerization(0.1);
        let mut rng = RngStream::new(1, 0);
        let opts = SimOptions { record: RecordPolicy::Full, ..Default::default() };
        let rec = simulate(&net, &[100, 0, 0], 0.0, &[Observable::Species(0)], &opts, &mut rng).unwrap();
        assert_eq!(rec.states, vec![vec![100, 0, 0]]);
        assert_eq!(rec.terminal.integrals, vec![0.0]);
    }

    #[test]
    fn absorbing_start_holds() {
        let net = models::isomerization(0.1);
        let mut rng = RngStream::new(1, 0);
        let rec = simulate(&net, &[0, 0, 5], 2.0, &[Observable::Species(2)], &SimOptions::default(), &mut rng).unwrap();
        assert_eq!(rec.terminal.integrals, vec![10.0]);
        assert_eq!(rec.absorbed_at, Some(0.0));
        let fail = SimOptions { absorption: AbsorptionPolicy::Fail, ..Default::default() };
        assert!(matches!(
            simulate(&net, &[0, 0, 5], 2.0, &[], &fail, &mut rng),
            Err(Error::AbsorbedState { time }) if time == 0.0
        ));
    }

    #[test]
    fn full_record_is_consistent() {
        let net = models::adsorption();
        let mut rng = RngStream::new(5, 2);
        let opts = SimOptions { record: RecordPolicy::Full, track_weights: true, ..Default::default() };
        let rec = simulate(&net, &[30, 60, 10], 0.05, &[Observable::Species(1)], &opts, &mut rng).unwrap();
        assert!(rec.n_jumps > 10);
        for n in 0..rec.n_jumps {
            let z = &net.reactions[rec.fired[n]].stoich;
            for i in 0..3 {
                assert_eq!(rec.states[n + 1][i] - rec.states[n][i], z[i]);
            }
            let df = rec.states[n][1] as f64 * (rec.times[n + 1] - rec.times[n]);
            assert!((rec.integrals[n + 1][0] - rec.integrals[n][0] - df).abs() < 1e-9);
            assert_eq!(rec.states[n].iter().sum::<i64>(), 100);
        }
        let mut csv = Vec::new();
        rec.write_csv(&net, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("n,time,reaction,A,B,*,F\n0,0,,30,60,10,0\n"));
    }

    #[test]
    fn checkpoints_agree_with_terminal() {
        let net = models::isomerization(0.1);
        let opts = SimOptions { record: RecordPolicy::Checkpoints(vec![0.3]), track_weights: true, ..Default::default() };
        let a = simulate(&net, &[100, 0, 0], 0.3, &[Observable::Species(1)], &opts, &mut RngStream::new(3, 9)).unwrap();
        assert_eq!(a.checkpoints.len(), 1);
        assert_eq!(a.checkpoints[0], a.terminal);
    }

    #[test]
    fn ensemble_is_deterministic() {
        let net = models::isomerization(0.1);
        let mut cfg = EnsembleConfig::new(8, 42, 0.2);
        cfg.checkpoints = vec![0.1];
        let obs = [Observable::Species(0), Observable::Species(2)];
        let a = run_ensemble(&net, &[100, 0, 0], &obs, &cfg).unwrap();
        let b = run_ensemble(&net, &[100, 0, 0], &obs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.times, vec![0.1, 0.2]);

        let single = EnsembleConfig::new(1, 42, 0.2);
        let e = run_ensemble(&net, &[100, 0, 0], &obs, &single).unwrap();
        let opts = SimOptions { track_weights: true, ..Default::default() };
        let rec = simulate(&net, &[100, 0, 0], 0.2, &obs, &opts, &mut RngStream::new(42, 0)).unwrap();
        assert_eq!(e.replicates[0].samples[0].terminal, vec![rec.terminal.state[0] as f64, rec.terminal.state[2] as f64]);
        assert_eq!(e.replicates[0].samples[0].weights, rec.terminal.weights);
    }

    #[test]
    fn all_absorbed_is_an_error() {
        let net = models::isomerization(0.1);
        let cfg = EnsembleConfig::new(3, 1, 1.0);
        assert!(matches!(run_ensemble(&net, &[0, 0, 4], &[], &cfg), Err(Error::AllAbsorbed(3))));
    }

    #[test]
    fn burn_in_window() {
        let net = models::isomerization(0.1);
        let mut cfg = EnsembleConfig::new(1, 1, 1.0);
        cfg.burn_in = 0.5;
        let e = run_ensemble(&net, &[0, 0, 4], &[Observable::Species(2)], &cfg);
        assert!(e.is_err());
        cfg.exclude_absorbed = false;
        let e = run_ensemble(&net, &[0, 0, 4], &[Observable::Species(2)], &cfg).unwrap();
        assert_eq!(e.replicates[0].samples[0].ergodic, vec![4.0]);
    }
}
