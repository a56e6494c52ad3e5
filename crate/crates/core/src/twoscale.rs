//! Two-time-scale simulation: a macro chain over fast classes whose rates
//! are stationary averages estimated by fast-only micro runs, with macro
//! likelihood-ratio weights for both fast and slow parameters.

use std::cell::RefCell;
use std::io::Write;

use log::warn;
use rayon::prelude::*;

use crate::batchmeans::{batch_estimates, batch_lr_weights, t_quantile, BatchConfig, BatchSimulator, JumpHistory, ToleranceMode};
use crate::error::{Error, Result};
use crate::likelihood::{self, BootstrapConfig, EstimatorOutput, Method, Samples};
use crate::network::{FastClassKey, Kinetics, Observable, ReactionNetwork, SlowInvariants, State, Subset};
use crate::rng::RngStream;
use crate::ssa::{mean_se, observation_times, select_reaction};

thread_local! {
    static SCRATCH: RefCell<JumpHistory> = RefCell::new(JumpHistory::default());
}

/// Stationary averages of one fast class.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroAverages {
    /// Averaged observables, one per user observable.
    pub fbar: Vec<f64>,
    /// Averaged propensity of each slow reaction.
    pub lambda_bar: Vec<f64>,
    pub lambda_bar_0: f64,
    /// d fbar_j / d theta_i (zero for slow parameters).
    pub dfast_fbar: Vec<Vec<f64>>,
    /// d lambda_bar_s / d theta_i for fast parameters (zero for slow ones).
    pub dfast_lambda: Vec<Vec<f64>>,
    pub terminal_state: State,
    pub converged: bool,
    pub micro_jumps: usize,
    /// Largest normalized MOE among varying monitored quantities at the stop.
    pub max_moe: f64,
}

/// Network prepared for two-scale simulation.
#[derive(Clone, Debug)]
pub struct TwoScale {
    net: ReactionNetwork,
    invariants: SlowInvariants,
    slow: Vec<usize>,
    slow_kin: Kinetics,
    observables: Vec<Observable>,
    micro: BatchSimulator,
    fast_any: bool,
    batch: BatchConfig,
    t_q: f64,
}

impl TwoScale {
    pub fn new(net: &ReactionNetwork, observables: &[Observable], batch: BatchConfig) -> Result<Self> {
        batch.validate()?;
        let t_q = t_quantile(1.0 - batch.delta_ci / 2.0, (batch.n_batches - 1) as f64)?;
        let slow = net.slow_reactions();
        let mut monitored = observables.to_vec();
        monitored.extend(slow.iter().map(|&r| Observable::Propensity(r)));
        let fast_kin = Kinetics::new(net, Subset::FastOnly);
        let fast_any = !fast_kin.is_empty();
        if net.epsilon() >= 1.0 {
            warn!("epsilon = 1: fast and slow scales are not separated");
        }
        Ok(TwoScale {
            net: net.clone(),
            invariants: SlowInvariants::new(net),
            slow_kin: Kinetics::new(net, Subset::SlowOnly),
            slow,
            observables: observables.to_vec(),
            micro: BatchSimulator::new(net, fast_kin, &monitored),
            fast_any,
            batch,
            t_q,
        })
    }

    pub fn batch_config(&self) -> &BatchConfig {
        &self.batch
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.net
    }

    pub fn invariants(&self) -> &SlowInvariants {
        &self.invariants
    }

    /// Network indices of the slow reactions, in the order used by
    /// `lambda_bar`.
    pub fn slow_reactions(&self) -> &[usize] {
        &self.slow
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn key(&self, x: &[i64]) -> FastClassKey {
        self.invariants.key(x)
    }

    /// Explicit parameter dependence of the observables (only propensity
    /// observables have one: d f / d theta = f / theta).
    fn explicit_direct(&self, fbar: &[f64], direct: &mut [Vec<f64>]) {
        for (j, obs) in self.observables.iter().enumerate() {
            if let Observable::Propensity(r) = obs {
                let p = self.net.reactions[*r].param_index;
                direct[j][p] += fbar[j] / self.net.params.values[p];
            }
        }
    }

    /// Estimates the stationary averages of the fast class containing
    /// `entry` by a fast-only run stopped by the batch-means rule.
    pub fn micro_equilibrate(&self, entry: &[i64], rng: &mut RngStream) -> Result<MicroAverages> {
        let p = self.net.n_params();
        let nobs = self.observables.len();
        let ns = self.slow.len();
        let fast = self.micro.kinetics();
        let singleton = !self.fast_any || (0..fast.len()).all(|k| fast.mass_action(k, entry) == 0.0);
        if singleton {
            let fbar: Vec<f64> = self.observables.iter().map(|o| o.eval(&self.net, entry)).collect();
            let lambda_bar: Vec<f64> = (0..ns).map(|s| self.slow_kin.rate(s) * self.slow_kin.mass_action(s, entry)).collect();
            let mut dfast_fbar = vec![vec![0.0; p]; nobs];
            self.explicit_direct(&fbar, &mut dfast_fbar);
            return Ok(MicroAverages {
                lambda_bar_0: lambda_bar.iter().sum(),
                fbar,
                lambda_bar,
                dfast_fbar,
                dfast_lambda: vec![vec![0.0; p]; ns],
                terminal_state: entry.to_vec(),
                converged: true,
                micro_jumps: 0,
                max_moe: 0.0,
            });
        }
        let run = SCRATCH.with(|h| -> Result<_> {
            let mut h = h.borrow_mut();
            let out = self.micro.run_into(entry, &self.batch, self.t_q, false, rng, &mut h)?;
            let weights = batch_lr_weights(&h, &out.batches);
            Ok((out, weights))
        });
        let (run, weights) = run?;
        let invariant = self.micro.invariant();
        let params = self.micro.params();
        let mut derivs = Vec::with_capacity(nobs + ns);
        for (j, s) in run.summaries.iter().enumerate() {
            let mut d = vec![0.0; p];
            if !invariant[j] {
                let local = batch_estimates(s, &weights, Method::Celr)?;
                for (slot, &param) in params.iter().enumerate() {
                    d[param] = local[slot];
                }
            }
            derivs.push(d);
        }
        let dfast_lambda = derivs.split_off(nobs);
        let mut dfast_fbar = derivs;
        // Quantities the fast reactions cannot change are constant on the
        // class; take them exactly from the entry state.
        let fbar: Vec<f64> = (0..nobs)
            .map(|j| if invariant[j] { self.observables[j].eval(&self.net, entry) } else { run.summaries[j].mean })
            .collect();
        let lambda_bar: Vec<f64> = (0..ns)
            .map(|s| {
                if invariant[nobs + s] {
                    self.slow_kin.rate(s) * self.slow_kin.mass_action(s, entry)
                } else {
                    run.summaries[nobs + s].mean.max(0.0)
                }
            })
            .collect();
        self.explicit_direct(&fbar, &mut dfast_fbar);
        let max_moe = run
            .summaries
            .iter()
            .zip(invariant)
            .filter(|(_, &inv)| !inv)
            .map(|(s, _)| match self.batch.tolerance_mode {
                ToleranceMode::RelativeToMean if s.mean.abs() >= 1e-12 => s.moe / s.mean.abs(),
                _ => s.moe,
            })
            .fold(0.0, f64::max);
        Ok(MicroAverages {
            lambda_bar_0: lambda_bar.iter().sum(),
            fbar,
            lambda_bar,
            dfast_fbar,
            dfast_lambda,
            terminal_state: run.final_state.clone(),
            converged: run.converged,
            micro_jumps: run.n_jumps,
            max_moe,
        })
    }

    /// d lambda_bar_s / d theta for every parameter: exact for slow
    /// parameters (lambda_bar / beta), estimated for fast ones.
    pub fn dlambda(&self, micro: &MicroAverages, s: usize) -> Vec<f64> {
        let mut d = micro.dfast_lambda[s].clone();
        let p = self.net.reactions[self.slow[s]].param_index;
        d[p] += micro.lambda_bar[s] / self.net.params.values[p];
        d
    }

    /// Applies a slow reaction (index into `slow_reactions`) to a state.
    pub fn fire_slow(&self, x: &mut [i64], s: usize) {
        self.slow_kin.apply(s, x);
    }

    /// Simulates one macro trajectory on [0, t_final], recording the macro
    /// quantities at each observation time.
    pub fn simulate(&self, x0: &[i64], t_final: f64, checkpoints: &[f64], record_steps: bool, rng: &mut RngStream) -> Result<MacroTrajectory> {
        if x0.len() != self.net.n_species() || x0.iter().any(|&v| v < 0) {
            return Err(Error::Domain("initial state must be nonnegative with one entry per species".into()));
        }
        let times = observation_times(checkpoints, t_final);
        let p = self.net.n_params();
        let nobs = self.observables.len();
        let mut traj = MacroTrajectory::default();
        let mut x = x0.to_vec();
        let mut t = 0.0;
        let mut w = vec![0.0; p];
        let mut erg = vec![0.0; nobs];
        let mut erg_direct = vec![vec![0.0; p]; nobs];
        let mut fired: Option<usize> = None;
        let mut cp = 0;
        loop {
            let micro = self.micro_equilibrate(&x, rng)?;
            traj.micro_jumps += micro.micro_jumps;
            traj.visits += 1;
            if !micro.converged {
                traj.nonconverged += 1;
            }
            if record_steps {
                traj.steps.push(MacroStep {
                    time: t,
                    key: self.key(&x),
                    entry_state: x.clone(),
                    beta_fired: fired.map(|s| self.slow[s]),
                    fbar: micro.fbar.clone(),
                    lambda_bar_0: micro.lambda_bar_0,
                    micro_jumps: micro.micro_jumps,
                    converged: micro.converged,
                    terminal_state: micro.terminal_state.clone(),
                });
            }
            let next = if micro.lambda_bar_0 > 0.0 {
                let (dt, s) = tts_step(&micro, rng)?;
                fired = Some(s);
                t + dt
            } else {
                traj.absorbed_at = Some(t);
                fired = None;
                f64::INFINITY
            };
            let comp: Vec<f64> = {
                let mut c = vec![0.0; p];
                for s in 0..self.slow.len() {
                    for (ci, di) in c.iter_mut().zip(self.dlambda(&micro, s)) {
                        *ci += di;
                    }
                }
                c
            };
            while cp < times.len() && times[cp] < next {
                let c = times[cp];
                let tau = c - t;
                traj.checkpoints.push(MacroCheckpoint {
                    time: c,
                    key: self.key(&micro.terminal_state),
                    fbar: micro.fbar.clone(),
                    ergodic_fbar: erg.iter().zip(&micro.fbar).map(|(e, f)| (e + f * tau) / c).collect(),
                    direct: micro.dfast_fbar.clone(),
                    ergodic_direct: erg_direct
                        .iter()
                        .zip(&micro.dfast_fbar)
                        .map(|(e, d)| e.iter().zip(d).map(|(e, d)| (e + d * tau) / c).collect())
                        .collect(),
                    weights: w.iter().zip(&comp).map(|(w, c)| w - c * tau).collect(),
                });
                cp += 1;
            }
            if next > t_final {
                break;
            }
            let s = fired.expect("slow reaction selected");
            let dt = next - t;
            macro_compensate(&mut w, &comp, dt);
            macro_jump(&mut w, self, &micro, s)?;
            for (j, e) in erg.iter_mut().enumerate() {
                *e += micro.fbar[j] * dt;
                for (ed, d) in erg_direct[j].iter_mut().zip(&micro.dfast_fbar[j]) {
                    *ed += d * dt;
                }
            }
            x = micro.terminal_state;
            self.fire_slow(&mut x, s);
            t = next;
        }
        Ok(traj)
    }
}

/// Exponential macro holding time and the index (into the slow reactions)
/// of the slow reaction that fires.
pub fn tts_step(micro: &MicroAverages, rng: &mut RngStream) -> Result<(f64, usize)> {
    if !(micro.lambda_bar_0 > 0.0) {
        return Err(Error::MacroAbsorbed { time: f64::NAN });
    }
    let dt = rng.exp1() / micro.lambda_bar_0;
    Ok((dt, select_reaction(&micro.lambda_bar, micro.lambda_bar_0, rng.uniform())))
}

fn macro_compensate(w: &mut [f64], comp: &[f64], dt: f64) {
    for (wi, ci) in w.iter_mut().zip(comp) {
        *wi -= ci * dt;
    }
}

fn macro_jump(w: &mut [f64], model: &TwoScale, micro: &MicroAverages, s: usize) -> Result<()> {
    let lam = micro.lambda_bar[s];
    if !(lam > 0.0) {
        return Err(Error::ZeroMacroPropensity { reaction: model.slow[s] });
    }
    for (wi, di) in w.iter_mut().zip(model.dlambda(micro, s)) {
        *wi += di / lam;
    }
    Ok(())
}

/// Macro weight update: compensator over `dt` in the current class, then
/// the jump term of slow reaction `fired` (index into the slow reactions).
pub fn update_macro_w(w: &mut [f64], model: &TwoScale, micro: &MicroAverages, dt: f64, fired: Option<usize>) -> Result<()> {
    let mut comp = vec![0.0; w.len()];
    for s in 0..micro.lambda_bar.len() {
        for (ci, di) in comp.iter_mut().zip(model.dlambda(micro, s)) {
            *ci += di;
        }
    }
    macro_compensate(w, &comp, dt);
    if let Some(s) = fired {
        macro_jump(w, model, micro, s)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroStep {
    pub time: f64,
    pub key: FastClassKey,
    pub entry_state: State,
    /// Slow reaction (network index) whose firing entered this class.
    pub beta_fired: Option<usize>,
    pub fbar: Vec<f64>,
    pub lambda_bar_0: f64,
    pub micro_jumps: usize,
    pub converged: bool,
    pub terminal_state: State,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroCheckpoint {
    pub time: f64,
    pub key: FastClassKey,
    pub fbar: Vec<f64>,
    pub ergodic_fbar: Vec<f64>,
    /// d fbar_j / d theta at the current class.
    pub direct: Vec<Vec<f64>>,
    /// Time average of `direct` over [0, time].
    pub ergodic_direct: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MacroTrajectory {
    pub steps: Vec<MacroStep>,
    pub checkpoints: Vec<MacroCheckpoint>,
    pub absorbed_at: Option<f64>,
    pub visits: usize,
    pub nonconverged: usize,
    pub micro_jumps: usize,
}

impl MacroTrajectory {
    /// CSV `step,macro_time,class_key,beta_fired,fbar,lambda_bar_0,micro_jumps,converged`;
    /// list-valued fields are joined with ';'.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,macro_time,class_key,beta_fired,fbar,lambda_bar_0,micro_jumps,converged")?;
        for (n, s) in self.steps.iter().enumerate() {
            let fired = s.beta_fired.map(|b| b.to_string()).unwrap_or_default();
            let fbar: Vec<String> = s.fbar.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                n,
                s.time,
                s.key,
                fired,
                fbar.join(";"),
                s.lambda_bar_0,
                s.micro_jumps,
                s.converged
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtsEnsemble {
    pub times: Vec<f64>,
    /// `samples[replicate][checkpoint]`.
    pub samples: Vec<Vec<MacroCheckpoint>>,
    pub visits: usize,
    pub nonconverged: usize,
    pub micro_jumps: usize,
    pub absorbed: usize,
}

impl TtsEnsemble {
    pub fn checkpoint_index(&self, time: f64) -> Option<usize> {
        self.times.iter().position(|&t| (t - time).abs() <= 1e-12 * time.abs().max(1.0))
    }

    pub fn fbar(&self, cp: usize, obs: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[cp].fbar[obs]).collect()
    }

    pub fn ergodic_fbar(&self, cp: usize, obs: usize) -> Vec<f64> {
        self.samples.iter().map(|r| r[cp].ergodic_fbar[obs]).collect()
    }

    pub fn weights(&self, cp: usize) -> Vec<Vec<f64>> {
        self.samples.iter().map(|r| r[cp].weights.clone()).collect()
    }

    /// Mean and standard error of fbar for each observable.
    pub fn mean_fbar(&self, cp: usize) -> Vec<(f64, f64)> {
        let nobs = self.samples.first().map_or(0, |r| r[cp].fbar.len());
        (0..nobs).map(|j| mean_se(self.samples.iter().map(|r| r[cp].fbar[j]))).collect()
    }

    /// Sensitivity of E[f_obs] at checkpoint `cp`: the averaged direct term
    /// plus the chosen likelihood-ratio estimator on (fbar, macro weights).
    pub fn sensitivity(&self, cp: usize, obs: usize, method: Method, boot: &BootstrapConfig) -> Result<EstimatorOutput> {
        tts_sensitivity(self, cp, obs, method, boot)
    }
}

/// Independent macro trajectories; replicate i uses `RngStream::new(seed, i)`.
pub fn tts_ensemble(
    model: &TwoScale,
    x0: &[i64],
    t_final: f64,
    checkpoints: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<TtsEnsemble> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    let times = observation_times(checkpoints, t_final);
    let runs: Vec<Result<MacroTrajectory>> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| model.simulate(x0, t_final, &times, false, &mut RngStream::new(seed, i)))
        .collect();
    let mut ens = TtsEnsemble { times, samples: Vec::with_capacity(replicates), visits: 0, nonconverged: 0, micro_jumps: 0, absorbed: 0 };
    for run in runs {
        let run = run?;
        ens.visits += run.visits;
        ens.nonconverged += run.nonconverged;
        ens.micro_jumps += run.micro_jumps;
        ens.absorbed += run.absorbed_at.is_some() as usize;
        ens.samples.push(run.checkpoints);
    }
    if ens.nonconverged > 0 {
        warn!("{} of {} micro-equilibrations stopped at the jump cap without converging", ens.nonconverged, ens.visits);
    }
    Ok(ens)
}

/// Macro sensitivity estimate with bootstrap interval. Terminal methods use
/// fbar at the checkpoint and the direct term there; ergodic methods use
/// the time averages of both.
pub fn tts_sensitivity(ens: &TtsEnsemble, cp: usize, obs: usize, method: Method, boot: &BootstrapConfig) -> Result<EstimatorOutput> {
    let f = if method.is_ergodic() { ens.ergodic_fbar(cp, obs) } else { ens.fbar(cp, obs) };
    let w = ens.weights(cp);
    let direct: Vec<Vec<f64>> = ens
        .samples
        .iter()
        .map(|r| if method.is_ergodic() { r[cp].ergodic_direct[obs].clone() } else { r[cp].direct[obs].clone() })
        .collect();
    likelihood::estimate(method, &Samples::new(&f, &w).with_direct(&direct), boot)
}

/// Converts fast-parameter entries from the rescaled alpha to the original
/// rate constant alpha / epsilon by multiplying them by epsilon.
pub fn rescale_fast(values: &[f64], net: &ReactionNetwork) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| if net.is_fast_param(i) { v * net.epsilon() } else { v })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn singleton_class() {
        let net = models::isomerization(0.1);
        let model = TwoScale::new(&net, &[Observable::Species(2)], BatchConfig::default()).unwrap();
        let m = model.micro_equilibrate(&[0, 0, 5], &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(m.fbar, vec![5.0]);
        assert_eq!(m.lambda_bar, vec![0.0]);
        assert_eq!(m.micro_jumps, 0);
        assert!(m.dfast_fbar.iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn slow_jump_terms() {
        let net = models::adsorption();
        let model = TwoScale::new(&net, &[Observable::Species(1)], BatchConfig::default()).unwrap();
        let micro = MicroAverages {
            fbar: vec![60.0],
            lambda_bar: vec![32.0, 60.0, 24.0],
            lambda_bar_0: 116.0,
            dfast_fbar: vec![vec![0.0; 5]],
            dfast_lambda: vec![vec![0.0; 5]; 3],
            terminal_state: vec![16, 60, 24],
            converged: true,
            micro_jumps: 0,
            max_moe: 0.0,
        };
        let mut w = vec![0.0; 5];
        update_macro_w(&mut w, &model, &micro, 0.0, Some(0)).unwrap();
        assert!((w[2] - 0.5).abs() < 1e-15);
        assert_eq!(w[3], 0.0);
        let mut w = vec![0.0; 5];
        update_macro_w(&mut w, &model, &micro, 0.1, None).unwrap();
        assert!((w[2] + 1.6).abs() < 1e-12);
    }

    #[test]
    fn rescaling() {
        let net = models::adsorption();
        let v = rescale_fast(&[1.0, 2.0, 3.0, 4.0, 5.0], &net);
        assert_eq!(v, vec![0.01, 0.02, 3.0, 4.0, 5.0]);
        let one = net.with_epsilon(1.0).unwrap();
        assert_eq!(rescale_fast(&[1.0, 2.0, 3.0, 4.0, 5.0], &one), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn short_horizon_visits_one_class() {
        let net = models::adsorption();
        let model = TwoScale::new(&net, &[Observable::Species(1)], BatchConfig::default()).unwrap();
        let traj = model.simulate(&[30, 60, 10], 1e-9, &[], true, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.checkpoints[0].fbar, vec![60.0]);
        assert_eq!(traj.checkpoints[0].weights.len(), 5);
    }

    #[test]
    fn handoff_keys_are_consistent() {
        let net = models::adsorption();
        let model = TwoScale::new(&net, &[Observable::Species(1)], BatchConfig::default()).unwrap();
        let traj = model.simulate(&[30, 60, 10], 0.2, &[], true, &mut RngStream::new(8, 0)).unwrap();
        assert!(traj.steps.len() > 3);
        for pair in traj.steps.windows(2) {
            let r = pair[1].beta_fired.unwrap();
            let mut y = pair[0].terminal_state.clone();
            for (v, z) in y.iter_mut().zip(&net.reactions[r].stoich) {
                *v += z;
            }
            assert_eq!(pair[1].key, model.key(&y));
            assert_eq!(pair[0].key, model.key(&pair[0].terminal_state));
        }
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,macro_time,class_key,beta_fired,fbar,lambda_bar_0,micro_jumps,converged\n0,0,60;100,,60,"));
    }
}
