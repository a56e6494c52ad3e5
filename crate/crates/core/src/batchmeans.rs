//! Adaptive batch-means stopping rule for steady-state time averages, with
//! per-batch likelihood-ratio weights and batch-based sensitivities.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::likelihood::{self, Method};
use crate::network::kinetics::CompiledObservable;
use crate::network::{Kinetics, Observable, ReactionNetwork, State};
use crate::rng::RngStream;
use crate::ssa::{select_reaction, TrajectoryRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    Absolute,
    /// MOE divided by |mean|; falls back to absolute when |mean| < 1e-12.
    RelativeToMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub n_batches: usize,
    pub jumps_per_test: usize,
    pub delta_ci: f64,
    pub delta_precise: f64,
    pub tolerance_mode: ToleranceMode,
    pub max_jumps: usize,
    /// Consecutive passing tests needed to stop.
    pub required_passes: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            n_batches: 10,
            jumps_per_test: 20,
            delta_ci: 0.05,
            delta_precise: 0.05,
            tolerance_mode: ToleranceMode::RelativeToMean,
            max_jumps: 2_000_000,
            required_passes: 2,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_batches < 2 {
            return Err(Error::InvalidConfig("need at least 2 batches".into()));
        }
        if self.jumps_per_test < 1 {
            return Err(Error::InvalidConfig("jumps per test must be at least 1".into()));
        }
        if !(self.delta_ci > 0.0 && self.delta_ci < 1.0) {
            return Err(Error::InvalidConfig(format!("delta_ci {} not in (0, 1)", self.delta_ci)));
        }
        if !(self.delta_precise > 0.0) {
            return Err(Error::InvalidConfig("MOE tolerance must be positive".into()));
        }
        if self.required_passes < 1 {
            return Err(Error::InvalidConfig("required passes must be at least 1".into()));
        }
        Ok(())
    }

    fn normalized(&self, moe: f64, mean: f64) -> f64 {
        match self.tolerance_mode {
            ToleranceMode::RelativeToMean if mean.abs() >= 1e-12 => moe / mean.abs(),
            _ => moe,
        }
    }
}

fn student_cdf_upper(t: f64, dof: f64) -> f64 {
    // P(T <= t) for t >= 0
    1.0 - 0.5 * beta_reg(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// Inverse CDF of Student's t distribution, by bisection on the
/// regularized incomplete beta representation of the CDF.
pub fn t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} not in (0, 1)")));
    }
    if !(dof >= 1.0) {
        return Err(Error::Domain(format!("degrees of freedom {dof} below 1")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return t_quantile(1.0 - p, dof).map(|t| -t);
    }
    let mut hi = 1.0;
    while student_cdf_upper(hi, dof) < p {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Domain("quantile out of range".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if student_cdf_upper(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-jump history of a run: jump times, running integrals and current
/// values of the monitored observables, Girsanov weights and the
/// compensator rate b(n) = sum_r d lambda_r / d theta at each jump.
/// Stored as flat rows `[t, integrals, values, weights, rates]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JumpHistory {
    n_obs: usize,
    n_w: usize,
    stride: usize,
    data: Vec<f64>,
}

impl JumpHistory {
    pub fn new(n_obs: usize, n_w: usize) -> Self {
        JumpHistory { n_obs, n_w, stride: 1 + 2 * n_obs + 2 * n_w, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.stride.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_weights(&self) -> usize {
        self.n_w
    }

    /// Empties the history, keeping its allocation.
    pub fn reset(&mut self, n_obs: usize, n_w: usize) {
        self.n_obs = n_obs;
        self.n_w = n_w;
        self.stride = 1 + 2 * n_obs + 2 * n_w;
        self.data.clear();
    }

    pub fn push(&mut self, t: f64, integrals: &[f64], values: &[f64], weights: &[f64], rates: &[f64]) {
        self.data.push(t);
        self.data.extend_from_slice(integrals);
        self.data.extend_from_slice(values);
        self.data.extend_from_slice(weights);
        self.data.extend_from_slice(rates);
    }

    /// Appends a row already laid out as `[t, integrals, values, weights, rates]`.
    #[inline]
    pub(crate) fn push_row(&mut self, row: &[f64]) {
        self.data.extend_from_slice(row);
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        self.data[n * self.stride]
    }

    #[inline]
    pub fn integral(&self, n: usize, j: usize) -> f64 {
        self.data[n * self.stride + 1 + j]
    }

    #[inline]
    pub fn value(&self, n: usize, j: usize) -> f64 {
        self.data[n * self.stride + 1 + self.n_obs + j]
    }

    #[inline]
    pub fn weight(&self, n: usize, i: usize) -> f64 {
        self.data[n * self.stride + 1 + 2 * self.n_obs + i]
    }

    #[inline]
    pub fn rate(&self, n: usize, i: usize) -> f64 {
        self.data[n * self.stride + 1 + 2 * self.n_obs + self.n_w + i]
    }

    pub fn total_time(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.time(self.len() - 1)
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    /// Index of the last jump at or before `t` (0 if none).
    pub fn last_at_or_before(&self, t: f64) -> usize {
        let (mut lo, mut hi) = (0, self.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.time(mid) <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Rebuilds a history (with weights for every parameter) from a fully
    /// recorded trajectory by replaying it through `kin`.
    pub fn from_record(rec: &TrajectoryRecord, net: &ReactionNetwork, kin: &Kinetics, observables: &[Observable]) -> Self {
        let obs: Vec<CompiledObservable> = observables.iter().map(|o| o.compile(net)).collect();
        let p = net.n_params();
        let mut h = JumpHistory::new(obs.len(), p);
        let mut acc = likelihood::ReweightAccumulator::new(p);
        let mut b = vec![0.0; kin.len()];
        let mut lam = vec![0.0; kin.len()];
        for n in 0..rec.times.len() {
            let x = &rec.states[n];
            kin.fill(x, &mut b, &mut lam);
            let values: Vec<f64> = obs.iter().map(|o| o.eval(x)).collect();
            let mut rates = vec![0.0; p];
            for k in 0..kin.len() {
                rates[kin.param(k)] += kin.dfactor(k) * b[k];
            }
            h.push(rec.times[n], &rec.integrals[n], &values, &acc.w(), &rates);
            if n + 1 < rec.times.len() {
                let local = (0..kin.len()).find(|&k| kin.source(k) == rec.fired[n]).expect("fired reaction in subset");
                acc.jump_with(kin, &b, local, rec.times[n + 1] - rec.times[n]);
            }
        }
        h
    }
}

/// Fills the last jump index and end time of each of `n_b` equal-time
/// batches; returns the batch length.
fn boundaries(h: &JumpHistory, n_b: usize, ind: &mut Vec<usize>, ends: &mut Vec<f64>) -> f64 {
    ind.clear();
    ends.clear();
    let last = h.len() - 1;
    let total = h.time(last);
    let t_batch = total / n_b as f64;
    for k in 1..n_b {
        let end = k as f64 * t_batch;
        ind.push(h.last_at_or_before(end));
        ends.push(end);
    }
    ind.push(last);
    ends.push(total);
    t_batch
}

/// Like [`boundaries`] for a history that has only grown since `ind` was
/// filled: boundary times only move forward, so each index is advanced by
/// a linear scan.
fn advance_boundaries(h: &JumpHistory, n_b: usize, ind: &mut Vec<usize>, ends: &mut Vec<f64>) -> f64 {
    if ind.len() != n_b {
        return boundaries(h, n_b, ind, ends);
    }
    let last = h.len() - 1;
    let total = h.time(last);
    let t_batch = total / n_b as f64;
    for k in 1..n_b {
        let end = k as f64 * t_batch;
        let mut n = ind[k - 1];
        while n < last && h.time(n + 1) <= end {
            n += 1;
        }
        ind[k - 1] = n;
        ends[k - 1] = end;
    }
    ind[n_b - 1] = last;
    ends[n_b - 1] = total;
    t_batch
}

/// Overall time average and MOE of observable `j` without storing the
/// batch means.
fn mean_moe(h: &JumpHistory, ind: &[usize], ends: &[f64], t_batch: f64, j: usize, t_q: f64) -> (f64, f64) {
    let n_b = ind.len();
    let last = h.len() - 1;
    let mean = h.integral(last, j) / h.time(last);
    let mut prev = 0.0;
    let mut ss = 0.0;
    for (&n, &end) in ind.iter().zip(ends) {
        let g = h.integral(n, j) + h.value(n, j) * (end - h.time(n));
        let y = (g - prev) / t_batch;
        ss += (y - mean) * (y - mean);
        prev = g;
    }
    (mean, t_q * (ss / (n_b - 1) as f64 / n_b as f64).sqrt())
}

/// Equal-time batch boundaries: last jump index in each batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batches {
    pub t_batch: f64,
    pub ind: Vec<usize>,
    /// Boundary times k * t_batch (the last equals the final jump time).
    pub ends: Vec<f64>,
}

impl Batches {
    pub fn new(h: &JumpHistory, n_b: usize) -> Self {
        let mut ind = Vec::with_capacity(n_b);
        let mut ends = Vec::with_capacity(n_b);
        let t_batch = boundaries(h, n_b, &mut ind, &mut ends);
        Batches { t_batch, ind, ends }
    }

    pub fn len(&self) -> usize {
        self.ind.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ind.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub batch_means: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub moe: f64,
    pub t_batch: f64,
    pub ind: Vec<usize>,
    /// Observable value at the last jump of each batch.
    pub terminal_values: Vec<f64>,
}

fn summarize(h: &JumpHistory, batches: &Batches, j: usize, t_q: f64) -> BatchSummary {
    let n_b = batches.len();
    let mut batch_means = Vec::with_capacity(n_b);
    let mut terminal_values = Vec::with_capacity(n_b);
    let mut prev = 0.0;
    for (&n, &end) in batches.ind.iter().zip(&batches.ends) {
        let g = h.integral(n, j) + h.value(n, j) * (end - h.time(n));
        batch_means.push((g - prev) / batches.t_batch);
        terminal_values.push(h.value(n, j));
        prev = g;
    }
    let last = h.len() - 1;
    let mean = h.integral(last, j) / h.time(last);
    let variance = batch_means.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n_b - 1) as f64;
    let moe = t_q * (variance / n_b as f64).sqrt();
    BatchSummary { batch_means, mean, variance, moe, t_batch: batches.t_batch, ind: batches.ind.clone(), terminal_values }
}

fn constant_summary(v: f64, batches: &Batches) -> BatchSummary {
    let n_b = batches.len();
    BatchSummary {
        batch_means: vec![v; n_b],
        mean: v,
        variance: 0.0,
        moe: 0.0,
        t_batch: batches.t_batch,
        ind: batches.ind.clone(),
        terminal_values: vec![v; n_b],
    }
}

/// Splits the elapsed time of a history into `n_b` equal batches and
/// computes batch means of observable `j`, including the partial holding
/// interval at every boundary.
pub fn split_batches(h: &JumpHistory, n_b: usize, j: usize, delta_ci: f64) -> Result<BatchSummary> {
    if h.len() < 2 || h.total_time() <= 0.0 {
        return Err(Error::InsufficientSamples { needed: 2, got: h.len() });
    }
    if n_b < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n_b });
    }
    let t_q = t_quantile(1.0 - delta_ci / 2.0, (n_b - 1) as f64)?;
    Ok(summarize(h, &Batches::new(h, n_b), j, t_q))
}

/// Per-batch weight increments W_A^B(k), one vector per batch.
pub fn batch_lr_weights(h: &JumpHistory, batches: &Batches) -> Vec<Vec<f64>> {
    let p = h.n_weights();
    let mut prev = vec![0.0; p];
    let mut out = Vec::with_capacity(batches.len());
    for (&n, &end) in batches.ind.iter().zip(&batches.ends) {
        let mut row = Vec::with_capacity(p);
        for (i, pr) in prev.iter_mut().enumerate() {
            let w = h.weight(n, i) - h.rate(n, i) * (end - h.time(n));
            row.push(w - *pr);
            *pr = w;
        }
        out.push(row);
    }
    out
}

/// The four estimators with batches as samples: LR/CLR use the observable
/// at the last jump of each batch, ELR/CELR use the batch means.
pub fn batch_estimates(summary: &BatchSummary, weights: &[Vec<f64>], method: Method) -> Result<Vec<f64>> {
    let f = if method.is_ergodic() { &summary.batch_means } else { &summary.terminal_values };
    likelihood::apply(method, f, weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub index: usize,
    pub total_time: f64,
    pub total_jumps: usize,
    pub means: Vec<f64>,
    pub moes: Vec<f64>,
}

pub(crate) struct RunOutcome {
    pub summaries: Vec<BatchSummary>,
    pub batches: Batches,
    pub converged: bool,
    pub tests: Vec<TestRecord>,
    pub final_state: State,
    pub n_jumps: usize,
}

#[derive(Clone, Debug)]
pub struct BatchRun {
    /// History of the observables that are not invariant, in their order.
    pub history: JumpHistory,
    pub summaries: Vec<BatchSummary>,
    pub batches: Batches,
    /// Parameters tracked in the history weights (indices into the network).
    pub params: Vec<usize>,
    /// Observables that no reaction of the run can change.
    pub invariant: Vec<bool>,
    pub converged: bool,
    pub tests: Vec<TestRecord>,
    pub final_state: State,
}

impl BatchRun {
    pub fn n_jumps(&self) -> usize {
        self.history.len() - 1
    }

    /// Batch weight increments for the tracked parameters.
    pub fn batch_weights(&self) -> Vec<Vec<f64>> {
        batch_lr_weights(&self.history, &self.batches)
    }

    /// Writes `test_index,total_time,total_jumps,<obs>:mean,<obs>:MOE,...`.
    pub fn write_diagnostics<W: Write>(&self, labels: &[String], mut out: W) -> std::io::Result<()> {
        write!(out, "test_index,total_time,total_jumps")?;
        for l in labels {
            write!(out, ",{l}:mean,{l}:MOE")?;
        }
        writeln!(out)?;
        for t in &self.tests {
            write!(out, "{},{},{}", t.index, t.total_time, t.total_jumps)?;
            for (m, e) in t.means.iter().zip(&t.moes) {
                write!(out, ",{m},{e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Simulator for one reaction subset that records a [`JumpHistory`].
#[derive(Clone, Debug)]
pub struct BatchSimulator {
    kin: Kinetics,
    obs: Vec<CompiledObservable>,
    invariant: Vec<bool>,
    /// Network parameter index of each tracked weight.
    params: Vec<usize>,
    /// Local weight slot of each network parameter.
    slot: Vec<Option<usize>>,
    /// (weight slot or usize::MAX, dfactor) for each reaction.
    comp_slot: Vec<(usize, f64)>,
}

impl BatchSimulator {
    pub fn new(net: &ReactionNetwork, kin: Kinetics, observables: &[Observable]) -> Self {
        let invariant = observables.iter().map(|o| o.is_invariant(net, &kin)).collect();
        let obs = observables.iter().map(|o| o.compile(net)).collect();
        let mask = kin.param_mask();
        let params: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let mut slot = vec![None; mask.len()];
        for (s, &p) in params.iter().enumerate() {
            slot[p] = Some(s);
        }
        let comp_slot = (0..kin.len()).map(|k| (slot[kin.param(k)].unwrap_or(usize::MAX), kin.dfactor(k))).collect();
        BatchSimulator { kin, obs, invariant, params, slot, comp_slot }
    }

    pub fn kinetics(&self) -> &Kinetics {
        &self.kin
    }

    pub fn params(&self) -> &[usize] {
        &self.params
    }

    pub fn invariant(&self) -> &[bool] {
        &self.invariant
    }

    /// Runs blocks of `cfg.jumps_per_test` jumps until every varying
    /// observable passes the MOE test `cfg.required_passes` times in a row,
    /// or `cfg.max_jumps` is reached.
    pub fn run(&self, x0: &[i64], cfg: &BatchConfig, rng: &mut RngStream) -> Result<BatchRun> {
        cfg.validate()?;
        let t_q = t_quantile(1.0 - cfg.delta_ci / 2.0, (cfg.n_batches - 1) as f64)?;
        let mut h = JumpHistory::default();
        let out = self.run_into(x0, cfg, t_q, true, rng, &mut h)?;
        Ok(BatchRun {
            history: h,
            summaries: out.summaries,
            batches: out.batches,
            params: self.params.clone(),
            invariant: self.invariant.clone(),
            converged: out.converged,
            tests: out.tests,
            final_state: out.final_state,
        })
    }

    /// Same as [`run`](Self::run) but reuses `h` as storage and takes the
    /// Student-t quantile precomputed. `cfg` is assumed valid.
    pub(crate) fn run_into(
        &self,
        x0: &[i64],
        cfg: &BatchConfig,
        t_q: f64,
        record_tests: bool,
        rng: &mut RngStream,
        h: &mut JumpHistory,
    ) -> Result<RunOutcome> {
        let nk = self.kin.len();
        let nobs = self.obs.len();
        let nw = self.params.len();
        let varying: Vec<usize> = (0..nobs).filter(|&j| !self.invariant[j]).collect();
        let nv = varying.len();
        let mut x = x0.to_vec();
        let mut b = vec![0.0; nk];
        let mut lam = vec![0.0; nk];
        let consts: Vec<f64> = self.obs.iter().map(|o| o.eval(&x)).collect();
        // row layout: [t, integrals, values, weights, rates]
        let (ov, or) = (1 + nv, 1 + 2 * nv + nw);
        let mut row = vec![0.0; or + nw];
        for (c, &j) in varying.iter().enumerate() {
            row[ov + c] = consts[j];
        }
        h.reset(nv, nw);

        let mut total = self.kin.fill(&x, &mut b, &mut lam);
        if total <= 0.0 {
            return Err(Error::AbsorbedState { time: 0.0 });
        }
        self.compensator_rates(&b, &mut row[or..]);
        h.push_row(&row);

        let jump_slot: Vec<Option<(usize, f64)>> = (0..nk)
            .map(|k| self.slot[self.kin.param(k)].map(|s| (s, self.kin.dfactor(k) / self.kin.rate(k))))
            .collect();
        let varying_obs: Vec<&CompiledObservable> = varying.iter().map(|&j| &self.obs[j]).collect();
        let mut ind = Vec::with_capacity(cfg.n_batches);
        let mut ends = Vec::with_capacity(cfg.n_batches);
        let mut streak = 0;
        let mut tests = Vec::new();
        let mut n_jumps = 0;
        loop {
            for _ in 0..cfg.jumps_per_test {
                if total <= 0.0 {
                    return Err(Error::AbsorbedState { time: row[0] });
                }
                let dt = rng.exp1() / total;
                let k = select_reaction(&lam, total, rng.uniform());
                {
                    let (t, rest) = row.split_first_mut().expect("row has a time slot");
                    let (integ, rest) = rest.split_at_mut(nv);
                    let (vals, rest) = rest.split_at_mut(nv);
                    let (w, rates) = rest.split_at_mut(nw);
                    *t += dt;
                    for (i, v) in integ.iter_mut().zip(vals.iter()) {
                        *i += v * dt;
                    }
                    if let Some((s, inc)) = jump_slot[k] {
                        w[s] += inc;
                    }
                    for (wi, ri) in w.iter_mut().zip(rates.iter()) {
                        *wi -= ri * dt;
                    }
                    self.kin.apply(k, &mut x);
                    for (v, o) in vals.iter_mut().zip(&varying_obs) {
                        *v = o.eval(&x);
                    }
                    total = self.kin.fill(&x, &mut b, &mut lam);
                    self.compensator_rates(&b, rates);
                }
                h.push_row(&row);
            }
            n_jumps += cfg.jumps_per_test;

            let t_batch = advance_boundaries(h, cfg.n_batches, &mut ind, &mut ends);
            let mut worst: f64 = 0.0;
            for c in 0..nv {
                let (mean, moe) = mean_moe(h, &ind, &ends, t_batch, c, t_q);
                worst = worst.max(cfg.normalized(moe, mean));
            }
            streak = if worst <= cfg.delta_precise { streak + 1 } else { 0 };
            if record_tests {
                let mut means = consts.clone();
                let mut moes = vec![0.0; nobs];
                for (c, &j) in varying.iter().enumerate() {
                    (means[j], moes[j]) = mean_moe(h, &ind, &ends, t_batch, c, t_q);
                }
                tests.push(TestRecord { index: tests.len(), total_time: row[0], total_jumps: n_jumps, means, moes });
            }
            let converged = streak >= cfg.required_passes || (nv == 0 && streak > 0);
            if converged || n_jumps >= cfg.max_jumps {
                let batches = Batches { t_batch, ind, ends };
                let mut summaries: Vec<BatchSummary> = consts.iter().map(|&v| constant_summary(v, &batches)).collect();
                for (c, &j) in varying.iter().enumerate() {
                    summaries[j] = summarize(h, &batches, c, t_q);
                }
                return Ok(RunOutcome { summaries, batches, converged, tests, final_state: x, n_jumps });
            }
        }
    }

    #[inline]
    fn compensator_rates(&self, b: &[f64], rates: &mut [f64]) {
        for r in rates.iter_mut() {
            *r = 0.0;
        }
        for (&(s, d), &bk) in self.comp_slot.iter().zip(b) {
            if s != usize::MAX {
                rates[s] += d * bk;
            }
        }
    }
}

/// Convenience wrapper around [`BatchSimulator::run`].
pub fn run_until_converged(
    net: &ReactionNetwork,
    kin: Kinetics,
    x0: &[i64],
    observables: &[Observable],
    cfg: &BatchConfig,
    rng: &mut RngStream,
) -> Result<BatchRun> {
    BatchSimulator::new(net, kin, observables).run(x0, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::network::Subset;
    use crate::ssa::{simulate, RecordPolicy, SimOptions};

    #[test]
    fn quantiles() {
        assert_eq!(t_quantile(0.5, 4.0).unwrap(), 0.0);
        assert!((t_quantile(0.975, 3.0).unwrap() - 3.182446305).abs() < 1e-8);
        assert!((t_quantile(0.975, 9.0).unwrap() - 2.262157163).abs() < 1e-8);
        assert!((t_quantile(0.025, 9.0).unwrap() + 2.262157163).abs() < 1e-8);
        assert!((t_quantile(0.975, 1e7).unwrap() - 1.959964).abs() < 1e-5);
        assert!(t_quantile(1.0, 3.0).is_err());
        assert!(t_quantile(0.9, 0.5).is_err());
    }

    fn step_history() -> JumpHistory {
        // f = 1 on [0, 1), f = 3 on [1, 2)
        let mut h = JumpHistory::new(1, 1);
        h.push(0.0, &[0.0], &[1.0], &[0.0], &[0.0]);
        h.push(1.0, &[1.0], &[3.0], &[0.0], &[0.0]);
        h.push(2.0, &[4.0], &[3.0], &[0.0], &[0.0]);
        h
    }

    #[test]
    fn two_batch_hand_case() {
        let s = split_batches(&step_history(), 2, 0, 0.05).unwrap();
        assert_eq!(s.batch_means, vec![1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.variance, 2.0);
    }

    #[test]
    fn constant_observable_has_zero_moe() {
        let mut h = JumpHistory::new(1, 1);
        let mut t = 0.0;
        for n in 0..50 {
            h.push(t, &[2.5 * t], &[2.5], &[0.0], &[0.0]);
            t += 0.1 + 0.05 * (n % 3) as f64;
        }
        let s = split_batches(&h, 7, 0, 0.05).unwrap();
        for y in &s.batch_means {
            assert!((y - 2.5).abs() < 1e-12);
        }
        assert!(s.moe < 1e-12);
    }

    #[test]
    fn weight_increments_by_hand() {
        // decay A -> B with theta = 2 from 3 molecules; jumps at 0.1 and 0.4
        let mut h = JumpHistory::new(1, 1);
        h.push(0.0, &[0.0], &[3.0], &[0.0], &[3.0]);
        h.push(0.1, &[0.3], &[2.0], &[0.5 - 0.3], &[2.0]);
        h.push(0.4, &[0.9], &[1.0], &[0.2 + 0.5 - 0.6], &[1.0]);
        let batches = Batches::new(&h, 2);
        assert_eq!(batches.ind, vec![1, 2]);
        let wb = batch_lr_weights(&h, &batches);
        // W(0.2) = 0.2 - 2 * 0.1 = 0
        assert!((wb[0][0] - 0.0).abs() < 1e-15);
        assert!((wb[1][0] - 0.1).abs() < 1e-15);
        let one = batch_lr_weights(&h, &Batches::new(&h, 1));
        assert!((one[0][0] - h.weight(2, 0)).abs() < 1e-15);
    }

    #[test]
    fn replayed_history_telescopes() {
        let net = models::adsorption();
        let opts = SimOptions { record: RecordPolicy::Full, ..Default::default() };
        let obs = [Observable::Species(0), Observable::Propensity(2)];
        let rec = simulate(&net, &[30, 60, 10], 0.5, &obs, &opts, &mut RngStream::new(2, 0)).unwrap();
        let kin = Kinetics::new(&net, Subset::All);
        let h = JumpHistory::from_record(&rec, &net, &kin, &obs);
        let batches = Batches::new(&h, 6);
        let s = split_batches(&h, 6, 0, 0.05).unwrap();
        let sum: f64 = s.batch_means.iter().map(|y| y * s.t_batch).sum();
        let last = h.len() - 1;
        assert!((sum - h.integral(last, 0)).abs() <= 1e-10 * h.integral(last, 0));
        let wb = batch_lr_weights(&h, &batches);
        for i in 0..net.n_params() {
            let total: f64 = wb.iter().map(|w| w[i]).sum();
            assert!((total - h.weight(last, i)).abs() <= 1e-10 * (1.0 + h.weight(last, i).abs()));
        }
        // parameter values at the final jump agree with an independent replay
        let mut acc = likelihood::ReweightAccumulator::new(net.n_params());
        for n in 0..rec.n_jumps {
            let local = rec.fired[n];
            acc.accumulate_jump(&kin, &rec.states[n], local, rec.times[n + 1] - rec.times[n]).unwrap();
        }
        for i in 0..net.n_params() {
            assert!((acc.w()[i] - h.weight(last, i)).abs() < 1e-9);
        }
    }

    #[test]
    fn invariant_observable_stops_at_first_test() {
        let net = models::adsorption();
        let kin = Kinetics::new(&net, Subset::FastOnly);
        let run = run_until_converged(&net, kin, &[30, 60, 10], &[Observable::Species(1)], &BatchConfig::default(), &mut RngStream::new(1, 1))
            .unwrap();
        assert!(run.converged);
        assert_eq!(run.tests.len(), 1);
        assert_eq!(run.summaries[0].mean, 60.0);
    }

    #[test]
    fn zero_weights_give_zero_estimates() {
        let s = split_batches(&step_history(), 2, 0, 0.05).unwrap();
        let w = vec![vec![0.0, 0.0]; 2];
        for m in Method::ALL {
            assert_eq!(batch_estimates(&s, &w, m).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn absorbing_start_is_an_error() {
        let net = models::isomerization(0.1);
        let kin = Kinetics::new(&net, Subset::FastOnly);
        let r = run_until_converged(&net, kin, &[0, 0, 3], &[], &BatchConfig::default(), &mut RngStream::new(1, 1));
        assert!(matches!(r, Err(Error::AbsorbedState { .. })));
    }

    #[test]
    fn diagnostics_csv_header() {
        let net = models::two_state_chain(1.0, 1.5, 0.1);
        let kin = Kinetics::new(&net, Subset::FastOnly);
        let run = run_until_converged(&net, kin, &[1, 0], &[Observable::Species(1)], &BatchConfig::default(), &mut RngStream::new(4, 0))
            .unwrap();
        let mut out = Vec::new();
        run.write_diagnostics(&["A".to_string()], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("test_index,total_time,total_jumps,A:mean,A:MOE\n0,"));
        assert_eq!(text.lines().count(), run.tests.len() + 1);
    }
}
