//! Girsanov weights accumulated along trajectories and the LR, CLR, ELR and
//! CELR sensitivity estimators with percentile bootstrap intervals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Kinetics;
use crate::rng::RngStream;

/// Running sums R (score of fired reactions) and B (integrated derivative of
/// the total propensity); the weight is W = R - B.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ReweightAccumulator {
    pub r: Vec<f64>,
    pub b: Vec<f64>,
}

impl ReweightAccumulator {
    pub fn new(n_params: usize) -> Self {
        ReweightAccumulator { r: vec![0.0; n_params], b: vec![0.0; n_params] }
    }

    pub fn w(&self) -> Vec<f64> {
        self.r.iter().zip(&self.b).map(|(r, b)| r - b).collect()
    }

    /// Adds one holding interval of length `dt` in state `x` ended by the
    /// firing of local reaction `fired` of `kin`.
    pub fn accumulate_jump(&mut self, kin: &Kinetics, x: &[i64], fired: usize, dt: f64) -> Result<()> {
        let b: Vec<f64> = (0..kin.len()).map(|k| kin.mass_action(k, x)).collect();
        if kin.rate(fired) * b[fired] <= 0.0 {
            return Err(Error::ZeroFiredPropensity { reaction: kin.source(fired) });
        }
        self.jump_with(kin, &b, fired, dt);
        Ok(())
    }

    /// Compensator over the final partial holding interval; R is unchanged.
    pub fn finalize_partial(&mut self, kin: &Kinetics, x: &[i64], dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let b: Vec<f64> = (0..kin.len()).map(|k| kin.mass_action(k, x)).collect();
        self.compensate_with(kin, &b, dt);
    }

    #[inline]
    pub(crate) fn jump_with(&mut self, kin: &Kinetics, b: &[f64], fired: usize, dt: f64) {
        self.r[kin.param(fired)] += kin.dfactor(fired) / kin.rate(fired);
        self.compensate_with(kin, b, dt);
    }

    #[inline]
    pub(crate) fn compensate_with(&mut self, kin: &Kinetics, b: &[f64], dt: f64) {
        for (k, &bk) in b.iter().enumerate() {
            if bk != 0.0 {
                self.b[kin.param(k)] += kin.dfactor(k) * bk * dt;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "CLR")]
    Clr,
    #[serde(rename = "ELR")]
    Elr,
    #[serde(rename = "CELR")]
    Celr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lr, Method::Clr, Method::Elr, Method::Celr];

    pub fn is_centered(self) -> bool {
        matches!(self, Method::Clr | Method::Celr)
    }

    /// Uses the time-averaged observable instead of its terminal value.
    pub fn is_ergodic(self) -> bool {
        matches!(self, Method::Elr | Method::Celr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Lr => "LR",
            Method::Clr => "CLR",
            Method::Elr => "ELR",
            Method::Celr => "CELR",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Method::Lr),
            "clr" => Ok(Method::Clr),
            "elr" => Ok(Method::Elr),
            "celr" => Ok(Method::Celr),
            _ => Err(Error::InvalidConfig(format!("unknown estimator '{s}'"))),
        }
    }
}

fn check(f: &[f64], w: &[Vec<f64>]) -> Result<usize> {
    if f.len() != w.len() {
        return Err(Error::Domain(format!("{} observations but {} weight vectors", f.len(), w.len())));
    }
    if f.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: f.len() });
    }
    Ok(w[0].len())
}

/// Plain estimator: mean of f * W per parameter.
pub fn lr(f: &[f64], w: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = check(f, w)?;
    let n = f.len() as f64;
    let mut out = vec![0.0; p];
    for (fi, wi) in f.iter().zip(w) {
        for (o, x) in out.iter_mut().zip(wi) {
            *o += fi * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Centered estimator: mean(f W) - mean(f) mean(W).
pub fn clr(f: &[f64], w: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = check(f, w)?;
    let n = f.len() as f64;
    let fbar = f.iter().sum::<f64>() / n;
    let mut out = vec![0.0; p];
    for (fi, wi) in f.iter().zip(w) {
        for (o, x) in out.iter_mut().zip(wi) {
            *o += (fi - fbar) * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Same as [`lr`], applied to time-averaged observables F/T.
pub fn elr(ergodic_f: &[f64], w: &[Vec<f64>]) -> Result<Vec<f64>> {
    lr(ergodic_f, w)
}

/// Same as [`clr`], applied to time-averaged observables F/T.
pub fn celr(ergodic_f: &[f64], w: &[Vec<f64>]) -> Result<Vec<f64>> {
    clr(ergodic_f, w)
}

pub fn apply(method: Method, f: &[f64], w: &[Vec<f64>]) -> Result<Vec<f64>> {
    if method.is_centered() {
        clr(f, w)
    } else {
        lr(f, w)
    }
}

/// Replicate samples for one observable: the value used by the estimator
/// (terminal or time-averaged), the weight vector, and an optional direct
/// term d f / d theta that is averaged and added to the estimate.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    pub f: &'a [f64],
    pub w: &'a [Vec<f64>],
    pub direct: Option<&'a [Vec<f64>]>,
}

impl<'a> Samples<'a> {
    pub fn new(f: &'a [f64], w: &'a [Vec<f64>]) -> Self {
        Samples { f, w, direct: None }
    }

    pub fn with_direct(mut self, direct: &'a [Vec<f64>]) -> Self {
        self.direct = Some(direct);
        self
    }

    fn evaluate(&self, method: Method) -> Result<Vec<f64>> {
        let mut est = apply(method, self.f, self.w)?;
        if let Some(d) = self.direct {
            let n = d.len() as f64;
            for row in d {
                for (e, x) in est.iter_mut().zip(row) {
                    *e += x / n;
                }
            }
        }
        Ok(est)
    }

    /// Estimate on a resample given by replicate indices.
    fn evaluate_indexed(&self, method: Method, idx: &[usize], scratch: &mut Vec<f64>) -> Vec<f64> {
        let p = self.w[0].len();
        let n = idx.len() as f64;
        let fbar = if method.is_centered() { idx.iter().map(|&i| self.f[i]).sum::<f64>() / n } else { 0.0 };
        scratch.clear();
        scratch.resize(p, 0.0);
        for &i in idx {
            let fi = self.f[i] - fbar;
            for (o, x) in scratch.iter_mut().zip(&self.w[i]) {
                *o += fi * x;
            }
            if let Some(d) = self.direct {
                for (o, x) in scratch.iter_mut().zip(&d[i]) {
                    *o += x;
                }
            }
        }
        scratch.iter().map(|o| o / n).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { resamples: 1000, confidence: 0.95, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapInterval {
    /// Half of the percentile interval width, per parameter.
    pub half_width: Vec<f64>,
    /// Standard deviation of the bootstrap replicates, per parameter.
    pub std_error: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over replicates resampled with replacement; the
/// (f, W, direct) tuple of a replicate is kept together.
pub fn bootstrap_ci(method: Method, samples: &Samples, cfg: &BootstrapConfig) -> Result<BootstrapInterval> {
    let p = check(samples.f, samples.w)?;
    if cfg.resamples < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 bootstrap resamples, got {}", cfg.resamples)));
    }
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence {} not in (0, 1)", cfg.confidence)));
    }
    let n = samples.f.len();
    let mut rng = RngStream::auxiliary(cfg.seed, 0xb007);
    let mut idx = vec![0usize; n];
    let mut scratch = Vec::with_capacity(p);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.resamples); p];
    for _ in 0..cfg.resamples {
        for slot in idx.iter_mut() {
            *slot = rng.below(n);
        }
        let est = samples.evaluate_indexed(method, &idx, &mut scratch);
        for (d, e) in draws.iter_mut().zip(est) {
            d.push(e);
        }
    }
    let alpha = 1.0 - cfg.confidence;
    let mut half_width = Vec::with_capacity(p);
    let mut std_error = Vec::with_capacity(p);
    for mut d in draws {
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
        d.sort_by(|a, b| a.total_cmp(b));
        let lo = quantile_sorted(&d, alpha / 2.0);
        let hi = quantile_sorted(&d, 1.0 - alpha / 2.0);
        half_width.push(((hi - lo) / 2.0).max(0.0));
        std_error.push(var.sqrt());
    }
    Ok(BootstrapInterval { half_width, std_error })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorOutput {
    pub method: Method,
    pub estimate: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_samples: usize,
}

/// Point estimate plus bootstrap interval.
pub fn estimate(method: Method, samples: &Samples, boot: &BootstrapConfig) -> Result<EstimatorOutput> {
    let estimate = samples.evaluate(method)?;
    let ci = bootstrap_ci(method, samples, boot)?;
    Ok(EstimatorOutput {
        method,
        estimate,
        ci_half_width: ci.half_width,
        std_error: ci.std_error,
        n_samples: samples.f.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleConvention {
    RescaledAlpha,
    OriginalAlphaEps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub ci_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub method: Method,
    pub t_final: f64,
    pub params: Vec<ParamEstimate>,
    pub n_replicates: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_convention: Option<ScaleConvention>,
}

impl EstimatorReport {
    pub fn new(out: &EstimatorOutput, names: &[String], t_final: f64, seed: u64) -> Self {
        EstimatorReport {
            method: out.method,
            t_final,
            params: names
                .iter()
                .zip(out.estimate.iter().zip(&out.ci_half_width))
                .map(|(name, (&estimate, &ci_half_width))| ParamEstimate { name: name.clone(), estimate, ci_half_width })
                .collect(),
            n_replicates: out.n_samples,
            seed,
            scale_convention: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Reaction, ReactionNetwork, Scale, Subset};

    fn decay(theta: f64) -> Kinetics {
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![Reaction::new(vec![-1, 1], vec![1, 0], 0, Scale::Slow)],
            vec!["k".into()],
            vec![theta],
            1.0,
        )
        .unwrap();
        Kinetics::new(&net, Subset::All)
    }

    #[test]
    fn one_jump_by_hand() {
        let kin = decay(2.0);
        let mut acc = ReweightAccumulator::new(1);
        acc.accumulate_jump(&kin, &[3, 0], 0, 0.1).unwrap();
        assert!((acc.r[0] - 0.5).abs() < 1e-15);
        assert!((acc.b[0] - 0.3).abs() < 1e-15);
        assert!((acc.w()[0] - 0.2).abs() < 1e-15);
        acc.finalize_partial(&kin, &[3, 0], 0.05);
        assert!((acc.b[0] - 0.45).abs() < 1e-15);
        let before = acc.clone();
        acc.finalize_partial(&kin, &[3, 0], 0.0);
        acc.finalize_partial(&kin, &[0, 3], 1.0);
        assert_eq!(acc, before);
    }

    #[test]
    fn zero_fired_propensity() {
        let kin = decay(2.0);
        let mut acc = ReweightAccumulator::new(1);
        assert!(matches!(acc.accumulate_jump(&kin, &[0, 3], 0, 0.1), Err(Error::ZeroFiredPropensity { .. })));
    }

    #[test]
    fn fast_score_independent_of_epsilon() {
        for eps in [1.0, 0.1, 0.001] {
            let net = crate::models::two_state_chain(2.0, 1.0, eps);
            let kin = Kinetics::new(&net, Subset::All);
            let mut acc = ReweightAccumulator::new(2);
            acc.accumulate_jump(&kin, &[1, 0], 0, 0.0).unwrap();
            assert!((acc.r[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn worked_estimates() {
        let f = [1.0, 3.0];
        let w = vec![vec![0.5], vec![-0.5]];
        assert_eq!(lr(&f, &w).unwrap(), vec![-0.5]);
        assert_eq!(clr(&f, &w).unwrap(), vec![-0.5]);
        assert_eq!(lr(&[0.0, 0.0], &w).unwrap(), vec![0.0]);
        assert_eq!(elr(&f, &[vec![0.0], vec![0.0]]).unwrap(), vec![0.0]);
        assert!(matches!(lr(&[1.0], &[vec![1.0]]), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn constant_observable_centers_to_zero() {
        let f = [4.0; 5];
        let w: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 - 1.3, 0.7 * i as f64]).collect();
        assert_eq!(clr(&f, &w).unwrap(), vec![0.0, 0.0]);
        assert_eq!(celr(&f, &w).unwrap(), vec![0.0, 0.0]);
        let mean_w = w.iter().map(|v| v[0]).sum::<f64>() / 5.0;
        assert!((elr(&f, &w).unwrap()[0] - 4.0 * mean_w).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let f = [2.0; 10];
        let w = vec![vec![1.0]; 10];
        let cfg = BootstrapConfig::default();
        let ci = bootstrap_ci(Method::Lr, &Samples::new(&f, &w), &cfg).unwrap();
        assert_eq!(ci.half_width, vec![0.0]);

        let f: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.91).cos()]).collect();
        let a = bootstrap_ci(Method::Clr, &Samples::new(&f, &w), &cfg).unwrap();
        let b = bootstrap_ci(Method::Clr, &Samples::new(&f, &w), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.half_width[0] > 0.0);
    }

    #[test]
    fn direct_term_is_added() {
        let f = [1.0, 3.0];
        let w = vec![vec![0.5], vec![-0.5]];
        let d = vec![vec![1.0], vec![2.0]];
        let out = estimate(Method::Clr, &Samples::new(&f, &w).with_direct(&d), &BootstrapConfig::default()).unwrap();
        assert!((out.estimate[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_json_shape() {
        let out = EstimatorOutput {
            method: Method::Celr,
            estimate: vec![1.0],
            ci_half_width: vec![0.1],
            std_error: vec![0.05],
            n_samples: 10,
        };
        let rep = EstimatorReport::new(&out, &["k".to_string()], 2.0, 9);
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["method"], "CELR");
        assert_eq!(v["params"][0]["name"], "k");
        assert!(v.get("scale_convention").is_none());
        let back: EstimatorReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, rep);
    }
}
