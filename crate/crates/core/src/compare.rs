//! Single-scale versus two-time-scale comparison over a sweep of epsilon.

use log::info;
use serde::{Deserialize, Serialize};

use crate::batchmeans::BatchConfig;
use crate::error::{Error, Result};
use crate::likelihood::{self, BootstrapConfig, Method, Samples};
use crate::network::{Observable, ReactionNetwork};
use crate::ssa::{run_ensemble, EnsembleConfig};
use crate::twoscale::{tts_ensemble, TwoScale};

/// Euclidean norm of `a - b` over the norm of `b`.
pub fn normalized_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Least-squares slope of ln y against ln x; None with fewer than two
/// usable points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Means, standard errors and slow-parameter sensitivities of every
/// observable from one ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// `sens[obs][k]` for the k-th slow parameter.
    pub sens: Vec<Vec<f64>>,
    pub sens_se: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub sts: EnsembleStats,
    pub mean_error: f64,
    /// Per slow parameter, normalized error of the sensitivity vector.
    pub sens_error: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub slow_params: Vec<String>,
    pub observables: Vec<String>,
    pub tts: EnsembleStats,
    pub points: Vec<SweepPoint>,
    pub mean_slope: Option<f64>,
    pub sens_slope: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub t_final: f64,
    pub replicates: usize,
    pub seed: u64,
    pub method: Method,
    pub batch: BatchConfig,
    pub boot: BootstrapConfig,
}

fn slow_params(net: &ReactionNetwork) -> Vec<usize> {
    (0..net.n_params()).filter(|&p| !net.is_fast_param(p)).collect()
}

fn stats(f: &[Vec<f64>], w: &[Vec<f64>], direct: Option<&[Vec<Vec<f64>>]>, slow: &[usize], cfg: &SweepConfig) -> Result<EnsembleStats> {
    let mut s = EnsembleStats { mean: Vec::new(), se: Vec::new(), sens: Vec::new(), sens_se: Vec::new() };
    for (j, fj) in f.iter().enumerate() {
        let (m, se) = crate::ssa::mean_se(fj.iter().copied());
        s.mean.push(m);
        s.se.push(se);
        let mut samples = Samples::new(fj, w);
        if let Some(d) = direct {
            samples = samples.with_direct(&d[j]);
        }
        let out = likelihood::estimate(cfg.method, &samples, &cfg.boot)?;
        s.sens.push(slow.iter().map(|&p| out.estimate[p]).collect());
        s.sens_se.push(slow.iter().map(|&p| out.std_error[p]).collect());
    }
    Ok(s)
}

/// Runs the two-time-scale ensemble once (with rescaled fast parameters it
/// does not depend on epsilon) and one single-scale ensemble per epsilon,
/// all at the horizon `cfg.t_final`.
pub fn epsilon_sweep(
    net: &ReactionNetwork,
    x0: &[i64],
    observables: &[Observable],
    epsilons: &[f64],
    cfg: &SweepConfig,
) -> Result<Sweep> {
    let slow = slow_params(net);
    if net.slow_reactions().is_empty() {
        return Err(Error::InvalidConfig(
            "network has no slow reactions; single-scale and two-time-scale runs would coincide".into(),
        ));
    }
    if epsilons.is_empty() {
        return Err(Error::InvalidConfig("epsilon list is empty".into()));
    }
    if cfg.method.is_ergodic() {
        return Err(Error::InvalidConfig("the sweep compares terminal-time quantities; use LR or CLR".into()));
    }
    let model = TwoScale::new(&net.with_epsilon(epsilons[0])?, observables, cfg.batch.clone())?;
    let tts = tts_ensemble(&model, x0, cfg.t_final, &[], cfg.replicates, cfg.seed)?;
    let cp = tts.times.len() - 1;
    let f: Vec<Vec<f64>> = (0..observables.len()).map(|j| tts.fbar(cp, j)).collect();
    let direct: Vec<Vec<Vec<f64>>> = (0..observables.len())
        .map(|j| tts.samples.iter().map(|r| r[cp].direct[j].clone()).collect())
        .collect();
    let tts_stats = stats(&f, &tts.weights(cp), Some(&direct), &slow, cfg)?;
    info!("two-time-scale ensemble: {} micro-equilibrations", tts.visits);

    let mut points = Vec::new();
    for &eps in epsilons {
        let sts_net = net.with_epsilon(eps)?;
        let ens_cfg = EnsembleConfig::new(cfg.replicates, cfg.seed, cfg.t_final);
        let ens = run_ensemble(&sts_net, x0, observables, &ens_cfg)?;
        let cp = ens.times.len() - 1;
        let f: Vec<Vec<f64>> = (0..observables.len()).map(|j| ens.terminal(cp, j)).collect();
        let sts = stats(&f, &ens.weights(cp), None, &slow, cfg)?;
        let mean_error = normalized_error(&sts.mean, &tts_stats.mean);
        let sens_error = (0..slow.len())
            .map(|k| {
                let a: Vec<f64> = sts.sens.iter().map(|r| r[k]).collect();
                let b: Vec<f64> = tts_stats.sens.iter().map(|r| r[k]).collect();
                normalized_error(&a, &b)
            })
            .collect();
        info!("epsilon {eps}: normalized mean error {mean_error:.4e}");
        points.push(SweepPoint { epsilon: eps, sts, mean_error, sens_error });
    }
    let eps: Vec<f64> = points.iter().map(|p| p.epsilon).collect();
    let mean_slope = loglog_slope(&eps, &points.iter().map(|p| p.mean_error).collect::<Vec<_>>());
    let sens_slope = (0..slow.len())
        .map(|k| loglog_slope(&eps, &points.iter().map(|p| p.sens_error[k]).collect::<Vec<_>>()))
        .collect();
    Ok(Sweep {
        slow_params: slow.iter().map(|&p| net.params.names[p].clone()).collect(),
        observables: observables.iter().map(|o| o.label(net)).collect(),
        tts: tts_stats,
        points,
        mean_slope,
        sens_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.03, 0.01];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.2)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(loglog_slope(&[0.1], &[1.0]), None);
    }

    #[test]
    fn error_is_relative_to_second_argument() {
        assert!((normalized_error(&[3.0, 4.0], &[0.0, 5.0]) - (10.0f64).sqrt() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn no_slow_reactions_is_rejected() {
        let net = crate::models::two_state_chain(1.0, 1.5, 0.1);
        let cfg = SweepConfig {
            t_final: 1.0,
            replicates: 10,
            seed: 1,
            method: Method::Clr,
            batch: BatchConfig::default(),
            boot: BootstrapConfig::default(),
        };
        let r = epsilon_sweep(&net, &[1, 0], &[Observable::Species(0)], &[0.1], &cfg);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
