use super::banded::{rcm_order, symmetric_pattern, BandedLu};
use crate::error::{Error, Result};
use crate::network::GeneratorMatrix;

pub const CME_RTOL: f64 = 1e-8;
const MIN_LEVEL: u32 = 3;
const MAX_LEVEL: u32 = 22;

// Alexander's three-stage, L-stable, stiffly accurate SDIRK of order 3.
const GAMMA: f64 = 0.435_866_521_508_459;

struct Tableau {
    a21: f64,
    a31: f64,
    a32: f64,
}

fn tableau() -> Tableau {
    let g = GAMMA;
    Tableau {
        a21: (1.0 - g) / 2.0,
        a31: -(6.0 * g * g - 16.0 * g + 1.0) / 4.0,
        a32: (6.0 * g * g - 20.0 * g + 5.0) / 4.0,
    }
}

/// Probability vector at time `t` for dp/dt = p Q started from `p0`.
///
/// Uniform SDIRK3 steps; the step count doubles until two successive
/// solutions differ by at most 7 * rtol in L1 (the Richardson estimate
/// for a third-order method), and the finer one is returned.
pub fn cme_transient(q: &GeneratorMatrix, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    cme_transient_tol(q, p0, t, CME_RTOL)
}

pub fn cme_transient_tol(q: &GeneratorMatrix, p0: &[f64], t: f64, rtol: f64) -> Result<Vec<f64>> {
    let n = q.dim();
    if p0.len() != n {
        return Err(Error::Domain(format!("p0 has {} entries for a {n}-state generator", p0.len())));
    }
    let mass: f64 = p0.iter().sum();
    if p0.iter().any(|&p| p < 0.0 || !p.is_finite()) || (mass - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("p0 is not a probability vector".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("invalid time {t}")));
    }
    if t == 0.0 {
        return Ok(p0.to_vec());
    }
    // pattern of I - h gamma Q^T, shared across levels
    let pattern: Vec<(usize, usize)> = q.entries().map(|(i, j, _)| (j, i)).collect();
    let perm = rcm_order(&symmetric_pattern(n, pattern.iter().copied()));
    let mut prev = integrate(q, p0, t, 1 << MIN_LEVEL, &perm)?;
    for level in MIN_LEVEL + 1..=MAX_LEVEL {
        let cur = integrate(q, p0, t, 1 << level, &perm)?;
        let diff: f64 = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
        if diff / 7.0 <= rtol {
            let sum: f64 = cur.iter().sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::IntegrationFailure(format!("probability mass drifted to {sum}")));
            }
            return Ok(cur);
        }
        log::debug!("cme: {} steps, L1 change {diff:.3e}", 1u64 << level);
        prev = cur;
    }
    Err(Error::IntegrationFailure(format!("no convergence with 2^{MAX_LEVEL} steps")))
}

fn integrate(q: &GeneratorMatrix, p0: &[f64], t: f64, steps: usize, perm: &[usize]) -> Result<Vec<f64>> {
    let n = q.dim();
    let h = t / steps as f64;
    let hg = h * GAMMA;
    let entries: Vec<(usize, usize, f64)> =
        q.entries().map(|(i, j, v)| (j, i, if i == j { 1.0 - hg * v } else { -hg * v })).collect();
    let lu = BandedLu::factor(n, &entries, perm).map_err(|e| Error::IntegrationFailure(e.to_string()))?;
    let tb = tableau();
    let mut p = p0.to_vec();
    let mut rhs = vec![0.0; n];
    for _ in 0..steps {
        let y1 = lu.solve(&p);
        let k1 = q.left_mul(&y1);
        for i in 0..n {
            rhs[i] = p[i] + h * tb.a21 * k1[i];
        }
        let y2 = lu.solve(&rhs);
        let k2 = q.left_mul(&y2);
        for i in 0..n {
            rhs[i] = p[i] + h * (tb.a31 * k1[i] + tb.a32 * k2[i]);
        }
        p = lu.solve(&rhs);
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure("non-finite probabilities".into()));
    }
    Ok(p)
}

/// Expectation of `f` under `p`.
pub fn expectation(p: &[f64], f: &[f64]) -> f64 {
    p.iter().zip(f).map(|(p, f)| p * f).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_generator, enumerate_state_space, Reaction, ReactionNetwork, Scale, Subset};
    use crate::oracle::stationary;

    #[test]
    fn order_conditions() {
        let tb = tableau();
        let g = GAMMA;
        let b = [tb.a31, tb.a32, g];
        let c = [g, tb.a21 + g, 1.0];
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((b.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>() - 0.5).abs() < 1e-14);
        assert!((b.iter().zip(&c).map(|(b, c)| b * c * c).sum::<f64>() - 1.0 / 3.0).abs() < 1e-12);
        assert!((g * g * g - 3.0 * g * g + 1.5 * g - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn single_decay() {
        let net = ReactionNetwork::new(
            vec!["A".into()],
            vec![Reaction::new(vec![-1], vec![1], 0, Scale::Slow)],
            vec!["k".into()],
            vec![0.7],
            1.0,
        )
        .unwrap();
        let space = enumerate_state_space(&net, &[1], 10);
        let q = build_generator(&net, &space, Subset::All).unwrap();
        let p0 = [1.0, 0.0];
        assert_eq!(cme_transient(&q, &p0, 0.0).unwrap(), p0.to_vec());
        for t in [0.1, 1.0, 3.0] {
            let p = cme_transient(&q, &p0, t).unwrap();
            let exact = (-0.7 * t).exp();
            assert!((p[0] - exact).abs() / exact < 1e-6, "{t}: {} vs {exact}", p[0]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relaxes_to_stationary() {
        let net = crate::models::two_state_chain(1.0, 1.5, 1.0);
        let space = enumerate_state_space(&net, &[1, 0], 10);
        let q = build_generator(&net, &space, Subset::All).unwrap();
        let pi = stationary(&q).unwrap().pi;
        let p = cme_transient(&q, &[1.0, 0.0], 50.0 / 1.25).unwrap();
        assert!(p.iter().zip(&pi).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn rejects_bad_initial_vector() {
        let q = GeneratorMatrix::from_off_diagonal(2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(cme_transient(&q, &[0.7, 0.7], 1.0).is_err());
    }
}
