use nalgebra::DVector;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use super::banded::{banded_gth, rcm_order, symmetric_pattern, BandedLu};
use crate::error::{Error, Result};
use crate::network::{
    build_generator, build_generator_derivative, GeneratorMatrix, Observable, ParamConvention, ReactionNetwork,
    StateSpace, Subset,
};

/// Largest generator handled by the dense SVD route.
pub const DENSE_SENSITIVITY_CAP: usize = 5000;
const SINGULAR_CUTOFF: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Trivial,
    BandedGth,
    BandedLu,
    Svd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationarySolution {
    pub pi: Vec<f64>,
    /// Euclidean norm of pi Q.
    pub residual: f64,
    pub method: SolveMethod,
}

impl StationarySolution {
    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.pi.iter().zip(f).map(|(p, f)| p * f).sum()
    }
}

/// Rows are parameters, columns states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub dpi: Vec<Vec<f64>>,
    pub dexpectation: Vec<f64>,
    pub method: SolveMethod,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SensitivityRoute {
    /// SVD up to `DENSE_SENSITIVITY_CAP` states, sparse solve above.
    #[default]
    Auto,
    Svd,
    Sparse,
}

/// Strongly connected components of the transition graph, largest first.
pub fn communicating_classes(q: &GeneratorMatrix) -> Vec<Vec<usize>> {
    let n = q.dim();
    let mut g = DiGraph::<(), ()>::with_capacity(n, q.nnz());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, j, v) in q.entries() {
        if i != j && v > 0.0 {
            g.add_edge(nodes[i], nodes[j], ());
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|v| v.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    classes.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    classes
}

fn require_irreducible(q: &GeneratorMatrix) -> Result<()> {
    let classes = communicating_classes(q);
    if classes.len() > 1 {
        return Err(Error::Reducible { classes });
    }
    Ok(())
}

/// Factorization of -Q^T with the last state deleted. For irreducible Q
/// this is a nonsingular M-matrix, so LU without pivoting is safe.
pub(crate) struct ReducedSystem {
    n: usize,
    lu: BandedLu,
}

impl ReducedSystem {
    pub(crate) fn new(q: &GeneratorMatrix) -> Result<Self> {
        let n = q.dim();
        let m = n - 1;
        let entries: Vec<(usize, usize, f64)> =
            q.entries().filter(|&(i, j, _)| i < m && j < m).map(|(i, j, v)| (j, i, -v)).collect();
        let perm = rcm_order(&symmetric_pattern(m, entries.iter().map(|&(i, j, _)| (i, j))));
        Ok(Self { n, lu: BandedLu::factor(m, &entries, &perm)? })
    }

    /// Solves x Q = b with x orthogonal to the ones vector; b must sum to 0.
    pub(crate) fn solve_left(&self, q: &GeneratorMatrix, b: &[f64], pi: &[f64]) -> Vec<f64> {
        let m = self.n - 1;
        // x_m = 0: (Q_mm)^T x = b_m  <=>  (-Q_mm^T) x = -b_m
        let rhs: Vec<f64> = b[..m].iter().map(|v| -v).collect();
        let mut x = self.lu.solve(&rhs);
        x.push(0.0);
        refine(q, &self.lu, b, &mut x);
        let s: f64 = x.iter().sum();
        x.iter_mut().zip(pi).for_each(|(x, p)| *x -= s * p);
        x
    }
}

// One step of iterative refinement on x Q = b with x_m pinned.
fn refine(q: &GeneratorMatrix, lu: &BandedLu, b: &[f64], x: &mut [f64]) {
    let m = x.len() - 1;
    let xq = q.left_mul(x);
    let r: Vec<f64> = (0..m).map(|j| -(b[j] - xq[j])).collect();
    let dx = lu.solve(&r);
    x[..m].iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stationary distribution of an irreducible generator.
pub fn stationary(q: &GeneratorMatrix) -> Result<StationarySolution> {
    let n = q.dim();
    if n == 0 {
        return Err(Error::Domain("empty generator".into()));
    }
    if n == 1 {
        return Ok(StationarySolution { pi: vec![1.0], residual: 0.0, method: SolveMethod::Trivial });
    }
    require_irreducible(q)?;
    let offdiag: Vec<(usize, usize, f64)> = q.entries().filter(|&(i, j, _)| i != j).collect();
    let perm = rcm_order(&symmetric_pattern(n, offdiag.iter().map(|&(i, j, _)| (i, j))));
    let x = banded_gth(n, &offdiag, &perm)?;
    let residual = l2(&q.left_mul(&x));
    Ok(StationarySolution { pi: x, residual, method: SolveMethod::BandedGth })
}

/// d pi / d theta for each generator derivative in `dq`, and the derivative
/// of E_pi[f] including the explicit term `df[param][state]` when given.
pub fn pseudo_inverse_sensitivity(
    q: &GeneratorMatrix,
    dq: &[GeneratorMatrix],
    pi: &[f64],
    f: &[f64],
    df: Option<&[Vec<f64>]>,
) -> Result<SensitivityMatrix> {
    sensitivity_with_route(q, dq, pi, f, df, SensitivityRoute::Auto)
}

pub fn sensitivity_with_route(
    q: &GeneratorMatrix,
    dq: &[GeneratorMatrix],
    pi: &[f64],
    f: &[f64],
    df: Option<&[Vec<f64>]>,
    route: SensitivityRoute,
) -> Result<SensitivityMatrix> {
    let n = q.dim();
    if pi.len() != n || f.len() != n || dq.iter().any(|d| d.dim() != n) {
        return Err(Error::Domain("dimension mismatch in sensitivity inputs".into()));
    }
    let dense = match route {
        SensitivityRoute::Auto => n <= DENSE_SENSITIVITY_CAP,
        SensitivityRoute::Svd => true,
        SensitivityRoute::Sparse => false,
    };
    let (dpi, method) = if n == 1 {
        (vec![vec![0.0]; dq.len()], SolveMethod::Trivial)
    } else if dense {
        (svd_route(q, dq, pi)?, SolveMethod::Svd)
    } else {
        require_irreducible(q)?;
        let sys = ReducedSystem::new(q)?;
        let rows = dq
            .iter()
            .map(|d| {
                let b: Vec<f64> = d.left_mul(pi).iter().map(|v| -v).collect();
                sys.solve_left(q, &b, pi)
            })
            .collect();
        (rows, SolveMethod::BandedLu)
    };
    let dexpectation = dpi
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut e: f64 = row.iter().zip(f).map(|(a, b)| a * b).sum();
            if let Some(df) = df {
                e += pi.iter().zip(&df[k]).map(|(p, d)| p * d).sum::<f64>();
            }
            e
        })
        .collect();
    Ok(SensitivityMatrix { dpi, dexpectation, method })
}

// d pi = pi dQ Q^+ (1 pi - I)
fn svd_route(q: &GeneratorMatrix, dq: &[GeneratorMatrix], pi: &[f64]) -> Result<Vec<Vec<f64>>> {
    let svd = q.to_dense().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    let cutoff = SINGULAR_CUTOFF * smax;
    let vanishing = svd.singular_values.iter().filter(|&&s| s <= cutoff).count();
    if vanishing != 1 {
        return Err(Error::RankDeficiencyUnexpected { vanishing });
    }
    let inv: DVector<f64> = svd.singular_values.map(|s| if s > cutoff { 1.0 / s } else { 0.0 });
    Ok(dq
        .iter()
        .map(|d| {
            let v = DVector::from_vec(d.left_mul(pi));
            // row vector v Q^+ = (U S^+ V^T v)^T
            let z = (vt * v).component_mul(&inv);
            let w = u * z;
            let s = w.sum();
            w.iter().zip(pi).map(|(w, p)| s * p - w).collect()
        })
        .collect())
}

/// Stationary solution and sensitivities of E[obs] for every parameter of
/// the full generator, with fast parameters in the rescaled convention.
pub fn steady_state_sensitivities(
    net: &ReactionNetwork,
    space: &StateSpace,
    obs: &Observable,
    route: SensitivityRoute,
) -> Result<(StationarySolution, SensitivityMatrix)> {
    let q = build_generator(net, space, Subset::All)?;
    let sol = stationary(&q)?;
    let dq = (0..net.n_params())
        .map(|p| build_generator_derivative(net, space, p, ParamConvention::Rescaled))
        .collect::<Result<Vec<_>>>()?;
    let f = space.map(|x| obs.eval(net, x));
    let df = explicit_gradient(net, space, obs);
    let sens = sensitivity_with_route(&q, &dq, &sol.pi, &f, df.as_deref(), route)?;
    Ok((sol, sens))
}

fn explicit_gradient(net: &ReactionNetwork, space: &StateSpace, obs: &Observable) -> Option<Vec<Vec<f64>>> {
    if !obs.depends_on_params() {
        return None;
    }
    let per_state: Vec<Vec<f64>> = space.states.iter().map(|x| obs.param_gradient(net, x)).collect();
    Some((0..net.n_params()).map(|p| per_state.iter().map(|g| g[p]).collect()).collect())
}

/// Central finite differences of the stationary solution with step
/// `rel_step * theta` per parameter; same layout as `SensitivityMatrix`.
pub fn finite_difference_sensitivity(
    net: &ReactionNetwork,
    space: &StateSpace,
    obs: &Observable,
    rel_step: f64,
) -> Result<SensitivityMatrix> {
    let base = net.params.values.clone();
    let mut dpi = Vec::new();
    let mut dexpectation = Vec::new();
    for p in 0..net.n_params() {
        let h = rel_step * base[p];
        let side = |sign: f64| -> Result<(Vec<f64>, f64)> {
            let mut v = base.clone();
            v[p] += sign * h;
            let shifted = net.with_values(&v)?;
            let sol = stationary(&build_generator(&shifted, space, Subset::All)?)?;
            let e = space.states.iter().zip(&sol.pi).map(|(x, p)| p * obs.eval(&shifted, x)).sum();
            Ok((sol.pi, e))
        };
        let (hi, ehi) = side(1.0)?;
        let (lo, elo) = side(-1.0)?;
        dpi.push(hi.iter().zip(&lo).map(|(a, b)| (a - b) / (2.0 * h)).collect());
        dexpectation.push((ehi - elo) / (2.0 * h));
    }
    Ok(SensitivityMatrix { dpi, dexpectation, method: SolveMethod::BandedGth })
}

/// Largest |d pi/d(alpha/eps) - eps * d pi/d alpha| over fast parameters
/// and states. Zero when the network has no fast parameters.
pub fn rescaling_identity_check(net: &ReactionNetwork, space: &StateSpace, route: SensitivityRoute) -> Result<f64> {
    let fast: Vec<usize> = (0..net.n_params()).filter(|&p| net.is_fast_param(p)).collect();
    if fast.is_empty() {
        return Ok(0.0);
    }
    let q = build_generator(net, space, Subset::All)?;
    let sol = stationary(&q)?;
    let mut dq = Vec::new();
    for &p in &fast {
        dq.push(build_generator_derivative(net, space, p, ParamConvention::Original)?);
        dq.push(build_generator_derivative(net, space, p, ParamConvention::Rescaled)?);
    }
    let zeros = vec![0.0; space.len()];
    let sens = sensitivity_with_route(&q, &dq, &sol.pi, &zeros, None, route)?;
    let eps = net.epsilon();
    let mut worst: f64 = 0.0;
    for pair in sens.dpi.chunks(2) {
        for (orig, resc) in pair[0].iter().zip(&pair[1]) {
            worst = worst.max((orig - eps * resc).abs());
        }
    }
    Ok(worst)
}
