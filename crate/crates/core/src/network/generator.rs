use nalgebra::DMatrix;

use super::{Kinetics, ReactionNetwork, Scale, StateSpace};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    FastOnly,
    SlowOnly,
}

impl Subset {
    pub fn contains(self, scale: Scale) -> bool {
        match self {
            Subset::All => true,
            Subset::FastOnly => scale == Scale::Fast,
            Subset::SlowOnly => scale == Scale::Slow,
        }
    }
}

/// Which fast parameter a derivative is taken against: the rescaled alpha
/// or the original rate constant alpha/epsilon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamConvention {
    Rescaled,
    Original,
}

/// Sparse CTMC generator in compressed-row form; the diagonal is stored
/// explicitly and equals minus the off-diagonal row sum.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl GeneratorMatrix {
    /// Assembles from off-diagonal triplets; duplicates are summed and the
    /// diagonal is completed so that rows sum to zero.
    pub fn from_off_diagonal(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.retain(|&(i, j, v)| i != j && v != 0.0);
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len() + dim);
        let mut values = Vec::with_capacity(triplets.len() + dim);
        let mut t = 0;
        for i in 0..dim {
            let start = col_idx.len();
            col_idx.push(i);
            values.push(0.0);
            let mut diag = 0.0;
            while t < triplets.len() && triplets[t].0 == i {
                let (_, j, v) = triplets[t];
                if *col_idx.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                }
                diag -= v;
                t += 1;
            }
            values[start] = diag;
            // keep columns sorted with the diagonal in place
            let mut row: Vec<(usize, f64)> =
                col_idx[start..].iter().copied().zip(values[start..].iter().copied()).collect();
            row.sort_by_key(|e| e.0);
            for (k, (c, v)) in row.into_iter().enumerate() {
                col_idx[start + k] = c;
                values[start + k] = v;
            }
            row_ptr[i + 1] = col_idx.len();
        }
        GeneratorMatrix { dim, row_ptr, col_idx, values }
    }

    pub fn from_dense(q: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for i in 0..q.nrows() {
            for j in 0..q.ncols() {
                if i != j && q[(i, j)] != 0.0 {
                    trip.push((i, j, q[(i, j)]));
                }
            }
        }
        Self::from_off_diagonal(q.nrows(), trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// Row vector times matrix: (p Q)_j = sum_i p_i q_ij.
    pub fn left_mul(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += pi * v;
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn right_mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).map(|(j, q)| q * v[j]).sum()).collect()
    }

    /// Largest |row sum| relative to the largest |diagonal|.
    pub fn row_sum_residual(&self) -> f64 {
        let scale = (0..self.dim).map(|i| self.diag(i).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (0..self.dim).map(|i| self.row(i).map(|(_, v)| v).sum::<f64>().abs()).fold(0.0, f64::max) / scale
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Entrywise sum of two generators of the same dimension.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let trip = self.entries().chain(other.entries()).filter(|&(i, j, _)| i != j).collect();
        Self::from_off_diagonal(self.dim, trip)
    }

    /// Off-diagonal sparsity pattern as adjacency lists (i -> j when q_ij > 0).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.dim).map(|i| self.row(i).filter(|&(j, v)| j != i && v != 0.0).map(|(j, _)| j).collect()).collect()
    }
}

/// Generator of the chain restricted to one reaction subset. `All` gives
/// Q^eps = Q_fast/eps + Q_slow; `FastOnly` uses the rescaled alpha.
pub fn build_generator(net: &ReactionNetwork, space: &StateSpace, subset: Subset) -> Result<GeneratorMatrix> {
    let kin = Kinetics::new(net, subset);
    let mut trip = Vec::new();
    let mut y = vec![0i64; net.n_species()];
    for (i, x) in space.states.iter().enumerate() {
        for k in 0..kin.len() {
            let lam = kin.rate(k) * kin.mass_action(k, x);
            if lam == 0.0 {
                continue;
            }
            y.copy_from_slice(x);
            kin.apply(k, &mut y);
            let j = space.index_of(&y).ok_or(Error::TruncatedSpace { reaction: kin.source(k) })?;
            trip.push((i, j, lam));
        }
    }
    Ok(GeneratorMatrix::from_off_diagonal(space.len(), trip))
}

/// dQ/d theta_param for the full generator.
pub fn build_generator_derivative(
    net: &ReactionNetwork,
    space: &StateSpace,
    param: usize,
    convention: ParamConvention,
) -> Result<GeneratorMatrix> {
    let kin = Kinetics::new(net, Subset::All);
    let mut trip = Vec::new();
    let mut y = vec![0i64; net.n_species()];
    for (i, x) in space.states.iter().enumerate() {
        for k in 0..kin.len() {
            if kin.param(k) != param {
                continue;
            }
            let factor = match convention {
                ParamConvention::Rescaled => kin.dfactor(k),
                ParamConvention::Original => 1.0,
            };
            let d = factor * kin.mass_action(k, x);
            if d == 0.0 {
                continue;
            }
            y.copy_from_slice(x);
            kin.apply(k, &mut y);
            let j = space.index_of(&y).ok_or(Error::TruncatedSpace { reaction: kin.source(k) })?;
            trip.push((i, j, d));
        }
    }
    Ok(GeneratorMatrix::from_off_diagonal(space.len(), trip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::network::{enumerate_state_space, DEFAULT_STATE_CAP};

    #[test]
    fn two_state_chain_matrix() {
        let net = models::two_state_chain(1.0, 1.5, 1.0);
        let space = enumerate_state_space(&net, &[1, 0], 10);
        let q = build_generator(&net, &space, Subset::All).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.5, -1.5]);
        assert!((q - expect).abs().max() < 1e-15);
    }

    #[test]
    fn decomposition_identity() {
        let net = models::adsorption();
        let space = enumerate_state_space(&net, &[30, 60, 10], DEFAULT_STATE_CAP);
        let all = build_generator(&net, &space, Subset::All).unwrap();
        let fast = build_generator(&net, &space, Subset::FastOnly).unwrap();
        let slow = build_generator(&net, &space, Subset::SlowOnly).unwrap();
        let sum = fast.scaled(1.0 / net.epsilon()).add(&slow);
        let scale = all.norm_inf();
        for (i, j, v) in all.entries() {
            assert!((v - sum.get(i, j)).abs() <= 1e-12 * scale);
        }
        assert_eq!(all.nnz(), sum.nnz());
        assert!(all.row_sum_residual() < 1e-12);
    }

    #[test]
    fn truncated_space_is_an_error() {
        let net = models::isomerization(0.1);
        let space = enumerate_state_space(&net, &[100, 0, 0], 30);
        assert!(matches!(build_generator(&net, &space, Subset::All), Err(Error::TruncatedSpace { .. })));
    }

    #[test]
    fn derivative_conventions() {
        let net = models::two_state_chain(1.0, 1.5, 0.1);
        let space = enumerate_state_space(&net, &[1, 0], 10);
        let a = build_generator_derivative(&net, &space, 0, ParamConvention::Rescaled).unwrap();
        let b = build_generator_derivative(&net, &space, 0, ParamConvention::Original).unwrap();
        assert!((a.get(0, 1) - 10.0).abs() < 1e-12);
        assert!((b.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(a.get(1, 0), 0.0);
    }
}
