use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
/// Returns `order[new] = old`.
pub fn rcm_order(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &s in &by_degree {
        if seen[s] {
            continue;
        }
        let root = peripheral(adj, &degree, s);
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        let mut nb = Vec::new();
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nb.clear();
            nb.extend(adj[v].iter().copied().filter(|&u| !seen[u]));
            nb.sort_by_key(|&u| (degree[u], u));
            nb.dedup();
            for &u in &nb {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

// Pseudo-peripheral node of the component containing `start`.
fn peripheral(adj: &[Vec<usize>], degree: &[usize], start: usize) -> usize {
    let mut root = start;
    let mut ecc = 0;
    loop {
        let levels = bfs_levels(adj, root);
        let far = levels.iter().map(|&(_, l)| l).max().unwrap_or(0);
        let cand = levels.iter().filter(|&&(_, l)| l == far).min_by_key(|&&(v, _)| (degree[v], v)).map(|&(v, _)| v).unwrap_or(root);
        if far <= ecc {
            return root;
        }
        ecc = far;
        root = cand;
    }
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<(usize, usize)> {
    let mut level = std::collections::HashMap::new();
    level.insert(root, 0usize);
    let mut queue = VecDeque::from([root]);
    let mut out = Vec::new();
    while let Some(v) = queue.pop_front() {
        let l = level[&v];
        out.push((v, l));
        for &u in &adj[v] {
            if !level.contains_key(&u) {
                level.insert(u, l + 1);
                queue.push_back(u);
            }
        }
    }
    out
}

/// Symmetrized pattern of a set of (row, col) entries.
pub fn symmetric_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (i, j) in entries {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// LU factorization of a permuted banded matrix, without pivoting. Meant
/// for diagonally dominant systems (M-matrices built from generators).
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    // perm[new] = old
    perm: Vec<usize>,
}

impl BandedLu {
    /// Factors the n x n matrix given by its nonzero entries (original
    /// indexing) after reordering rows and columns by `perm`.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)], perm: &[usize]) -> Result<Self> {
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0, 0);
        for &(i, j, _) in entries {
            let (a, b) = (inv[i], inv[j]);
            if a > b {
                kl = kl.max(a - b);
            } else {
                ku = ku.max(b - a);
            }
        }
        // no pivoting: fill stays inside the band
        let width = kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for &(i, j, v) in entries {
            let (a, b) = (inv[i], inv[j]);
            data[a * width + b + kl - a] += v;
        }
        for k in 0..n {
            let pivot = data[k * width + kl];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Domain(format!("zero pivot at row {k} of banded factorization")));
            }
            let jmax = (k + ku).min(n - 1);
            for i in k + 1..=(k + kl).min(n - 1) {
                let ik = i * width + k + kl - i;
                let l = data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                data[ik] = l;
                for j in k + 1..=jmax {
                    data[i * width + j + kl - i] -= l * data[k * width + j + kl - k];
                }
            }
        }
        Ok(Self { n, kl, ku, width, data, perm: perm.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Solves A x = b in the original indexing.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let row = &self.data[i * w..(i + 1) * w];
            let mut s = y[i];
            for j in i.saturating_sub(kl)..i {
                s -= row[j + kl - i] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let row = &self.data[i * w..(i + 1) * w];
            let mut s = y[i];
            for j in i + 1..=(i + ku).min(n - 1) {
                s -= row[j + kl - i] * y[j];
            }
            y[i] = s / row[kl];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Stationary vector of an irreducible generator by GTH elimination
/// (Grassmann, Taksar, Heyman) in a band given by `perm`. Only
/// off-diagonal rates are read and no subtraction occurs, so every entry
/// has small relative error even when pi spans many orders of magnitude.
pub fn banded_gth(n: usize, offdiag: &[(usize, usize, f64)], perm: &[usize]) -> Result<Vec<f64>> {
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let b = offdiag.iter().map(|&(i, j, _)| inv[i].abs_diff(inv[j])).max().unwrap_or(0);
    let w = 2 * b + 1;
    let mut data = vec![0.0; n * w];
    let at = |i: usize, j: usize| i * w + j + b - i;
    for &(i, j, v) in offdiag {
        if i != j {
            data[at(inv[i], inv[j])] += v;
        }
    }
    let mut out_rate = vec![0.0; n];
    let mut row = vec![0.0; w];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(b);
        let s: f64 = (lo..k).map(|j| data[at(k, j)]).sum();
        if !(s > 0.0) {
            return Err(Error::Domain(format!("state {} has no path to the remaining states", perm[k])));
        }
        out_rate[k] = s;
        for j in lo..k {
            row[j - lo] = data[at(k, j)] / s;
        }
        for i in lo..k {
            let a = data[at(i, k)];
            if a == 0.0 {
                continue;
            }
            for j in lo..k {
                if j != i {
                    data[at(i, j)] += a * row[j - lo];
                }
            }
        }
    }
    let mut y = vec![0.0; n];
    y[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(b);
        y[k] = (lo..k).map(|i| y[i] * data[at(i, k)]).sum::<f64>() / out_rate[k];
    }
    let total: f64 = y.iter().sum();
    let mut pi = vec![0.0; n];
    for (new, &old) in perm.iter().enumerate() {
        pi[old] = y[new] / total;
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn rcm_reduces_bandwidth_of_a_shuffled_path() {
        let n = 50;
        let label: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let adj = symmetric_pattern(n, (0..n - 1).map(|i| (label[i], label[i + 1])));
        let order = rcm_order(&adj);
        let mut inv = vec![0; n];
        for (a, &o) in order.iter().enumerate() {
            inv[o] = a;
        }
        let bw = (0..n - 1).map(|i| inv[label[i]].abs_diff(inv[label[i + 1]])).max().unwrap();
        assert_eq!(bw, 1);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn gth_is_exact_on_a_steep_birth_death_chain() {
        // pi_{i+1} / pi_i = 1e-3, far beyond what normwise accuracy resolves
        let n = 40;
        let mut entries = Vec::new();
        for i in 0..n - 1 {
            entries.push((i, i + 1, 1.0));
            entries.push((i + 1, i, 1000.0));
        }
        let perm: Vec<usize> = (0..n).rev().collect();
        let pi = banded_gth(n, &entries, &perm).unwrap();
        for i in 0..n - 1 {
            assert!((pi[i + 1] / pi[i] - 1e-3).abs() < 1e-13, "{i}");
        }
    }

    #[test]
    fn solves_diagonally_dominant_system() {
        let n = 30;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 4.0 + i as f64 * 0.1));
            entries.push((i, (i + 7) % n, -1.0));
            entries.push(((i + 3) % n, i, -1.5));
        }
        let perm = rcm_order(&symmetric_pattern(n, entries.iter().map(|&(i, j, _)| (i, j))));
        let lu = BandedLu::factor(n, &entries, &perm).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = lu.solve(&b);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &(i, j, v) in &entries {
            a[(i, j)] += v;
        }
        let r = &a * DVector::from_vec(x) - DVector::from_vec(b);
        assert!(r.amax() < 1e-13);
    }
}
