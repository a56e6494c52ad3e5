use nalgebra::{DMatrix, DVector};
use ode_solvers::{Dopri5, OutputType, System};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, Scale, SlowInvariants};

pub const DAE_RTOL: f64 = 1e-8;
const DAE_ATOL: f64 = 1e-10;

/// Means and parameter sensitivities of a linear network in the fast
/// quasi-equilibrium limit. Fast parameters are the rescaled alpha.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DaeSolution {
    pub times: Vec<f64>,
    /// means[t][species]
    pub means: Vec<Vec<f64>>,
    /// sensitivities[t][species][param]
    pub sensitivities: Vec<Vec<Vec<f64>>>,
}

impl DaeSolution {
    /// d E[x_species] / d theta at grid point `k`.
    pub fn sensitivity_row(&self, k: usize, species: usize) -> &[f64] {
        &self.sensitivities[k][species]
    }
}

// Affine drift sum_r zeta_r theta_r (x_src or 1) of one reaction group.
struct Drift {
    k: DMatrix<f64>,
    c: DVector<f64>,
    dk: Vec<DMatrix<f64>>,
    dc: Vec<DVector<f64>>,
}

impl Drift {
    fn new(net: &ReactionNetwork, scale: Scale, sources: &[Option<usize>]) -> Self {
        let (n, np) = (net.n_species(), net.n_params());
        let mut d = Drift {
            k: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            dk: vec![DMatrix::zeros(n, n); np],
            dc: vec![DVector::zeros(n); np],
        };
        for (r, rx) in net.reactions.iter().enumerate().filter(|(_, rx)| rx.scale == scale) {
            let p = rx.param_index;
            let theta = net.params.values[p];
            for (i, &z) in rx.stoich.iter().enumerate() {
                let z = z as f64;
                match sources[r] {
                    Some(s) => {
                        d.k[(i, s)] += theta * z;
                        d.dk[p][(i, s)] += z;
                    }
                    None => {
                        d.c[i] += theta * z;
                        d.dc[p][i] += z;
                    }
                }
            }
        }
        d
    }
}

struct SlowSystem {
    np: usize,
    ns: usize,
    t: DMatrix<f64>,
    slow: Drift,
    fast: Drift,
    // pseudo-inverse of [K_f; T]
    pinv: DMatrix<f64>,
}

impl SlowSystem {
    // Fast equilibrium mean given slow coordinates y.
    fn xbar(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.fast.c.len();
        let mut rhs = DVector::zeros(n + self.ns);
        rhs.rows_mut(0, n).copy_from(&(-&self.fast.c));
        rhs.rows_mut(n, self.ns).copy_from(y);
        &self.pinv * rhs
    }

    // d xbar / d theta_p at fixed y.
    fn dxbar(&self, x: &DVector<f64>, p: usize) -> DVector<f64> {
        let n = x.len();
        let mut rhs = DVector::zeros(n + self.ns);
        rhs.rows_mut(0, n).copy_from(&(-(&self.fast.dk[p] * x) - &self.fast.dc[p]));
        &self.pinv * rhs
    }

    fn dxbar_dy(&self) -> DMatrix<f64> {
        let n = self.fast.c.len();
        self.pinv.columns(n, self.ns).into_owned()
    }

    fn full(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let y = z.rows(0, self.ns).into_owned();
        let x = self.xbar(&y);
        let g = self.dxbar_dy();
        let mut dx = DMatrix::zeros(x.len(), self.np);
        for p in 0..self.np {
            let s = z.rows(self.ns * (p + 1), self.ns);
            dx.set_column(p, &(self.dxbar(&x, p) + &g * s));
        }
        (x, dx)
    }
}

impl System<f64, ode_solvers::DVector<f64>> for &SlowSystem {
    fn system(&self, _t: f64, z: &ode_solvers::DVector<f64>, dz: &mut ode_solvers::DVector<f64>) {
        let z = DVector::from_column_slice(z.as_slice());
        let (x, dx) = self.full(&z);
        let ns = self.ns;
        let drift = &self.slow.k * &x + &self.slow.c;
        let dy = &self.t * drift;
        dz.as_mut_slice()[..ns].copy_from_slice(dy.as_slice());
        for p in 0..self.np {
            let ds = &self.t * (&self.slow.dk[p] * &x + &self.slow.dc[p] + &self.slow.k * dx.column(p));
            dz.as_mut_slice()[ns * (p + 1)..ns * (p + 2)].copy_from_slice(ds.as_slice());
        }
    }
}

fn linear_sources(net: &ReactionNetwork) -> Result<Vec<Option<usize>>> {
    net.reactions
        .iter()
        .enumerate()
        .map(|(r, rx)| {
            let order: u32 = rx.orders.iter().sum();
            match order {
                0 => Ok(None),
                1 => Ok(rx.orders.iter().position(|&o| o == 1)),
                _ => Err(Error::NonlinearNetwork(format!("reaction {r} has total order {order}"))),
            }
        })
        .collect()
}

/// Integrates the slow-coordinate mean ODE with fast species held at
/// their conditional equilibrium, together with forward sensitivities.
/// `times` must be nondecreasing and start at or after 0.
pub fn linear_dae_solution(net: &ReactionNetwork, x0: &[i64], times: &[f64]) -> Result<DaeSolution> {
    let sources = linear_sources(net)?;
    if x0.len() != net.n_species() {
        return Err(Error::Domain("initial state has the wrong length".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be nonnegative and sorted".into()));
    }
    let inv = SlowInvariants::new(net);
    let (n, np, ns) = (net.n_species(), net.n_params(), inv.rows().len());
    let t = DMatrix::from_fn(ns, n, |i, j| inv.rows()[i][j] as f64);
    let fast = Drift::new(net, Scale::Fast, &sources);
    let slow = Drift::new(net, Scale::Slow, &sources);
    let mut m = DMatrix::zeros(n + ns, n);
    m.rows_mut(0, n).copy_from(&fast.k);
    m.rows_mut(n, ns).copy_from(&t);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= 1e-12 * smax) {
        return Err(Error::Domain("fast equilibrium is not determined by the slow coordinates".into()));
    }
    let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Domain(e.to_string()))?;
    let sys = SlowSystem { np, ns, t: t.clone(), slow, fast, pinv };

    let x0v = DVector::from_iterator(n, x0.iter().map(|&v| v as f64));
    let mut z = DVector::zeros(ns * (np + 1));
    z.rows_mut(0, ns).copy_from(&(&t * x0v));
    let mut out = DaeSolution { times: times.to_vec(), means: Vec::new(), sensitivities: Vec::new() };
    let mut now = 0.0;
    for &target in times {
        if target > now {
            let y0 = ode_solvers::DVector::from_column_slice(z.as_slice());
            let mut solver = Dopri5::new(&sys, now, target, target - now, y0, DAE_RTOL, DAE_ATOL);
            solver.set_output(OutputType::Sparse);
            solver.integrate().map_err(|e| Error::IntegrationFailure(e.to_string()))?;
            let last = solver.y_out().last().ok_or_else(|| Error::IntegrationFailure("no output".into()))?;
            z = DVector::from_column_slice(last.as_slice());
            now = target;
        }
        let (x, dx) = sys.full(&z);
        out.means.push(x.iter().copied().collect());
        out.sensitivities.push((0..n).map(|i| dx.row(i).iter().copied().collect()).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn adsorption_steady_state() {
        let net = models::adsorption();
        let sol = linear_dae_solution(&net, &[30, 60, 10], &[400.0]).unwrap();
        let phi = 0.4;
        let nb = 100.0 * 2.0 * phi / (2.0 * phi + 1.4);
        assert!((sol.means[0][1] - nb).abs() < 1e-6, "{}", sol.means[0][1]);
        // d/d alpha1 of 100 b1 phi/(b1 phi + b2 + b3), dphi/dalpha1 = a2/(a1+a2)^2
        let dphi = 1.5 / 6.25;
        let dnb = 100.0 * 2.0 * 1.4 / (2.0 * phi + 1.4f64).powi(2) * dphi;
        assert!((sol.sensitivity_row(0, 1)[0] - dnb).abs() < 1e-5, "{}", sol.sensitivity_row(0, 1)[0]);
        let row = sol.sensitivity_row(0, 1);
        assert!((row[3] - row[4]).abs() < 1e-8);
    }

    #[test]
    fn rejects_nonlinear() {
        let net = models::isomerization(0.1);
        let mut bad = net.clone();
        bad.reactions[0].orders = vec![2, 0, 0];
        assert!(matches!(linear_dae_solution(&bad, &[100, 0, 0], &[1.0]), Err(Error::NonlinearNetwork(_))));
    }

    #[test]
    fn sensitivities_match_own_differences() {
        let net = models::adsorption();
        let grid = [1.3, 10.0];
        let base = linear_dae_solution(&net, &[30, 60, 10], &grid).unwrap();
        for p in 0..net.n_params() {
            let h = 1e-4 * net.params.values[p];
            let shifted = |s: f64| {
                let mut v = net.params.values.clone();
                v[p] += s * h;
                linear_dae_solution(&net.with_values(&v).unwrap(), &[30, 60, 10], &grid).unwrap()
            };
            let (hi, lo) = (shifted(1.0), shifted(-1.0));
            for k in 0..grid.len() {
                let fd = (hi.means[k][1] - lo.means[k][1]) / (2.0 * h);
                let an = base.sensitivity_row(k, 1)[p];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "p{p} t{}: {fd} vs {an}", grid[k]);
            }
        }
    }
}
