use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_generator, enumerate_subset, GeneratorMatrix, ReactionNetwork, StateSpace, Subset};

/// Largest block handed to the dense eigensolver.
pub const EIGEN_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralGap {
    /// Half the distance from zero to the nonzero spectrum; infinite for a
    /// single-state class.
    pub kappa_tilde: f64,
    pub dim: usize,
}

impl SpectralGap {
    /// eps * ln(1/eps) / kappa, the boundary-layer time scale.
    pub fn relaxation_time(&self, epsilon: f64) -> f64 {
        epsilon * (1.0 / epsilon).ln() / self.kappa_tilde
    }
}

/// kappa = -max Re(nu)/2 over the nonzero eigenvalues of an irreducible
/// fast-class generator.
pub fn spectral_gap(q: &GeneratorMatrix) -> Result<SpectralGap> {
    let dim = q.dim();
    if dim > EIGEN_CAP {
        return Err(Error::DimensionCap { dim, cap: EIGEN_CAP });
    }
    if dim <= 1 {
        return Ok(SpectralGap { kappa_tilde: f64::INFINITY, dim });
    }
    let mut re: Vec<f64> = q.to_dense().complex_eigenvalues().iter().map(|z| z.re).collect();
    // the zero eigenvalue is the one with the largest real part
    re.sort_by(|a, b| b.total_cmp(a));
    Ok(SpectralGap { kappa_tilde: -0.5 * re[1], dim })
}

/// Fast-only state space and generator of the class containing `x`.
pub fn fast_class_generator(net: &ReactionNetwork, x: &[i64]) -> Result<(StateSpace, GeneratorMatrix)> {
    let space = enumerate_subset(net, x, EIGEN_CAP + 1, Subset::FastOnly);
    if space.truncated {
        return Err(Error::DimensionCap { dim: space.len(), cap: EIGEN_CAP });
    }
    let q = build_generator(net, &space, Subset::FastOnly)?;
    Ok((space, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn two_state_gap() {
        let net = models::two_state_chain(1.0, 1.5, 0.1);
        let (_, q) = fast_class_generator(&net, &[1, 0]).unwrap();
        let g = spectral_gap(&q).unwrap();
        assert!((g.kappa_tilde - 1.25).abs() < 1e-12);
        assert!((g.relaxation_time(0.1) - 0.1 * 10f64.ln() / 1.25).abs() < 1e-12);
    }

    #[test]
    fn adsorption_class_gap() {
        let (space, q) = fast_class_generator(&models::adsorption(), &[30, 60, 10]).unwrap();
        assert_eq!(space.len(), 41);
        let g = spectral_gap(&q).unwrap();
        assert!((g.kappa_tilde - 1.25).abs() < 1e-8, "{}", g.kappa_tilde);
    }

    #[test]
    fn cap_is_enforced() {
        let n = EIGEN_CAP + 1;
        let q = GeneratorMatrix::from_off_diagonal(n, (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect());
        assert!(matches!(spectral_gap(&q), Err(Error::DimensionCap { .. })));
    }
}
