//! Exact reference computations on enumerated state spaces.

mod banded;
mod cme;
mod dae;
mod spectral;
mod stationary;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use banded::{banded_gth, rcm_order, symmetric_pattern, BandedLu};
pub use cme::{cme_transient, cme_transient_tol, expectation, CME_RTOL};
pub use dae::{linear_dae_solution, DaeSolution, DAE_RTOL};
pub use spectral::{fast_class_generator, spectral_gap, SpectralGap, EIGEN_CAP};
pub use stationary::{
    communicating_classes, finite_difference_sensitivity, pseudo_inverse_sensitivity, rescaling_identity_check,
    sensitivity_with_route, stationary, steady_state_sensitivities, SensitivityMatrix, SensitivityRoute, SolveMethod,
    StationarySolution, DENSE_SENSITIVITY_CAP,
};

use crate::error::{Error, Result};
use crate::network::{enumerate_state_space, Observable, ReactionNetwork};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSensitivity {
    /// L1 norm of d pi / d theta.
    pub dpi_norm: f64,
    #[serde(rename = "dEf")]
    pub def: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleReport {
    pub pi: Vec<f64>,
    pub residual: f64,
    pub sensitivities: BTreeMap<String, ParamSensitivity>,
    /// Spectral gap of the fast class holding the initial state; null
    /// without fast reactions or above the eigensolver cap.
    pub kappa_tilde: Option<f64>,
}

/// Stationary distribution, steady-state sensitivities of E[obs] and the
/// spectral gap of the initial fast class.
pub fn oracle_report(
    net: &ReactionNetwork,
    x0: &[i64],
    obs: &Observable,
    state_cap: usize,
    route: SensitivityRoute,
) -> Result<OracleReport> {
    let space = enumerate_state_space(net, x0, state_cap);
    if space.truncated {
        return Err(Error::DimensionCap { dim: space.len(), cap: state_cap });
    }
    let (sol, sens) = steady_state_sensitivities(net, &space, obs, route)?;
    let sensitivities = net
        .params
        .names
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let dpi_norm = sens.dpi[p].iter().map(|v| v.abs()).sum();
            (name.clone(), ParamSensitivity { dpi_norm, def: sens.dexpectation[p] })
        })
        .collect();
    let kappa_tilde = if net.fast_reactions().is_empty() {
        None
    } else {
        match fast_class_generator(net, x0).and_then(|(_, q)| spectral_gap(&q)) {
            Ok(g) => Some(g.kappa_tilde),
            Err(Error::DimensionCap { dim, cap }) => {
                log::warn!("fast class has {dim} states (cap {cap}); kappa_tilde not computed");
                None
            }
            Err(e) => return Err(e),
        }
    };
    Ok(OracleReport { pi: sol.pi, residual: sol.residual, sensitivities, kappa_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn report_round_trips() {
        let net = models::two_state_chain(1.0, 1.5, 1.0);
        let r = oracle_report(&net, &[1, 0], &Observable::Species(0), 100, SensitivityRoute::Auto).unwrap();
        assert!((r.pi[0] - 0.6).abs() < 1e-14);
        assert!((r.sensitivities["c"].def + 0.24).abs() < 1e-12);
        assert!((r.kappa_tilde.unwrap() - 1.25).abs() < 1e-12);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"dEf\""));
        let back: OracleReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
