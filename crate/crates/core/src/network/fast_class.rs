use std::fmt;

use super::lattice::{dot, integer_left_null_space, rank};
use super::{ReactionNetwork, Scale};
use crate::error::{Error, Result};

/// Slow invariants y_s = T_s x identifying the fast class of a state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FastClassKey(pub Vec<i64>);

impl fmt::Display for FastClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Integer rows T_s spanning the left null space of the fast stoichiometry.
///
/// Rows are chosen in order of preference: single species untouched by fast
/// reactions, then conservation laws of the whole network, then whatever
/// integer null vectors remain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlowInvariants {
    rows: Vec<Vec<i64>>,
}

impl SlowInvariants {
    pub fn new(net: &ReactionNetwork) -> Self {
        let d = net.n_species();
        let fast: Vec<Vec<i64>> = net
            .reactions
            .iter()
            .filter(|r| r.scale == Scale::Fast)
            .map(|r| r.stoich.clone())
            .collect();
        let nullity = d - if fast.is_empty() { 0 } else { rank(&fast) };

        let mut candidates: Vec<Vec<i64>> = Vec::new();
        for i in 0..d {
            if fast.iter().all(|z| z[i] == 0) {
                let mut e = vec![0; d];
                e[i] = 1;
                candidates.push(e);
            }
        }
        let all: Vec<Vec<i64>> = net.reactions.iter().map(|r| r.stoich.clone()).collect();
        candidates.extend(integer_left_null_space(&all, d));
        candidates.extend(integer_left_null_space(&fast, d));

        let mut rows: Vec<Vec<i64>> = Vec::new();
        for c in candidates {
            if rows.len() == nullity {
                break;
            }
            if fast.iter().any(|z| dot(&c, z) != 0) {
                continue;
            }
            rows.push(c);
            if rank(&rows) < rows.len() {
                rows.pop();
            }
        }
        debug_assert_eq!(rows.len(), nullity);
        SlowInvariants { rows }
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    /// Fast reactions connect the whole compatibility class: every key is empty.
    pub fn is_degenerate(&self) -> bool {
        self.rows.is_empty()
    }

    /// Errors with `NoSlowInvariants` for the degenerate case.
    pub fn require_nondegenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::NoSlowInvariants)
        } else {
            Ok(())
        }
    }

    pub fn key(&self, x: &[i64]) -> FastClassKey {
        FastClassKey(self.rows.iter().map(|r| dot(r, x)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn adsorption_key() {
        let net = models::adsorption();
        let inv = SlowInvariants::new(&net);
        assert_eq!(inv.rows(), &[vec![0, 1, 0], vec![1, 1, 1]]);
        assert_eq!(inv.key(&[30, 60, 10]), FastClassKey(vec![60, 100]));
        assert_eq!(inv.key(&[29, 60, 11]).to_string(), "60;100");
    }

    #[test]
    fn isomerization_key() {
        let net = models::isomerization(0.1);
        let inv = SlowInvariants::new(&net);
        assert_eq!(inv.rows(), &[vec![0, 0, 1], vec![1, 1, 1]]);
    }

    #[test]
    fn all_fast_is_degenerate() {
        let net = models::two_state_chain(1.0, 1.5, 0.1);
        let inv = SlowInvariants::new(&net);
        // the single conservation law survives
        assert_eq!(inv.rows(), &[vec![1, 1]]);
        let net = ReactionNetwork::new(
            vec!["A".into()],
            vec![
                super::super::Reaction::new(vec![1], vec![0], 0, Scale::Fast),
                super::super::Reaction::new(vec![-1], vec![1], 1, Scale::Fast),
            ],
            vec!["a".into(), "b".into()],
            vec![1.0, 1.0],
            0.5,
        )
        .unwrap();
        let inv = SlowInvariants::new(&net);
        assert!(inv.is_degenerate());
        assert!(matches!(inv.require_nondegenerate(), Err(Error::NoSlowInvariants)));
        assert_eq!(inv.key(&[4]), FastClassKey(vec![]));
    }
}
