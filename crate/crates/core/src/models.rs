//! Bundled example networks.

use crate::network::{Reaction, ReactionNetwork, Scale};

pub const ISOMERIZATION_JSON: &str = include_str!("../models/isomerization.json");
pub const ADSORPTION_JSON: &str = include_str!("../models/adsorption.json");

/// Initial state (A, B, C) used with the isomerization network.
pub const ISOMERIZATION_X0: [i64; 3] = [100, 0, 0];
/// Initial state (A, B, *) used with the adsorption network.
pub const ADSORPTION_X0: [i64; 3] = [30, 60, 10];

/// A <-> B fast, B -> C slow, rates (1, 1.5, 2).
pub fn isomerization(epsilon: f64) -> ReactionNetwork {
    ReactionNetwork::from_json(ISOMERIZATION_JSON)
        .and_then(|n| n.with_epsilon(epsilon))
        .expect("bundled model is valid")
}

/// Surface adsorption/desorption (fast) with slow conversion, epsilon = 0.01.
pub fn adsorption() -> ReactionNetwork {
    ReactionNetwork::from_json(ADSORPTION_JSON).expect("bundled model is valid")
}

/// One site that flips between empty (S) and occupied (A): S -> A at rate
/// c, A -> S at rate d, both fast. Start from (1, 0).
pub fn two_state_chain(c: f64, d: f64, epsilon: f64) -> ReactionNetwork {
    ReactionNetwork::new(
        vec!["S".into(), "A".into()],
        vec![
            Reaction::new(vec![-1, 1], vec![1, 0], 0, Scale::Fast),
            Reaction::new(vec![1, -1], vec![0, 1], 1, Scale::Fast),
        ],
        vec!["c".into(), "d".into()],
        vec![c, d],
        epsilon,
    )
    .expect("valid two-state chain")
}
