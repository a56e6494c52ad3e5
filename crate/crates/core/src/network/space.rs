use std::collections::{HashMap, VecDeque};

use super::{ReactionNetwork, State, Subset};

pub const DEFAULT_STATE_CAP: usize = 2_000_000;

#[derive(Clone, Debug)]
pub struct StateSpace {
    pub states: Vec<State>,
    index_of: HashMap<State, usize>,
    pub truncated: bool,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        self.index_of.get(x).copied()
    }

    /// Values of `f` on every state, in state order.
    pub fn map<F: Fn(&[i64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.states.iter().map(|x| f(x)).collect()
    }

    pub fn from_states(states: Vec<State>) -> Self {
        let index_of = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        StateSpace { states, index_of, truncated: false }
    }
}

/// Breadth-first closure of `initial` under every enabled reaction.
pub fn enumerate_state_space(net: &ReactionNetwork, initial: &[i64], cap: usize) -> StateSpace {
    enumerate_subset(net, initial, cap, Subset::All)
}

/// Breadth-first closure under the reactions of one subset only.
pub fn enumerate_subset(net: &ReactionNetwork, initial: &[i64], cap: usize, subset: Subset) -> StateSpace {
    let cap = cap.max(1);
    let mut states = vec![initial.to_vec()];
    let mut index_of = HashMap::new();
    index_of.insert(initial.to_vec(), 0);
    let mut queue = VecDeque::from([0usize]);
    let mut truncated = false;
    while let Some(i) = queue.pop_front() {
        for rx in net.reactions.iter().filter(|r| subset.contains(r.scale)) {
            if rx.mass_action(&states[i]) == 0.0 {
                continue;
            }
            let y: State = states[i].iter().zip(&rx.stoich).map(|(a, b)| a + b).collect();
            if index_of.contains_key(&y) {
                continue;
            }
            if states.len() >= cap {
                truncated = true;
                continue;
            }
            index_of.insert(y.clone(), states.len());
            queue.push_back(states.len());
            states.push(y);
        }
    }
    StateSpace { states, index_of, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn isomerization_space_size() {
        let net = models::isomerization(0.01);
        let space = enumerate_state_space(&net, &[100, 0, 0], DEFAULT_STATE_CAP);
        assert_eq!(space.len(), 5151);
        assert!(!space.truncated);
        assert_eq!(space.index_of(&[100, 0, 0]), Some(0));
    }

    #[test]
    fn adsorption_space_size() {
        let net = models::adsorption();
        let space = enumerate_state_space(&net, &[30, 60, 10], DEFAULT_STATE_CAP);
        assert_eq!(space.len(), 5151);
    }

    #[test]
    fn no_enabled_reactions() {
        let net = models::isomerization(0.01);
        let space = enumerate_state_space(&net, &[0, 0, 7], 10);
        assert_eq!(space.len(), 1);
        assert!(!space.truncated);
    }

    #[test]
    fn cap_sets_flag() {
        let net = models::isomerization(0.01);
        let space = enumerate_state_space(&net, &[100, 0, 0], 50);
        assert_eq!(space.len(), 50);
        assert!(space.truncated);
    }

    #[test]
    fn fast_class_members() {
        let net = models::adsorption();
        let class = enumerate_subset(&net, &[30, 60, 10], 1000, Subset::FastOnly);
        assert_eq!(class.len(), 41);
    }
}
