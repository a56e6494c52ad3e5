//! Reaction network model: species, mass-action reactions split into fast
//! and slow groups, propensities, state-space enumeration, generators and
//! fast-class keys.

mod fast_class;
mod generator;
pub(crate) mod kinetics;
mod lattice;
mod space;

pub use fast_class::{FastClassKey, SlowInvariants};
pub use generator::{build_generator, build_generator_derivative, GeneratorMatrix, ParamConvention, Subset};
pub use kinetics::{Kinetics, Observable};
pub use lattice::{integer_left_null_space, rank};
pub use space::{enumerate_state_space, enumerate_subset, StateSpace, DEFAULT_STATE_CAP};

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer population vector.
pub type State = Vec<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Fast,
    Slow,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Species {
    pub name: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reaction {
    /// Net change of each species when the reaction fires.
    pub stoich: Vec<i64>,
    /// Molecules of each species consumed (mass-action orders).
    pub orders: Vec<u32>,
    pub param_index: usize,
    pub scale: Scale,
}

impl Reaction {
    pub fn new(stoich: Vec<i64>, orders: Vec<u32>, param_index: usize, scale: Scale) -> Self {
        Reaction { stoich, orders, param_index, scale }
    }

    /// Combinatorial factor b(x) = prod x_i!/(x_i - nu_i)!, zero when any x_i < nu_i.
    #[inline]
    pub fn mass_action(&self, x: &[i64]) -> f64 {
        let mut b = 1.0;
        for (i, &nu) in self.orders.iter().enumerate() {
            for k in 0..nu as i64 {
                let n = x[i] - k;
                if n <= 0 {
                    return 0.0;
                }
                b *= n as f64;
            }
        }
        b
    }
}

/// Rate constants. Fast parameters store the rescaled value alpha, so the
/// effective rate used by the full network is alpha / epsilon.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub fast_rescaled: Vec<bool>,
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rate constant seen by the full (stiff) network.
    pub fn effective(&self, i: usize) -> f64 {
        if self.fast_rescaled[i] {
            self.values[i] / self.epsilon
        } else {
            self.values[i]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReactionNetwork {
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
    pub params: ParameterSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeciesEntry {
    name: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionEntry {
    stoich: Vec<i64>,
    orders: Vec<u32>,
    param: String,
    scale: Scale,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    species: Vec<SpeciesEntry>,
    reactions: Vec<ReactionEntry>,
    params: BTreeMap<String, f64>,
    #[serde(default = "unit_epsilon")]
    epsilon: f64,
}

fn unit_epsilon() -> f64 {
    1.0
}

impl ReactionNetwork {
    /// Builds and validates a network. Parameter scales are taken from the
    /// reactions that reference them.
    pub fn new(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        param_names: Vec<String>,
        param_values: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let species: Vec<Species> = species
            .into_iter()
            .enumerate()
            .map(|(index, name)| Species { name, index })
            .collect();
        let n_params = param_values.len();
        if param_names.len() != n_params {
            return Err(Error::InvalidNetwork("parameter names and values differ in length".into()));
        }
        let mut scale_of: Vec<Option<Scale>> = vec![None; n_params];
        for (r, rx) in reactions.iter().enumerate() {
            if rx.param_index >= n_params {
                return Err(Error::InvalidNetwork(format!("reaction {r} references missing parameter")));
            }
            match scale_of[rx.param_index] {
                None => scale_of[rx.param_index] = Some(rx.scale),
                Some(s) if s != rx.scale => {
                    return Err(Error::InvalidNetwork(format!(
                        "parameter '{}' is shared by fast and slow reactions",
                        param_names[rx.param_index]
                    )))
                }
                _ => {}
            }
        }
        let mut fast_rescaled = Vec::with_capacity(n_params);
        for (i, s) in scale_of.iter().enumerate() {
            match s {
                None => {
                    return Err(Error::InvalidNetwork(format!(
                        "parameter '{}' is not used by any reaction",
                        param_names[i]
                    )))
                }
                Some(s) => fast_rescaled.push(*s == Scale::Fast),
            }
        }
        let net = ReactionNetwork {
            species,
            reactions,
            params: ParameterSet { names: param_names, values: param_values, epsilon, fast_rescaled },
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let d = self.species.len();
        if d == 0 {
            return Err(Error::InvalidNetwork("no species".into()));
        }
        if self.reactions.is_empty() {
            return Err(Error::InvalidNetwork("no reactions".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.species {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::InvalidNetwork(format!("duplicate species '{}'", s.name)));
            }
        }
        for (r, rx) in self.reactions.iter().enumerate() {
            if rx.stoich.len() != d || rx.orders.len() != d {
                return Err(Error::InvalidNetwork(format!("reaction {r} has vectors of wrong length")));
            }
            if rx.stoich.iter().all(|&z| z == 0) {
                return Err(Error::InvalidNetwork(format!("reaction {r} has zero net change")));
            }
            if rx.stoich.iter().zip(&rx.orders).any(|(&z, &nu)| z < -(nu as i64)) {
                return Err(Error::InvalidNetwork(format!(
                    "reaction {r} removes more molecules than it consumes"
                )));
            }
        }
        if !(self.params.epsilon > 0.0 && self.params.epsilon <= 1.0) {
            return Err(Error::InvalidNetwork(format!("epsilon {} not in (0, 1]", self.params.epsilon)));
        }
        for (name, &v) in self.params.names.iter().zip(&self.params.values) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidNetwork(format!("parameter '{name}' must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        let species: Vec<String> = file.species.into_iter().map(|s| s.name).collect();
        // parameters are ordered by first use so reports follow reaction order
        let mut names: Vec<String> = Vec::new();
        let mut reactions = Vec::with_capacity(file.reactions.len());
        for entry in file.reactions {
            let idx = match names.iter().position(|n| *n == entry.param) {
                Some(i) => i,
                None => {
                    if !file.params.contains_key(&entry.param) {
                        return Err(Error::InvalidNetwork(format!("unknown parameter '{}'", entry.param)));
                    }
                    names.push(entry.param.clone());
                    names.len() - 1
                }
            };
            reactions.push(Reaction::new(entry.stoich, entry.orders, idx, entry.scale));
        }
        if let Some(unused) = file.params.keys().find(|k| !names.contains(k)) {
            return Err(Error::InvalidNetwork(format!("parameter '{unused}' is not used by any reaction")));
        }
        let values = names.iter().map(|n| file.params[n]).collect();
        ReactionNetwork::new(species, reactions, names, values, file.epsilon)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            species: self.species.iter().map(|s| SpeciesEntry { name: s.name.clone() }).collect(),
            reactions: self
                .reactions
                .iter()
                .map(|r| ReactionEntry {
                    stoich: r.stoich.clone(),
                    orders: r.orders.clone(),
                    param: self.params.names[r.param_index].clone(),
                    scale: r.scale,
                })
                .collect(),
            params: self.params.names.iter().cloned().zip(self.params.values.iter().copied()).collect(),
            epsilon: self.params.epsilon,
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn fast_reactions(&self) -> Vec<usize> {
        (0..self.reactions.len()).filter(|&r| self.reactions[r].scale == Scale::Fast).collect()
    }

    pub fn slow_reactions(&self) -> Vec<usize> {
        (0..self.reactions.len()).filter(|&r| self.reactions[r].scale == Scale::Slow).collect()
    }

    pub fn is_fast_param(&self, i: usize) -> bool {
        self.params.fast_rescaled[i]
    }

    /// Copy with new parameter values (same order as `params.names`).
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_params() {
            return Err(Error::InvalidNetwork("wrong number of parameter values".into()));
        }
        let mut net = self.clone();
        net.params.values = values.to_vec();
        net.validate()?;
        Ok(net)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut net = self.clone();
        net.params.epsilon = epsilon;
        net.validate()?;
        Ok(net)
    }

    pub fn effective_rate(&self, r: usize) -> f64 {
        self.params.effective(self.reactions[r].param_index)
    }

    /// d(effective rate)/d(stored parameter): 1/epsilon for fast reactions.
    pub fn rate_derivative_factor(&self, r: usize) -> f64 {
        match self.reactions[r].scale {
            Scale::Fast => 1.0 / self.params.epsilon,
            Scale::Slow => 1.0,
        }
    }

    /// Propensities of all reactions and their sum.
    pub fn propensities(&self, x: &[i64]) -> (Vec<f64>, f64) {
        let rates: Vec<f64> = (0..self.reactions.len())
            .map(|r| self.effective_rate(r) * self.reactions[r].mass_action(x))
            .collect();
        let total = rates.iter().sum();
        (rates, total)
    }

    /// Matrix of d lambda_r / d theta_i (reactions by parameters). Fast
    /// reactions are differentiated with respect to the rescaled alpha.
    pub fn propensity_derivatives(&self, x: &[i64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.reactions.len(), self.n_params());
        for (r, rx) in self.reactions.iter().enumerate() {
            m[(r, rx.param_index)] = self.rate_derivative_factor(r) * rx.mass_action(x);
        }
        m
    }

    pub fn stoich_rows(&self, subset: Subset) -> Vec<Vec<i64>> {
        self.reactions
            .iter()
            .filter(|r| subset.contains(r.scale))
            .map(|r| r.stoich.clone())
            .collect()
    }

    /// Names of the species, in state order.
    pub fn species_names(&self) -> Vec<String> {
        self.species.iter().map(|s| s.name.clone()).collect()
    }

    /// True when every propensity is at most first order in the state.
    pub fn is_linear(&self) -> bool {
        self.reactions.iter().all(|r| r.orders.iter().sum::<u32>() <= 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    #[test]
    fn adsorption_fast_propensity() {
        let net = models::adsorption();
        let (rates, total) = net.propensities(&[30, 60, 10]);
        assert!((rates[0] - 1000.0).abs() < 1e-9);
        assert!((total - rates.iter().sum::<f64>()).abs() < 1e-12);
        let d = net.propensity_derivatives(&[30, 60, 10]);
        assert!((d[(0, 0)] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn first_order_rate_and_derivative() {
        let net = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![Reaction::new(vec![-1, 1], vec![1, 0], 0, Scale::Slow)],
            vec!["k".into()],
            vec![2.0],
            1.0,
        )
        .unwrap();
        let (rates, _) = net.propensities(&[30, 0]);
        assert_eq!(rates[0], 60.0);
        assert_eq!(net.propensity_derivatives(&[30, 0])[(0, 0)], 30.0);
        assert_eq!(net.propensities(&[0, 5]).0[0], 0.0);
        assert_eq!(net.propensity_derivatives(&[0, 5])[(0, 0)], 0.0);
    }

    #[test]
    fn second_order_falling_factorial() {
        let rx = Reaction::new(vec![-2, 1], vec![2, 0], 0, Scale::Slow);
        assert_eq!(rx.mass_action(&[5, 0]), 20.0);
        assert_eq!(rx.mass_action(&[1, 0]), 0.0);
    }

    #[test]
    fn rejects_mixed_parameter() {
        let err = ReactionNetwork::new(
            vec!["A".into(), "B".into()],
            vec![
                Reaction::new(vec![-1, 1], vec![1, 0], 0, Scale::Fast),
                Reaction::new(vec![1, -1], vec![0, 1], 0, Scale::Slow),
            ],
            vec!["k".into()],
            vec![1.0],
            0.1,
        );
        assert!(matches!(err, Err(Error::InvalidNetwork(_))));
    }

    #[test]
    fn json_round_trip() {
        let net = models::adsorption();
        let back = ReactionNetwork::from_json(&net.to_json()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let text = r#"{"species":[{"name":"A"}],"reactions":[{"stoich":[-1],"orders":[1],"param":"k","scale":"slow"}],"params":{"k":1.0},"epsilon":1.0,"extra":1}"#;
        assert!(ReactionNetwork::from_json(text).is_err());
    }
}
