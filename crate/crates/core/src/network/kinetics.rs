use super::{ReactionNetwork, Scale, Subset};

/// Flattened mass-action kinetics of a subset of reactions, laid out for
/// tight simulation loops.
#[derive(Clone, Debug)]
pub struct Kinetics {
    n_species: usize,
    n_params: usize,
    source: Vec<usize>,
    rate: Vec<f64>,
    dfactor: Vec<f64>,
    param: Vec<usize>,
    react_ptr: Vec<usize>,
    react: Vec<(usize, u32)>,
    change_ptr: Vec<usize>,
    change: Vec<(usize, i64)>,
    form: Vec<Form>,
}

/// Common reactant patterns, evaluated without walking the reactant list.
#[derive(Clone, Copy, Debug)]
enum Form {
    Zero,
    One(usize),
    Two(usize, usize),
    Dimer(usize),
    General,
}

impl Kinetics {
    /// `All` uses effective rates (alpha/epsilon for fast reactions) and
    /// derivatives with respect to the rescaled alpha. `FastOnly` uses the
    /// rescaled alpha directly, without the 1/epsilon factor.
    pub fn new(net: &ReactionNetwork, subset: Subset) -> Self {
        let mut k = Kinetics {
            n_species: net.n_species(),
            n_params: net.n_params(),
            source: Vec::new(),
            rate: Vec::new(),
            dfactor: Vec::new(),
            param: Vec::new(),
            react_ptr: vec![0],
            react: Vec::new(),
            change_ptr: vec![0],
            change: Vec::new(),
            form: Vec::new(),
        };
        for (r, rx) in net.reactions.iter().enumerate() {
            if !subset.contains(rx.scale) {
                continue;
            }
            let value = net.params.values[rx.param_index];
            let (rate, dfactor) = match (subset, rx.scale) {
                (Subset::All, Scale::Fast) => (value / net.epsilon(), 1.0 / net.epsilon()),
                _ => (value, 1.0),
            };
            k.source.push(r);
            k.rate.push(rate);
            k.dfactor.push(dfactor);
            k.param.push(rx.param_index);
            for (i, &nu) in rx.orders.iter().enumerate() {
                if nu > 0 {
                    k.react.push((i, nu));
                }
            }
            let start = *k.react_ptr.last().unwrap();
            k.form.push(match &k.react[start..] {
                [] => Form::Zero,
                [(i, 1)] => Form::One(*i),
                [(i, 2)] => Form::Dimer(*i),
                [(i, 1), (j, 1)] => Form::Two(*i, *j),
                _ => Form::General,
            });
            k.react_ptr.push(k.react.len());
            for (i, &z) in rx.stoich.iter().enumerate() {
                if z != 0 {
                    k.change.push((i, z));
                }
            }
            k.change_ptr.push(k.change.len());
        }
        k
    }

    pub fn len(&self) -> usize {
        self.rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rate.is_empty()
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Index of the k-th local reaction in the parent network.
    pub fn source(&self, k: usize) -> usize {
        self.source[k]
    }

    pub fn param(&self, k: usize) -> usize {
        self.param[k]
    }

    pub fn rate(&self, k: usize) -> f64 {
        self.rate[k]
    }

    /// d lambda_k / d theta_param(k) divided by b_k(x).
    pub fn dfactor(&self, k: usize) -> f64 {
        self.dfactor[k]
    }

    #[inline]
    pub fn mass_action(&self, k: usize, x: &[i64]) -> f64 {
        match self.form[k] {
            Form::Zero => 1.0,
            Form::One(i) => x[i].max(0) as f64,
            Form::Two(i, j) => (x[i].max(0) * x[j].max(0)) as f64,
            Form::Dimer(i) => if x[i] > 1 { (x[i] * (x[i] - 1)) as f64 } else { 0.0 },
            Form::General => self.general_mass_action(k, x),
        }
    }

    fn general_mass_action(&self, k: usize, x: &[i64]) -> f64 {
        let mut b = 1.0;
        for &(i, nu) in &self.react[self.react_ptr[k]..self.react_ptr[k + 1]] {
            let xi = x[i];
            if nu == 1 {
                if xi <= 0 {
                    return 0.0;
                }
                b *= xi as f64;
            } else {
                for j in 0..nu as i64 {
                    let n = xi - j;
                    if n <= 0 {
                        return 0.0;
                    }
                    b *= n as f64;
                }
            }
        }
        b
    }

    /// Fills mass-action factors and propensities, returns their sum.
    #[inline]
    pub fn fill(&self, x: &[i64], b: &mut [f64], lambda: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.rate.len() {
            let bk = self.mass_action(k, x);
            b[k] = bk;
            let l = self.rate[k] * bk;
            lambda[k] = l;
            total += l;
        }
        total
    }

    #[inline]
    pub fn apply(&self, k: usize, x: &mut [i64]) {
        for &(i, z) in &self.change[self.change_ptr[k]..self.change_ptr[k + 1]] {
            x[i] += z;
        }
    }

    pub fn changes(&self, k: usize) -> &[(usize, i64)] {
        &self.change[self.change_ptr[k]..self.change_ptr[k + 1]]
    }

    pub fn reactants(&self, k: usize) -> &[(usize, u32)] {
        &self.react[self.react_ptr[k]..self.react_ptr[k + 1]]
    }

    /// Whether any reaction in the subset changes species `i`.
    pub fn changes_species(&self, i: usize) -> bool {
        self.change.iter().any(|&(s, _)| s == i)
    }

    /// Parameters that appear in at least one reaction of the subset.
    pub fn param_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params];
        for &p in &self.param {
            mask[p] = true;
        }
        mask
    }
}

/// Scalar function of the state whose expectation is studied.
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// Copy number of one species.
    Species(usize),
    /// Propensity of a network reaction at its full-network rate.
    Propensity(usize),
    /// Linear combination of copy numbers.
    Linear(Vec<f64>),
}

impl Observable {
    pub fn eval(&self, net: &ReactionNetwork, x: &[i64]) -> f64 {
        match self {
            Observable::Species(i) => x[*i] as f64,
            Observable::Propensity(r) => net.effective_rate(*r) * net.reactions[*r].mass_action(x),
            Observable::Linear(c) => c.iter().zip(x).map(|(c, &x)| c * x as f64).sum(),
        }
    }

    /// Explicit parameter gradient of the observable at `x`.
    pub fn param_gradient(&self, net: &ReactionNetwork, x: &[i64]) -> Vec<f64> {
        let mut g = vec![0.0; net.n_params()];
        if let Observable::Propensity(r) = self {
            let rx = &net.reactions[*r];
            g[rx.param_index] = net.rate_derivative_factor(*r) * rx.mass_action(x);
        }
        g
    }

    pub fn depends_on_params(&self) -> bool {
        matches!(self, Observable::Propensity(_))
    }

    /// True when no reaction of `kin` can change the observable's value.
    pub fn is_invariant(&self, net: &ReactionNetwork, kin: &Kinetics) -> bool {
        match self {
            Observable::Species(i) => !kin.changes_species(*i),
            Observable::Propensity(r) => net.reactions[*r]
                .orders
                .iter()
                .enumerate()
                .all(|(i, &nu)| nu == 0 || !kin.changes_species(i)),
            Observable::Linear(c) => (0..kin.len())
                .all(|k| kin.changes(k).iter().map(|&(i, z)| c[i] * z as f64).sum::<f64>() == 0.0),
        }
    }

    pub fn label(&self, net: &ReactionNetwork) -> String {
        match self {
            Observable::Species(i) => net.species[*i].name.clone(),
            Observable::Propensity(r) => format!("lambda[{}]", r),
            Observable::Linear(c) => {
                let terms: Vec<String> = c
                    .iter()
                    .zip(&net.species)
                    .filter(|(c, _)| **c != 0.0)
                    .map(|(c, s)| format!("{}*{}", c, s.name))
                    .collect();
                terms.join("+")
            }
        }
    }

    pub(crate) fn compile(&self, net: &ReactionNetwork) -> CompiledObservable {
        match self {
            Observable::Species(i) => CompiledObservable::Species(*i),
            Observable::Propensity(r) => CompiledObservable::MassAction {
                coef: net.effective_rate(*r),
                reactants: net.reactions[*r]
                    .orders
                    .iter()
                    .enumerate()
                    .filter(|(_, &nu)| nu > 0)
                    .map(|(i, &nu)| (i, nu))
                    .collect(),
            },
            Observable::Linear(c) => CompiledObservable::Linear(
                c.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, &v)| (i, v)).collect(),
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum CompiledObservable {
    Species(usize),
    Linear(Vec<(usize, f64)>),
    MassAction { coef: f64, reactants: Vec<(usize, u32)> },
}

impl CompiledObservable {
    #[inline]
    pub fn eval(&self, x: &[i64]) -> f64 {
        match self {
            CompiledObservable::Species(i) => x[*i] as f64,
            CompiledObservable::Linear(c) => c.iter().map(|&(i, v)| v * x[i] as f64).sum(),
            CompiledObservable::MassAction { coef, reactants } => {
                let mut b = *coef;
                for &(i, nu) in reactants {
                    for j in 0..nu as i64 {
                        let n = x[i] - j;
                        if n <= 0 {
                            return 0.0;
                        }
                        b *= n as f64;
                    }
                }
                b
            }
        }
    }
}
