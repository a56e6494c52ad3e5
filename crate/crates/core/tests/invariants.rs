use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use stiffnet::compare::loglog_slope;
use stiffnet::likelihood::{clr, lr};
use stiffnet::models;
use stiffnet::network::{
    build_generator, enumerate_state_space, enumerate_subset, GeneratorMatrix, Reaction, ReactionNetwork, Scale,
    SlowInvariants, Subset,
};
use stiffnet::oracle::{rcm_order, sensitivity_with_route, stationary, symmetric_pattern, BandedLu, SensitivityRoute};
use stiffnet::rng::RngStream;
use stiffnet::ssa::select_reaction;
use stiffnet::twoscale::rescale_fast;

fn birth_death(birth: &[f64], death: &[f64]) -> GeneratorMatrix {
    let mut t = Vec::new();
    for (i, (&b, &d)) in birth.iter().zip(death).enumerate() {
        t.push((i, i + 1, b));
        t.push((i + 1, i, d));
    }
    GeneratorMatrix::from_off_diagonal(birth.len() + 1, t)
}

/// Conversions X_i <-> X_j are fast for the listed pairs, every other
/// neighbouring pair converts slowly.
fn conversion_network(n: usize, fast_pairs: &[(usize, usize)]) -> ReactionNetwork {
    let mut reactions = Vec::new();
    let mut names = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = if fast_pairs.contains(&(i, j)) { Scale::Fast } else { Scale::Slow };
            for (from, to) in [(i, j), (j, i)] {
                let mut stoich = vec![0; n];
                stoich[from] = -1;
                stoich[to] = 1;
                let mut orders = vec![0; n];
                orders[from] = 1;
                names.push(format!("k{from}{to}"));
                reactions.push(Reaction::new(stoich, orders, names.len() - 1, scale));
            }
        }
    }
    let values = vec![1.0; names.len()];
    let species = (0..n).map(|i| format!("X{i}")).collect();
    ReactionNetwork::new(species, reactions, names, values, 0.1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn generator_rows_sum_to_zero(k1 in 0.1f64..5.0, k2 in 0.1f64..5.0, k3 in 0.1f64..5.0, eps in 0.01f64..1.0, n in 1i64..30) {
        let net = models::isomerization(eps).with_values(&[k1, k2, k3]).unwrap();
        let space = enumerate_state_space(&net, &[n, 0, 0], 10_000);
        let q = build_generator(&net, &space, Subset::All).unwrap();
        prop_assert!(q.row_sum_residual() <= 1e-14);
        for i in 0..q.dim() {
            prop_assert!(q.row(i).all(|(j, v)| j == i || v >= 0.0));
        }
    }

    #[test]
    fn birth_death_stationary_matches_product_form(rates in prop::collection::vec((0.05f64..20.0, 0.05f64..20.0), 1..60)) {
        let (birth, death): (Vec<f64>, Vec<f64>) = rates.into_iter().unzip();
        let sol = stationary(&birth_death(&birth, &death)).unwrap();
        let mut w = vec![1.0];
        for i in 0..birth.len() {
            w.push(w[i] * birth[i] / death[i]);
        }
        let z: f64 = w.iter().sum();
        for (p, wi) in sol.pi.iter().zip(&w) {
            // relative accuracy must hold even deep in low-probability valleys
            prop_assert!((p - wi / z).abs() <= 1e-11 * wi / z);
        }
        prop_assert!((sol.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sensitivity_routes_agree(
        rates in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0), 2..25),
        pert in prop::collection::vec(0.0f64..1.0, 2..25),
    ) {
        let (birth, death): (Vec<f64>, Vec<f64>) = rates.into_iter().unzip();
        let q = birth_death(&birth, &death);
        let pi = stationary(&q).unwrap().pi;
        let dq = vec![birth_death(&pert.iter().cycle().take(birth.len()).copied().collect::<Vec<_>>(), &vec![0.0; birth.len()])];
        let f: Vec<f64> = (0..q.dim()).map(|i| i as f64).collect();
        let a = sensitivity_with_route(&q, &dq, &pi, &f, None, SensitivityRoute::Svd).unwrap();
        let b = sensitivity_with_route(&q, &dq, &pi, &f, None, SensitivityRoute::Sparse).unwrap();
        let scale = a.dexpectation[0].abs().max(1.0);
        prop_assert!((a.dexpectation[0] - b.dexpectation[0]).abs() <= 1e-8 * scale);
        prop_assert!(b.dpi[0].iter().sum::<f64>().abs() <= 1e-10);
    }

    #[test]
    fn banded_lu_matches_dense_solve(
        n in 2usize..40,
        offsets in prop::collection::vec((0usize..40, 0usize..40, -1.0f64..1.0), 0..80),
        rhs_seed in 0u64..1000,
    ) {
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in offsets {
            if i % n != j % n {
                *entries.entry((i % n, j % n)).or_default() += v;
            }
        }
        let mut row_abs = vec![0.0; n];
        for (&(i, _), v) in &entries {
            row_abs[i] += v.abs();
        }
        for (i, r) in row_abs.iter().enumerate() {
            entries.insert((i, i), r + 1.0);
        }
        let triplets: Vec<(usize, usize, f64)> = entries.iter().map(|(&(i, j), &v)| (i, j, v)).collect();
        let perm = rcm_order(&symmetric_pattern(n, triplets.iter().map(|t| (t.0, t.1))));
        let lu = BandedLu::factor(n, &triplets, &perm).unwrap();
        let mut rng = RngStream::new(rhs_seed, 0);
        let b: Vec<f64> = (0..n).map(|_| rng.uniform() - 0.5).collect();
        let x = lu.solve(&b);
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for &(i, j, v) in &triplets {
            dense[(i, j)] = v;
        }
        let reference = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            prop_assert!((x[i] - reference[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn fast_class_keys_match_fast_reachability(
        n in 2usize..5,
        mask in prop::collection::vec(any::<bool>(), 6),
        x0 in prop::collection::vec(0i64..5, 4),
    ) {
        let mut pairs = Vec::new();
        let mut idx = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if mask[idx % mask.len()] {
                    pairs.push((i, j));
                }
                idx += 1;
            }
        }
        prop_assume!(!pairs.is_empty() && pairs.len() < n * (n - 1) / 2);
        let net = conversion_network(n, &pairs);
        let space = enumerate_state_space(&net, &x0[..n], 10_000);
        let inv = SlowInvariants::new(&net);
        let mut by_key: BTreeMap<_, BTreeSet<Vec<i64>>> = BTreeMap::new();
        for x in &space.states {
            by_key.entry(inv.key(x)).or_default().insert(x.clone());
        }
        let by_key: BTreeSet<_> = by_key.into_values().collect();
        let by_bfs: BTreeSet<BTreeSet<Vec<i64>>> = space
            .states
            .iter()
            .map(|x| enumerate_subset(&net, x, usize::MAX, Subset::FastOnly).states.into_iter().collect())
            .collect();
        prop_assert_eq!(by_key, by_bfs);
    }

    #[test]
    fn selected_reaction_brackets_the_target(rates in prop::collection::vec(0.0f64..3.0, 1..12), u in 0.0f64..1.0) {
        let total: f64 = rates.iter().sum();
        prop_assume!(total > 0.0);
        let k = select_reaction(&rates, total, u);
        prop_assert!(rates[k] > 0.0);
        let before: f64 = rates[..k].iter().sum();
        prop_assert!(before <= u * total && u * total < before + rates[k]);
    }

    #[test]
    fn centered_estimator_ignores_shifts(
        rows in prop::collection::vec((-5.0f64..5.0, -2.0f64..2.0, -2.0f64..2.0), 2..50),
        shift in -100.0f64..100.0,
    ) {
        let f: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let w: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1, r.2]).collect();
        let shifted: Vec<f64> = f.iter().map(|v| v + shift).collect();
        let a = clr(&f, &w).unwrap();
        let b = clr(&shifted, &w).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + shift.abs()));
        }
        let doubled: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        let (l1, l2) = (lr(&f, &w).unwrap(), lr(&doubled, &w).unwrap());
        for (x, y) in l1.iter().zip(&l2) {
            prop_assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn rescaling_touches_only_fast_entries(v in prop::collection::vec(-10.0f64..10.0, 3), eps in 0.001f64..1.0) {
        let net = models::isomerization(eps);
        let out = rescale_fast(&v, &net);
        prop_assert_eq!(out[0], v[0] * eps);
        prop_assert_eq!(out[1], v[1] * eps);
        prop_assert_eq!(out[2], v[2]);
    }

    #[test]
    fn network_json_round_trip(k in prop::collection::vec(0.01f64..10.0, 5), eps in 0.001f64..1.0) {
        let net = models::adsorption().with_values(&k).unwrap().with_epsilon(eps).unwrap();
        let back = ReactionNetwork::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn power_laws_have_their_exponent(c in 0.1f64..10.0, p in -3.0f64..3.0) {
        let x = [0.2, 0.05, 0.01, 0.003];
        let y: Vec<f64> = x.iter().map(|v: &f64| c * v.powf(p)).collect();
        prop_assert!((loglog_slope(&x, &y).unwrap() - p).abs() <= 1e-9);
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let draw = |seed, id| {
        let mut r = RngStream::new(seed, id);
        (0..8).map(|_| r.uniform()).collect::<Vec<_>>()
    };
    assert_eq!(draw(3, 7), draw(3, 7));
    assert_ne!(draw(3, 7), draw(3, 8));
    assert_ne!(draw(3, 7), draw(4, 7));
}
