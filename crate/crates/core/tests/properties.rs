mod common;

use std::collections::HashMap;

use common::*;
use fedsb_core::domains::{batch_indices, budget_indices};
use fedsb_core::neural::{param_count, vec_to_params};
use fedsb_core::*;
use proptest::prelude::*;

fn layouts() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=8, 1..=3).prop_flat_map(|hidden| {
        (1usize..=8, 2usize..=8).prop_map(move |(d_in, m)| {
            let mut v = vec![d_in];
            v.extend(&hidden);
            v.push(m);
            v
        })
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 1..10), 1..5)) {
        let width = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
        let p = softmax(&Matrix::from_rows(&rows).unwrap());
        for row in p.iter_rows() {
            prop_assert!(row.iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip_bit_exact(sizes in layouts(), seed in any::<u64>()) {
        let model = Mlp::init(&sizes, seed).unwrap();
        let v = model.to_params();
        prop_assert_eq!(v.len(), param_count(&sizes));
        let back = vec_to_params(v.values(), &sizes).unwrap();
        prop_assert_eq!(&back, &model);
        let again = back.to_params();
        prop_assert!(again.values().iter().zip(v.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn aggregation_is_translation_equivariant(
        a in prop::collection::vec(-10f64..10.0, 6),
        b in prop::collection::vec(-10f64..10.0, 6),
        c in -10f64..10.0,
    ) {
        let pv = |v: Vec<f64>| ParamVector::new(v, vec![1, 3]).unwrap();
        let base = aggregate_uniform(&[pv(a.clone()), pv(b.clone())]).unwrap();
        let shifted = aggregate_uniform(&[
            pv(a.iter().map(|x| x + c).collect()),
            pv(b.iter().map(|x| x + c).collect()),
        ]).unwrap();
        for (s, m) in shifted.values().iter().zip(base.values()) {
            prop_assert!((s - (m + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_step_is_linear(
        p in prop::collection::vec(-5f64..5.0, 2),
        g in prop::collection::vec(-5f64..5.0, 2),
        eta in 1e-4f64..1.0,
    ) {
        let pv = |v: Vec<f64>| ParamVector::new(v, vec![1, 1]).unwrap();
        let cfg = OptimizerConfig::sgd(eta);
        let mut params = pv(p.clone());
        OptimizerState::new(2).step(&mut params, &pv(g.clone()), &cfg).unwrap();
        for j in 0..2 {
            prop_assert_eq!(params.values()[j], p[j] - eta * g[j]);
        }
    }

    #[test]
    fn adam_first_step_ignores_large_gradient_scale(g in prop::collection::vec(1f64..100.0, 2), sign in any::<bool>()) {
        let g: Vec<f64> = g.into_iter().map(|x| if sign { x } else { -x }).collect();
        let pv = |v: Vec<f64>| ParamVector::new(v, vec![1, 1]).unwrap();
        let cfg = OptimizerConfig::default();
        let mut a = pv(vec![0.0, 0.0]);
        OptimizerState::new(2).step(&mut a, &pv(g.clone()), &cfg).unwrap();
        let mut b = pv(vec![0.0, 0.0]);
        OptimizerState::new(2).step(&mut b, &pv(g.iter().map(|x| 10.0 * x).collect()), &cfg).unwrap();
        for j in 0..2 {
            prop_assert!((a.values()[j] - b.values()[j]).abs() < 1e-6);
            prop_assert!(a.values()[j].is_finite());
        }
    }

    #[test]
    fn oversampling_multiplicities_bounded(len in 1usize..120, budget in 1usize..400, seed in any::<u64>()) {
        let idx = budget_indices(len, budget, seed).unwrap();
        prop_assert_eq!(idx.len(), budget);
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for i in idx {
            *counts.entry(i).or_default() += 1;
        }
        for i in 0..len {
            let c = counts.get(&i).copied().unwrap_or(0);
            prop_assert!(c >= budget / len && c <= budget.div_ceil(len));
        }
    }

    #[test]
    fn batches_partition(len in 0usize..500, b in 1usize..80, seed in any::<u64>()) {
        let parts = batch_indices(len, b, seed).unwrap();
        prop_assert_eq!(parts.len(), len / b);
        prop_assert!(parts.iter().all(|p| p.len() == b));
        let mut flat: Vec<usize> = parts.concat();
        flat.sort_unstable();
        flat.dedup();
        prop_assert_eq!(flat.len(), (len / b) * b);
    }

    #[test]
    fn decomposition_matches_direct_form(seed in any::<u64>(), m in 2usize..12, eps in 0f64..=1.0) {
        let mut rng = fedsb_core::seeds::rng(seed);
        let p = random_simplex(&mut rng, m);
        let y = (seed as usize) % m;
        let e = SmoothingCoefficient::new(eps).unwrap();
        let dist = ClassDistribution::new(p).unwrap();
        let total = decompose_loss(&dist, y, e).unwrap().total;
        let direct = smoothed_cross_entropy(&dist, &smooth_labels(y, m, e).unwrap()).unwrap();
        prop_assert!(rel_err(total, direct, 1e-300) < 1e-9);
    }
}
