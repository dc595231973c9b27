mod common;

use common::*;
use fedsb_core::domains::{batches, generate_domain, rotate};
use fedsb_core::federation::{local_train, run_experiment, run_round, ClientState, GlobalModel};
use fedsb_core::neural::{params_to_vec, vec_to_params};
use fedsb_core::seeds::{derive_seed, rng, Purpose};
use fedsb_core::*;
use rand::Rng;

#[test]
fn forward_matches_straight_line_recomputation() {
    let mut r = rng(10);
    for trial in 0..50 {
        let sizes = vec![r.random_range(1..=5), r.random_range(1..=7), r.random_range(1..=7), r.random_range(2..=5)];
        let model = Mlp::init(&sizes, trial).unwrap();
        let params = model.to_params();
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..sizes[0]).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let logits = model.forward(&Matrix::from_rows(&xs).unwrap()).unwrap();
        for (row, x) in logits.iter_rows().zip(&xs) {
            let expected = naive_logits(params.values(), &sizes, x);
            for (a, b) in row.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn forward_is_pure() {
    let model = Mlp::init(&[3, 8, 4], 1).unwrap();
    let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5]]).unwrap();
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn softmax_matches_high_precision_reference() {
    // [1000, 0]: p0 = 1/(1+e^-1000), p1 = e^-1000/(1+e^-1000) ~ 5.08e-435 (underflows).
    // [3, 1]: p0 = 1/(1+e^-2) = 0.8807970779778823...
    let s = softmax(&Matrix::from_rows(&[[1000.0, 0.0], [3.0, 1.0], [-1000.0, -1000.0]]).unwrap());
    assert_eq!(s.row(0), &[1.0, 0.0]);
    assert!((s.row(1)[0] - 0.880_797_077_977_882_3).abs() < 1e-15);
    assert!((s.row(1)[1] - 0.119_202_922_022_117_57).abs() < 1e-15);
    assert_eq!(s.row(2), &[0.5, 0.5]);
}

#[test]
fn averaging_vectors_equals_averaging_weights() {
    let a = Mlp::init(&[2, 5, 3], 1).unwrap();
    let b = Mlp::init(&[2, 5, 3], 2).unwrap();
    let mean = aggregate_uniform(&[params_to_vec(&a), params_to_vec(&b)]).unwrap();
    let avg_model = vec_to_params(mean.values(), &[2, 5, 3]).unwrap();
    let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
    // elementwise oracle over the flat layout
    let (va, vb) = (a.to_params(), b.to_params());
    for (j, m) in avg_model.to_params().values().iter().enumerate() {
        let expected = (va.values()[j] + vb.values()[j]) / 2.0;
        assert!((m - expected).abs() < 1e-15);
    }
    assert!(avg_model.forward(&x).is_ok());
}

#[test]
fn inverse_rotation_recovers_base_domain() {
    let spec = SyntheticTaskSpec {
        noise_sigma: 0.0,
        ..SyntheticTaskSpec::default()
    };
    let base = generate_domain(&spec, "base", 0.0, 40, 1).unwrap();
    for angle in [25.0, 50.0, 75.0, 180.0] {
        let d = generate_domain(&spec, "rot", angle, 40, 9).unwrap();
        for (s, b) in d.samples().iter().zip(base.samples()) {
            let back = rotate([s.features[0], s.features[1]], -angle);
            assert_eq!(s.label, b.label);
            assert!((back[0] - b.features[0]).abs() < 1e-12);
            assert!((back[1] - b.features[1]).abs() < 1e-12);
        }
    }
}

#[test]
fn task_generation_is_deterministic() {
    let spec = SyntheticTaskSpec::default();
    let a = generate_task(&spec, 77).unwrap();
    let b = generate_task(&spec, 77).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_task(&spec, 78).unwrap());
}

#[test]
fn single_sgd_step_matches_hand_oracle() {
    // One linear layer, 2 inputs -> 2 classes, one batch of two samples.
    let samples = vec![
        Sample {
            features: vec![1.0, 0.5],
            label: 0,
        },
        Sample {
            features: vec![-0.5, 2.0],
            label: 1,
        },
    ];
    let ds = DomainDataset::new("hand", 2, samples.clone()).unwrap();
    let theta = ParamVector::new(vec![0.2, -0.1, 0.3, 0.4, 0.05, -0.05], vec![2, 2]).unwrap();
    let cfg = FedConfig {
        rounds: 1,
        epsilon: SmoothingCoefficient::new(0.2).unwrap(),
        smoothing_enabled: true,
        budget: None,
        batch_size: 2,
        optimizer: OptimizerConfig::sgd(0.5),
        layer_sizes: vec![2, 2],
        master_seed: 3,
        ..FedConfig::default()
    };
    let client = ClientState::new(0, ds).unwrap();
    let (out, stats) = local_train(&theta, &client, &cfg, 0).unwrap();
    assert_eq!(stats.steps_taken, 1);

    // dL/dz = (p - y')/n; dW[o][i] = sum_s dz[s][o] x[s][i]; db[o] = sum_s dz[s][o]
    let w = [[0.2, -0.1], [0.3, 0.4]];
    let b = [0.05, -0.05];
    let mut gw = [[0.0; 2]; 2];
    let mut gb = [0.0; 2];
    for s in &samples {
        let z: Vec<f64> = (0..2).map(|o| b[o] + w[o][0] * s.features[0] + w[o][1] * s.features[1]).collect();
        let p = naive_softmax(&z);
        for o in 0..2 {
            let target = if o == s.label { 1.0 - 0.2 + 0.1 } else { 0.1 };
            let dz = (p[o] - target) / 2.0;
            gb[o] += dz;
            for i in 0..2 {
                gw[o][i] += dz * s.features[i];
            }
        }
    }
    let expected = [
        w[0][0] - 0.5 * gw[0][0],
        w[0][1] - 0.5 * gw[0][1],
        w[1][0] - 0.5 * gw[1][0],
        w[1][1] - 0.5 * gw[1][1],
        b[0] - 0.5 * gb[0],
        b[1] - 0.5 * gb[1],
    ];
    for (a, e) in out.values().iter().zip(expected) {
        assert!((a - e).abs() < 1e-15, "{a} vs {e}");
    }
}

fn default_clients(seed: u64) -> (Vec<ClientState>, DomainDataset) {
    let task = generate_task(&SyntheticTaskSpec::default(), seed).unwrap();
    let target = task[0].clone().into_held_out();
    let clients = task[1..]
        .iter()
        .enumerate()
        .map(|(i, d)| ClientState::new(i + 1, d.clone()).unwrap())
        .collect();
    (clients, target)
}

#[test]
fn round_is_independent_of_thread_count() {
    let (clients, target) = default_clients(4);
    let cfg = FedConfig::default();
    let g = GlobalModel::init(&cfg.layer_sizes, 1).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| run_round(&g, &clients, &cfg, &target).unwrap());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let parallel = pool.install(|| run_round(&g, &clients, &cfg, &target).unwrap());
    assert_eq!(serial, parallel);
    // reordering clients changes only the order of the report
    let mut reversed = clients.clone();
    reversed.reverse();
    let (g_rev, _) = run_round(&g, &reversed, &cfg, &target).unwrap();
    for (a, b) in g_rev.params.values().iter().zip(serial.0.params.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn budget_on_makes_weighted_and_uniform_coincide() {
    let (clients, target) = default_clients(5);
    let uniform = FedConfig::default();
    let weighted = FedConfig {
        aggregation: Aggregation::Weighted,
        ..uniform.clone()
    };
    let g = GlobalModel::init(&uniform.layer_sizes, 0).unwrap();
    let (a, _) = run_round(&g, &clients, &uniform, &target).unwrap();
    let (b, _) = run_round(&g, &clients, &weighted, &target).unwrap();
    assert_eq!(a, b);
}

#[test]
fn weighted_without_budget_differs_from_uniform() {
    let (clients, target) = default_clients(5);
    let uniform = FedConfig {
        budget: None,
        ..FedConfig::default()
    };
    let weighted = FedConfig {
        aggregation: Aggregation::Weighted,
        ..uniform.clone()
    };
    let g = GlobalModel::init(&uniform.layer_sizes, 0).unwrap();
    let (a, _) = run_round(&g, &clients, &uniform, &target).unwrap();
    let (b, _) = run_round(&g, &clients, &weighted, &target).unwrap();
    assert_ne!(a, b);
}

#[test]
fn steps_equal_across_clients_only_with_budget() {
    let (clients, target) = default_clients(6);
    let g = GlobalModel::init(&[2, 16, 4], 0).unwrap();
    let on = run_round(&g, &clients, &FedConfig::default(), &target).unwrap().1;
    let steps: Vec<usize> = on.clients.iter().map(|c| c.steps_taken).collect();
    assert!(steps.windows(2).all(|w| w[0] == w[1]));
    let off_cfg = FedConfig {
        budget: None,
        ..FedConfig::default()
    };
    let off = run_round(&g, &clients, &off_cfg, &target).unwrap().1;
    let steps: Vec<usize> = off.clients.iter().map(|c| c.steps_taken).collect();
    assert_eq!(steps, vec![8, 16, 64]);
}

#[test]
fn perfectly_separable_task_reaches_full_accuracy() {
    let spec = SyntheticTaskSpec {
        noise_sigma: 0.0,
        domain_angles: vec![0.0, 0.0],
        domain_sizes: vec![64, 64],
        ..SyntheticTaskSpec::default()
    };
    let task = generate_task(&spec, 0).unwrap();
    let cfg = FedConfig {
        rounds: 1,
        budget: None,
        batch_size: 16,
        optimizer: OptimizerConfig::adam(0.05),
        ..FedConfig::default()
    };
    let client = ClientState::new(0, task[0].clone()).unwrap();
    let mut g = GlobalModel::init(&cfg.layer_sizes, 3).unwrap();
    for _ in 0..200 {
        let (next, _) = run_round(&g, std::slice::from_ref(&client), &cfg, &task[0]).unwrap();
        g = next;
        if evaluate(&g.params, &task[0]).unwrap() == 1.0 {
            break;
        }
    }
    assert_eq!(evaluate(&g.params, &task[0]).unwrap(), 1.0);
    assert_eq!(evaluate(&g.params, &task[1].clone().into_held_out()).unwrap(), 1.0);
}

#[test]
fn experiment_harness_shape_and_determinism() {
    let spec = SyntheticTaskSpec::default().scaled(4);
    let task = generate_task(&spec, 2).unwrap();
    let cfg = FedConfig {
        rounds: 3,
        batch_size: 16,
        budget: Some(160),
        ..FedConfig::default()
    };
    let a = run_experiment(&task, &cfg).unwrap();
    assert_eq!(a.held_out.len(), 4);
    assert_eq!(a.final_accuracies().len(), 4);
    let mean = a.final_accuracies().iter().sum::<f64>() / 4.0;
    assert_eq!(a.mean_final, mean);
    for h in &a.held_out {
        assert_eq!(h.rounds.len(), 3);
        assert!(h.best_accuracy >= h.final_accuracy);
    }
    let b = run_experiment(&task, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_shift_held_out_matches_in_federation_accuracy() {
    let spec = SyntheticTaskSpec {
        domain_angles: vec![0.0; 4],
        ..SyntheticTaskSpec::default()
    };
    let cfg = FedConfig {
        rounds: 30,
        ..FedConfig::default()
    };
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let task = generate_task(&spec, seed).unwrap();
        let cfg = FedConfig {
            master_seed: seed,
            ..cfg.clone()
        };
        let result = run_experiment(&task, &cfg).unwrap();
        // fresh validation draw from the (shared) training distribution
        let val = generate_domain(&spec, "val", 0.0, 2000, derive_seed(seed, Purpose::Domain, 99, 0)).unwrap();
        for h in &result.held_out {
            let in_fed = evaluate(&h.final_params, &val).unwrap();
            gaps.push(h.final_accuracy - in_fed);
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean_gap.abs() <= 0.03, "mean gap {mean_gap}");
}

#[test]
fn batches_follow_shuffle_seed() {
    let ds = generate_domain(&SyntheticTaskSpec::default(), "x", 0.0, 128, 0).unwrap();
    let a = batches(&ds, 32, 1).unwrap();
    let b = batches(&ds, 32, 1).unwrap();
    let c = batches(&ds, 32, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
