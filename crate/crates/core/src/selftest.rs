//! Fast invariant checks runnable from the command line.

use std::collections::HashMap;

use rand::Rng;

use crate::domains::{self, generate_domain, SyntheticTaskSpec};
use crate::error::Result;
use crate::federation::{aggregate_uniform, aggregate_weighted, local_train, ClientState, FedConfig, GlobalModel};
use crate::losses::{decompose_loss, smooth_labels, smoothed_cross_entropy, ClassDistribution, SmoothingCoefficient};
use crate::neural::{Matrix, Mlp, ParamVector};
use crate::seeds;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("label smoothing sums to one", smoothing_sums()),
        check("smoothed CE equals NLL/smooth decomposition", decomposition()),
        check("analytic gradients match finite differences", gradients()),
        check("budget equalizes client steps", budget_balance()),
        check("aggregation matches brute-force means", aggregation()),
        check("resampler multiplicities", resampler()),
    ]
}

fn smoothing_sums() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for m in 2..=64 {
        for k in 0..=100 {
            let eps = SmoothingCoefficient::new(k as f64 / 100.0)?;
            for y in 0..m {
                let d = smooth_labels(y, m, eps)?;
                worst = worst.max((d.as_slice().iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    Ok((worst < 1e-12, format!("max |sum - 1| = {worst:.3e}")))
}

fn random_distribution(rng: &mut impl Rng, m: usize) -> ClassDistribution {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(1e-3..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    ClassDistribution::new(raw.into_iter().map(|v| v / sum).collect()).expect("normalized")
}

fn decomposition() -> Result<(bool, String)> {
    let mut rng = seeds::rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(2..=10);
        let p = random_distribution(&mut rng, m);
        let y = rng.random_range(0..m);
        let eps = SmoothingCoefficient::new(rng.random_range(0.0..=1.0))?;
        let direct = smoothed_cross_entropy(&p, &smooth_labels(y, m, eps)?)?;
        let split = decompose_loss(&p, y, eps)?.total;
        worst = worst.max((direct - split).abs() / direct.abs().max(f64::MIN_POSITIVE));
    }
    Ok((worst < 1e-9, format!("max relative difference = {worst:.3e}")))
}

fn gradients() -> Result<(bool, String)> {
    let mut rng = seeds::rng(2);
    let mut worst: f64 = 0.0;
    for trial in 0..20u64 {
        let sizes = [rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(2..=4)];
        let model = Mlp::init(&sizes, trial)?;
        let n = rng.random_range(1..=4);
        let data: Vec<f64> = (0..n * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = Matrix::from_vec(n, sizes[0], data)?;
        let targets: Vec<ClassDistribution> = (0..n).map(|_| random_distribution(&mut rng, sizes[2])).collect();
        let (_, grads) = model.loss_and_grads(&batch, &targets)?;
        let base = model.to_params();
        let h = 1e-5;
        for j in 0..base.len() {
            let mut plus = base.values().to_vec();
            plus[j] += h;
            let mut minus = base.values().to_vec();
            minus[j] -= h;
            let lp = Mlp::from_slice(&plus, &sizes)?.loss_and_grads(&batch, &targets)?.0;
            let lm = Mlp::from_slice(&minus, &sizes)?.loss_and_grads(&batch, &targets)?.0;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.values()[j];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }
    Ok((worst < 1e-4, format!("max relative error = {worst:.3e}")))
}

fn budget_balance() -> Result<(bool, String)> {
    let spec = SyntheticTaskSpec::default();
    let mut steps_on = Vec::new();
    let mut steps_off = Vec::new();
    for (i, &n) in spec.domain_sizes.iter().enumerate() {
        let client = ClientState::new(i, generate_domain(&spec, format!("c{i}"), 0.0, n, i as u64)?)?;
        for (budget, out) in [(Some(1920), &mut steps_on), (None, &mut steps_off)] {
            let cfg = FedConfig {
                budget,
                ..FedConfig::default()
            };
            let g = GlobalModel::init(&cfg.layer_sizes, 0)?;
            out.push(local_train(&g.params, &client, &cfg, 0)?.1.steps_taken);
        }
    }
    let ok = steps_on == [30; 4] && steps_off == [4, 8, 16, 64];
    Ok((ok, format!("budget on {steps_on:?}, off {steps_off:?}")))
}

fn aggregation() -> Result<(bool, String)> {
    let mut rng = seeds::rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let layout = vec![2, 3];
        let list: Vec<ParamVector> = (0..k)
            .map(|_| ParamVector::new((0..9).map(|_| rng.random_range(-1.0..1.0)).collect(), layout.clone()))
            .collect::<Result<_>>()?;
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..500)).collect();
        let total: usize = sizes.iter().sum();
        let uni = aggregate_uniform(&list)?;
        let wei = aggregate_weighted(&list, &sizes)?;
        for j in 0..9 {
            let mean = list.iter().map(|p| p.values()[j]).sum::<f64>() / k as f64;
            let wmean = list
                .iter()
                .zip(&sizes)
                .map(|(p, &n)| p.values()[j] * n as f64 / total as f64)
                .sum::<f64>();
            worst = worst.max((uni.values()[j] - mean).abs()).max((wei.values()[j] - wmean).abs());
        }
    }
    Ok((worst <= 1e-15, format!("max abs deviation = {worst:.3e}")))
}

fn resampler() -> Result<(bool, String)> {
    for len in 1..=50usize {
        for budget in 1..=50usize {
            let idx = domains::budget_indices(len, budget, (len * 100 + budget) as u64)?;
            if idx.len() != budget {
                return Ok((false, format!("|D|={len} S={budget}: got {} samples", idx.len())));
            }
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for i in idx {
                *counts.entry(i).or_default() += 1;
            }
            let lo = budget / len;
            let hi = budget.div_ceil(len);
            let bad = (0..len).any(|i| {
                let c = counts.get(&i).copied().unwrap_or(0);
                c < lo || c > hi
            });
            if bad {
                return Ok((false, format!("|D|={len} S={budget}: multiplicity outside [{lo}, {hi}]")));
            }
        }
    }
    Ok((true, "all 2500 (|D|, S) pairs in bounds".into()))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
