//! Test-only oracles. Nothing here calls into the model or loss code; they
//! read the flat parameter layout (per layer: weights `out x in` row-major,
//! then biases) and recompute everything in straight-line form.

#![allow(dead_code)]

use rand::Rng;

/// Logits for one input vector.
pub fn naive_logits(values: &[f64], layer_sizes: &[usize], x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    let mut offset = 0;
    let layers = layer_sizes.len() - 1;
    for l in 0..layers {
        let (n_in, n_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let w = &values[offset..offset + n_in * n_out];
        let b = &values[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = b[o];
            for i in 0..n_in {
                z += w[o * n_in + i] * act[i];
            }
            next[o] = if l + 1 < layers { z.tanh() } else { z };
        }
        act = next;
    }
    act
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Mean over the batch of `-sum_c t_c log p_c`.
pub fn naive_loss(values: &[f64], layer_sizes: &[usize], xs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (x, t) in xs.iter().zip(targets) {
        let p = naive_softmax(&naive_logits(values, layer_sizes, x));
        total -= p.iter().zip(t).map(|(pc, tc)| tc * pc.max(1e-12).ln()).sum::<f64>();
    }
    total / xs.len() as f64
}

/// Central differences of [`naive_loss`] with step `h`.
pub fn fd_gradient(values: &[f64], layer_sizes: &[usize], xs: &[Vec<f64>], targets: &[Vec<f64>], h: f64) -> Vec<f64> {
    (0..values.len())
        .map(|j| {
            let mut plus = values.to_vec();
            plus[j] += h;
            let mut minus = values.to_vec();
            minus[j] -= h;
            (naive_loss(&plus, layer_sizes, xs, targets) - naive_loss(&minus, layer_sizes, xs, targets)) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero entries from
/// dominating through pure round-off.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_simplex(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(1e-3..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}
