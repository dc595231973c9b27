//! Label smoothing and the smoothed cross-entropy loss.
//!
//! A hard label `y` over `M` classes is replaced by the soft target
//! `y'_c = 1 - eps + eps/M` for `c == y` and `eps/M` otherwise. The
//! cross-entropy against that target splits exactly into a weighted sum of
//! the negative log-likelihood of the true class and the mean negative
//! log-probability over all classes (the "smooth" term).

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// Probabilities are clamped to this floor before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `sum(probs) == 1` accepted by [`ClassDistribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Smoothing coefficient `eps` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SmoothingCoefficient(f64);

impl SmoothingCoefficient {
    pub const ZERO: SmoothingCoefficient = SmoothingCoefficient(0.0);

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(FedError::Domain(format!(
                "smoothing coefficient must lie in [0, 1], got {epsilon}"
            )));
        }
        Ok(SmoothingCoefficient(epsilon))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for SmoothingCoefficient {
    fn default() -> Self {
        SmoothingCoefficient(0.1)
    }
}

/// A probability vector over `M` classes.
///
/// Used both for (smoothed) targets and for model output probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Validates non-negativity and normalization (within [`SUM_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FedError::Shape("class distribution is empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(FedError::Domain(format!(
                "class probabilities must be finite and non-negative, found {bad}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE * probs.len().max(1) as f64 {
            return Err(FedError::Domain(format!(
                "class probabilities must sum to 1, got {sum}"
            )));
        }
        Ok(ClassDistribution { probs })
    }

    /// Builds a distribution without validation. Callers guarantee the
    /// invariants (softmax rows, smoothed labels).
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        ClassDistribution { probs }
    }

    pub fn one_hot(label: usize, class_count: usize) -> Result<Self> {
        smooth_labels(label, class_count, SmoothingCoefficient::ZERO)
    }

    pub fn uniform(class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(FedError::Domain("class count must be positive".into()));
        }
        Ok(ClassDistribution {
            probs: vec![1.0 / class_count as f64; class_count],
        })
    }

    pub fn class_count(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

impl AsRef<[f64]> for ClassDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

/// The soft target for label `y`.
pub fn smooth_labels(
    y: usize,
    class_count: usize,
    eps: SmoothingCoefficient,
) -> Result<ClassDistribution> {
    if class_count < 2 {
        return Err(FedError::Domain(format!(
            "label smoothing needs at least 2 classes, got {class_count}"
        )));
    }
    if y >= class_count {
        return Err(FedError::Domain(format!(
            "label {y} out of range for {class_count} classes"
        )));
    }
    let eps = eps.value();
    let off = eps / class_count as f64;
    let mut probs = vec![off; class_count];
    probs[y] = 1.0 - eps + off;
    Ok(ClassDistribution::from_raw(probs))
}

/// `-sum_c y'_c log p_c`, with `p_c` clamped below at [`PROB_FLOOR`].
pub fn smoothed_cross_entropy(p: &ClassDistribution, y_smooth: &ClassDistribution) -> Result<f64> {
    cross_entropy(p.as_slice(), y_smooth.as_slice())
}

pub(crate) fn cross_entropy(p: &[f64], target: &[f64]) -> Result<f64> {
    if p.len() != target.len() {
        return Err(FedError::Shape(format!(
            "prediction has {} classes, target has {}",
            p.len(),
            target.len()
        )));
    }
    let loss = -p
        .iter()
        .zip(target)
        .map(|(&pc, &yc)| yc * clamped_ln(pc))
        .sum::<f64>();
    Ok(loss.max(0.0))
}

#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// The two terms of the smoothed loss and their `eps`-weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    /// `-log p_y`
    pub nll: f64,
    /// `-(1/M) sum_c log p_c`
    pub smooth: f64,
    /// `(1 - eps) * nll + eps * smooth`
    pub total: f64,
}

pub fn decompose_loss(p: &ClassDistribution, y: usize, eps: SmoothingCoefficient) -> Result<LossParts> {
    decompose_slice(p.as_slice(), y, eps)
}

pub(crate) fn decompose_slice(p: &[f64], y: usize, eps: SmoothingCoefficient) -> Result<LossParts> {
    let m = p.len();
    if m < 2 {
        return Err(FedError::Domain(format!(
            "loss decomposition needs at least 2 classes, got {m}"
        )));
    }
    if y >= m {
        return Err(FedError::Domain(format!("label {y} out of range for {m} classes")));
    }
    let nll = -clamped_ln(p[y]);
    let smooth = -p.iter().map(|&pc| clamped_ln(pc)).sum::<f64>() / m as f64;
    let e = eps.value();
    let total = (1.0 - e) * nll + e * smooth;
    Ok(LossParts { nll, smooth, total })
}
