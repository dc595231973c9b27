//! Local parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::neural::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to the denominator of the Adam update.
    pub stability_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            eta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            stability_eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(eta: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            eta,
            ..OptimizerConfig::default()
        }
    }

    pub fn adam(eta: f64) -> Self {
        OptimizerConfig {
            eta,
            ..OptimizerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(FedError::Config(format!(
                "learning rate must be positive, got {}",
                self.eta
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(FedError::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.stability_eps.is_finite() && self.stability_eps >= 0.0) {
            return Err(FedError::Config(format!(
                "stability epsilon must be non-negative, got {}",
                self.stability_eps
            )));
        }
        Ok(())
    }
}

/// Step counter and (for Adam) zero-initialized moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(param_len: usize) -> Self {
        OptimizerState {
            step: 0,
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
        }
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector, cfg: &OptimizerConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(FedError::Shape(format!(
                "optimizer step over {} parameters with {} gradients and {} state entries",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step += 1;
        let eta = cfg.eta;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                    *p -= eta * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - cfg.beta1.powi(t);
                let bc2 = 1.0 - cfg.beta2.powi(t);
                let state = self.first_moment.iter_mut().zip(self.second_moment.iter_mut());
                for ((p, g), (m, v)) in params.values_mut().iter_mut().zip(grads.values()).zip(state) {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= eta * m_hat / (v_hat.sqrt() + cfg.stability_eps);
                }
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and state.
pub fn step(
    state: OptimizerState,
    params: ParamVector,
    grads: &ParamVector,
    cfg: &OptimizerConfig,
) -> Result<(ParamVector, OptimizerState)> {
    let (mut state, mut params) = (state, params);
    state.step(&mut params, grads, cfg)?;
    Ok((params, state))
}
