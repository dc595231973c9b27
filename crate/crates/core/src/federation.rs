//! Client training, server aggregation, communication rounds and the
//! leave-one-domain-out harness.
//!
//! A round broadcasts the global parameters to every client, each client
//! runs one pass of mini-batch updates over its working set (the full local
//! dataset, or a budget-resampled copy of it), and the server averages the
//! returned parameters. With a budget of `S` samples every client performs
//! exactly `S / B` optimizer steps, so no client dominates the average
//! because it happens to hold more data.

use std::borrow::Cow;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{self, DomainDataset};
use crate::error::{FedError, Result};
use crate::losses::{self, smooth_labels, SmoothingCoefficient};
use crate::neural::{self, Mlp, ParamVector};
use crate::optim::{OptimizerConfig, OptimizerState};
use crate::seeds::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Plain `1/K` mean of client parameters.
    Uniform,
    /// FedAvg-style mean weighted by each client's working-set size.
    Weighted,
}

/// Protocol hyperparameters. The number of clients is the length of the
/// client list handed to [`run_round`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub epsilon: SmoothingCoefficient,
    pub smoothing_enabled: bool,
    /// Per-round sample budget; `None` trains on the raw local dataset.
    pub budget: Option<usize>,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub aggregation: Aggregation,
    pub layer_sizes: Vec<usize>,
    pub master_seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 100,
            epsilon: SmoothingCoefficient::default(),
            smoothing_enabled: true,
            budget: Some(30 * 64),
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            aggregation: Aggregation::Uniform,
            layer_sizes: vec![2, 16, 4],
            master_seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(FedError::Config("rounds must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(FedError::Config("batch size must be at least 1".into()));
        }
        if let Some(s) = self.budget {
            if s < self.batch_size {
                return Err(FedError::Config(format!(
                    "budget {s} is smaller than the batch size {}",
                    self.batch_size
                )));
            }
        }
        neural::validate_layer_sizes(&self.layer_sizes)?;
        if self.class_count() < 2 {
            return Err(FedError::Config("the output layer needs at least 2 classes".into()));
        }
        self.optimizer.validate()
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    /// Smoothing coefficient actually applied to targets.
    pub fn effective_epsilon(&self) -> SmoothingCoefficient {
        if self.smoothing_enabled {
            self.epsilon
        } else {
            SmoothingCoefficient::ZERO
        }
    }
}

/// A client and its private local dataset.
#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: usize,
    dataset: DomainDataset,
}

impl ClientState {
    pub fn new(client_id: usize, dataset: DomainDataset) -> Result<Self> {
        if dataset.is_held_out() {
            return Err(FedError::Isolation(format!(
                "held-out domain {} cannot be assigned to client {client_id}",
                dataset.domain_id()
            )));
        }
        Ok(ClientState { client_id, dataset })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn domain_id(&self) -> &str {
        self.dataset.domain_id()
    }

    pub fn dataset_len(&self) -> usize {
        self.dataset.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub params: ParamVector,
    /// Number of completed rounds.
    pub round: usize,
}

impl GlobalModel {
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        Ok(GlobalModel {
            params: Mlp::init(layer_sizes, seed)?.to_params(),
            round: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub client_id: usize,
    pub domain_id: String,
    pub working_set_size: usize,
    pub steps_taken: usize,
    /// Mean training loss over the steps of this round (NaN without steps).
    pub mean_local_loss: f64,
    pub nll_part: f64,
    pub smooth_part: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based index of the round just completed.
    pub round: usize,
    pub clients: Vec<ClientStats>,
    pub global_accuracy: f64,
    /// Parameter payloads sent server -> client.
    pub downloads: usize,
    /// Parameter payloads sent client -> server.
    pub uploads: usize,
}

/// One client's local update for round `round` (0-based), starting from the
/// broadcast global parameters.
pub fn local_train(
    global_params: &ParamVector,
    client: &ClientState,
    cfg: &FedConfig,
    round: usize,
) -> Result<(ParamVector, ClientStats)> {
    let ds = &client.dataset;
    if ds.is_held_out() {
        return Err(FedError::Isolation(format!(
            "held-out domain {} reached local training",
            ds.domain_id()
        )));
    }
    if global_params.layer_sizes() != cfg.layer_sizes.as_slice() {
        return Err(FedError::Shape(format!(
            "global parameters have layout {:?}, config expects {:?}",
            global_params.layer_sizes(),
            cfg.layer_sizes
        )));
    }
    if ds.feature_dim() != cfg.layer_sizes[0] || ds.class_count() != cfg.class_count() {
        return Err(FedError::Shape(format!(
            "domain {} has d_in={} M={}, model expects d_in={} M={}",
            ds.domain_id(),
            ds.feature_dim(),
            ds.class_count(),
            cfg.layer_sizes[0],
            cfg.class_count()
        )));
    }

    let id = client.client_id as u64;
    let t = round as u64;
    let working: Cow<'_, DomainDataset> = match cfg.budget {
        Some(s) => Cow::Owned(domains::budget_resample(
            ds,
            s,
            derive_seed(cfg.master_seed, Purpose::Resample, id, t),
        )?),
        None => Cow::Borrowed(ds),
    };
    let batches = domains::batches(
        &working,
        cfg.batch_size,
        derive_seed(cfg.master_seed, Purpose::Shuffle, id, t),
    )?;

    let eps = cfg.effective_epsilon();
    let m = cfg.class_count();
    let mut params = global_params.clone();
    let mut state = OptimizerState::new(params.len());
    let (mut loss_sum, mut nll_sum, mut smooth_sum, mut seen) = (0.0, 0.0, 0.0, 0usize);

    for batch in &batches {
        let targets = batch
            .labels
            .iter()
            .map(|&y| smooth_labels(y, m, eps))
            .collect::<Result<Vec<_>>>()?;
        let model = Mlp::from_params(&params)?;
        let out = model.loss_and_grads_detailed(&batch.inputs, &targets)?;
        for (p, &y) in out.probs.iter_rows().zip(&batch.labels) {
            let parts = losses::decompose_slice(p, y, eps)?;
            nll_sum += parts.nll;
            smooth_sum += parts.smooth;
        }
        loss_sum += out.loss;
        seen += batch.labels.len();
        state.step(&mut params, &out.grads, &cfg.optimizer)?;
    }

    let steps = batches.len();
    let warning = (steps == 0).then(|| {
        format!(
            "client {} ({}): working set of {} samples is smaller than batch size {}; no steps taken",
            client.client_id,
            ds.domain_id(),
            working.len(),
            cfg.batch_size
        )
    });
    let stats = ClientStats {
        client_id: client.client_id,
        domain_id: ds.domain_id().to_string(),
        working_set_size: working.len(),
        steps_taken: steps,
        mean_local_loss: loss_sum / steps as f64,
        nll_part: nll_sum / seen as f64,
        smooth_part: smooth_sum / seen as f64,
        warning,
    };
    Ok((params, stats))
}

fn check_aggregation_inputs(params_list: &[ParamVector]) -> Result<()> {
    let first = params_list
        .first()
        .ok_or_else(|| FedError::Shape("nothing to aggregate".into()))?;
    for p in &params_list[1..] {
        first.check_same_shape(p)?;
    }
    Ok(())
}

/// `base + sum_i w_i (p_i - base)` with `base = p_0`. For weights summing to
/// one this is the weighted mean, and identical inputs come back bit-exact.
fn weighted_mean(params_list: &[ParamVector], weights: &[f64]) -> ParamVector {
    let base = &params_list[0];
    let mut out = base.clone();
    for (j, o) in out.values_mut().iter_mut().enumerate() {
        let b = base.values()[j];
        let shift: f64 = params_list
            .iter()
            .zip(weights)
            .map(|(p, w)| w * (p.values()[j] - b))
            .sum();
        *o = b + shift;
    }
    out
}

/// Coordinatewise `1/K` mean.
pub fn aggregate_uniform(params_list: &[ParamVector]) -> Result<ParamVector> {
    check_aggregation_inputs(params_list)?;
    let w = 1.0 / params_list.len() as f64;
    Ok(weighted_mean(params_list, &vec![w; params_list.len()]))
}

/// Coordinatewise mean weighted by `sizes[i] / sum(sizes)`.
pub fn aggregate_weighted(params_list: &[ParamVector], sizes: &[usize]) -> Result<ParamVector> {
    check_aggregation_inputs(params_list)?;
    if sizes.len() != params_list.len() {
        return Err(FedError::Shape(format!(
            "{} parameter vectors but {} sizes",
            params_list.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(FedError::Domain("aggregation weights must be positive".into()));
    }
    let total: usize = sizes.iter().sum();
    let weights: Vec<f64> = sizes.iter().map(|&n| n as f64 / total as f64).collect();
    Ok(weighted_mean(params_list, &weights))
}

/// Fraction of samples whose argmax logit matches the label.
pub fn evaluate(params: &ParamVector, dataset: &DomainDataset) -> Result<f64> {
    let model = Mlp::from_params(params)?;
    if dataset.class_count() != model.class_count() {
        return Err(FedError::Shape(format!(
            "dataset has {} classes, model has {}",
            dataset.class_count(),
            model.class_count()
        )));
    }
    let (inputs, labels) = dataset.to_matrix();
    let predictions = model.predict(&inputs)?;
    let correct = predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// The only path parameters take between server and clients; counts every
/// payload in each direction.
#[derive(Debug, Default)]
struct Link {
    downloads: AtomicUsize,
    uploads: AtomicUsize,
}

impl Link {
    fn download(&self, global: &ParamVector) -> ParamVector {
        self.downloads.fetch_add(1, Ordering::Relaxed);
        global.clone()
    }

    fn upload(&self, local: ParamVector) -> ParamVector {
        self.uploads.fetch_add(1, Ordering::Relaxed);
        local
    }
}

/// One communication round. Clients train in parallel; the aggregate is
/// formed in client-list order, so the result does not depend on scheduling.
pub fn run_round(
    global: &GlobalModel,
    clients: &[ClientState],
    cfg: &FedConfig,
    eval_set: &DomainDataset,
) -> Result<(GlobalModel, RoundReport)> {
    if clients.is_empty() {
        return Err(FedError::Config("a round needs at least one client".into()));
    }
    let link = Link::default();
    let results: Vec<(ParamVector, ClientStats)> = clients
        .par_iter()
        .map(|client| {
            let theta = link.download(&global.params);
            let (local, stats) = local_train(&theta, client, cfg, global.round).map_err(|e| FedError::Client {
                client_id: client.client_id,
                source: Box::new(e),
            })?;
            Ok((link.upload(local), stats))
        })
        .collect::<Result<_>>()?;

    let (locals, stats): (Vec<ParamVector>, Vec<ClientStats>) = results.into_iter().unzip();
    let params = match cfg.aggregation {
        Aggregation::Uniform => aggregate_uniform(&locals)?,
        Aggregation::Weighted => {
            let sizes: Vec<usize> = stats.iter().map(|s| s.working_set_size).collect();
            aggregate_weighted(&locals, &sizes)?
        }
    };
    let global_accuracy = evaluate(&params, eval_set)?;
    let next = GlobalModel {
        params,
        round: global.round + 1,
    };
    let report = RoundReport {
        round: next.round,
        clients: stats,
        global_accuracy,
        downloads: link.downloads.into_inner(),
        uploads: link.uploads.into_inner(),
    };
    Ok((next, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutResult {
    pub domain_id: String,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub rounds: Vec<RoundReport>,
    pub final_params: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub held_out: Vec<HeldOutResult>,
    /// Mean of the final-round held-out accuracies.
    pub mean_final: f64,
    pub mean_best: f64,
}

impl ExperimentResult {
    pub fn final_accuracies(&self) -> Vec<f64> {
        self.held_out.iter().map(|h| h.final_accuracy).collect()
    }

    /// Warnings raised by clients in any round.
    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.held_out
            .iter()
            .flat_map(|h| &h.rounds)
            .flat_map(|r| &r.clients)
            .filter_map(|c| c.warning.as_deref())
    }
}

/// Leave-one-domain-out: each domain in turn is the unseen target, and the
/// remaining domains form the federation (one domain per client; the client
/// id is the domain's index in `task`).
pub fn run_experiment(task: &[DomainDataset], cfg: &FedConfig) -> Result<ExperimentResult> {
    if task.len() < 2 {
        return Err(FedError::Config(format!(
            "leave-one-domain-out needs at least 2 domains, got {}",
            task.len()
        )));
    }
    cfg.validate()?;
    let held_out = (0..task.len())
        .into_par_iter()
        .map(|h| run_held_out(task, h, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = held_out.len() as f64;
    let mean_final = held_out.iter().map(|h| h.final_accuracy).sum::<f64>() / n;
    let mean_best = held_out.iter().map(|h| h.best_accuracy).sum::<f64>() / n;
    Ok(ExperimentResult {
        held_out,
        mean_final,
        mean_best,
    })
}

fn run_held_out(task: &[DomainDataset], target_idx: usize, cfg: &FedConfig) -> Result<HeldOutResult> {
    let target = task[target_idx].clone().into_held_out();
    let clients = task
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(i, d)| ClientState::new(i, d.clone()))
        .collect::<Result<Vec<_>>>()?;

    let init_seed = derive_seed(cfg.master_seed, Purpose::ModelInit, target_idx as u64, 0);
    let mut global = GlobalModel::init(&cfg.layer_sizes, init_seed)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (next, report) = run_round(&global, &clients, cfg, &target)?;
        global = next;
        rounds.push(report);
    }
    let final_accuracy = rounds.last().map_or(0.0, |r| r.global_accuracy);
    let best_accuracy = rounds.iter().map(|r| r.global_accuracy).fold(f64::NEG_INFINITY, f64::max);
    Ok(HeldOutResult {
        domain_id: target.domain_id().to_string(),
        final_accuracy,
        best_accuracy,
        rounds,
        final_params: global.params,
    })
}
