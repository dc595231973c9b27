//! Federated domain generalization on synthetic multi-domain tasks.
//!
//! Clients train a small MLP on label-smoothed targets over a fixed
//! per-round sample budget, the server averages their parameters, and a
//! leave-one-domain-out harness measures accuracy on the unseen domain.
//!
//! - [`neural`]: matrices, the MLP, softmax and analytic gradients
//! - [`losses`]: label smoothing and the smoothed cross-entropy
//! - [`optim`]: SGD and Adam updates
//! - [`domains`]: synthetic rotated-cluster domains, budget resampling, batching
//! - [`federation`]: local training, aggregation, rounds, held-out evaluation
//! - [`config`] and [`experiment`]: run files, ablation/sensitivity grids, metrics output

pub mod config;
pub mod domains;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod losses;
pub mod neural;
pub mod optim;
pub mod seeds;
pub mod selftest;

pub use config::{parse_config, AblationCell, BudgetSpec, RunConfig};
pub use domains::{
    batches, budget_resample, generate_domain, generate_task, Batch, DomainDataset, Sample,
    SyntheticTaskSpec,
};
pub use error::{FedError, Result};
pub use federation::{
    aggregate_uniform, aggregate_weighted, evaluate, local_train, run_experiment, run_round,
    Aggregation, ClientState, ClientStats, ExperimentResult, FedConfig, GlobalModel,
    HeldOutResult, RoundReport,
};
pub use losses::{
    decompose_loss, smooth_labels, smoothed_cross_entropy, ClassDistribution, LossParts,
    SmoothingCoefficient,
};
pub use neural::{softmax, Matrix, Mlp, ParamVector};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
