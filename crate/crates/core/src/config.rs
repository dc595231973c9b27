//! Run configuration files.
//!
//! The format is flat `key = value` text. Blank lines and lines starting
//! with `#` are ignored, lists are comma separated, and booleans accept
//! `true`/`false`/`on`/`off`. Unknown and repeated keys are errors.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `master_seed` | integer | **required** |
//! | `rounds` | count | 100 |
//! | `epsilon` | real in [0, 1] | 0.1 |
//! | `smoothing_enabled` | bool | true |
//! | `budget_S` | count, `<n>B`, or `off` | `30B` |
//! | `budget_enabled` | bool | true (false when `budget_S = off`) |
//! | `batch_B` | count | 64 |
//! | `optimizer` | `adam` or `sgd` | adam |
//! | `eta` | real > 0 | 1e-4 |
//! | `beta1`, `beta2` | real in [0, 1) | 0.9, 0.999 |
//! | `adam_epsilon` | real >= 0 | 1e-8 |
//! | `aggregation` | `uniform` or `weighted` | uniform |
//! | `layer_sizes` | list of counts | `feature_dim,16,class_count` |
//! | `class_count` | count | 4 |
//! | `feature_dim` | count | 2 |
//! | `domain_angles` | list of degrees | `0,25,50,75` |
//! | `domain_sizes` | list of counts | `256,512,1024,4096` |
//! | `noise_sigma` | real >= 0 | 0.35 |
//! | `cluster_radius` | real > 0 | 1.0 |
//! | `out_dir` | path | `out` |
//! | `epsilon_grid` | list of reals | `0.1,0.2,0.3` |
//! | `budget_grid` | list of budgets | `30B,45B,60B` |
//! | `ablation_grid` | list of `baseline`, `budget`, `smoothing`, `fedsb` | all four |
//! | `repeats` | count | 3 |

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domains::SyntheticTaskSpec;
use crate::error::{FedError, Result};
use crate::federation::{Aggregation, FedConfig};
use crate::losses::SmoothingCoefficient;
use crate::optim::{OptimizerConfig, OptimizerKind};

pub const DEFAULT_HIDDEN_WIDTH: usize = 16;

/// A budget either in samples or in multiples of the batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetSpec {
    Samples(usize),
    Batches(usize),
}

impl BudgetSpec {
    pub fn resolve(self, batch_size: usize) -> usize {
        match self {
            BudgetSpec::Samples(n) => n,
            BudgetSpec::Batches(k) => k * batch_size,
        }
    }
}

impl fmt::Display for BudgetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetSpec::Samples(n) => write!(f, "{n}"),
            BudgetSpec::Batches(k) => write!(f, "{k}B"),
        }
    }
}

impl FromStr for BudgetSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (digits, batches) = match s.strip_suffix('B') {
            Some(d) => (d, true),
            None => (s, false),
        };
        let n: usize = digits
            .parse()
            .map_err(|_| format!("expected a count or a multiple of B like 30B, got {s:?}"))?;
        if n == 0 {
            return Err("budget must be positive".into());
        }
        Ok(if batches {
            BudgetSpec::Batches(n)
        } else {
            BudgetSpec::Samples(n)
        })
    }
}

/// The four smoothing/budget toggle combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationCell {
    Baseline,
    Budget,
    Smoothing,
    FedSb,
}

impl AblationCell {
    pub const ALL: [AblationCell; 4] = [
        AblationCell::Baseline,
        AblationCell::Budget,
        AblationCell::Smoothing,
        AblationCell::FedSb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationCell::Baseline => "baseline",
            AblationCell::Budget => "budget",
            AblationCell::Smoothing => "smoothing",
            AblationCell::FedSb => "fedsb",
        }
    }

    pub fn smoothing(self) -> bool {
        matches!(self, AblationCell::Smoothing | AblationCell::FedSb)
    }

    pub fn budget(self) -> bool {
        matches!(self, AblationCell::Budget | AblationCell::FedSb)
    }
}

impl FromStr for AblationCell {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        AblationCell::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| format!("unknown ablation cell {s:?} (expected baseline, budget, smoothing or fedsb)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Protocol settings for a single run. `fed.budget` is `None` when the
    /// budget is disabled.
    pub fed: FedConfig,
    /// The budget used whenever a cell switches the budget on.
    pub budget: BudgetSpec,
    pub task: SyntheticTaskSpec,
    pub out_dir: PathBuf,
    pub epsilon_grid: Vec<SmoothingCoefficient>,
    pub budget_grid: Vec<BudgetSpec>,
    pub ablation_grid: Vec<AblationCell>,
    /// Seeds per grid cell: `master_seed, master_seed + 1, ...`.
    pub repeats: usize,
}

const KEYS: &[&str] = &[
    "master_seed",
    "rounds",
    "epsilon",
    "smoothing_enabled",
    "budget_S",
    "budget_enabled",
    "batch_B",
    "optimizer",
    "eta",
    "beta1",
    "beta2",
    "adam_epsilon",
    "aggregation",
    "layer_sizes",
    "class_count",
    "feature_dim",
    "domain_angles",
    "domain_sizes",
    "noise_sigma",
    "cluster_radius",
    "out_dir",
    "epsilon_grid",
    "budget_grid",
    "ablation_grid",
    "repeats",
];

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some(v) => parse_value(key, &v),
            None => Ok(default),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.take(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_value(key, s))
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(FedError::parse(key, "list must not be empty"));
        }
        Ok(Some(items))
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_flag(key, &v),
        }
    }
}

fn parse_flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        other => Err(FedError::parse(key, format!("expected a boolean, got {other:?}"))),
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e: T::Err| FedError::parse(key, format!("cannot parse {:?}: {e}", v.trim())))
}

fn tokenize(text: &str) -> Result<Fields> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FedError::parse(format!("line {}", n + 1), "expected `key = value`"))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(FedError::parse(k, "unknown key"));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(FedError::parse(k, "key given more than once"));
        }
    }
    Ok(Fields(map))
}

fn eps(key: &str, v: f64) -> Result<SmoothingCoefficient> {
    SmoothingCoefficient::new(v).map_err(|e| FedError::parse(key, e.to_string()))
}

/// Parses and validates a configuration document.
pub fn parse_config(bytes: &[u8]) -> Result<RunConfig> {
    let text = std::str::from_utf8(bytes).map_err(|e| FedError::parse("<file>", e.to_string()))?;
    let mut f = tokenize(text)?;

    let master_seed: u64 = match f.take("master_seed") {
        Some(v) => parse_value("master_seed", &v)?,
        None => return Err(FedError::parse("master_seed", "required key is missing")),
    };

    let defaults = SyntheticTaskSpec::default();
    let task = SyntheticTaskSpec {
        class_count: f.get("class_count", defaults.class_count)?,
        feature_dim: f.get("feature_dim", defaults.feature_dim)?,
        domain_angles: f.list("domain_angles")?.unwrap_or(defaults.domain_angles),
        domain_sizes: f.list("domain_sizes")?.unwrap_or(defaults.domain_sizes),
        noise_sigma: f.get("noise_sigma", defaults.noise_sigma)?,
        cluster_radius: f.get("cluster_radius", defaults.cluster_radius)?,
    };
    task.validate()?;

    let batch_size: usize = f.get("batch_B", 64)?;
    if batch_size == 0 {
        return Err(FedError::parse("batch_B", "must be at least 1"));
    }
    let (budget, budget_off) = match f.take("budget_S") {
        Some(v) if v.trim() == "off" => (BudgetSpec::Batches(30), true),
        Some(v) => (parse_value::<BudgetSpec>("budget_S", &v)?, false),
        None => (BudgetSpec::Batches(30), false),
    };
    let budget_enabled = match f.take("budget_enabled") {
        None => !budget_off,
        Some(v) => {
            let on = parse_flag("budget_enabled", &v)?;
            if on && budget_off {
                return Err(FedError::parse("budget_enabled", "budget_S is off"));
            }
            on
        }
    };
    if budget.resolve(batch_size) < batch_size {
        return Err(FedError::parse(
            "budget_S",
            format!("{budget} resolves below the batch size {batch_size}"),
        ));
    }

    let kind = match f.take("optimizer").as_deref().map(str::trim) {
        None | Some("adam") => OptimizerKind::Adam,
        Some("sgd") => OptimizerKind::Sgd,
        Some(other) => return Err(FedError::parse("optimizer", format!("expected adam or sgd, got {other:?}"))),
    };
    let d = OptimizerConfig::default();
    let optimizer = OptimizerConfig {
        kind,
        eta: f.get("eta", d.eta)?,
        beta1: f.get("beta1", d.beta1)?,
        beta2: f.get("beta2", d.beta2)?,
        stability_eps: f.get("adam_epsilon", d.stability_eps)?,
    };
    if !(optimizer.eta.is_finite() && optimizer.eta > 0.0) {
        return Err(FedError::parse("eta", "must be positive"));
    }
    for (key, b) in [("beta1", optimizer.beta1), ("beta2", optimizer.beta2)] {
        if !(0.0..1.0).contains(&b) {
            return Err(FedError::parse(key, "must lie in [0, 1)"));
        }
    }
    if !(optimizer.stability_eps.is_finite() && optimizer.stability_eps >= 0.0) {
        return Err(FedError::parse("adam_epsilon", "must be non-negative"));
    }

    let aggregation = match f.take("aggregation").as_deref().map(str::trim) {
        None | Some("uniform") => Aggregation::Uniform,
        Some("weighted") => Aggregation::Weighted,
        Some(other) => {
            return Err(FedError::parse(
                "aggregation",
                format!("expected uniform or weighted, got {other:?}"),
            ))
        }
    };

    let layer_sizes = f
        .list::<usize>("layer_sizes")?
        .unwrap_or_else(|| vec![task.feature_dim, DEFAULT_HIDDEN_WIDTH, task.class_count]);
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(FedError::parse("layer_sizes", "need at least two positive sizes"));
    }
    if layer_sizes[0] != task.feature_dim || *layer_sizes.last().unwrap() != task.class_count {
        return Err(FedError::parse(
            "layer_sizes",
            format!(
                "must start with feature_dim={} and end with class_count={}",
                task.feature_dim, task.class_count
            ),
        ));
    }

    let epsilon_value: f64 = f.get("epsilon", 0.1)?;
    let rounds: usize = f.get("rounds", 100)?;
    if rounds == 0 {
        return Err(FedError::parse("rounds", "must be at least 1"));
    }
    let fed = FedConfig {
        rounds,
        epsilon: eps("epsilon", epsilon_value)?,
        smoothing_enabled: f.flag("smoothing_enabled", true)?,
        budget: budget_enabled.then(|| budget.resolve(batch_size)),
        batch_size,
        optimizer,
        aggregation,
        layer_sizes,
        master_seed,
    };

    let epsilon_grid = match f.list::<f64>("epsilon_grid")? {
        Some(v) => v.into_iter().map(|e| eps("epsilon_grid", e)).collect::<Result<_>>()?,
        None => [0.1, 0.2, 0.3].into_iter().map(|e| eps("epsilon_grid", e)).collect::<Result<_>>()?,
    };
    let budget_grid: Vec<BudgetSpec> = f.list("budget_grid")?.unwrap_or_else(|| {
        vec![BudgetSpec::Batches(30), BudgetSpec::Batches(45), BudgetSpec::Batches(60)]
    });
    if let Some(b) = budget_grid.iter().find(|b| b.resolve(batch_size) < batch_size) {
        return Err(FedError::parse("budget_grid", format!("{b} resolves below the batch size")));
    }
    let ablation_grid = f.list("ablation_grid")?.unwrap_or_else(|| AblationCell::ALL.to_vec());
    let repeats: usize = f.get("repeats", 3)?;
    if repeats == 0 {
        return Err(FedError::parse("repeats", "must be at least 1"));
    }
    let out_dir = PathBuf::from(f.take("out_dir").unwrap_or_else(|| "out".to_string()));

    debug_assert!(f.0.is_empty(), "unconsumed keys: {:?}", f.0.keys());
    let cfg = RunConfig {
        fed,
        budget,
        task,
        out_dir,
        epsilon_grid,
        budget_grid,
        ablation_grid,
        repeats,
    };
    cfg.fed.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Ten times fewer rounds and samples per domain, for smoke runs.
    pub fn quick(&self) -> RunConfig {
        let mut out = self.clone();
        out.fed.rounds = (self.fed.rounds / 10).max(1);
        out.task = self.task.scaled(10);
        out
    }

    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.fed.master_seed = seed;
        self
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(|r| self.fed.master_seed.wrapping_add(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config(text.as_bytes())
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse("master_seed = 7\n").unwrap();
        assert_eq!(c.fed.master_seed, 7);
        assert_eq!(c.fed.epsilon.value(), 0.1);
        assert_eq!(c.fed.batch_size, 64);
        assert_eq!(c.fed.budget, Some(1920));
        assert_eq!(c.budget, BudgetSpec::Batches(30));
        assert_eq!(c.fed.optimizer, OptimizerConfig::default());
        assert_eq!(c.fed.optimizer.eta, 1e-4);
        assert_eq!(c.fed.layer_sizes, vec![2, 16, 4]);
        assert_eq!(c.fed.rounds, 100);
        assert_eq!(c.task, SyntheticTaskSpec::default());
        assert_eq!(c.epsilon_grid.len(), 3);
        assert_eq!(c.budget_grid, vec![BudgetSpec::Batches(30), BudgetSpec::Batches(45), BudgetSpec::Batches(60)]);
        assert_eq!(c.ablation_grid, AblationCell::ALL.to_vec());
    }

    fn err_key(text: &str) -> String {
        match parse(text) {
            Err(FedError::Parse { key, .. }) => key,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn epsilon_out_of_range() {
        assert_eq!(err_key("master_seed = 1\nepsilon = 1.5\n"), "epsilon");
    }

    #[test]
    fn unknown_key_is_named() {
        assert_eq!(err_key("master_seed = 1\nepsilonn = 0.1\n"), "epsilonn");
    }

    #[test]
    fn missing_seed() {
        assert_eq!(err_key("rounds = 3\n"), "master_seed");
    }

    #[test]
    fn type_mismatch_and_duplicates() {
        assert_eq!(err_key("master_seed = 1\nrounds = many\n"), "rounds");
        assert_eq!(err_key("master_seed = 1\nrounds = 2\nrounds = 3\n"), "rounds");
        assert_eq!(err_key("master_seed = 1\nsmoothing_enabled = maybe\n"), "smoothing_enabled");
    }

    #[test]
    fn empty_grids_rejected() {
        assert_eq!(err_key("master_seed = 1\nepsilon_grid =\n"), "epsilon_grid");
        assert_eq!(err_key("master_seed = 1\nbudget_grid = ,\n"), "budget_grid");
        assert_eq!(err_key("master_seed = 1\nablation_grid = \n"), "ablation_grid");
    }

    #[test]
    fn budget_in_batches_resolves() {
        let c = parse("master_seed = 1\nbatch_B = 32\nbudget_S = 45B\n").unwrap();
        assert_eq!(c.fed.budget, Some(1440));
        let c = parse("master_seed = 1\nbudget_S = 500\n").unwrap();
        assert_eq!(c.fed.budget, Some(500));
        let c = parse("master_seed = 1\nbudget_S = off\n").unwrap();
        assert_eq!(c.fed.budget, None);
        let c = parse("master_seed = 1\nbudget_enabled = false\n").unwrap();
        assert_eq!(c.fed.budget, None);
        assert_eq!(err_key("master_seed = 1\nbudget_S = 10\n"), "budget_S");
        assert_eq!(err_key("master_seed = 1\nbudget_S = off\nbudget_enabled = on\n"), "budget_enabled");
    }

    #[test]
    fn layer_sizes_must_match_task() {
        let c = parse("master_seed = 1\nlayer_sizes = 2, 8, 8, 4\n").unwrap();
        assert_eq!(c.fed.layer_sizes, vec![2, 8, 8, 4]);
        assert_eq!(err_key("master_seed = 1\nlayer_sizes = 3,4\n"), "layer_sizes");
    }

    #[test]
    fn comments_and_lists() {
        let c = parse(
            "# sweep\nmaster_seed = 3\n\nablation_grid = fedsb, baseline\ndomain_angles = 0, 45\ndomain_sizes = 100, 200\n",
        )
        .unwrap();
        assert_eq!(c.ablation_grid, vec![AblationCell::FedSb, AblationCell::Baseline]);
        assert_eq!(c.task.domain_angles, vec![0.0, 45.0]);
    }

    #[test]
    fn quick_scales_down() {
        let c = parse("master_seed = 1\n").unwrap().quick();
        assert_eq!(c.fed.rounds, 10);
        assert_eq!(c.task.domain_sizes, vec![25, 51, 102, 409]);
    }
}
