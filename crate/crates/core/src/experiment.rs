//! Experiment grids and metrics files.
//!
//! Every grid cell is a [`FedConfig`] variant. Each cell is run once per
//! seed (`master_seed`, `master_seed + 1`, ...); the synthetic task is
//! regenerated from the same seed. Output is one CSV row per
//! `(cell, seed, held_out, round, client)` plus a summary of final-round
//! held-out accuracy averaged over seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{AblationCell, RunConfig};
use crate::domains::generate_task;
use crate::error::{FedError, Result};
use crate::federation::{run_experiment, ExperimentResult, FedConfig};

pub const CSV_HEADER: &str = "cell,seed,held_out,round,client_id,steps,local_loss,nll,smooth,global_acc";

/// Column name of the cross-domain mean in summaries.
pub const AVE: &str = "ave";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub fed: FedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub cell: String,
    pub seed: u64,
    pub held_out: String,
    pub round: usize,
    pub client_id: usize,
    pub steps: usize,
    pub local_loss: f64,
    pub nll: f64,
    pub smooth: f64,
    pub global_acc: f64,
}

/// Mean final-round accuracy per held-out domain for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    /// `(domain_id, mean accuracy over seeds)` in task order.
    pub domains: Vec<(String, f64)>,
    pub ave: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<CellSummary>,
    pub warnings: Vec<String>,
}

/// The smoothing x budget grid. Cells without smoothing train on hard
/// labels; cells without a budget train on the raw local datasets.
pub fn ablation_cells(run: &RunConfig) -> Vec<Cell> {
    run.ablation_grid
        .iter()
        .map(|&c| Cell {
            name: c.name().to_string(),
            fed: toggled(run, c),
        })
        .collect()
}

fn toggled(run: &RunConfig, cell: AblationCell) -> FedConfig {
    FedConfig {
        smoothing_enabled: cell.smoothing(),
        budget: cell.budget().then(|| run.budget.resolve(run.fed.batch_size)),
        ..run.fed.clone()
    }
}

/// The epsilon sweep runs with smoothing on and no budget; the budget sweep
/// runs with the budget on and no smoothing.
pub fn sensitivity_cells(run: &RunConfig) -> Vec<Cell> {
    let eps_cells = run.epsilon_grid.iter().map(|&e| Cell {
        name: format!("eps={}", e.value()),
        fed: FedConfig {
            epsilon: e,
            ..toggled(run, AblationCell::Smoothing)
        },
    });
    let budget_cells = run.budget_grid.iter().map(|&s| Cell {
        name: format!("S={s}"),
        fed: FedConfig {
            budget: Some(s.resolve(run.fed.batch_size)),
            ..toggled(run, AblationCell::Budget)
        },
    });
    eps_cells.chain(budget_cells).collect()
}

/// The configuration exactly as written, as a single cell.
pub fn single_cell(run: &RunConfig) -> Cell {
    let name = match (run.fed.smoothing_enabled, run.fed.budget.is_some()) {
        (false, false) => AblationCell::Baseline,
        (false, true) => AblationCell::Budget,
        (true, false) => AblationCell::Smoothing,
        (true, true) => AblationCell::FedSb,
    }
    .name();
    Cell {
        name: name.to_string(),
        fed: run.fed.clone(),
    }
}

pub fn run_cell_seed(run: &RunConfig, cell: &Cell, seed: u64) -> Result<ExperimentResult> {
    let task = generate_task(&run.task, seed)?;
    let fed = FedConfig {
        master_seed: seed,
        ..cell.fed.clone()
    };
    run_experiment(&task, &fed)
}

pub fn rows_for(cell: &str, seed: u64, result: &ExperimentResult) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for h in &result.held_out {
        for r in &h.rounds {
            for c in &r.clients {
                rows.push(MetricsRow {
                    cell: cell.to_string(),
                    seed,
                    held_out: h.domain_id.clone(),
                    round: r.round,
                    client_id: c.client_id,
                    steps: c.steps_taken,
                    local_loss: c.mean_local_loss,
                    nll: c.nll_part,
                    smooth: c.smooth_part,
                    global_acc: r.global_accuracy,
                });
            }
        }
    }
    rows
}

/// Runs every `(cell, seed)` pair. Pairs execute in parallel; rows and
/// summaries come back in cell order, then seed order.
pub fn run_grid(run: &RunConfig, cells: &[Cell]) -> Result<GridOutcome> {
    if cells.is_empty() {
        return Err(FedError::Config("grid has no cells".into()));
    }
    let seeds: Vec<u64> = run.seeds().collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, seed)| run_cell_seed(run, &cells[c], seed))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (&(c, seed), result) in jobs.iter().zip(&results) {
        rows.extend(rows_for(&cells[c].name, seed, result));
        for w in result.warnings() {
            let line = format!("{} seed {seed}: {w}", cells[c].name);
            if !warnings.contains(&line) {
                warnings.push(line);
            }
        }
    }
    Ok(GridOutcome {
        summary: summarize(&rows),
        rows,
        warnings,
    })
}

/// Mean of the final-round `global_acc` per `(cell, held_out)` over seeds,
/// plus the mean over held-out domains. Works on parsed CSV rows as well.
pub fn summarize(rows: &[MetricsRow]) -> Vec<CellSummary> {
    let mut cells: Vec<&str> = Vec::new();
    for r in rows {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let of_cell: Vec<&MetricsRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let mut domains: Vec<&str> = Vec::new();
            for r in &of_cell {
                if !domains.contains(&r.held_out.as_str()) {
                    domains.push(&r.held_out);
                }
            }
            let per_domain: Vec<(String, f64)> = domains
                .into_iter()
                .map(|d| {
                    let of_domain: Vec<&&MetricsRow> = of_cell.iter().filter(|r| r.held_out == d).collect();
                    let last = of_domain.iter().map(|r| r.round).max().unwrap_or(0);
                    let mut per_seed: Vec<(u64, f64)> = Vec::new();
                    for r in of_domain.iter().filter(|r| r.round == last) {
                        if !per_seed.iter().any(|(s, _)| *s == r.seed) {
                            per_seed.push((r.seed, r.global_acc));
                        }
                    }
                    let mean = per_seed.iter().map(|(_, a)| a).sum::<f64>() / per_seed.len() as f64;
                    (d.to_string(), mean)
                })
                .collect();
            let ave = per_domain.iter().map(|(_, a)| a).sum::<f64>() / per_domain.len() as f64;
            CellSummary {
                cell: cell.to_string(),
                domains: per_domain,
                ave,
            }
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 120);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.seed,
            r.held_out,
            r.round,
            r.client_id,
            r.steps,
            fmt_f64(r.local_loss),
            fmt_f64(r.nll),
            fmt_f64(r.smooth),
            fmt_f64(r.global_acc)
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(FedError::parse("header", format!("expected `{CSV_HEADER}`"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let key = format!("line {}", i + 2);
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(FedError::parse(key, format!("expected 10 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| FedError::parse(key.clone(), e.to_string()));
            let int = |s: &str| s.parse::<usize>().map_err(|e| FedError::parse(key.clone(), e.to_string()));
            Ok(MetricsRow {
                cell: f[0].to_string(),
                seed: f[1].parse().map_err(|e: std::num::ParseIntError| FedError::parse(key.clone(), e.to_string()))?,
                held_out: f[2].to_string(),
                round: int(f[3])?,
                client_id: int(f[4])?,
                steps: int(f[5])?,
                local_loss: num(f[6])?,
                nll: num(f[7])?,
                smooth: num(f[8])?,
                global_acc: num(f[9])?,
            })
        })
        .collect()
}

/// `{cell: {domain: mean_acc, ..., "ave": mean}}` with cells and domains in
/// run order.
pub fn summary_json(summary: &[CellSummary]) -> Value {
    let mut root = Map::new();
    for s in summary {
        let mut cell = Map::new();
        for (d, acc) in &s.domains {
            cell.insert(d.clone(), Value::from(*acc));
        }
        cell.insert(AVE.to_string(), Value::from(s.ave));
        root.insert(s.cell.clone(), Value::Object(cell));
    }
    Value::Object(root)
}

/// Fixed-width table: one row per cell, one column per held-out domain,
/// then the mean.
pub fn summary_table(summary: &[CellSummary]) -> String {
    let mut out = String::new();
    let Some(first) = summary.first() else {
        return out;
    };
    let width = summary.iter().map(|s| s.cell.len()).max().unwrap_or(4).max(4);
    write!(out, "{:<width$}", "cell").unwrap();
    for (d, _) in &first.domains {
        write!(out, " {:>10}", truncate(d, 10)).unwrap();
    }
    writeln!(out, " {:>10}", "Ave.").unwrap();
    for s in summary {
        write!(out, "{:<width$}", s.cell).unwrap();
        for (_, acc) in &s.domains {
            write!(out, " {:>10.2}", acc * 100.0).unwrap();
        }
        writeln!(out, " {:>10.2}", s.ave * 100.0).unwrap();
    }
    out
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Writes `contents` to `<path>.tmp` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| FedError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| FedError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| FedError::io(path, e))
}

/// Paths written by [`write_outcome`].
#[derive(Debug, Clone)]
pub struct OutputFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub table: PathBuf,
}

/// Writes `<stem>.csv`, `<stem>_summary.json` and `<stem>_summary.txt`
/// under `dir`.
pub fn write_outcome(dir: &Path, stem: &str, outcome: &GridOutcome) -> Result<OutputFiles> {
    let files = OutputFiles {
        csv: dir.join(format!("{stem}.csv")),
        json: dir.join(format!("{stem}_summary.json")),
        table: dir.join(format!("{stem}_summary.txt")),
    };
    write_atomic(&files.csv, to_csv(&outcome.rows).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&summary_json(&outcome.summary))
        .map_err(|e| FedError::Config(format!("cannot serialize summary: {e}")))?;
    json.push('\n');
    write_atomic(&files.json, json.as_bytes())?;
    write_atomic(&files.table, summary_table(&outcome.summary).as_bytes())?;
    Ok(files)
}
