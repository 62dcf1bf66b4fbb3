//! Command implementations behind the `sortcma` binary.

pub mod server;

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sortcma_core::harness::{fit_linear_reward, run_plan, CellResult, ExperimentPlan, RewardModel};
use sortcma_core::Function;
use sortcma_core::preference::read_log;

/// Runs `plan` and writes its CSVs. A single-cell plan writes one file at
/// `out` (unless `out` is an existing directory); larger grids write one
/// file per cell into the directory `out`. Returns the paths written.
pub fn run_bench(plan: &ExperimentPlan, out: &Path) -> Result<Vec<std::path::PathBuf>> {
    let cells = run_plan(plan).context("benchmark failed")?;
    write_cells(plan.function, &cells, out)
}

fn write_cells(function: Function, cells: &[CellResult], out: &Path) -> Result<Vec<std::path::PathBuf>> {
    if let [cell] = cells {
        if !out.is_dir() {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(out, cell.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            return Ok(vec![out.to_path_buf()]);
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::with_capacity(cells.len());
    for cell in cells {
        let path = out.join(cell.file_name(function));
        fs::write(&path, cell.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

/// Output of `reward-fit`: the model plus the parameter names it was fitted
/// on when a space config was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedWeights {
    #[serde(flatten)]
    pub model: RewardModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

/// Fits a linear reward on the internal candidate vectors stored in a
/// preference log.
pub fn reward_fit(log: &Path, l2: f64, names: Option<Vec<String>>) -> Result<FittedWeights> {
    let records = read_log(log).with_context(|| format!("reading {}", log.display()))?;
    let model = fit_linear_reward(&records, |x: &[f64]| x.to_vec(), l2)?;
    if let Some(n) = &names {
        if n.len() != model.weights.len() {
            bail!("config has {} parameters but the log has {}-dimensional candidates", n.len(), model.weights.len());
        }
    }
    Ok(FittedWeights { model, names })
}
