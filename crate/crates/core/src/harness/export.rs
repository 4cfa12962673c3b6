use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::orchestrator::{mean_std, write_csv, PhiRecord, RunReport, StepRecord};

/// Mean and spread across seeds of the child-averaged curves at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub step: usize,
    pub runs: usize,
    pub train_loss_mean: f64,
    pub train_loss_std: f64,
    pub val_loss_mean: f64,
    pub val_loss_std: f64,
    pub val_metric_mean: f64,
    pub val_metric_std: f64,
    pub test_metric_mean: f64,
    pub test_metric_std: f64,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    step: usize,
    seed: u64,
    train_loss: f64,
    val_loss: f64,
    val_metric: f64,
    test_metric: f64,
    reward: Option<f64>,
}

impl From<&StepRecord> for CurveRow {
    fn from(r: &StepRecord) -> Self {
        CurveRow {
            step: r.step,
            seed: r.seed,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_metric: r.val_metric,
            test_metric: r.test_metric,
            reward: r.reward,
        }
    }
}

/// What [`export_curves`] wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveExport {
    pub detail: Vec<StepRecord>,
    pub summary: Vec<SummaryRow>,
    pub phi: Vec<PhiRecord>,
}

/// Child-averaged curves per `(seed, step)`, their across-seed summary, and the
/// long-format Φ trajectories.
pub fn summarize(reports: &[RunReport]) -> Result<CurveExport> {
    if reports.is_empty() {
        return Err(AlaError::Usage("no run reports to export".into()));
    }
    let detail: Vec<StepRecord> = reports.iter().flat_map(|r| r.step_means()).collect();
    let mut steps: Vec<usize> = detail.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    let summary = steps
        .into_iter()
        .map(|s| {
            let rows: Vec<&StepRecord> = detail.iter().filter(|r| r.step == s).collect();
            let col = |f: fn(&StepRecord) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (tl, tls) = col(|r| r.train_loss);
            let (vl, vls) = col(|r| r.val_loss);
            let (vm, vms) = col(|r| r.val_metric);
            let (tm, tms) = col(|r| r.test_metric);
            let rewards: Option<Vec<f64>> = rows.iter().map(|r| r.reward).collect();
            let (rm, rs) = match rewards {
                Some(v) => {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            SummaryRow {
                step: s,
                runs: rows.len(),
                train_loss_mean: tl,
                train_loss_std: tls,
                val_loss_mean: vl,
                val_loss_std: vls,
                val_metric_mean: vm,
                val_metric_std: vms,
                test_metric_mean: tm,
                test_metric_std: tms,
                reward_mean: rm,
                reward_std: rs,
            }
        })
        .collect();
    let phi = reports.iter().flat_map(|r| r.phi.iter().cloned()).collect();
    Ok(CurveExport { detail, summary, phi })
}

/// Writes `curves.csv`, `summary.csv` and `phi.csv` into `dir`.
pub fn export_curves(reports: &[RunReport], dir: &Path) -> Result<CurveExport> {
    let out = summarize(reports)?;
    std::fs::create_dir_all(dir).map_err(|e| AlaError::io(dir, e))?;
    let rows: Vec<CurveRow> = out.detail.iter().map(CurveRow::from).collect();
    write_csv(&dir.join("curves.csv"), &rows)?;
    write_csv(&dir.join("summary.csv"), &out.summary)?;
    write_csv(&dir.join("phi.csv"), &out.phi)?;
    Ok(out)
}
