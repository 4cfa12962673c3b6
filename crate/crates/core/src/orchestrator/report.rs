use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};

use super::config::TrainRunConfig;

/// One child at one step. Metrics keep their natural orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub seed: u64,
    pub step: usize,
    pub child: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    /// Absent for the initialization record.
    pub reward: Option<f64>,
}

/// Φ value of one parameter of one child, in force during `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiRecord {
    pub seed: u64,
    pub child: usize,
    pub step: usize,
    pub parameter_id: usize,
    pub value: f64,
}

/// Results of the continuous checks run at every step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantLog {
    pub steps_checked: usize,
    pub phi_checks: usize,
    pub rewards_checked: usize,
    /// Episodes produced at each step.
    pub episode_counts: Vec<usize>,
    pub expected_episodes: usize,
    pub violations: Vec<String>,
}

impl InvariantLog {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.episode_counts.iter().all(|&c| c == self.expected_episodes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub config: TrainRunConfig,
    pub records: Vec<StepRecord>,
    pub phi: Vec<PhiRecord>,
    pub checks: InvariantLog,
    pub reinit_events: usize,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    mode: &'a str,
    config: &'a TrainRunConfig,
    final_test_mean: f64,
    final_test_std: f64,
    final_test_values: Vec<f64>,
    checks: &'a InvariantLog,
    reinit_events: usize,
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl RunReport {
    pub fn last_step(&self) -> usize {
        self.records.iter().map(|r| r.step).max().unwrap_or(0)
    }

    /// Test metric of every child at the final step.
    pub fn final_test_values(&self) -> Vec<f64> {
        let last = self.last_step();
        self.records.iter().filter(|r| r.step == last).map(|r| r.test_metric).collect()
    }

    pub fn final_test_metric(&self) -> (f64, f64) {
        mean_std(&self.final_test_values())
    }

    /// Child-averaged record per step, in step order.
    pub fn step_means(&self) -> Vec<StepRecord> {
        let steps = self.last_step();
        let seed = self.config.seed;
        (0..=steps)
            .filter_map(|s| {
                let rows: Vec<&StepRecord> = self.records.iter().filter(|r| r.step == s).collect();
                if rows.is_empty() {
                    return None;
                }
                let n = rows.len() as f64;
                let avg = |f: fn(&StepRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                let reward = if rows.iter().all(|r| r.reward.is_some()) {
                    Some(avg(|r| r.reward.unwrap_or(0.0)))
                } else {
                    None
                };
                Some(StepRecord {
                    seed,
                    step: s,
                    child: 0,
                    train_loss: avg(|r| r.train_loss),
                    val_loss: avg(|r| r.val_loss),
                    val_metric: avg(|r| r.val_metric),
                    test_metric: avg(|r| r.test_metric),
                    reward,
                })
            })
            .collect()
    }

    /// Writes `records.csv`, `phi.csv` and `run.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| AlaError::io(dir, e))?;
        write_csv(&dir.join("records.csv"), &self.records)?;
        write_csv(&dir.join("phi.csv"), &self.phi)?;
        let (m, s) = self.final_test_metric();
        let summary = RunSummary {
            mode: &self.mode,
            config: &self.config,
            final_test_mean: m,
            final_test_std: s,
            final_test_values: self.final_test_values(),
            checks: &self.checks,
            reinit_events: self.reinit_events,
        };
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(&path, text).map_err(|e| AlaError::io(&path, e))
    }

    /// Reads a report written by [`RunReport::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("run.json");
        let text = std::fs::read_to_string(&path).map_err(|e| AlaError::io(&path, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let mode = v["mode"].as_str().unwrap_or_default().to_string();
        let config: TrainRunConfig = serde_json::from_value(v["config"].clone())?;
        let checks: InvariantLog = serde_json::from_value(v["checks"].clone())?;
        let reinit_events = v["reinit_events"].as_u64().unwrap_or(0) as usize;
        Ok(RunReport {
            mode,
            config,
            records: read_csv(&dir.join("records.csv"))?,
            phi: read_csv(&dir.join("phi.csv"))?,
            checks,
            reinit_events,
        })
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AlaError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| AlaError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| AlaError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
