use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{ObservationLayout, ReplayMemory, StateComponent};
use crate::data::{DatasetKind, DatasetSpec};
use crate::error::{AlaError, Result};
use crate::losses::LossMode;
use crate::metrics::{MetricKind, RewardSource};
use crate::optim::OptimizerKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    MetricLearning,
}

/// Objective used when Φ is not adapted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedLoss {
    /// The adaptive loss with Φ frozen at Φ₀.
    Parametric,
    /// Cross-entropy for classification, the margin triplet loss for metric learning.
    Reference,
    /// `d⁺² + 0.5/d⁻` evaluated without mixture weights (metric learning only).
    DefaultDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            enabled: true,
            capacity: ReplayMemory::DEFAULT_CAPACITY,
        }
    }
}

fn yes() -> bool {
    true
}
fn default_capacity() -> usize {
    ReplayMemory::DEFAULT_CAPACITY
}

/// Every knob of a run. Missing JSON fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub task: Task,
    pub loss_mode: LossMode,
    pub data: DatasetSpec,
    /// Hidden layer widths of each child network.
    pub hidden: Vec<usize>,
    /// Output width for metric learning (classification uses the class count).
    pub embedding_dim: usize,
    /// Inner gradient iterations per controller step.
    pub k: usize,
    /// Controller steps per run.
    pub steps: usize,
    pub episode_len: usize,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub eta: f64,
    pub children: usize,
    pub history: usize,
    pub controller_depth: usize,
    pub policy_lr: f64,
    pub model_optimizer: OptimizerKind,
    /// L2 penalty added to every child-model gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Metric evaluations per step that enter the discounted metric (at most `k` are used).
    pub eval_points: usize,
    pub reward: RewardSource,
    pub metric: MetricKind,
    pub replay: ReplayConfig,
    pub ablate: BTreeSet<StateComponent>,
    pub fixed_loss: FixedLoss,
    pub seed: u64,
    /// Dataset seed; derived from `seed` when absent.
    pub data_seed: Option<u64>,
    /// Worker threads for child training; 1 is the reproducible default.
    pub threads: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            task: Task::Classification,
            loss_mode: LossMode::ClassCorrelation,
            data: DatasetSpec::default(),
            hidden: vec![32],
            embedding_dim: 8,
            k: 200,
            steps: 20,
            episode_len: 1,
            gamma: 0.9,
            beta: 0.1,
            alpha: 1.0,
            eta: 0.2,
            children: 10,
            history: 10,
            controller_depth: 2,
            policy_lr: 0.001,
            model_optimizer: OptimizerKind::momentum_sgd(0.1, 0.9),
            weight_decay: 0.0,
            batch_size: 64,
            eval_points: 10,
            reward: RewardSource::ValMetric,
            metric: MetricKind::ClassificationError,
            replay: ReplayConfig::default(),
            ablate: BTreeSet::new(),
            fixed_loss: FixedLoss::Parametric,
            seed: 0,
            data_seed: None,
            threads: 1,
        }
    }
}

impl TrainRunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainRunConfig =
            serde_json::from_str(text).map_err(|e| AlaError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AlaError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn layout(&self) -> ObservationLayout {
        ObservationLayout::new(self.loss_mode, self.history).with_ablation(self.ablate.iter().copied())
    }

    pub fn dataset_seed(&self) -> u64 {
        self.data_seed.unwrap_or_else(|| super::seeds::derive(self.seed, "data", 0))
    }

    /// Widths from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.data.dim];
        s.extend(&self.hidden);
        s.push(match self.task {
            Task::Classification => self.data.classes,
            Task::MetricLearning => self.embedding_dim,
        });
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AlaError::Config(m));
        self.data.validate()?;
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("γ must lie in [0,1], got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("β must be positive, got {}", self.beta));
        }
        if self.children == 0 {
            return bad("child count must be at least 1".into());
        }
        if self.history == 0 {
            return bad("history length must be at least 1".into());
        }
        if self.episode_len == 0 {
            return bad("episode length must be at least 1".into());
        }
        if !(1..=3).contains(&self.controller_depth) {
            return bad(format!("controller depth must be 1, 2 or 3, got {}", self.controller_depth));
        }
        if !(self.policy_lr > 0.0 && self.policy_lr.is_finite()) {
            return bad("policy learning rate must be positive".into());
        }
        if !(self.model_optimizer.lr() > 0.0) {
            return bad("model learning rate must be positive".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2".into());
        }
        if self.eval_points == 0 {
            return bad("eval points must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("thread count must be at least 1".into());
        }
        if self.hidden.iter().any(|&h| h == 0) || self.embedding_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(self.eta >= 0.0) || !self.alpha.is_finite() {
            return bad("margin and offset must be finite, margin nonnegative".into());
        }
        match self.task {
            Task::Classification => {
                if self.loss_mode != LossMode::ClassCorrelation {
                    return bad(format!("{} is not a classification loss", self.loss_mode.as_str()));
                }
                if !matches!(self.metric, MetricKind::ClassificationError | MetricKind::Aucpr) {
                    return bad(format!("metric {} needs an embedding task", self.metric.name()));
                }
                if self.data.kind == DatasetKind::EmbeddingClusters {
                    return bad("classification needs labelled class data, not embedding clusters".into());
                }
                if self.fixed_loss == FixedLoss::DefaultDistance {
                    return bad("default-distance fixed loss applies to metric learning only".into());
                }
            }
            Task::MetricLearning => {
                if self.loss_mode == LossMode::ClassCorrelation {
                    return bad("class-correlation loss needs a classification task".into());
                }
                match self.metric {
                    MetricKind::RecallAtK { k } if k >= 1 && k < self.data.n_val.min(self.data.n_test) => {}
                    MetricKind::VerificationAccuracy => {}
                    m => return bad(format!("metric {} does not apply to metric learning", m.name())),
                }
                if self.fixed_loss == FixedLoss::DefaultDistance && self.loss_mode != LossMode::DistanceMixture {
                    return bad("default-distance fixed loss pairs with the distance mixture".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = TrainRunConfig::default();
        c.validate().unwrap();
        let back = TrainRunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.k, 200);
        assert_eq!(c.children, 10);
        assert_eq!(c.history, 10);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = TrainRunConfig::from_json(r#"{"k": 5, "children": 2}"#).unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.gamma, 0.9);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            r#"{"k": 0}"#,
            r#"{"gamma": 1.5}"#,
            r#"{"beta": 0}"#,
            r#"{"children": 0}"#,
            r#"{"unknown_field": 1}"#,
            r#"{"loss_mode": "focal-weighting"}"#,
            r#"{"controller_depth": 4}"#,
        ] {
            assert!(matches!(TrainRunConfig::from_json(text), Err(AlaError::Config(_))), "{text}");
        }
    }

    #[test]
    fn ablation_shrinks_layout() {
        let mut c = TrainRunConfig::default();
        let full = c.layout().len();
        c.ablate.insert(StateComponent::History);
        assert_eq!(full - c.layout().len(), (c.history - 1) * 2);
    }
}
