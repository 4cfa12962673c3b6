use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::losses::LossMode;

/// Normalized statistics are clipped to this magnitude.
pub const STAT_CLIP: f64 = 5.0;
const MEAN_FLOOR: f64 = 1e-8;

/// State components that can be dropped for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateComponent {
    History,
    Delta,
    Phi,
    Iteration,
}

impl StateComponent {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "history" => Ok(StateComponent::History),
            "delta" => Ok(StateComponent::Delta),
            "phi" => Ok(StateComponent::Phi),
            "iter" | "iteration" => Ok(StateComponent::Iteration),
            _ => Err(AlaError::Usage(format!("unknown state component {s:?}"))),
        }
    }
}

/// Shape of one per-parameter observation. Identical for every parameter of a mode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub mode: LossMode,
    pub history: usize,
    pub stats: usize,
    #[serde(default)]
    pub ablate: BTreeSet<StateComponent>,
}

impl ObservationLayout {
    pub fn new(mode: LossMode, history: usize) -> Self {
        ObservationLayout {
            mode,
            history,
            stats: mode.stats_per_param(),
            ablate: BTreeSet::new(),
        }
    }

    pub fn with_ablation(mut self, ablate: impl IntoIterator<Item = StateComponent>) -> Self {
        self.ablate.extend(ablate);
        self
    }

    fn keeps(&self, c: StateComponent) -> bool {
        !self.ablate.contains(&c)
    }

    /// Rows of the statistic window actually fed to the policy.
    pub fn window_rows(&self) -> usize {
        if self.keeps(StateComponent::History) {
            self.history
        } else {
            1
        }
    }

    /// `H·c + c + 1 + 1` minus ablated components.
    pub fn len(&self) -> usize {
        let mut n = self.window_rows() * self.stats;
        if self.keeps(StateComponent::Delta) {
            n += self.stats;
        }
        if self.keeps(StateComponent::Phi) {
            n += 1;
        }
        if self.keeps(StateComponent::Iteration) {
            n += 1;
        }
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened policy input for one loss parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerObservation(pub Vec<f64>);

impl ControllerObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn safe_mean(m: f64) -> f64 {
    if m.abs() < MEAN_FLOOR {
        if m < 0.0 {
            -MEAN_FLOOR
        } else {
            MEAN_FLOOR
        }
    } else {
        m
    }
}

/// Builds the observation from raw statistic rows (oldest first, newest last).
///
/// Rows are divided by the running mean and clipped to `[-5, 5]`; missing rows
/// are zero-padded at the oldest end. The delta block is the relative change of
/// the newest row from the running mean.
pub fn build_observation(
    layout: &ObservationLayout,
    stat_history: &[Vec<f64>],
    running_mean: &[f64],
    phi: f64,
    iteration: usize,
    total_iterations: usize,
) -> Result<ControllerObservation> {
    let c = layout.stats;
    let newest = stat_history
        .last()
        .ok_or_else(|| AlaError::Usage("observation needs at least one statistic row".into()))?;
    if running_mean.len() != c || stat_history.iter().any(|r| r.len() != c) {
        return Err(AlaError::Layout(format!("expected {c} statistics per row")));
    }
    if total_iterations == 0 {
        return Err(AlaError::Usage("total iterations must be positive".into()));
    }
    let norm = |v: f64, m: f64| {
        let x = v / safe_mean(m);
        if x.is_finite() {
            x.clamp(-STAT_CLIP, STAT_CLIP)
        } else {
            0.0
        }
    };

    let rows = layout.window_rows();
    let mut out = Vec::with_capacity(layout.len());
    let available = stat_history.len().min(rows);
    out.extend(std::iter::repeat(0.0).take((rows - available) * c));
    for row in &stat_history[stat_history.len() - available..] {
        out.extend(row.iter().zip(running_mean).map(|(&v, &m)| norm(v, m)));
    }
    if layout.keeps(StateComponent::Delta) {
        out.extend(newest.iter().zip(running_mean).map(|(&v, &m)| norm(v - m, m)));
    }
    if layout.keeps(StateComponent::Phi) {
        out.push(phi);
    }
    if layout.keeps(StateComponent::Iteration) {
        out.push((iteration as f64 / total_iterations as f64).clamp(0.0, 1.0));
    }
    debug_assert_eq!(out.len(), layout.len());
    Ok(ControllerObservation(out))
}

/// Bounded statistic history and its exponential running mean for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct StatTracker {
    history: VecDeque<Vec<f64>>,
    capacity: usize,
    running_mean: Option<Vec<f64>>,
    decay: f64,
}

impl StatTracker {
    pub const DEFAULT_DECAY: f64 = 0.9;

    pub fn new(capacity: usize) -> Self {
        StatTracker {
            history: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            running_mean: None,
            decay: Self::DEFAULT_DECAY,
        }
    }

    pub fn record(&mut self, stats: Vec<f64>) {
        self.running_mean = Some(match self.running_mean.take() {
            None => stats.clone(),
            Some(m) => m
                .iter()
                .zip(&stats)
                .map(|(a, b)| self.decay * a + (1.0 - self.decay) * b)
                .collect(),
        });
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(stats);
    }

    pub fn history(&self) -> Vec<Vec<f64>> {
        self.history.iter().cloned().collect()
    }

    pub fn running_mean(&self) -> Option<&[f64]> {
        self.running_mean.as_deref()
    }

    pub fn observe(
        &self,
        layout: &ObservationLayout,
        phi: f64,
        iteration: usize,
        total_iterations: usize,
    ) -> Result<ControllerObservation> {
        let mean = self
            .running_mean
            .as_ref()
            .ok_or_else(|| AlaError::Usage("no statistics recorded yet".into()))?;
        let hist = self.history();
        build_observation(layout, &hist, mean, phi, iteration, total_iterations)
    }
}
