use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::controller::observation::{ControllerObservation, ObservationLayout};
use crate::controller::replay::Episode;
use crate::error::{AlaError, Result};
use crate::network::{Checkpoint, Head, Network};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{self, Matrix};

pub const ACTION_COUNT: usize = 3;
pub const HIDDEN_UNITS: usize = 32;

/// One of `{−β, 0, +β}`; index 0, 1, 2 respectively.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action(usize);

impl Action {
    pub const DECREASE: Action = Action(0);
    pub const KEEP: Action = Action(1);
    pub const INCREASE: Action = Action(2);

    pub fn from_index(i: usize) -> Result<Self> {
        if i < ACTION_COUNT {
            Ok(Action(i))
        } else {
            Err(AlaError::Usage(format!("action index {i} out of range")))
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn delta(self, beta: f64) -> f64 {
        match self.0 {
            0 => -beta,
            1 => 0.0,
            _ => beta,
        }
    }
}

/// Metadata that must match for a stored policy to drive a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub layout: ObservationLayout,
    pub layer_sizes: Vec<usize>,
    pub beta: f64,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    header: PolicyHeader,
    parameters: Checkpoint,
}

/// Shared controller: one MLP mapping a per-parameter observation to 3 logits.
#[derive(Clone, Debug)]
pub struct PolicyNetwork {
    header: PolicyHeader,
    net: Network,
    optimizer: Optimizer,
}

impl PartialEq for PolicyNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.net == other.net
    }
}

impl PolicyNetwork {
    /// `depth` hidden layers of 32 ReLU units.
    pub fn new(
        layout: ObservationLayout,
        depth: usize,
        beta: f64,
        optimizer: OptimizerKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(1..=3).contains(&depth) {
            return Err(AlaError::Config(format!("controller depth must be 1..=3, got {depth}")));
        }
        if !(beta > 0.0) {
            return Err(AlaError::Config(format!("β must be positive, got {beta}")));
        }
        let mut sizes = vec![layout.len()];
        sizes.extend(std::iter::repeat(HIDDEN_UNITS).take(depth));
        sizes.push(ACTION_COUNT);
        let net = Network::new(&sizes, Head::Linear, rng)?;
        Ok(Self::from_parts(
            PolicyHeader {
                layout,
                layer_sizes: sizes,
                beta,
            },
            net,
            optimizer,
        ))
    }

    fn from_parts(header: PolicyHeader, net: Network, optimizer: OptimizerKind) -> Self {
        let optimizer = Optimizer::for_params(optimizer, &net.params());
        PolicyNetwork {
            header,
            net,
            optimizer,
        }
    }

    pub fn header(&self) -> &PolicyHeader {
        &self.header
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.header.layout
    }

    pub fn beta(&self) -> f64 {
        self.header.beta
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Replaces the update rule and clears its state.
    pub fn set_optimizer(&mut self, kind: OptimizerKind) {
        self.optimizer = Optimizer::for_params(kind, &self.net.params());
    }

    fn check_obs(&self, obs: &ControllerObservation) -> Result<()> {
        if obs.len() != self.header.layout.len() {
            return Err(AlaError::Usage(format!(
                "observation length {} does not match policy input {}",
                obs.len(),
                self.header.layout.len()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, obs: &ControllerObservation) -> Result<[f64; ACTION_COUNT]> {
        self.check_obs(obs)?;
        let x = Matrix::from_vec(1, obs.len(), obs.0.clone())?;
        let out = self.net.forward(&x)?;
        Ok([out.get(0, 0), out.get(0, 1), out.get(0, 2)])
    }

    pub fn probabilities(&self, obs: &ControllerObservation) -> Result<[f64; ACTION_COUNT]> {
        Ok(softmax3(self.logits(obs)?))
    }

    /// Samples an action from the policy; returns it with `log π(a|s)`.
    pub fn sample_action(&self, obs: &ControllerObservation, rng: &mut impl Rng) -> Result<(Action, f64)> {
        let logits = self.logits(obs)?;
        let a = sample_index(&softmax3(logits), rng);
        let lse = log_softmax3(logits);
        Ok((Action(a), lse[a]))
    }

    /// `(1/n)·Σ log π(a|s)·A` and its gradient for every policy parameter.
    pub fn surrogate_with_grad(&self, batch: &[(&ControllerObservation, Action, f64)]) -> Result<(f64, Vec<Matrix>)> {
        if batch.is_empty() {
            return Err(AlaError::Usage("empty batch".into()));
        }
        let d = self.header.layout.len();
        let mut rows = Vec::with_capacity(batch.len() * d);
        for (obs, _, _) in batch {
            self.check_obs(obs)?;
            rows.extend_from_slice(obs.as_slice());
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::from_vec(batch.len(), d, rows)?);
        let fwd = self.net.forward_tape(&mut tape, x)?;
        let logp = tape.log_softmax_rows(fwd.output);
        let picked = tape.pick(logp, batch.iter().map(|b| b.1.index()).collect())?;
        let weighted = tape.mul_const(picked, Matrix::column(batch.iter().map(|b| b.2).collect()))?;
        let total = tape.sum(weighted);
        let obj = tape.scale(total, 1.0 / batch.len() as f64);
        let value = tape.scalar(obj);
        let mut grads = tape.backward(obj)?;
        let g = fwd
            .params
            .iter()
            .zip(self.net.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect();
        Ok((value, g))
    }

    /// One ascent step on the REINFORCE surrogate, then the baseline update.
    ///
    /// The advantage of each episode is its return minus `horizon·b`, using the
    /// baseline value held before this call.
    pub fn update(&mut self, batch: &[&Episode], baseline: &mut BaselineTracker) -> Result<()> {
        if batch.is_empty() {
            log::warn!("policy update skipped: empty batch");
            return Ok(());
        }
        let b = baseline.value();
        let items: Vec<_> = batch
            .iter()
            .map(|e| (&e.observation, e.action, e.advantage(b)))
            .collect();
        let (_, grads) = self.surrogate_with_grad(&items)?;
        if grads.iter().any(|g| g.data().iter().any(|&v| v != 0.0)) {
            let neg: Vec<Matrix> = grads.iter().map(|g| g.map(|v| -v)).collect();
            let refs: Vec<&Matrix> = neg.iter().collect();
            let mut params = self.net.params_mut();
            self.optimizer.step(&mut params, &refs)?;
        }
        let fresh: Vec<f64> = batch.iter().filter(|e| !e.replayed).map(|e| e.reward).collect();
        let rewards: Vec<f64> = if fresh.is_empty() {
            batch.iter().map(|e| e.reward).collect()
        } else {
            fresh
        };
        baseline.update(rewards.iter().sum::<f64>() / rewards.len() as f64);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PolicyFile {
            header: self.header.clone(),
            parameters: self.net.to_checkpoint(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| AlaError::io(path, e))
    }

    /// Loads a policy, requiring the stored observation layout to equal `expected`.
    pub fn load(path: &Path, expected: &ObservationLayout, optimizer: OptimizerKind) -> Result<Self> {
        let policy = Self::load_any(path, optimizer)?;
        if &policy.header.layout != expected {
            return Err(AlaError::Layout(format!(
                "policy expects {:?} with H={} c={} ablate={:?}, task has {:?} with H={} c={} ablate={:?}",
                policy.header.layout.mode,
                policy.header.layout.history,
                policy.header.layout.stats,
                policy.header.layout.ablate,
                expected.mode,
                expected.history,
                expected.stats,
                expected.ablate
            )));
        }
        Ok(policy)
    }

    pub fn load_any(path: &Path, optimizer: OptimizerKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AlaError::io(path, e))?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        let net = Network::from_checkpoint(&file.parameters)?;
        let mut sizes = vec![net.input_dim()];
        sizes.extend(net.layers().iter().map(|l| l.weight.cols()));
        if sizes != file.header.layer_sizes || net.input_dim() != file.header.layout.len() {
            return Err(AlaError::Layout("policy header does not match its parameters".into()));
        }
        Ok(Self::from_parts(file.header, net, optimizer))
    }
}

/// Exponential moving average of rewards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTracker {
    value: f64,
    decay: f64,
}

impl Default for BaselineTracker {
    fn default() -> Self {
        BaselineTracker::new(0.95)
    }
}

impl BaselineTracker {
    pub fn new(decay: f64) -> Self {
        BaselineTracker { value: 0.0, decay }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = (self.decay * self.value + (1.0 - self.decay) * mean_reward).clamp(-1.0, 1.0);
    }
}

pub(crate) fn softmax3(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn log_softmax3(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.map(|v| v - lse)
}

fn sample_index(p: &[f64; 3], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(ACTION_COUNT - 1)
}

/// Probabilities of a row of logits, for callers that already hold them.
pub fn action_probabilities(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != ACTION_COUNT {
        return Err(AlaError::Shape(format!("expected {ACTION_COUNT} logits")));
    }
    Ok(tensor::softmax_rows(&Matrix::from_vec(1, ACTION_COUNT, logits.to_vec())?).into_vec())
}
