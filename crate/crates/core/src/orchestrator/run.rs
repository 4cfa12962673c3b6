use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{
    apply_action, Action, BaselineTracker, ControllerObservation, Episode, PolicyNetwork, ReplayMemory,
};
use crate::data::{generate_dataset, DatasetSplits};
use crate::error::{AlaError, Result};
use crate::losses::{ClassCorrelation, LossMode, LossParameterization};
use crate::metrics::{discounted_metric, reward};
use crate::network::Network;
use crate::optim::OptimizerKind;

use super::child::{evaluate, ChildModel, Objective, RunContext};
use super::config::TrainRunConfig;
use super::report::{InvariantLog, PhiRecord, RunReport, StepRecord};
use super::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    Fixed,
    RandomPhi,
    ConfusionPhi,
    Bandit,
}

impl BaselineMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(BaselineMode::Fixed),
            "random-phi" => Ok(BaselineMode::RandomPhi),
            "confusion-phi" => Ok(BaselineMode::ConfusionPhi),
            "bandit" => Ok(BaselineMode::Bandit),
            _ => Err(AlaError::Usage(format!("unknown baseline mode {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::Fixed => "fixed",
            BaselineMode::RandomPhi => "random-phi",
            BaselineMode::ConfusionPhi => "confusion-phi",
            BaselineMode::Bandit => "bandit",
        }
    }
}

/// Who chooses Φ during a run.
pub enum Driver {
    Baseline(BaselineMode),
    Policy {
        policy: Box<PolicyNetwork>,
        learn: bool,
    },
}

impl Driver {
    fn name(&self) -> String {
        match self {
            Driver::Baseline(m) => format!("baseline-{}", m.as_str()),
            Driver::Policy { learn: true, .. } => "ala".into(),
            Driver::Policy { learn: false, .. } => "ala-frozen".into(),
        }
    }
}

/// A finished run: the report plus the trained artefacts.
pub struct RunOutcome {
    pub report: RunReport,
    pub policy: Option<PolicyNetwork>,
    pub children: Vec<Network>,
}

impl RunOutcome {
    /// Writes the report, the policy (if any) and every child network.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.report.write(dir)?;
        if let Some(p) = &self.policy {
            p.save(&dir.join("policy.json"))?;
        }
        let models = dir.join("models");
        std::fs::create_dir_all(&models).map_err(|e| AlaError::io(&models, e))?;
        for (k, net) in self.children.iter().enumerate() {
            net.save(&models.join(format!("child{k}.json")))?;
        }
        Ok(())
    }
}

/// A transition waiting for the end of its episode window.
#[derive(Clone, Debug)]
struct Pending {
    observation: ControllerObservation,
    action: Action,
    reward: f64,
    next_observation: ControllerObservation,
    child: usize,
    parameter: usize,
    step: usize,
}

struct ChildStep {
    record: StepRecord,
    phi: Vec<PhiRecord>,
    transitions: Vec<Pending>,
    reward: f64,
}

pub fn policy_optimizer(cfg: &TrainRunConfig) -> OptimizerKind {
    OptimizerKind::adam(cfg.policy_lr)
}

pub fn new_policy(cfg: &TrainRunConfig) -> Result<PolicyNetwork> {
    let mut rng = seeds::stream(cfg.seed, "policy", 0);
    PolicyNetwork::new(cfg.layout(), cfg.controller_depth, cfg.beta, policy_optimizer(cfg), &mut rng)
}

pub fn load_dataset(cfg: &TrainRunConfig) -> Result<DatasetSplits> {
    generate_dataset(&cfg.data, cfg.dataset_seed())
}

/// ALA with a freshly initialized, learning policy.
pub fn run_training(cfg: &TrainRunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let policy = new_policy(cfg)?;
    run_with_driver(
        cfg,
        &data,
        Driver::Policy {
            policy: Box::new(policy),
            learn: true,
        },
    )
}

pub fn run_baseline(cfg: &TrainRunConfig, mode: BaselineMode) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    run_with_driver(cfg, &data, Driver::Baseline(mode))
}

/// Runs a stored policy, frozen or with continued updates.
pub fn run_transfer(cfg: &TrainRunConfig, policy_path: &Path, finetune: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let policy = PolicyNetwork::load(policy_path, &cfg.layout(), policy_optimizer(cfg))?;
    if (policy.beta() - cfg.beta).abs() > 0.0 {
        log::info!("policy step {} overrides configured β {}", policy.beta(), cfg.beta);
    }
    let data = load_dataset(cfg)?;
    run_with_driver(
        cfg,
        &data,
        Driver::Policy {
            policy: Box::new(policy),
            learn: finetune,
        },
    )
}

fn check_driver(cfg: &TrainRunConfig, driver: &Driver) -> Result<()> {
    match driver {
        Driver::Baseline(BaselineMode::ConfusionPhi) if cfg.loss_mode != LossMode::ClassCorrelation => Err(
            AlaError::Config("confusion-phi baseline needs the class-correlation loss".into()),
        ),
        Driver::Policy { policy, .. } if policy.layout() != &cfg.layout() => Err(AlaError::Layout(format!(
            "policy layout {:?} does not match the task layout {:?}",
            policy.layout(),
            cfg.layout()
        ))),
        _ => Ok(()),
    }
}

/// The outer loop: per step, every child picks Φ, trains `K` iterations,
/// collects its reward; then the driver learns from the step's episodes.
pub fn run_with_driver(cfg: &TrainRunConfig, data: &DatasetSplits, mut driver: Driver) -> Result<RunOutcome> {
    cfg.validate()?;
    check_driver(cfg, &driver)?;
    if data.spec.classes != cfg.data.classes || data.spec.dim != cfg.data.dim {
        return Err(AlaError::Config("dataset does not match the configured task".into()));
    }
    let ctx = RunContext::new(cfg, data);
    let mut children = (0..cfg.children)
        .map(|k| ChildModel::new(k, &ctx))
        .collect::<Result<Vec<_>>>()?;
    let params = children[0].phi.param_count();
    let phi0 = children[0].phi.clone();
    let mode_name = driver.name();

    let mut records = Vec::new();
    let mut phi_rows = Vec::new();
    for child in children.iter_mut() {
        let (record, stats) = observe_child(&ctx, child, 0, None)?;
        child.record_stats(stats);
        let q = ctx.reward_quantity(&child.net)?;
        child.metric_t = discounted_metric(&vec![q; ctx.eval_iterations().len()], cfg.gamma)?;
        records.push(record);
        phi_rows.extend(phi_records(cfg.seed, child, 0));
    }

    let mut checks = InvariantLog {
        expected_episodes: cfg.children * params,
        ..InvariantLog::default()
    };
    let mut baseline = BaselineTracker::default();
    let mut replay = ReplayMemory::new(cfg.replay.capacity);
    let mut replay_rng = seeds::stream(cfg.seed, "replay", 0);
    let mut window: Vec<Pending> = Vec::new();

    for t in 0..cfg.steps {
        let policy_snapshot = match &driver {
            Driver::Policy { policy, .. } => Some(policy.as_ref()),
            Driver::Baseline(_) => None,
        };
        let mode = match &driver {
            Driver::Baseline(m) => Some(*m),
            Driver::Policy { .. } => None,
        };
        let outputs = step_children(&ctx, &mut children, policy_snapshot, mode, &phi0, t)?;

        let mut step_transitions = Vec::new();
        for out in outputs {
            checks.rewards_checked += 1;
            if ![-1.0, 0.0, 1.0].contains(&out.reward) {
                checks.violations.push(format!("step {t}: reward {} outside {{-1,0,1}}", out.reward));
            }
            records.push(out.record);
            phi_rows.extend(out.phi);
            step_transitions.extend(out.transitions);
        }
        for child in &children {
            checks.phi_checks += 1;
            if let Err(e) = child.phi.check() {
                checks.violations.push(format!("step {t} child {}: {e}", child.id));
            }
        }
        checks.steps_checked += 1;
        let per_step = match mode {
            Some(_) => cfg.children * params,
            None => step_transitions.len(),
        };
        checks.episode_counts.push(per_step);

        if let Driver::Policy { policy, learn } = &mut driver {
            window.extend(step_transitions);
            let window_done = (t + 1) % cfg.episode_len == 0 || t + 1 == cfg.steps;
            if window_done {
                let fresh = close_window(std::mem::take(&mut window))?;
                if *learn {
                    let replayed = if cfg.replay.enabled {
                        replay.sample(fresh.len(), &mut replay_rng)
                    } else {
                        Vec::new()
                    };
                    let batch: Vec<&Episode> = fresh.iter().chain(&replayed).collect();
                    policy.update(&batch, &mut baseline)?;
                }
                if cfg.replay.enabled {
                    for e in fresh {
                        replay.push(e)?;
                    }
                }
            }
        }
    }

    let reinit_events = children.iter().map(|c| c.reinit_events).sum();
    let policy = match driver {
        Driver::Policy { policy, .. } => Some(*policy),
        Driver::Baseline(_) => None,
    };
    Ok(RunOutcome {
        report: RunReport {
            mode: mode_name,
            config: cfg.clone(),
            records,
            phi: phi_rows,
            checks,
            reinit_events,
        },
        policy,
        children: children.into_iter().map(|c| c.net).collect(),
    })
}

/// Turns a finished window of transitions into episodes with returns to the window end.
fn close_window(window: Vec<Pending>) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(window.len());
    for p in &window {
        let later: Vec<&Pending> = window
            .iter()
            .filter(|q| q.child == p.child && q.parameter == p.parameter && q.step >= p.step)
            .collect();
        let mut e = Episode::new(
            p.observation.clone(),
            p.action,
            p.reward,
            p.next_observation.clone(),
            p.child,
            p.parameter,
            p.step,
        )?;
        e.return_sum = later.iter().map(|q| q.reward).sum();
        e.horizon = later.len();
        out.push(e);
    }
    Ok(out)
}

fn phi_records(seed: u64, child: &ChildModel, step: usize) -> Vec<PhiRecord> {
    child
        .phi
        .snapshot()
        .values
        .into_iter()
        .enumerate()
        .map(|(id, value)| PhiRecord {
            seed,
            child: child.id,
            step,
            parameter_id: id,
            value,
        })
        .collect()
}

/// Evaluates a child on train, validation and test data.
fn observe_child(
    ctx: &RunContext,
    child: &ChildModel,
    step: usize,
    reward: Option<f64>,
) -> Result<(StepRecord, Vec<Vec<f64>>)> {
    let train = evaluate(&child.net, &ctx.train_eval, ctx.cfg, false)?;
    let val = evaluate(&child.net, &ctx.val, ctx.cfg, true)?;
    let record = StepRecord {
        seed: ctx.cfg.seed,
        step,
        child: child.id,
        train_loss: train.loss,
        val_loss: val.loss,
        val_metric: val.metric,
        test_metric: ctx.test_probe(&child.net)?,
        reward,
    };
    Ok((record, val.stats.unwrap_or_default()))
}

fn step_children(
    ctx: &RunContext,
    children: &mut [ChildModel],
    policy: Option<&PolicyNetwork>,
    mode: Option<BaselineMode>,
    phi0: &LossParameterization,
    t: usize,
) -> Result<Vec<ChildStep>> {
    let threads = ctx.cfg.threads.min(children.len()).max(1);
    if threads == 1 {
        return children
            .iter_mut()
            .map(|c| child_step(ctx, c, policy, mode, phi0, t))
            .collect();
    }
    let chunk = children.len().div_ceil(threads);
    let results: Vec<Result<Vec<ChildStep>>> = std::thread::scope(|s| {
        let handles: Vec<_> = children
            .chunks_mut(chunk)
            .map(|group| {
                s.spawn(move || {
                    group
                        .iter_mut()
                        .map(|c| child_step(ctx, c, policy, mode, phi0, t))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("child worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(children.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn child_step(
    ctx: &RunContext,
    child: &mut ChildModel,
    policy: Option<&PolicyNetwork>,
    mode: Option<BaselineMode>,
    phi0: &LossParameterization,
    t: usize,
) -> Result<ChildStep> {
    let cfg = ctx.cfg;
    let params = child.phi.param_count();
    let mut chosen = Vec::new();

    let objective = match (policy, mode) {
        (Some(policy), _) => {
            let layout = policy.layout();
            for p in 0..params {
                let obs = child.trackers[p].observe(layout, child.phi.value(p)?, t, cfg.steps)?;
                let (a, _) = policy.sample_action(&obs, &mut child.action_rng)?;
                apply_action(&mut child.phi, p, a.delta(policy.beta()))?;
                chosen.push((obs, a));
            }
            Objective::adaptive(&child.phi, cfg)
        }
        (None, Some(BaselineMode::Fixed)) => Objective::fixed(phi0, cfg),
        (None, Some(BaselineMode::RandomPhi)) => {
            child.phi = random_phi(phi0, &mut child.action_rng)?;
            Objective::adaptive(&child.phi, cfg)
        }
        (None, Some(BaselineMode::ConfusionPhi)) => {
            child.phi = confusion_phi(child)?;
            Objective::adaptive(&child.phi, cfg)
        }
        (None, Some(BaselineMode::Bandit)) => {
            bandit_move(child, cfg.beta)?;
            Objective::adaptive(&child.phi, cfg)
        }
        (None, None) => unreachable!("a run always has a driver"),
    };

    let series = child.train_inner(ctx, &objective)?;
    let m_next = discounted_metric(&series, cfg.gamma)?;
    let r = reward(child.metric_t, m_next);
    child.metric_t = m_next;
    child.last_reward = r;

    let (record, stats) = observe_child(ctx, child, t + 1, Some(r))?;
    child.record_stats(stats);
    let mut transitions = Vec::with_capacity(chosen.len());
    if let Some(policy) = policy {
        for (p, (obs, a)) in chosen.into_iter().enumerate() {
            let next = child.trackers[p].observe(policy.layout(), child.phi.value(p)?, t + 1, cfg.steps)?;
            transitions.push(Pending {
                observation: obs,
                action: a,
                reward: r,
                next_observation: next,
                child: child.id,
                parameter: p,
                step: t,
            });
        }
    }
    let phi = phi_records(cfg.seed, child, t + 1);
    Ok(ChildStep {
        record,
        phi,
        transitions,
        reward: r,
    })
}

/// Φ₀ with every controlled value perturbed by `U(−0.1, 0.1)`.
fn random_phi(phi0: &LossParameterization, rng: &mut ChaCha8Rng) -> Result<LossParameterization> {
    let mut phi = phi0.clone();
    for p in 0..phi.param_count() {
        let v = phi0.value(p)? + rng.gen_range(-0.1..=0.1);
        phi.set(p, v)?;
    }
    Ok(phi)
}

/// `Φ(i,j) = −clip(C̄_ij / max C̄, 0, 1)` from the latest symmetrized confusion.
fn confusion_phi(child: &ChildModel) -> Result<LossParameterization> {
    let classes = child
        .phi
        .class_correlation()
        .map(ClassCorrelation::classes)
        .ok_or_else(|| AlaError::Config("confusion-phi needs class pairs".into()))?;
    let sym: Vec<f64> = child
        .trackers
        .iter()
        .map(|t| t.history().last().map_or(0.0, |s| 0.5 * (s[0] + s[1])))
        .collect();
    let max = sym.iter().cloned().fold(0.0, f64::max);
    let mut phi = LossParameterization::initial(LossMode::ClassCorrelation, classes);
    if max > 0.0 {
        for (p, s) in sym.iter().enumerate() {
            phi.set(p, -(s / max).clamp(0.0, 1.0))?;
        }
    }
    Ok(phi)
}

/// Heuristic moves without learning.
///
/// Class pairs: a pair whose summed confusion exceeds its running mean moves
/// by −β; otherwise it relaxes by β toward 0. Other modes repeat the last move
/// of each parameter after an improving step and reverse it otherwise.
fn bandit_move(child: &mut ChildModel, beta: f64) -> Result<()> {
    match child.phi.mode() {
        LossMode::ClassCorrelation => {
            for p in 0..child.phi.param_count() {
                let tr = &child.trackers[p];
                let (Some(cur), Some(mean)) = (tr.history().last().cloned(), tr.running_mean()) else {
                    continue;
                };
                let v = child.phi.value(p)?;
                let next = if cur[0] + cur[1] > mean[0] + mean[1] {
                    v - beta
                } else if v < 0.0 {
                    (v + beta).min(0.0)
                } else {
                    (v - beta).max(0.0)
                };
                child.phi.set(p, next)?;
            }
        }
        _ => {
            let improved = child.last_reward > 0.0;
            for p in 0..child.phi.param_count() {
                if child.directions[p] == 0.0 {
                    child.directions[p] = 1.0;
                } else if !improved {
                    child.directions[p] = -child.directions[p];
                }
                let v = child.phi.value(p)?;
                child.phi.set(p, v + child.directions[p].signum() * beta)?;
            }
        }
    }
    Ok(())
}
