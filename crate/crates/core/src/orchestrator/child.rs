use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::controller::StatTracker;
use crate::data::{DatasetSplits, Split};
use crate::error::{AlaError, Result};
use crate::losses::{self, AnchorGroups, ClassCorrelation, DistanceBank, LossMode, LossParameterization, Triplets};
use crate::metrics::{self, MetricKind, RewardSource};
use crate::network::{Head, Network};
use crate::optim::Optimizer;
use crate::tensor::{euclidean, Matrix};

use super::config::{FixedLoss, Task, TrainRunConfig};
use super::seeds;

/// The training objective for one inner iteration.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    ClassCorrelation(ClassCorrelation),
    CrossEntropy,
    Triplet { margin: f64 },
    Mixture([f64; 10]),
    DefaultDistance,
    Focal { scales: [f64; 2], offset: f64 },
}

impl Objective {
    /// The adaptive loss under the current Φ.
    pub fn adaptive(phi: &LossParameterization, cfg: &TrainRunConfig) -> Self {
        match phi {
            LossParameterization::ClassCorrelation(m) => Objective::ClassCorrelation(m.clone()),
            LossParameterization::DistanceMixture { weights } => Objective::Mixture(*weights),
            LossParameterization::FocalWeighting { scales } => Objective::Focal {
                scales: *scales,
                offset: cfg.alpha,
            },
        }
    }

    pub fn fixed(phi0: &LossParameterization, cfg: &TrainRunConfig) -> Self {
        match (cfg.fixed_loss, cfg.task) {
            (FixedLoss::Parametric, _) => Objective::adaptive(phi0, cfg),
            (FixedLoss::Reference, Task::Classification) => Objective::CrossEntropy,
            (FixedLoss::Reference, Task::MetricLearning) => Objective::Triplet { margin: cfg.eta },
            (FixedLoss::DefaultDistance, _) => Objective::DefaultDistance,
        }
    }

    fn uses_groups(&self) -> bool {
        matches!(self, Objective::Focal { .. })
    }
}

/// A training mini-batch; metric-learning batches carry their index structure.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub triplets: Triplets,
    pub groups: AnchorGroups,
}

/// Epoch-wise shuffled mini-batches driven by one data-order stream.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    by_class: Vec<Vec<usize>>,
}

impl BatchSampler {
    pub fn new(split: &Split, classes: usize, rng: ChaCha8Rng) -> Self {
        let mut by_class = vec![Vec::new(); classes];
        for (i, &y) in split.y.iter().enumerate() {
            by_class[y].push(i);
        }
        BatchSampler {
            rng,
            order: (0..split.len()).collect(),
            cursor: split.len(),
            by_class,
        }
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (n - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }

    pub fn next(&mut self, split: &Split, task: Task, objective: &Objective, size: usize) -> Batch {
        let idx = self.next_indices(size);
        if task == Task::Classification || objective.uses_groups() {
            let labels: Vec<usize> = idx.iter().map(|&i| split.y[i]).collect();
            let groups = if objective.uses_groups() {
                AnchorGroups::from_labels(&labels)
            } else {
                AnchorGroups::default()
            };
            return Batch {
                x: split.x.select_rows(&idx),
                labels,
                triplets: Triplets::default(),
                groups,
            };
        }
        let mut anchors = Vec::with_capacity(size);
        let mut positives = Vec::with_capacity(size);
        let mut negatives = Vec::with_capacity(size);
        for &a in &idx {
            let same = &self.by_class[split.y[a]];
            if same.len() < 2 || same.len() == split.len() {
                continue;
            }
            let p = loop {
                let c = same[self.rng.gen_range(0..same.len())];
                if c != a {
                    break c;
                }
            };
            let n = loop {
                let c = self.rng.gen_range(0..split.len());
                if split.y[c] != split.y[a] {
                    break c;
                }
            };
            anchors.push(a);
            positives.push(p);
            negatives.push(n);
        }
        let b = anchors.len();
        let rows: Vec<usize> = anchors.iter().chain(&positives).chain(&negatives).copied().collect();
        let mut triplets = Triplets::default();
        for i in 0..b {
            triplets.push(i, b + i, 2 * b + i);
        }
        Batch {
            x: split.x.select_rows(&rows),
            labels: rows.iter().map(|&i| split.y[i]).collect(),
            triplets,
            groups: AnchorGroups::default(),
        }
    }
}

/// Batch loss and the gradient for every network parameter.
pub fn loss_and_grads(net: &Network, batch: &Batch, objective: &Objective) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch.x.clone());
    let fwd = net.forward_tape(&mut tape, x)?;
    let out = fwd.output;
    let loss = match objective {
        Objective::ClassCorrelation(phi) => losses::classification_objective(&mut tape, out, &batch.labels, phi)?,
        Objective::CrossEntropy => losses::cross_entropy_objective(&mut tape, out, &batch.labels)?,
        Objective::Triplet { margin } => losses::triplet_objective(&mut tape, out, &batch.triplets, *margin)?,
        Objective::Mixture(w) => losses::mixture_objective(&mut tape, out, &batch.triplets, *w)?,
        Objective::DefaultDistance => losses::default_distance_objective(&mut tape, out, &batch.triplets)?,
        Objective::Focal { scales, offset } => {
            losses::focal_objective(&mut tape, out, &batch.groups, *scales, *offset)?
        }
    };
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(AlaError::NonFinite(format!("training loss {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let g = fwd
        .params
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, g))
}

/// A split with the fixed index structure needed to evaluate it.
#[derive(Clone, Debug)]
pub struct EvalSet<'a> {
    pub split: &'a Split,
    /// Anchor, positive, negative (metric learning).
    pub triplets: Vec<(usize, usize, usize)>,
    /// Pair index and same-class flag (verification).
    pub pairs: Vec<(usize, usize, bool)>,
}

impl<'a> EvalSet<'a> {
    pub fn new(split: &'a Split, task: Task, rng: &mut ChaCha8Rng) -> Self {
        let mut set = EvalSet {
            split,
            triplets: Vec::new(),
            pairs: Vec::new(),
        };
        if task == Task::Classification {
            return set;
        }
        let classes = split.y.iter().copied().max().map_or(0, |m| m + 1);
        let mut by_class = vec![Vec::new(); classes];
        for (i, &y) in split.y.iter().enumerate() {
            by_class[y].push(i);
        }
        for (a, &y) in split.y.iter().enumerate() {
            let same = &by_class[y];
            if same.len() < 2 || same.len() == split.len() {
                continue;
            }
            let p = loop {
                let c = same[rng.gen_range(0..same.len())];
                if c != a {
                    break c;
                }
            };
            let n = loop {
                let c = rng.gen_range(0..split.len());
                if split.y[c] != y {
                    break c;
                }
            };
            set.triplets.push((a, p, n));
            set.pairs.push((a, p, true));
            set.pairs.push((a, n, false));
        }
        set
    }
}

/// Everything measured on one split at one point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Metric in its natural orientation.
    pub metric: f64,
    /// Reference loss: cross-entropy or the margin triplet loss.
    pub loss: f64,
    /// Per-parameter statistics rows, when requested.
    pub stats: Option<Vec<Vec<f64>>>,
}

pub fn evaluate(net: &Network, set: &EvalSet, cfg: &TrainRunConfig, with_stats: bool) -> Result<Evaluation> {
    let out = net.forward(&set.split.x)?;
    let y = &set.split.y;
    match cfg.task {
        Task::Classification => {
            debug_assert_eq!(net.head(), Head::Softmax);
            let metric = match cfg.metric {
                MetricKind::Aucpr => metrics::aucpr_multiclass(&out, y)?,
                _ => metrics::classification_error(&out, y)?,
            };
            let loss = losses::cross_entropy_batch(&out, y)?;
            let stats = if with_stats {
                let c = losses::confusion_matrix(&out, y, cfg.data.classes)?;
                Some(
                    losses::pairs_for(cfg.data.classes)
                        .into_iter()
                        .map(|(i, j)| vec![c.get(i, j), c.get(j, i)])
                        .collect(),
                )
            } else {
                None
            };
            Ok(Evaluation { metric, loss, stats })
        }
        Task::MetricLearning => {
            let metric = match cfg.metric {
                MetricKind::RecallAtK { k } => metrics::recall_at_k(&out, y, k)?,
                _ => {
                    let d: Vec<f64> = set.pairs.iter().map(|&(a, b, _)| euclidean(out.row(a), out.row(b))).collect();
                    let same: Vec<bool> = set.pairs.iter().map(|p| p.2).collect();
                    metrics::verification_accuracy(&d, &same)?
                }
            };
            let dist: Vec<(f64, f64)> = set
                .triplets
                .iter()
                .map(|&(a, p, n)| (euclidean(out.row(a), out.row(p)), euclidean(out.row(a), out.row(n))))
                .collect();
            let m = dist.len().max(1) as f64;
            let mut loss = 0.0;
            for &(dp, dn) in &dist {
                loss += losses::triplet_loss(dp, dn, cfg.eta)?;
            }
            loss /= m;
            let stats = if with_stats {
                Some(match cfg.loss_mode {
                    LossMode::DistanceMixture => {
                        let mut acc = [0.0; 10];
                        for &(dp, dn) in &dist {
                            for (s, v) in acc.iter_mut().zip(DistanceBank::evaluate_all(dp, dn)) {
                                *s += v;
                            }
                        }
                        acc.iter().map(|s| vec![s / m]).collect()
                    }
                    _ => {
                        let sp: f64 = dist.iter().map(|d| d.0).sum();
                        let sn: f64 = dist.iter().map(|d| d.1).sum();
                        vec![vec![sp / m], vec![sn / m]]
                    }
                })
            } else {
                None
            };
            Ok(Evaluation { metric, loss, stats })
        }
    }
}

/// Fixed data and evaluation structure shared by every child of a run.
pub struct RunContext<'a> {
    pub cfg: &'a TrainRunConfig,
    pub data: &'a DatasetSplits,
    pub train_eval: EvalSet<'a>,
    pub val: EvalSet<'a>,
    test: EvalSet<'a>,
    eval_iterations: Vec<usize>,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &'a TrainRunConfig, data: &'a DatasetSplits) -> Self {
        let mut rng = seeds::stream(cfg.seed, "eval-structure", 0);
        let train_eval = EvalSet::new(&data.train, cfg.task, &mut rng);
        let val = EvalSet::new(&data.val, cfg.task, &mut rng);
        let test = EvalSet::new(&data.test, cfg.task, &mut rng);
        let (k, p) = (cfg.k, cfg.eval_points.min(cfg.k));
        let eval_iterations = (1..=p).map(|m| (m * k).div_ceil(p)).collect();
        RunContext {
            cfg,
            data,
            train_eval,
            val,
            test,
            eval_iterations,
        }
    }

    /// Lower-is-better quantity whose discounted sum drives the reward.
    pub fn reward_quantity(&self, net: &Network) -> Result<f64> {
        let set = if self.cfg.reward.uses_training_split() {
            &self.train_eval
        } else {
            &self.val
        };
        let e = evaluate(net, set, self.cfg, false)?;
        Ok(if self.cfg.reward.uses_loss() {
            e.loss
        } else {
            self.cfg.metric.to_error(e.metric)
        })
    }

    /// Held-out test metric; only ever written to the report.
    pub fn test_probe(&self, net: &Network) -> Result<f64> {
        Ok(evaluate(net, &self.test, self.cfg, false)?.metric)
    }

    pub fn eval_iterations(&self) -> &[usize] {
        &self.eval_iterations
    }

    pub fn reward_source(&self) -> RewardSource {
        self.cfg.reward
    }
}

/// One child network with its optimizer, data stream, action stream and Φ.
#[derive(Clone, Debug)]
pub struct ChildModel {
    pub id: usize,
    pub net: Network,
    pub optimizer: Optimizer,
    pub sampler: BatchSampler,
    pub action_rng: ChaCha8Rng,
    pub phi: LossParameterization,
    pub trackers: Vec<StatTracker>,
    /// Discounted metric of the latest step.
    pub metric_t: f64,
    pub last_reward: f64,
    /// Sign of the last move per parameter, 0 before the first (bandit baseline).
    pub directions: Vec<f64>,
    pub reinit_events: usize,
}

impl ChildModel {
    pub fn new(id: usize, ctx: &RunContext) -> Result<Self> {
        let cfg = ctx.cfg;
        let head = match cfg.task {
            Task::Classification => Head::Softmax,
            Task::MetricLearning => Head::L2Normalize,
        };
        let mut init = seeds::stream(cfg.seed, "init", id as u64);
        let net = Network::new(&cfg.layer_sizes(), head, &mut init)?;
        let optimizer = Optimizer::for_params(cfg.model_optimizer, &net.params());
        let sampler = BatchSampler::new(&ctx.data.train, cfg.data.classes, seeds::stream(cfg.seed, "order", id as u64));
        let phi = LossParameterization::initial(cfg.loss_mode, cfg.data.classes);
        let n = phi.param_count();
        Ok(ChildModel {
            id,
            net,
            optimizer,
            sampler,
            action_rng: seeds::stream(cfg.seed, "action", id as u64),
            phi,
            trackers: (0..n).map(|_| StatTracker::new(cfg.history)).collect(),
            metric_t: 0.0,
            last_reward: 0.0,
            directions: vec![0.0; n],
            reinit_events: 0,
        })
    }

    pub fn record_stats(&mut self, stats: Vec<Vec<f64>>) {
        for (t, s) in self.trackers.iter_mut().zip(stats) {
            t.record(s);
        }
    }

    /// `K` inner iterations under `objective`; returns the reward-quantity
    /// series at the evaluation points. A non-finite loss restores the
    /// step-start checkpoint and retries with fresh batches.
    pub fn train_inner(&mut self, ctx: &RunContext, objective: &Objective) -> Result<Vec<f64>> {
        const MAX_RETRIES: usize = 3;
        let checkpoint = (self.net.clone(), self.optimizer.clone());
        for attempt in 0..=MAX_RETRIES {
            match self.try_inner(ctx, objective) {
                Ok(series) => return Ok(series),
                Err(AlaError::NonFinite(msg)) => {
                    self.reinit_events += 1;
                    log::warn!(
                        "child {} step reset after non-finite value ({msg}), attempt {}",
                        self.id,
                        attempt + 1
                    );
                    self.net = checkpoint.0.clone();
                    self.optimizer = checkpoint.1.clone();
                }
                Err(e) => return Err(e),
            }
        }
        log::warn!("child {} keeps its step-start weights after repeated failures", self.id);
        let q = ctx.reward_quantity(&self.net)?;
        Ok(vec![q; ctx.eval_iterations().len()])
    }

    fn try_inner(&mut self, ctx: &RunContext, objective: &Objective) -> Result<Vec<f64>> {
        let cfg = ctx.cfg;
        let points = ctx.eval_iterations();
        let mut series = Vec::with_capacity(points.len());
        let mut next_eval = 0;
        for it in 1..=cfg.k {
            let batch = self.sampler.next(&ctx.data.train, cfg.task, objective, cfg.batch_size);
            let (_, mut grads) = loss_and_grads(&self.net, &batch, objective)?;
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(self.net.params()) {
                    for (gv, &pv) in g.data_mut().iter_mut().zip(p.data()) {
                        *gv += cfg.weight_decay * pv;
                    }
                }
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(AlaError::NonFinite("gradient".into()));
            }
            let refs: Vec<&Matrix> = grads.iter().collect();
            let mut params = self.net.params_mut();
            self.optimizer.step(&mut params, &refs)?;
            if next_eval < points.len() && points[next_eval] == it {
                series.push(ctx.reward_quantity(&self.net)?);
                next_eval += 1;
            }
        }
        Ok(series)
    }
}
