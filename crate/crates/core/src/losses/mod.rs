//! Parametric losses driven by the controller, the fixed reference losses,
//! and the validation confusion statistics.
//!
//! Scalar functions here work on single samples or plain slices. The
//! `*_objective` functions build the same quantities on a [`Tape`] for
//! training.

pub mod bank;
mod confusion;
mod param;

use crate::autodiff::{Tape, Var};
use crate::error::{AlaError, Result};
use crate::tensor::{sigmoid, Matrix};

pub use bank::{DistanceBank, DEFAULT_MIXTURE, DISTANCE_FLOOR};
pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use param::{
    pair_of, pairs_for, ClassCorrelation, LossMode, LossParameterization, ParamSnapshot,
    FOCAL_MAX, FOCAL_MIN,
};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn one_hot_index(label: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in label.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(AlaError::Input("label has more than one hot entry".into()));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(AlaError::Input(format!("label entry {v} is not 0 or 1")));
        }
    }
    hot.ok_or_else(|| AlaError::Input("label has no hot entry".into()))
}

/// `−σ(yᵀ Φ log p)` for one sample.
pub fn ala_classification_loss(probs: &[f64], label: &[f64], phi: &ClassCorrelation) -> Result<f64> {
    let y = one_hot_index(label)?;
    if probs.len() != label.len() || phi.classes() != probs.len() {
        return Err(AlaError::Shape(format!(
            "{} probabilities, {} label entries, {} classes in Φ",
            probs.len(),
            label.len(),
            phi.classes()
        )));
    }
    let z: f64 = phi
        .row(y)
        .iter()
        .zip(probs)
        .map(|(f, &p)| f * clamp_prob(p).ln())
        .sum();
    Ok(-sigmoid(z))
}

/// Batch mean of [`ala_classification_loss`] with integer labels.
pub fn ala_classification_loss_batch(probs: &Matrix, labels: &[usize], phi: &ClassCorrelation) -> Result<f64> {
    check_batch(probs, labels)?;
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let mut onehot = vec![0.0; probs.cols()];
        onehot[y] = 1.0;
        total += ala_classification_loss(probs.row(r), &onehot, phi)?;
    }
    Ok(total / labels.len() as f64)
}

/// `−log p_y`.
pub fn cross_entropy_loss(probs: &[f64], label: &[f64]) -> Result<f64> {
    let y = one_hot_index(label)?;
    if probs.len() != label.len() {
        return Err(AlaError::Shape("probabilities and label differ in length".into()));
    }
    Ok(-clamp_prob(probs[y]).ln())
}

pub fn cross_entropy_batch(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_batch(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -clamp_prob(probs.get(r, y)).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

fn check_batch(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() || labels.is_empty() {
        return Err(AlaError::Shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(AlaError::Input(format!("label {y} out of range")));
    }
    Ok(())
}

/// `max(0, d⁺² − d⁻² + η)`.
pub fn triplet_loss(d_plus: f64, d_minus: f64, margin: f64) -> Result<f64> {
    if d_plus < 0.0 || d_minus < 0.0 {
        return Err(AlaError::Input("distances must be nonnegative".into()));
    }
    Ok((d_plus * d_plus - d_minus * d_minus + margin).max(0.0))
}

/// Value of the distance mixture, with a flag set when `d⁻` hit the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Guarded {
    pub value: f64,
    pub floored: bool,
}

pub fn distance_mixture_loss(d_plus: f64, d_minus: f64, weights: &[f64; 10]) -> Guarded {
    Guarded {
        value: DistanceBank::mixture(weights, d_plus, d_minus),
        floored: d_minus <= DISTANCE_FLOOR,
    }
}

/// Log-sum-exp focal weighting over one anchor's positive and negative distances.
pub fn focal_weighting_loss(d_plus: &[f64], d_minus: &[f64], scales: [f64; 2], offset: f64) -> f64 {
    let zp: Vec<f64> = d_plus.iter().map(|d| scales[0] * (d - offset)).collect();
    let zm: Vec<f64> = d_minus.iter().map(|d| -scales[1] * (d - offset)).collect();
    crate::autodiff::log1p_sum_exp(&zp) / scales[0] + crate::autodiff::log1p_sum_exp(&zm) / scales[1]
}

/// Batch-mean adaptive classification loss on the tape. `probs` holds softmax rows.
pub fn classification_objective(
    tape: &mut Tape,
    probs: Var,
    labels: &[usize],
    phi: &ClassCorrelation,
) -> Result<Var> {
    let p = tape.value(probs);
    check_batch(p, labels)?;
    let mut coef = Matrix::zeros(p.rows(), p.cols());
    for (r, &y) in labels.iter().enumerate() {
        coef.row_mut(r).copy_from_slice(phi.row(y));
    }
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let logp = tape.log(clamped);
    let weighted = tape.mul_const(logp, coef)?;
    let z = tape.sum_rows(weighted);
    let s = tape.sigmoid(z);
    let m = tape.mean(s)?;
    Ok(tape.scale(m, -1.0))
}

pub fn cross_entropy_objective(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    check_batch(tape.value(probs), labels)?;
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let logp = tape.log(clamped);
    let picked = tape.pick(logp, labels.to_vec())?;
    let m = tape.mean(picked)?;
    Ok(tape.scale(m, -1.0))
}

/// Index triplets `(anchor, positive, negative)` into a batch of embeddings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Triplets {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl Triplets {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn push(&mut self, a: usize, p: usize, n: usize) {
        self.anchors.push(a);
        self.positives.push(p);
        self.negatives.push(n);
    }
}

fn triplet_distances(tape: &mut Tape, emb: Var, t: &Triplets) -> Result<(Var, Var)> {
    let sp = tape.pair_sq_dist(emb, t.anchors.clone(), t.positives.clone())?;
    let sn = tape.pair_sq_dist(emb, t.anchors.clone(), t.negatives.clone())?;
    Ok((tape.sqrt(sp), tape.sqrt(sn)))
}

/// Hinge triplet loss on squared distances, averaged over triplets.
pub fn triplet_objective(tape: &mut Tape, emb: Var, t: &Triplets, margin: f64) -> Result<Var> {
    let sp = tape.pair_sq_dist(emb, t.anchors.clone(), t.positives.clone())?;
    let sn = tape.pair_sq_dist(emb, t.anchors.clone(), t.negatives.clone())?;
    let diff = tape.sub(sp, sn)?;
    let shifted = tape.add_scalar(diff, margin);
    let hinge = tape.relu(shifted);
    tape.mean(hinge)
}

pub fn mixture_objective(tape: &mut Tape, emb: Var, t: &Triplets, weights: [f64; 10]) -> Result<Var> {
    let (dp, dm) = triplet_distances(tape, emb, t)?;
    let l = tape.distance_mixture(dp, dm, weights)?;
    tape.mean(l)
}

/// `d⁺² + 0.5/d⁻` without mixture weights.
pub fn default_distance_objective(tape: &mut Tape, emb: Var, t: &Triplets) -> Result<Var> {
    let (dp, dm) = triplet_distances(tape, emb, t)?;
    let l = tape.default_distance(dp, dm)?;
    tape.mean(l)
}

/// Per-anchor lists of in-batch positives and negatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorGroups {
    pub pos_anchor: Vec<usize>,
    pub pos_other: Vec<usize>,
    pub pos_ranges: Vec<(usize, usize)>,
    pub neg_anchor: Vec<usize>,
    pub neg_other: Vec<usize>,
    pub neg_ranges: Vec<(usize, usize)>,
}

impl AnchorGroups {
    /// Every item is an anchor; all same-label items are positives, all others negatives.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut g = AnchorGroups::default();
        for (a, &la) in labels.iter().enumerate() {
            let (ps, ns) = (g.pos_other.len(), g.neg_other.len());
            for (o, &lo) in labels.iter().enumerate() {
                if o == a {
                    continue;
                }
                if lo == la {
                    g.pos_anchor.push(a);
                    g.pos_other.push(o);
                } else {
                    g.neg_anchor.push(a);
                    g.neg_other.push(o);
                }
            }
            g.pos_ranges.push((ps, g.pos_other.len()));
            g.neg_ranges.push((ns, g.neg_other.len()));
        }
        g
    }
}

pub fn focal_objective(
    tape: &mut Tape,
    emb: Var,
    groups: &AnchorGroups,
    scales: [f64; 2],
    offset: f64,
) -> Result<Var> {
    let sp = tape.pair_sq_dist(emb, groups.pos_anchor.clone(), groups.pos_other.clone())?;
    let sn = tape.pair_sq_dist(emb, groups.neg_anchor.clone(), groups.neg_other.clone())?;
    let (dp, dn) = (tape.sqrt(sp), tape.sqrt(sn));
    let lp = tape.group_softplus(dp, groups.pos_ranges.clone(), scales[0], 1.0, offset)?;
    let ln = tape.group_softplus(dn, groups.neg_ranges.clone(), scales[1], -1.0, offset)?;
    let total = tape.add(lp, ln)?;
    tape.mean(total)
}
