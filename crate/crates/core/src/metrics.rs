//! Evaluation metrics, the discounted cumulative metric and the quantized reward.
//!
//! Every metric has a natural orientation; [`MetricKind::to_error`] maps a
//! natural value to the lower-is-better form in `[0, 1]` that the reward uses.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::tensor::{euclidean, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricKind {
    ClassificationError,
    Aucpr,
    RecallAtK { k: usize },
    VerificationAccuracy,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::ClassificationError)
    }

    /// Lower-is-better form in `[0, 1]`.
    pub fn to_error(self, value: f64) -> f64 {
        if self.higher_is_better() {
            1.0 - value
        } else {
            value
        }
    }

    pub fn name(self) -> String {
        match self {
            MetricKind::ClassificationError => "error".into(),
            MetricKind::Aucpr => "aucpr".into(),
            MetricKind::RecallAtK { k } => format!("recall@{k}"),
            MetricKind::VerificationAccuracy => "verification".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(MetricKind::ClassificationError),
            "aucpr" => Ok(MetricKind::Aucpr),
            "verification" => Ok(MetricKind::VerificationAccuracy),
            _ => match s.strip_prefix("recall@") {
                Some(k) => k
                    .parse()
                    .map(|k| MetricKind::RecallAtK { k })
                    .map_err(|_| AlaError::Usage(format!("bad recall level in {s:?}"))),
                None => Err(AlaError::Usage(format!("unknown metric {s:?}"))),
            },
        }
    }
}

/// Where the reward signal is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardSource {
    ValMetric,
    ValLoss,
    TrainMetric,
    TrainLoss,
}

impl RewardSource {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "val-metric" => Ok(RewardSource::ValMetric),
            "val-loss" => Ok(RewardSource::ValLoss),
            "train-metric" => Ok(RewardSource::TrainMetric),
            "train-loss" => Ok(RewardSource::TrainLoss),
            _ => Err(AlaError::Usage(format!("unknown reward source {s:?}"))),
        }
    }

    pub fn uses_training_split(self) -> bool {
        matches!(self, RewardSource::TrainMetric | RewardSource::TrainLoss)
    }

    pub fn uses_loss(self) -> bool {
        matches!(self, RewardSource::ValLoss | RewardSource::TrainLoss)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn classification_error(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(AlaError::Usage("classification error of an empty set".into()));
    }
    if probs.rows() != labels.len() {
        return Err(AlaError::Shape(format!("{} rows for {} labels", probs.rows(), labels.len())));
    }
    let wrong = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(probs.row(r)) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Descending-score ranking, ties broken by original index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Average precision `Σ_k (R_k − R_{k−1})·P_k` over ranks.
pub fn aucpr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AlaError::Shape("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(AlaError::Undefined("average precision with no positives".into()));
    }
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            precision_sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((precision_sum / positives as f64).min(1.0))
}

/// One-vs-rest average precision, macro-averaged over classes that have positives.
pub fn aucpr_multiclass(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(AlaError::Shape(format!("{} rows for {} labels", probs.rows(), labels.len())));
    }
    if probs.cols() == 2 {
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, 1)).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        return aucpr(&scores, &pos);
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..probs.cols() {
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if !pos.iter().any(|&p| p) {
            continue;
        }
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, c)).collect();
        total += aucpr(&scores, &pos)?;
        used += 1;
    }
    if used == 0 {
        return Err(AlaError::Undefined("no class has positives".into()));
    }
    Ok(total / used as f64)
}

/// Fraction of queries with a same-class item among their `k` nearest neighbours.
pub fn recall_at_k(embeddings: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(AlaError::Shape(format!("{n} embeddings for {} labels", labels.len())));
    }
    if k == 0 || k >= n {
        return Err(AlaError::Usage(format!("recall@{k} needs 0 < k < n = {n}")));
    }
    let mut hits = 0usize;
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for q in 0..n {
        dist.clear();
        dist.extend(
            (0..n)
                .filter(|&j| j != q)
                .map(|j| (euclidean(embeddings.row(q), embeddings.row(j)), j)),
        );
        dist.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
        });
        if dist[..k].iter().any(|&(_, j)| labels[j] == labels[q]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Best accuracy of "same iff distance < τ" over thresholds at midpoints of the
/// sorted distances and ±∞.
pub fn verification_accuracy(distances: &[f64], same: &[bool]) -> Result<f64> {
    let m = distances.len();
    if m == 0 {
        return Err(AlaError::Usage("verification accuracy of no pairs".into()));
    }
    if same.len() != m {
        return Err(AlaError::Shape("distances and flags differ in length".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap_or(Ordering::Equal));
    // τ = −∞: everything predicted "different".
    let mut correct = same.iter().filter(|&&s| !s).count();
    let mut best = correct;
    let mut k = 0;
    while k < m {
        // Move every pair tied at this distance below the threshold at once.
        let d = distances[order[k]];
        while k < m && distances[order[k]] == d {
            if same[order[k]] {
                correct += 1;
            } else {
                correct -= 1;
            }
            k += 1;
        }
        best = best.max(correct);
    }
    Ok(best as f64 / m as f64)
}

/// `Σ_m γ^{P−m} M_m` over the `P` evaluation points of one step.
pub fn discounted_metric(series: &[f64], gamma: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(AlaError::Usage("discounted metric of an empty series".into()));
    }
    let p = series.len();
    Ok(series
        .iter()
        .enumerate()
        .map(|(m, v)| gamma.powi((p - 1 - m) as i32) * v)
        .sum())
}

/// `sign(M_t − M_{t+1})` with `sign(0) = 0`.
pub fn reward(previous: f64, current: f64) -> f64 {
    let diff = previous - current;
    if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// An ordered `(iteration, value)` trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    points: Vec<(usize, f64)>,
}

impl MetricSeries {
    pub fn push(&mut self, iteration: usize, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if iteration <= last {
                return Err(AlaError::Usage(format!(
                    "iteration {iteration} does not follow {last}"
                )));
            }
        }
        self.points.push((iteration, value));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn discounted(&self, gamma: f64) -> Result<f64> {
        discounted_metric(&self.values(), gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_error_counts() {
        let p = Matrix::from_rows(&[
            vec![0.9, 0.1],
            vec![0.2, 0.8],
            vec![0.6, 0.4],
            vec![0.3, 0.7],
        ])
        .unwrap();
        assert_eq!(classification_error(&p, &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(classification_error(&p, &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(classification_error(&p, &[0, 1, 1, 1]).unwrap(), 0.25);
        assert!(classification_error(&Matrix::zeros(0, 2), &[]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_class() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(classification_error(&p, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn aucpr_examples() {
        let ap = aucpr(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(ap, 1.0);
        assert_eq!(aucpr(&[0.9, 0.1], &[false, true]).unwrap(), 0.5);
        let ap = aucpr(&[0.9, 0.5, 0.4], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + (2.0 / 3.0) * 0.5)).abs() < 1e-15);
        assert!(matches!(aucpr(&[0.3], &[false]), Err(AlaError::Undefined(_))));
    }

    #[test]
    fn recall_examples() {
        let line = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
        assert_eq!(recall_at_k(&line, &[0, 0, 1, 1], 1).unwrap(), 1.0);
        assert_eq!(recall_at_k(&line, &[0, 1, 0, 1], 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&line, &[0, 1, 0, 1], 3).unwrap(), 1.0);
        assert!(recall_at_k(&line, &[0, 0, 1, 1], 4).is_err());
    }

    #[test]
    fn verification_examples() {
        let v = verification_accuracy(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(verification_accuracy(&[0.1, 0.9], &[false, true]).unwrap(), 0.5);
        let v = verification_accuracy(&[0.1, 0.2, 0.3, 0.4], &[true, false, true, false]).unwrap();
        assert_eq!(v, 0.75);
        assert!(verification_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn discounted_examples() {
        assert_eq!(discounted_metric(&[0.3, 0.7, 0.2], 0.0).unwrap(), 0.2);
        assert!((discounted_metric(&[0.5, 0.4], 0.9).unwrap() - 0.85).abs() < 1e-15);
        let c = 0.37;
        let v = discounted_metric(&[c; 10], 0.9).unwrap();
        assert!((v - c * (1.0 - 0.9f64.powi(10)) / 0.1).abs() < 1e-12);
        assert!((v / c - 6.5132).abs() < 1e-4);
        assert!(discounted_metric(&[], 0.9).is_err());
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(0.85, 0.80), 1.0);
        assert_eq!(reward(0.80, 0.85), -1.0);
        assert_eq!(reward(0.8, 0.8), 0.0);
    }

    #[test]
    fn series_requires_increasing_iterations() {
        let mut s = MetricSeries::default();
        s.push(10, 0.5).unwrap();
        s.push(20, 0.4).unwrap();
        assert!(s.push(20, 0.3).is_err());
        assert!((s.discounted(0.9).unwrap() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn metric_names_parse_back() {
        for m in [
            MetricKind::ClassificationError,
            MetricKind::Aucpr,
            MetricKind::RecallAtK { k: 4 },
            MetricKind::VerificationAccuracy,
        ] {
            assert_eq!(MetricKind::parse(&m.name()).unwrap(), m);
        }
    }
}
