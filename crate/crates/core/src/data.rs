//! Synthetic datasets: confusable Gaussian classes, imbalanced binary data and
//! embedding clusters. Generation is a pure function of `(spec, seed)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    ConfusableGaussians,
    ImbalancedBinary,
    EmbeddingClusters,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "confusable-gaussians" => Ok(DatasetKind::ConfusableGaussians),
            "imbalanced-binary" => Ok(DatasetKind::ImbalancedBinary),
            "embedding-clusters" => Ok(DatasetKind::EmbeddingClusters),
            _ => Err(AlaError::Usage(format!("unknown dataset kind {s:?}"))),
        }
    }
}

fn default_spread() -> f64 {
    6.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// 0 keeps designated pairs as far apart as any other classes; 1 merges them.
    #[serde(default)]
    pub overlap: f64,
    /// Negatives per positive (imbalanced-binary only).
    #[serde(default = "one")]
    pub imbalance_ratio: f64,
    /// Fraction of training labels replaced by a different random class.
    #[serde(default)]
    pub label_noise: f64,
    /// Distance between class means, in units of the per-coordinate noise scale.
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::ConfusableGaussians,
            classes: 8,
            dim: 16,
            n_train: 800,
            n_val: 400,
            n_test: 800,
            overlap: 0.7,
            imbalance_ratio: 1.0,
            label_noise: 0.0,
            spread: default_spread(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AlaError::Config(m));
        if self.classes < 2 {
            return bad(format!("class count must be at least 2, got {}", self.classes));
        }
        if self.kind == DatasetKind::ImbalancedBinary && self.classes != 2 {
            return bad("imbalanced-binary data has exactly 2 classes".into());
        }
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap must lie in [0,1], got {}", self.overlap));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label noise must lie in [0,1), got {}", self.label_noise));
        }
        if !(self.imbalance_ratio > 0.0 && self.imbalance_ratio.is_finite()) {
            return bad("imbalance ratio must be positive".into());
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return bad("spread must be positive".into());
        }
        let min = match self.kind {
            DatasetKind::ImbalancedBinary => 2,
            _ => 2 * self.classes,
        };
        for (name, n) in [("train", self.n_train), ("validation", self.n_val), ("test", self.n_test)] {
            if n < min {
                return bad(format!("{name} split needs at least {min} samples, got {n}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl DatasetSplits {
    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Class means where classes `(2k, 2k+1)` form designated confusable pairs.
fn pair_means(spec: &DatasetSpec, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let pairs = spec.classes.div_ceil(2);
    // Pair centres spread so that distinct pairs sit about `spread` apart.
    let radius = spec.spread / std::f64::consts::SQRT_2;
    let mut means = Vec::with_capacity(spec.classes);
    for _ in 0..pairs {
        let c: Vec<f64> = random_unit(spec.dim, rng).into_iter().map(|v| v * radius).collect();
        let u = random_unit(spec.dim, rng);
        let half = 0.5 * (1.0 - spec.overlap) * spec.spread;
        means.push(c.iter().zip(&u).map(|(a, b)| a - half * b).collect());
        means.push(c.iter().zip(&u).map(|(a, b)| a + half * b).collect());
    }
    means.truncate(spec.classes);
    means
}

fn stratified_labels(n: usize, classes: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(rng);
    y
}

fn sample_split(
    labels: Vec<usize>,
    means: &[Vec<f64>],
    scales: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Split {
    let dim = means[0].len();
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &y in &labels {
        for d in 0..dim {
            data.push(means[y][d] + scales[y][d] * normal(rng));
        }
    }
    Split {
        x: Matrix::from_vec(labels.len(), dim, data).expect("sizes agree"),
        y: labels,
    }
}

fn corrupt_labels(split: &mut Split, classes: usize, noise: f64, rng: &mut impl Rng) {
    for y in split.y.iter_mut() {
        if rng.gen::<f64>() < noise {
            let shift = rng.gen_range(1..classes);
            *y = (*y + shift) % classes;
        }
    }
}

pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (means, scales) = match spec.kind {
        DatasetKind::ConfusableGaussians => {
            let means = pair_means(spec, &mut rng);
            (means, vec![vec![1.0; spec.dim]; spec.classes])
        }
        DatasetKind::EmbeddingClusters => {
            let means = pair_means(spec, &mut rng);
            let scales = (0..spec.classes)
                .map(|_| (0..spec.dim).map(|_| rng.gen_range(0.5..1.5)).collect())
                .collect();
            (means, scales)
        }
        DatasetKind::ImbalancedBinary => {
            let u = random_unit(spec.dim, &mut rng);
            let sep = (1.0 - spec.overlap) * spec.spread;
            let neg = vec![0.0; spec.dim];
            let pos = u.iter().map(|v| v * sep).collect();
            (vec![neg, pos], vec![vec![1.0; spec.dim]; 2])
        }
    };

    let labels_for = |n: usize, rng: &mut ChaCha8Rng| match spec.kind {
        DatasetKind::ImbalancedBinary => {
            let n_pos = (n as f64 / (spec.imbalance_ratio + 1.0)).round() as usize;
            let n_pos = n_pos.clamp(1, n - 1);
            let mut y = vec![0usize; n - n_pos];
            y.extend(std::iter::repeat(1).take(n_pos));
            y.shuffle(rng);
            y
        }
        _ => stratified_labels(n, spec.classes, rng),
    };

    let y = labels_for(spec.n_train, &mut rng);
    let mut train = sample_split(y, &means, &scales, &mut rng);
    let y = labels_for(spec.n_val, &mut rng);
    let val = sample_split(y, &means, &scales, &mut rng);
    let y = labels_for(spec.n_test, &mut rng);
    let test = sample_split(y, &means, &scales, &mut rng);
    if spec.label_noise > 0.0 {
        corrupt_labels(&mut train, spec.classes, spec.label_noise, &mut rng);
    }
    Ok(DatasetSplits {
        spec: spec.clone(),
        seed,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalance_counts() {
        let spec = DatasetSpec {
            kind: DatasetKind::ImbalancedBinary,
            classes: 2,
            dim: 4,
            n_train: 1100,
            n_val: 110,
            n_test: 110,
            imbalance_ratio: 10.0,
            ..DatasetSpec::default()
        };
        let d = generate_dataset(&spec, 3).unwrap();
        assert_eq!(d.train.class_counts(2), vec![1000, 100]);
        assert_eq!(d.val.class_counts(2), vec![100, 10]);
    }

    #[test]
    fn deterministic() {
        let spec = DatasetSpec::default();
        let a = serde_json::to_string(&generate_dataset(&spec, 11).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_dataset(&spec, 11).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&generate_dataset(&spec, 12).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_class_present() {
        let spec = DatasetSpec {
            classes: 12,
            n_train: 24,
            n_val: 24,
            n_test: 24,
            ..DatasetSpec::default()
        };
        let d = generate_dataset(&spec, 0).unwrap();
        assert!(d.train.class_counts(12).iter().all(|&c| c == 2));
        assert!(d.val.class_counts(12).iter().all(|&c| c == 2));
    }

    #[test]
    fn pair_overlap_controls_distance() {
        let mut spec = DatasetSpec {
            overlap: 1.0,
            ..DatasetSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = pair_means(&spec, &mut rng);
        assert!(crate::tensor::euclidean(&m[0], &m[1]) < 1e-12);
        spec.overlap = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = pair_means(&spec, &mut rng);
        assert!((crate::tensor::euclidean(&m[0], &m[1]) - spec.spread).abs() < 1e-9);
    }

    #[test]
    fn label_noise_touches_training_only() {
        let clean = DatasetSpec::default();
        let noisy = DatasetSpec {
            label_noise: 0.5,
            ..clean.clone()
        };
        let a = generate_dataset(&clean, 1).unwrap();
        let b = generate_dataset(&noisy, 1).unwrap();
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.x, b.train.x);
        let flipped = a.train.y.iter().zip(&b.train.y).filter(|(p, q)| p != q).count();
        assert!(flipped > 300 && flipped < 500, "{flipped}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = DatasetSpec {
            classes: 1,
            ..DatasetSpec::default()
        };
        assert!(generate_dataset(&s, 0).is_err());
        s.classes = 4;
        s.overlap = 1.5;
        assert!(generate_dataset(&s, 0).is_err());
    }
}
