use crate::error::{AlaError, Result};
use crate::losses::clamp_prob;
use crate::tensor::Matrix;

/// Per-class mean negative log-probabilities on a labelled set.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub values: Matrix,
    pub counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn is_absent(&self, class: usize) -> bool {
        self.counts[class] == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

/// `C_ij` = mean of `−log p_j` over samples of class `i`. Rows of absent classes stay zero.
pub fn confusion_matrix(probs: &Matrix, labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if probs.rows() != labels.len() || probs.cols() != classes {
        return Err(AlaError::Shape(format!(
            "{:?} probabilities for {} labels and {classes} classes",
            probs.shape(),
            labels.len()
        )));
    }
    let mut values = Matrix::zeros(classes, classes);
    let mut counts = vec![0usize; classes];
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(AlaError::Input(format!("label {y} out of range for {classes} classes")));
        }
        counts[y] += 1;
        let row = values.row_mut(y);
        for (o, &p) in row.iter_mut().zip(probs.row(r)) {
            *o -= clamp_prob(p).ln();
        }
    }
    for (i, &n) in counts.iter().enumerate() {
        if n > 0 {
            values.row_mut(i).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    Ok(ConfusionMatrix { values, counts })
}
