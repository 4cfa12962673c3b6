//! First-order update rules with per-parameter state.

use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// `v ← m·v + g; w ← w − lr·v`
    MomentumSgd { lr: f64, momentum: f64 },
    /// `s ← ρ·s + (1−ρ)·g²; w ← w − lr·g/(√s + ε)`
    RmsProp { lr: f64, decay: f64, eps: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn momentum_sgd(lr: f64, momentum: f64) -> Self {
        OptimizerKind::MomentumSgd { lr, momentum }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::MomentumSgd { lr, .. }
            | OptimizerKind::RmsProp { lr, .. }
            | OptimizerKind::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Optimizer {
            kind,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn for_params(kind: OptimizerKind, params: &[&Matrix]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Optimizer::new(kind, &shapes)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Momentum (or first-moment) buffers.
    pub fn buffers(&self) -> &[Matrix] {
        &self.first
    }

    pub fn buffers_mut(&mut self) -> &mut [Matrix] {
        &mut self.first
    }

    /// One descent step. Parameters must be finite afterwards.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(AlaError::Shape(format!(
                "{} params, {} grads, {} buffers",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), b) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != b.shape() {
                return Err(AlaError::Shape(format!(
                    "param {:?}, grad {:?}, buffer {:?}",
                    p.shape(),
                    g.shape(),
                    b.shape()
                )));
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::MomentumSgd { lr, momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vi = momentum * *vi + gi;
                        *w -= lr * *vi;
                    }
                }
            }
            OptimizerKind::RmsProp { lr, decay, eps } => {
                for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.second) {
                    for ((w, gi), si) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                        *si = decay * *si + (1.0 - decay) * gi * gi;
                        *w -= lr * gi / (si.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(AlaError::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: OptimizerKind, w0: f64, v0: f64, g: f64) -> (f64, f64) {
        let mut w = Matrix::scalar(w0);
        let mut opt = Optimizer::new(kind, &[(1, 1)]);
        opt.buffers_mut()[0] = Matrix::scalar(v0);
        opt.step(&mut [&mut w], &[&Matrix::scalar(g)]).unwrap();
        (w.data()[0], opt.buffers()[0].data()[0])
    }

    #[test]
    fn plain_sgd() {
        let (w, _) = run(OptimizerKind::momentum_sgd(0.1, 0.0), 1.0, 0.0, 2.0);
        assert!((w - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_carries_velocity() {
        let (w, v) = run(OptimizerKind::momentum_sgd(0.1, 0.9), 1.0, 1.0, 0.0);
        assert!((v - 0.9).abs() < 1e-15);
        assert!((w - 0.91).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (w, _) = run(OptimizerKind::momentum_sgd(0.1, 0.0), 1.25, 0.0, 0.0);
        assert_eq!(w, 1.25);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Matrix::zeros(2, 1);
        let mut opt = Optimizer::new(OptimizerKind::momentum_sgd(0.1, 0.0), &[(2, 1)]);
        assert!(opt.step(&mut [&mut w], &[&Matrix::zeros(1, 2)]).is_err());
        assert!(opt.step(&mut [&mut w], &[]).is_err());
    }

    #[test]
    fn adaptive_rules_descend() {
        for kind in [
            OptimizerKind::adam(0.01),
            OptimizerKind::RmsProp { lr: 0.01, decay: 0.9, eps: 1e-8 },
        ] {
            let (w, _) = run(kind, 1.0, 0.0, 3.0);
            assert!(w < 1.0);
        }
    }
}
