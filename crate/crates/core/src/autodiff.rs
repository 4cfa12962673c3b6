//! Reverse-mode differentiation over a tape of matrix-valued nodes.
//!
//! Nodes are appended in evaluation order, so the tape itself is a valid
//! topological order: every operand index is smaller than the index of the
//! node that consumes it. `backward` walks the tape once in reverse.

use crate::error::{AlaError, Result};
use crate::losses::bank::{DistanceBank, DISTANCE_FLOOR};
use crate::tensor::{self, Matrix, L2_EPS};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Matrix),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows(Var, Vec<f64>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, Vec<usize>),
    PairSqDist(Var, Vec<usize>, Vec<usize>),
    DistanceMixture {
        plus: Var,
        minus: Var,
        weights: [f64; 10],
    },
    DefaultDistance(Var, Var),
    GroupSoftplus {
        input: Var,
        groups: Vec<(usize, usize)>,
        scale: f64,
        sign: f64,
        offset: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Append-only computation record.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that influences it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of the given shape when `v` does not reach the loss.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = tensor::add_row_bias(self.value(a), self.value(bias))?;
        Ok(self.push(Op::AddRowBias(a, bias), value))
    }

    fn zip_with(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_shape(y, what)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "add", |p, q| p + q)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    /// Elementwise product with a constant (non-differentiated) matrix.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let x = self.value(a);
        x.same_shape(&c, "mul_const")?;
        let data = x.data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
        let v = Matrix::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(Op::MulConst(a, c), v))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = tensor::relu(self.value(a));
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tensor::sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Square root; the gradient is computed with the value floored at 1e-12.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0).sqrt());
        self.push(Op::Sqrt(a), v)
    }

    /// Clamp to `[lo, hi]`; gradient passes only where the input is inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = tensor::softmax_rows(self.value(a));
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = tensor::log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmaxRows(a), v)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let (v, norms) = tensor::l2_normalize_rows(self.value(a));
        self.push(Op::L2NormalizeRows(a, norms), v)
    }

    /// `[n×m] -> [n×1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let v = Matrix::column(data);
        self.push(Op::SumRows(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(AlaError::Usage("mean of an empty node".into()));
        }
        let v = Matrix::scalar(x.sum() / x.len() as f64);
        Ok(self.push(Op::Mean(a), v))
    }

    /// Selects column `idx[r]` from each row `r`: `[n×m] -> [n×1]`.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() || idx.iter().any(|&c| c >= x.cols()) {
            return Err(AlaError::Shape(format!(
                "pick {} indices from {:?}",
                idx.len(),
                x.shape()
            )));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| x.get(r, c)).collect();
        let v = Matrix::column(data);
        Ok(self.push(Op::Pick(a, idx), v))
    }

    /// Squared Euclidean distance between rows `left[k]` and `right[k]` of `a`.
    pub fn pair_sq_dist(&mut self, a: Var, left: Vec<usize>, right: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if left.len() != right.len() || left.iter().chain(&right).any(|&i| i >= x.rows()) {
            return Err(AlaError::Shape("pair index out of range".into()));
        }
        let data = left
            .iter()
            .zip(&right)
            .map(|(&i, &j)| {
                x.row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum()
            })
            .collect();
        let v = Matrix::column(data);
        Ok(self.push(Op::PairSqDist(a, left, right), v))
    }

    /// Weighted distance-function mixture over column vectors of positive and
    /// negative distances; negative distances are floored before the decreasing bank.
    pub fn distance_mixture(&mut self, plus: Var, minus: Var, weights: [f64; 10]) -> Result<Var> {
        let (p, m) = (self.value(plus), self.value(minus));
        p.same_shape(m, "distance_mixture")?;
        if p.cols() != 1 {
            return Err(AlaError::Shape("distance_mixture expects column vectors".into()));
        }
        let data = p
            .data()
            .iter()
            .zip(m.data())
            .map(|(&dp, &dm)| DistanceBank::mixture(&weights, dp, dm))
            .collect();
        let v = Matrix::column(data);
        Ok(self.push(
            Op::DistanceMixture {
                plus,
                minus,
                weights,
            },
            v,
        ))
    }

    /// The fixed default distance formulation `d⁺² + 0.5/d⁻` (floored), computed
    /// without going through mixture weights.
    pub fn default_distance(&mut self, plus: Var, minus: Var) -> Result<Var> {
        let (p, m) = (self.value(plus), self.value(minus));
        p.same_shape(m, "default_distance")?;
        if p.cols() != 1 {
            return Err(AlaError::Shape("default_distance expects column vectors".into()));
        }
        let data = p
            .data()
            .iter()
            .zip(m.data())
            .map(|(&dp, &dm)| DistanceBank::increasing(0, dp) + DistanceBank::decreasing(0, dm))
            .collect();
        let v = Matrix::column(data);
        Ok(self.push(Op::DefaultDistance(plus, minus), v))
    }

    /// `(1/s)·ln(1 + Σ_{k∈g} exp(sign·s·(x_k − offset)))` for each index range `g`.
    pub fn group_softplus(
        &mut self,
        input: Var,
        groups: Vec<(usize, usize)>,
        scale: f64,
        sign: f64,
        offset: f64,
    ) -> Result<Var> {
        let x = self.value(input);
        if x.cols() != 1 || groups.iter().any(|&(s, e)| s > e || e > x.rows()) {
            return Err(AlaError::Shape("group_softplus groups out of range".into()));
        }
        let data = groups
            .iter()
            .map(|&(s, e)| {
                let z: Vec<f64> = x.data()[s..e]
                    .iter()
                    .map(|&d| sign * scale * (d - offset))
                    .collect();
                log1p_sum_exp(&z) / scale
            })
            .collect();
        let v = Matrix::column(data);
        Ok(self.push(
            Op::GroupSoftplus {
                input,
                groups,
                scale,
                sign,
                offset,
            },
            v,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(AlaError::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(AlaError::NonFinite(format!("loss value {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = tensor::matmul_nt(g, self.value(*b));
                let gb = tensor::matmul_tn(self.value(*a), g);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRowBias(a, b) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += *x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, elementwise(g, y, |gi, yi| gi * yi));
                accumulate(grads, *b, elementwise(g, x, |gi, xi| gi * xi));
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::MulConst(a, c) => accumulate(grads, *a, elementwise(g, c, |gi, ci| gi * ci)),
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, elementwise(g, out, |gi, s| gi * s * (1.0 - s)));
            }
            Op::Log(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |gi, xi| gi / xi));
            }
            Op::Exp(a) => accumulate(grads, *a, elementwise(g, out, |gi, e| gi * e)),
            Op::Square(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |gi, xi| 2.0 * gi * xi));
            }
            Op::Sqrt(a) => {
                accumulate(grads, *a, elementwise(g, out, |gi, s| gi * 0.5 / s.max(L2_EPS)));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    elementwise(g, x, |gi, xi| if xi >= *lo && xi <= *hi { gi } else { 0.0 }),
                );
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, pr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(pr).map(|(x, y)| x * y).sum();
                    for ((o, gi), pi) in ga.row_mut(r).iter_mut().zip(gr).zip(pr) {
                        *o = pi * (gi - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, lr) = (g.row(r), out.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((o, gi), li) in ga.row_mut(r).iter_mut().zip(gr).zip(lr) {
                        *o = gi - li.exp() * total;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::L2NormalizeRows(a, norms) => {
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = (gi - yi * dot) / norms[r];
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SumRows(a) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let gv = g.data()[r];
                    ga.row_mut(r).iter_mut().for_each(|o| *o = gv);
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let gv = g.data()[0] / x.len() as f64;
                accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), gv));
            }
            Op::Pick(a, idx) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (r, &c) in idx.iter().enumerate() {
                    ga.set(r, c, g.data()[r]);
                }
                accumulate(grads, *a, ga);
            }
            Op::PairSqDist(a, left, right) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (k, (&i, &j)) in left.iter().zip(right).enumerate() {
                    let gk = g.data()[k];
                    if gk == 0.0 {
                        continue;
                    }
                    for c in 0..x.cols() {
                        let d = 2.0 * gk * (x.get(i, c) - x.get(j, c));
                        ga.row_mut(i)[c] += d;
                        ga.row_mut(j)[c] -= d;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::DistanceMixture {
                plus,
                minus,
                weights,
            } => {
                let (p, m) = (self.value(*plus), self.value(*minus));
                let mut gp = Matrix::zeros(p.rows(), 1);
                let mut gm = Matrix::zeros(m.rows(), 1);
                for k in 0..p.rows() {
                    let (dp, dm) = DistanceBank::mixture_grad(weights, p.data()[k], m.data()[k]);
                    gp.data_mut()[k] = g.data()[k] * dp;
                    gm.data_mut()[k] = if m.data()[k] > DISTANCE_FLOOR {
                        g.data()[k] * dm
                    } else {
                        0.0
                    };
                }
                accumulate(grads, *plus, gp);
                accumulate(grads, *minus, gm);
            }
            Op::DefaultDistance(plus, minus) => {
                let (p, m) = (self.value(*plus), self.value(*minus));
                let mut gp = Matrix::zeros(p.rows(), 1);
                let mut gm = Matrix::zeros(m.rows(), 1);
                for k in 0..p.rows() {
                    gp.data_mut()[k] = g.data()[k] * DistanceBank::increasing_grad(0, p.data()[k]);
                    let dm = m.data()[k];
                    gm.data_mut()[k] = if dm > DISTANCE_FLOOR {
                        g.data()[k] * DistanceBank::decreasing_grad(0, dm)
                    } else {
                        0.0
                    };
                }
                accumulate(grads, *plus, gp);
                accumulate(grads, *minus, gm);
            }
            Op::GroupSoftplus {
                input,
                groups,
                scale,
                sign,
                offset,
            } => {
                let x = self.value(*input);
                let mut gx = Matrix::zeros(x.rows(), 1);
                for (gi, &(s, e)) in groups.iter().enumerate() {
                    let z: Vec<f64> = x.data()[s..e]
                        .iter()
                        .map(|&d| sign * scale * (d - offset))
                        .collect();
                    let m = z.iter().cloned().fold(0.0_f64, f64::max);
                    let denom = (-m).exp() + z.iter().map(|zi| (zi - m).exp()).sum::<f64>();
                    for (k, zi) in z.iter().enumerate() {
                        gx.data_mut()[s + k] = g.data()[gi] * sign * (zi - m).exp() / denom;
                    }
                }
                accumulate(grads, *input, gx);
            }
        }
        Ok(())
    }
}

/// `ln(1 + Σ exp(z_k))`, stable for large `z`.
pub(crate) fn log1p_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(0.0_f64, f64::max);
    m + ((-m).exp() + z.iter().map(|zi| (zi - m).exp()).sum::<f64>()).ln()
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("operands share a shape")
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::scalar(1.5));
        let x = t.leaf(Matrix::scalar(3.0));
        let l = t.mul(w, x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut t = Tape::new();
        let z = t.leaf(Matrix::scalar(0.0));
        let s = t.sigmoid(z);
        let g = t.backward(s).unwrap();
        assert!((g.get(z).unwrap().data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(a), Err(AlaError::Usage(_))));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(0.0));
        let l = t.log(a);
        assert!(matches!(t.backward(l), Err(AlaError::NonFinite(_))));
    }

    #[test]
    fn shared_operand_accumulates() {
        // L = x*x at x=3 -> 6
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let l = t.mul(x, x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn unreachable_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::scalar(1.0));
        let b = t.leaf(Matrix::scalar(2.0));
        let l = t.scale(b, 2.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(a).is_none());
    }
}
