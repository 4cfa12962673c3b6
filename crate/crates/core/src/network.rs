//! Small feedforward networks built from affine layers.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{AlaError, Result};
use crate::tensor::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
}

/// Transform applied after the last affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Linear,
    Softmax,
    L2Normalize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[fan_in × fan_out]`
    pub weight: Matrix,
    /// `[1 × fan_out]`
    pub bias: Matrix,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
    head: Head,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub output: Var,
    /// Weight and bias handles, layer by layer, in [`Network::params`] order.
    pub params: Vec<Var>,
}

impl Network {
    /// `sizes = [input, hidden.., output]`; hidden layers use rectified-linear units.
    pub fn new(sizes: &[usize], head: Head, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(AlaError::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)).collect();
                Dense {
                    weight: Matrix::from_vec(w[0], w[1], data).expect("sized"),
                    bias: Matrix::zeros(1, w[1]),
                    activation: if k + 2 < sizes.len() {
                        Activation::Relu
                    } else {
                        Activation::Identity
                    },
                }
            })
            .collect();
        Ok(Network { layers, head })
    }

    pub fn from_layers(layers: Vec<Dense>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(AlaError::Shape("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(AlaError::Shape(format!("layer {k} bias does not match weight")));
            }
            if let Some(next) = layers.get(k + 1) {
                if next.weight.rows() != l.weight.cols() {
                    return Err(AlaError::Shape(format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        l.weight.cols(),
                        k + 1,
                        next.weight.rows()
                    )));
                }
            }
        }
        Ok(Network { layers, head })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    /// Widths from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.cols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(AlaError::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if !batch.is_finite() {
            return Err(AlaError::Input("non-finite network input".into()));
        }
        Ok(())
    }

    /// Inference without recording a tape. Uses the same kernels as [`Self::forward_tape`].
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for l in &self.layers {
            x = tensor::add_row_bias(&tensor::matmul(&x, &l.weight)?, &l.bias)?;
            if l.activation == Activation::Relu {
                x = tensor::relu(&x);
            }
        }
        Ok(match self.head {
            Head::Linear => x,
            Head::Softmax => tensor::softmax_rows(&x),
            Head::L2Normalize => tensor::l2_normalize_rows(&x).0,
        })
    }

    /// Pre-head outputs (logits for classifiers).
    pub fn forward_linear(&self, batch: &Matrix) -> Result<Matrix> {
        let mut net = self.clone();
        net.head = Head::Linear;
        net.forward(batch)
    }

    pub fn forward_tape(&self, tape: &mut Tape, input: Var) -> Result<TapeForward> {
        self.check_input(tape.value(input))?;
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        let mut x = input;
        for l in &self.layers {
            let w = tape.leaf(l.weight.clone());
            let b = tape.leaf(l.bias.clone());
            params.push(w);
            params.push(b);
            let z = tape.matmul(x, w)?;
            x = tape.add_row_bias(z, b)?;
            if l.activation == Activation::Relu {
                x = tape.relu(x);
            }
        }
        let output = match self.head {
            Head::Linear => x,
            Head::Softmax => tape.softmax_rows(x),
            Head::L2Normalize => tape.l2_normalize_rows(x),
        };
        Ok(TapeForward { output, params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::with_capacity(self.layers.len() * 2);
        for (k, l) in self.layers.iter().enumerate() {
            tensors.push(NamedTensor::new(format!("layer{k}.weight"), &l.weight));
            tensors.push(NamedTensor::new(format!("layer{k}.bias"), &l.bias));
        }
        Checkpoint {
            head: self.head,
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.tensors.len() % 2 != 0 || ckpt.tensors.is_empty() {
            return Err(AlaError::Layout("checkpoint must hold weight/bias pairs".into()));
        }
        let count = ckpt.tensors.len() / 2;
        let mut layers = Vec::with_capacity(count);
        for k in 0..count {
            let w = ckpt.tensor(&format!("layer{k}.weight"))?;
            let b = ckpt.tensor(&format!("layer{k}.bias"))?;
            layers.push(Dense {
                weight: w,
                bias: b,
                activation: if k + 1 < count {
                    Activation::Relu
                } else {
                    Activation::Identity
                },
            });
        }
        Network::from_layers(layers, ckpt.head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Network::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// A named tensor as stored in checkpoint files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: String, m: &Matrix) -> Self {
        NamedTensor {
            name,
            shape: [m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        Matrix::from_vec(self.shape[0], self.shape[1], self.data.clone())
    }
}

/// JSON list of named tensors plus the output head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub head: Head,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<Matrix> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AlaError::Layout(format!("checkpoint lacks tensor {name}")))?
            .to_matrix()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| AlaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AlaError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
