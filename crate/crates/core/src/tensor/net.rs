use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine map `x · weight + bias` followed by an activation. `weight` is
/// `(input_dim, output_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(input_dim: usize, output_dim: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let data = (0..input_dim * output_dim)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Layer {
            weight: Matrix::from_vec(input_dim, output_dim, data).expect("sized above"),
            bias: vec![0.0; output_dim],
            activation,
        }
    }
}

/// Feed-forward stack with inverted dropout after every intermediate
/// activation (never after the last layer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    dropout_rate: f64,
    /// Bumped on every parameter update; tapes remember the value they saw.
    #[serde(skip)]
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.dropout_rate == other.dropout_rate
    }
}

/// Activations cached by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    /// Input to each layer (after the previous layer's dropout).
    inputs: Vec<Matrix>,
    /// Post-activation output of each layer, before dropout.
    outputs: Vec<Matrix>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`) per intermediate layer.
    masks: Vec<Option<Matrix>>,
    recorded: bool,
}

impl Tape {
    pub fn is_recorded(&self) -> bool {
        self.recorded
    }

    pub fn dropout_mask(&self, layer: usize) -> Option<&Matrix> {
        self.masks.get(layer).and_then(Option::as_ref)
    }
}

/// Per-layer parameter gradients, shaped like the net.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGradients {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.output_dim()]).collect(),
        }
    }

    /// Flat views in the same order as [`DenseNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(DenseNet {
            layers,
            dropout_rate,
            generation: 0,
        })
    }

    /// Glorot-initialised net over `dims = [in, h1, ..., out]`, ReLU on hidden
    /// layers and identity on the output.
    pub fn mlp(dims: &[usize], dropout_rate: f64, rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output dims".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let act = if i == last { Activation::Identity } else { Activation::Relu };
                Layer::glorot(d[0], d[1], act, rng)
            })
            .collect();
        DenseNet::new(layers, dropout_rate)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Flat mutable views `[w0, b0, w1, b1, ...]`. Invalidates existing tapes.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.generation += 1;
        &mut self.layers[i]
    }

    /// Forward pass. In train mode dropout masks are drawn from `rng` and the
    /// tape records everything [`DenseNet::backward`] needs; in eval mode no
    /// dropout is applied, `rng` is untouched and the tape is empty.
    pub fn forward(&self, input: &Matrix, train_mode: bool, rng: &mut RngStream) -> Result<(Matrix, Tape)> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "net expects {} input columns, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        let n_layers = self.layers.len();
        let mut tape = Tape {
            generation: self.generation,
            inputs: Vec::new(),
            outputs: Vec::new(),
            masks: Vec::new(),
            recorded: train_mode,
        };
        let keep = 1.0 - self.dropout_rate;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = x.matmul(&layer.weight)?;
            h.add_row_vector(&layer.bias)?;
            if layer.activation == Activation::Relu {
                h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let mut mask = None;
            let mut next = h.clone();
            if train_mode && i + 1 < n_layers && self.dropout_rate > 0.0 {
                let scale = 1.0 / keep;
                let m: Vec<f64> = (0..h.data().len())
                    .map(|_| if rng.uniform() < keep { scale } else { 0.0 })
                    .collect();
                let m = Matrix::from_vec(h.rows(), h.cols(), m)?;
                next = h.hadamard(&m)?;
                mask = Some(m);
            }
            if train_mode {
                tape.inputs.push(x);
                tape.outputs.push(h);
                tape.masks.push(mask);
            }
            x = next;
        }
        Ok((x, tape))
    }

    /// Reverse pass for a tape from a train-mode [`DenseNet::forward`].
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape, output_gradient: &Matrix) -> Result<(NetGradients, Matrix)> {
        if !tape.recorded {
            return Err(Error::Usage("backward needs a tape from a train-mode forward pass".into()));
        }
        if tape.generation != self.generation || tape.inputs.len() != self.layers.len() {
            return Err(Error::Usage("tape is stale: parameters changed since the forward pass".into()));
        }
        let last_out = &tape.outputs[self.layers.len() - 1];
        if output_gradient.shape() != last_out.shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_gradient.shape(),
                last_out.shape()
            )));
        }
        let mut grads = NetGradients::zeros_like(self);
        let mut g = output_gradient.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if let Some(mask) = &tape.masks[i] {
                g = g.hadamard(mask)?;
            }
            if layer.activation == Activation::Relu {
                for (gv, &out) in g.data_mut().iter_mut().zip(tape.outputs[i].data()) {
                    if out <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            grads.weights[i] = tape.inputs[i].t_matmul(&g)?;
            grads.biases[i] = g.column_sums();
            g = g.matmul_t(&layer.weight)?;
        }
        Ok((grads, g))
    }
}
