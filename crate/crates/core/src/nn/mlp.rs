//! Multilayer perceptron with an explicit forward tape.
//!
//! Weights are stored `(out_dim, in_dim)`, so a layer computes
//! `y = act(x Wᵀ + b)` for a batch `x` of shape `(batch, in_dim)`.
//! The last layer is always linear; its input is the latent feature batch
//! returned by [`Mlp::forward`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::shape_err;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Shape `(out_dim, in_dim)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape_err("Layer::new bias", weight.rows(), bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform fan-in initialization in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias = (0..out_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Matrix::from_vec(out_dim, in_dim, weight).expect("sized above"),
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Cached intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// `inputs[k]` is the input of layer `k`.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    output: Matrix,
}

impl ForwardTape {
    pub fn batch_size(&self) -> usize {
        self.output.rows()
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// Post-activation of the last hidden layer (the network input when
    /// there are no hidden layers).
    pub latent: Matrix,
    pub output: Matrix,
    pub tape: ForwardTape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradient>,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}

impl MlpGradients {
    /// Parameter gradients in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl Mlp {
    /// Builds `input -> hidden... -> output` with `activation` on every hidden
    /// layer and a linear output layer.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &width in hidden {
            layers.push(Layer::init(prev, width, activation, rng));
            prev = width;
        }
        layers.push(Layer::init(prev, output_dim, Activation::Identity, rng));
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(crate::Error::Empty("Mlp::from_layers"));
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(shape_err(
                    "Mlp::from_layers chain",
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Parameter groups: weights then bias, layer by layer.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Sizes of the groups returned by [`Mlp::param_slices`].
    pub fn param_shapes(&self) -> Vec<usize> {
        self.param_slices().iter().map(|s| s.len()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, input: &Matrix) -> Result<Forward> {
        if input.cols() != self.input_dim() {
            return Err(shape_err("Mlp::forward", self.input_dim(), input.cols()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let pre = affine(layer, &current)?;
            let post = pre.map(|x| layer.activation.apply(x));
            inputs.push(current);
            pre_activations.push(pre);
            current = post;
        }
        let latent = inputs[inputs.len() - 1].clone();
        Ok(Forward {
            latent,
            output: current.clone(),
            tape: ForwardTape {
                inputs,
                pre_activations,
                output: current,
            },
        })
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.input_dim() {
            return Err(shape_err("Mlp::predict", self.input_dim(), input.cols()));
        }
        let mut current =
            affine(&self.layers[0], input)?.map(|x| self.layers[0].activation.apply(x));
        for layer in &self.layers[1..] {
            current = affine(layer, &current)?.map(|x| layer.activation.apply(x));
        }
        Ok(current)
    }

    /// Single-sample forward returning `(latent, output)`.
    pub fn predict_one(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let fwd = self.forward(&Matrix::row_vector(input))?;
        Ok((fwd.latent.into_vec(), fwd.output.into_vec()))
    }

    /// Reverse pass for a scalar loss whose gradient w.r.t. the output is
    /// `upstream`.
    pub fn backward(&self, tape: &ForwardTape, upstream: &Matrix) -> Result<MlpGradients> {
        if tape.inputs.len() != self.layers.len() {
            return Err(shape_err(
                "Mlp::backward tape depth",
                self.layers.len(),
                tape.inputs.len(),
            ));
        }
        for (layer, input) in self.layers.iter().zip(&tape.inputs) {
            if input.cols() != layer.in_dim() {
                return Err(shape_err(
                    "Mlp::backward tape",
                    layer.in_dim(),
                    input.cols(),
                ));
            }
        }
        if upstream.shape() != tape.output.shape() {
            return Err(shape_err(
                "Mlp::backward upstream",
                format!("{:?}", tape.output.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre_activations[k];
            let post = if k + 1 < self.layers.len() {
                &tape.inputs[k + 1]
            } else {
                &tape.output
            };
            if layer.activation != Activation::Identity {
                for ((d, &p), &q) in delta.data_mut().iter_mut().zip(pre.data()).zip(post.data()) {
                    *d *= layer.activation.derivative(p, q);
                }
            }
            let weight = delta.t_matmul(&tape.inputs[k])?;
            let bias = delta.column_sums();
            delta = delta.matmul(&layer.weight)?;
            grads.push(LayerGradient { weight, bias });
        }
        grads.reverse();
        Ok(MlpGradients {
            layers: grads,
            input: delta,
        })
    }

    /// Copies every parameter from `other`, which must share the architecture.
    pub fn copy_from(&mut self, other: &Mlp) -> Result<()> {
        if self.param_shapes() != other.param_shapes() {
            return Err(shape_err(
                "Mlp::copy_from",
                "matching architecture",
                "different",
            ));
        }
        for (dst, src) in self
            .param_slices_mut()
            .into_iter()
            .zip(other.param_slices())
        {
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

fn affine(layer: &Layer, input: &Matrix) -> Result<Matrix> {
    let mut out = input.matmul_t(&layer.weight)?;
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(&layer.bias) {
            *o += b;
        }
    }
    Ok(out)
}
