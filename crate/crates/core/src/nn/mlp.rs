use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Mat, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: &mut Mat) {
        match self {
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// One affine layer. `weight` is `inputs x outputs` so a batch `X` maps to
/// `X W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Mat,
}

/// Weights of a fully connected network, one activation per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
    activations: Vec<Activation>,
}

impl MlpParams {
    /// Builds a network from explicit layers. Shapes must chain.
    pub fn from_layers(layers: Vec<Dense>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if layers.len() != activations.len() {
            return Err(Error::shape(
                "mlp activations",
                layers.len(),
                activations.len(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.dim() != (1, l.weight.ncols()) {
                return Err(Error::shape(
                    &format!("bias of layer {i}"),
                    format!("1x{}", l.weight.ncols()),
                    format!("{}x{}", l.bias.nrows(), l.bias.ncols()),
                ));
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::shape(
                    &format!("weight of layer {i}"),
                    layers[i - 1].weight.ncols(),
                    l.weight.nrows(),
                ));
            }
        }
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "layer_sizes needs an input and an output size".into(),
            ));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: Mat::zeros((w[0], w[1])),
                bias: Mat::zeros((1, w[1])),
            })
            .collect();
        Self::from_layers(layers, activations.to_vec())
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init for weights and biases.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(sizes, activations)?;
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.weight.nrows() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.gen_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.gen_range(-bound..bound));
        }
        Ok(p)
    }

    /// Hidden layers share `hidden_act`; the output layer is linear.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(Activation::Identity);
        Self::random(&sizes, &acts, rng)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.ncols()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass on a batch (one sample per row).
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape("mlp input", self.input_dim(), x.ncols()));
        }
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            act.apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(self.forward(&m)?.into_raw_vec_and_offset().0)
    }

    /// Places the parameters on `tape`. With `trainable == false` they are
    /// constants and no gradient is accumulated for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundMlp {
            vars,
            activations: self.activations.clone(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Mat::zeros(l.weight.raw_dim()),
                    bias: Mat::zeros(l.bias.raw_dim()),
                })
                .collect(),
            activations: self.activations.clone(),
        }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim()
            })
    }

    /// All parameters in layer order, weight (row-major) before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("flat parameters", self.num_params(), flat.len()));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `self <- (1 - rate) * self + rate * source`.
    pub fn polyak_from(&mut self, source: &MlpParams, rate: f64) {
        for (t, s) in self.values_mut().zip(source.values()) {
            *t = (1.0 - rate) * *t + rate * s;
        }
    }
}

/// Network parameters that live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    activations: Vec<Activation>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (&(w, b), act) in self.vars.iter().zip(&self.activations) {
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = act.apply_tape(tape, z);
        }
        h
    }

    /// Collects this network's gradients into a parameter-shaped container.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> MlpParams {
        let layers = self
            .vars
            .iter()
            .map(|&(w, b)| Dense {
                weight: grads.get_or_zeros(w, tape.value(w)),
                bias: grads.get_or_zeros(b, tape.value(b)),
            })
            .collect();
        MlpParams {
            layers,
            activations: self.activations.clone(),
        }
    }
}
