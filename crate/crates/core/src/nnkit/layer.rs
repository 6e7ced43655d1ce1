use serde::{Deserialize, Serialize};

use super::tape::{Activation, Tape, Var};
use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = act(x · Wᵀ + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// How a layer's parameters enter a tape.
#[derive(Clone, Copy, Debug)]
pub enum Binding<'a> {
    /// Registered as parameters named `<prefix>.weight` / `<prefix>.bias`.
    Train(&'a str),
    /// Constants: no gradient flows into them.
    Frozen,
}

impl DenseLayer {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero bias.
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut weight = Tensor::zeros(&[output, input]);
        for w in weight.data_mut() {
            *w = rng.uniform_range(-bound, bound);
        }
        DenseLayer {
            weight,
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward_on(&self, tape: &mut Tape, x: Var, binding: Binding<'_>) -> Result<Var> {
        let (w, b) = match binding {
            Binding::Train(prefix) => (
                tape.param(&format!("{prefix}.weight"), &self.weight),
                tape.param(&format!("{prefix}.bias"), &self.bias),
            ),
            Binding::Frozen => (tape.constant(self.weight.clone()), tape.constant(self.bias.clone())),
        };
        let y = tape.affine(x, w, b)?;
        Ok(tape.activation(y, self.activation))
    }

    /// Gradient-free forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("affine_forward", self.input_dim(), x.cols()));
        }
        let mut y = x.matmul_nt(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(self.bias.data()) {
                *v = self.activation.apply(*v + b);
            }
        }
        Ok(y)
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }
}

/// Anything with named parameter tensors.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    /// Concatenated little-endian bytes of every parameter, in visit order.
    fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, t| out.extend(t.to_le_bytes()));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }
}

impl Parameterized for DenseLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.visit("layer", f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.visit_mut("layer", f);
    }
}
