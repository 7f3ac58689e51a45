//! Parameterized layers and their weight initialization.
//!
//! Parameters are stored as plain [`ParamArray`]s so models are `Send + Sync`.
//! A forward pass binds them into [`Tensor`] leaves through a [`Binder`],
//! which also remembers the bindings so gradients can be read back by name.

mod container;
mod recurrent;

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

pub use container::{read_params, write_params, ParamRecord};
pub use recurrent::{
    gru_step, lstm_step, rnn_unroll, CellKind, CellState, GruCell, GruParams, LstmCell,
    LstmParams, RecurrentCell, RecurrentParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn zeros(shape: &[usize]) -> Self {
        ParamArray {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        ParamArray {
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// What a parameter is, for weight decay purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    InitialState,
}

/// Anything holding named parameters.
pub trait Parameterized {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Turns stored parameters into graph leaves for one forward pass.
pub struct Binder {
    trainable: bool,
    frozen: HashSet<String>,
    bound: Vec<(String, Tensor)>,
}

impl Binder {
    /// All parameters become constants; no gradients are tracked.
    pub fn inference() -> Self {
        Binder {
            trainable: false,
            frozen: HashSet::new(),
            bound: Vec::new(),
        }
    }

    /// Parameters collect gradients, except those named in `frozen`.
    pub fn training(frozen: &HashSet<String>) -> Self {
        Binder {
            trainable: true,
            frozen: frozen.clone(),
            bound: Vec::new(),
        }
    }

    pub fn bind(&mut self, name: String, p: &ParamArray) -> Tensor {
        let t = if self.trainable && !self.frozen.contains(&name) {
            Tensor::param(p.shape.clone(), p.data.clone())
        } else {
            Tensor::new(p.shape.clone(), p.data.clone())
        }
        .expect("stored parameter shape is consistent");
        self.bound.push((name, t.clone()));
        t
    }

    pub fn bindings(&self) -> &[(String, Tensor)] {
        &self.bound
    }

    /// Gradients of every trainable binding, zero-filled when unreached.
    pub fn gradients(&self) -> Vec<(String, Vec<f64>)> {
        self.bound
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, t)| (n.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.numel()])))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Normal,
    Xavier,
}

/// Samples a weight array from a unit normal or a Xavier-scaled normal and clips
/// every value to `[-max_abs, max_abs]`.
pub fn init_weights<R: Rng + ?Sized>(
    shape: &[usize],
    method: InitMethod,
    max_abs: f64,
    rng: &mut R,
) -> Result<ParamArray> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::invalid(format!("non-positive dimension in {shape:?}")));
    }
    if !(max_abs > 0.0) {
        return Err(Error::invalid(format!("max_abs must be positive, got {max_abs}")));
    }
    let std = match method {
        InitMethod::Normal => 1.0,
        InitMethod::Xavier => {
            let (fan_in, fan_out) = match shape {
                [n] => (*n, *n),
                [a, b, ..] => (*a, *b),
                [] => unreachable!(),
            };
            (2.0 / (fan_in + fan_out) as f64).sqrt()
        }
    };
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std).clamp(-max_abs, max_abs)
        })
        .collect();
    Ok(ParamArray {
        shape: shape.to_vec(),
        data,
    })
}

/// How fresh weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub method: InitMethod,
    pub max_abs: f64,
}

impl InitSpec {
    pub fn sample<R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Result<ParamArray> {
        init_weights(shape, self.method, self.max_abs, rng)
    }
}

/// Fully connected layer `f(x·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: ParamArray,
    pub b: ParamArray,
    pub activation: Activation,
}

impl DenseParams {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        init: &InitSpec,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(DenseParams {
            w: init.sample(&[input, output], rng)?,
            b: ParamArray::zeros(&[output]),
            activation,
        })
    }

    pub fn input_size(&self) -> usize {
        self.w.shape[0]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape[1]
    }

    pub fn bind(&self, prefix: &str, binder: &mut Binder) -> Dense {
        Dense {
            w: binder.bind(join(prefix, "w"), &self.w),
            b: binder.bind(join(prefix, "b"), &self.b),
            activation: self.activation,
        }
    }
}

impl Parameterized for DenseParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole)) {
        f(join(prefix, "w"), &self.w, ParamRole::Weight);
        f(join(prefix, "b"), &self.b, ParamRole::Bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole)) {
        f(join(prefix, "w"), &mut self.w, ParamRole::Weight);
        f(join(prefix, "b"), &mut self.b, ParamRole::Bias);
    }
}

/// A bound fully connected layer.
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl Dense {
    /// Pre-activation values `x·W + b`.
    pub fn linear(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add_row_vector(&self.b)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.linear(x)?.activation(self.activation))
    }
}

/// `activation(x·W + b)` for a bound layer.
pub fn dense(x: &Tensor, p: &Dense) -> Result<Tensor> {
    p.forward(x)
}

/// Word embedding matrix, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub e: ParamArray,
}

impl EmbeddingParams {
    pub fn new<R: Rng + ?Sized>(vocab: usize, embed: usize, init: &InitSpec, rng: &mut R) -> Result<Self> {
        Ok(EmbeddingParams {
            e: init.sample(&[vocab, embed], rng)?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.e.shape[0]
    }

    pub fn embed_size(&self) -> usize {
        self.e.shape[1]
    }

    pub fn bind(&self, prefix: &str, binder: &mut Binder) -> Embedding {
        Embedding {
            e: binder.bind(join(prefix, "e"), &self.e),
        }
    }
}

impl Parameterized for EmbeddingParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole)) {
        f(join(prefix, "e"), &self.e, ParamRole::Weight);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole)) {
        f(join(prefix, "e"), &mut self.e, ParamRole::Weight);
    }
}

pub struct Embedding {
    pub e: Tensor,
}

impl Embedding {
    /// Row lookup, `[len × embed]`.
    pub fn lookup(&self, indices: &[usize]) -> Result<Tensor> {
        self.e.gather_rows(indices)
    }
}

pub fn embed(indices: &[usize], p: &Embedding) -> Result<Tensor> {
    p.lookup(indices)
}
