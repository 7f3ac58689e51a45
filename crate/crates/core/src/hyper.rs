//! One point of the hyperparameter space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{CellKind, InitMethod, InitSpec};
use crate::model::{ArchitectureKind, LstmInjectTarget};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
    Adadelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamSpec {
    pub init_method: InitMethod,
    pub max_init_weight: f64,
    pub embed_size: usize,
    pub rnn_size: usize,
    pub post_image_size: usize,
    pub post_image_activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub normalize_image: bool,
    pub weight_decay: f64,
    pub image_dropout: f64,
    pub post_image_dropout: f64,
    pub embed_dropout: f64,
    pub rnn_dropout: f64,
    pub max_grad_norm: f64,
    pub minibatch_size: usize,
    pub beam_width: usize,
    #[serde(default)]
    pub cell: CellKind,
    #[serde(default)]
    pub lstm_inject_target: LstmInjectTarget,
    #[serde(default)]
    pub optimizer_constants: OptimizerConstants,
}

/// Fixed constants of the three update rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConstants {
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_epsilon: f64,
    pub adadelta_rho: f64,
    pub adadelta_epsilon: f64,
}

impl Default for OptimizerConstants {
    fn default() -> Self {
        OptimizerConstants {
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            rmsprop_rho: 0.9,
            rmsprop_epsilon: 1e-8,
            adadelta_rho: 0.95,
            adadelta_epsilon: 1e-6,
        }
    }
}

/// Inclusive bounds of the tuned search space.
pub mod ranges {
    pub const MAX_INIT_WEIGHT: (f64, f64) = (1e-5, 1.0);
    pub const LAYER_SIZE: (usize, usize) = (64, 512);
    pub const LEARNING_RATE: (f64, f64) = (1e-5, 1.0);
    pub const WEIGHT_DECAY: (f64, f64) = (1e-10, 0.1);
    pub const DROPOUT: (f64, f64) = (0.0, 0.5);
    pub const MAX_GRAD_NORM: (f64, f64) = (1.0, 1000.0);
    pub const MINIBATCH: (usize, usize) = (10, 300);
    pub const BEAM_WIDTH: (usize, usize) = (1, 5);
}

impl Default for HyperparamSpec {
    fn default() -> Self {
        HyperparamSpec {
            init_method: InitMethod::Xavier,
            max_init_weight: 1.0,
            embed_size: 64,
            rnn_size: 64,
            post_image_size: 64,
            post_image_activation: Activation::Identity,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            normalize_image: false,
            weight_decay: 0.0,
            image_dropout: 0.0,
            post_image_dropout: 0.0,
            embed_dropout: 0.0,
            rnn_dropout: 0.0,
            max_grad_norm: 5.0,
            minibatch_size: 50,
            beam_width: 3,
            cell: CellKind::Gru,
            lstm_inject_target: LstmInjectTarget::Cell,
            optimizer_constants: OptimizerConstants::default(),
        }
    }
}

impl HyperparamSpec {
    pub fn init_spec(&self) -> InitSpec {
        InitSpec {
            method: self.init_method,
            max_abs: self.max_init_weight,
        }
    }

    /// Structural sanity: positive sizes, dropout in `[0, 1)`, positive rates.
    /// Does not enforce the tuned ranges; see [`HyperparamSpec::check_search_ranges`].
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("embed_size", self.embed_size),
            ("rnn_size", self.rnn_size),
            ("post_image_size", self.post_image_size),
            ("minibatch_size", self.minibatch_size),
            ("beam_width", self.beam_width),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("image_dropout", self.image_dropout),
            ("post_image_dropout", self.post_image_dropout),
            ("embed_dropout", self.embed_dropout),
            ("rnn_dropout", self.rnn_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if !(self.max_init_weight > 0.0) {
            return Err(Error::invalid("max_init_weight must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::invalid("max_grad_norm must be positive"));
        }
        if !matches!(self.post_image_activation, Activation::Relu | Activation::Identity) {
            return Err(Error::invalid("post_image_activation must be relu or identity"));
        }
        Ok(())
    }

    /// Size-tying constraints of each architecture.
    pub fn check_tying(&self, kind: ArchitectureKind) -> Result<()> {
        crate::model::check_tying(kind, self.embed_size, self.rnn_size, self.post_image_size)
    }

    /// True when every field lies inside the tuned search ranges.
    pub fn check_search_ranges(&self) -> Result<()> {
        use ranges::*;
        let inside_f = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        let inside_u = |name: &str, v: usize, (lo, hi): (usize, usize)| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        inside_f("max_init_weight", self.max_init_weight, MAX_INIT_WEIGHT)?;
        inside_u("embed_size", self.embed_size, LAYER_SIZE)?;
        inside_u("rnn_size", self.rnn_size, LAYER_SIZE)?;
        inside_u("post_image_size", self.post_image_size, LAYER_SIZE)?;
        inside_f("learning_rate", self.learning_rate, LEARNING_RATE)?;
        inside_f("weight_decay", self.weight_decay, WEIGHT_DECAY)?;
        inside_f("image_dropout", self.image_dropout, DROPOUT)?;
        inside_f("post_image_dropout", self.post_image_dropout, DROPOUT)?;
        inside_f("embed_dropout", self.embed_dropout, DROPOUT)?;
        inside_f("rnn_dropout", self.rnn_dropout, DROPOUT)?;
        inside_f("max_grad_norm", self.max_grad_norm, MAX_GRAD_NORM)?;
        inside_u("minibatch_size", self.minibatch_size, MINIBATCH)?;
        inside_u("beam_width", self.beam_width, BEAM_WIDTH)?;
        Ok(())
    }
}
