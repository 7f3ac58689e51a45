#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod groundedness;
pub mod hyper;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;
pub mod transfer;
pub mod tuner;

pub use error::{Error, Result};
pub use tensor::{Activation, BinaryOp, Tensor};
pub use hyper::{HyperparamSpec, OptimizerConstants, OptimizerKind};
pub use model::{build_model, ArchitectureKind, CaptionModel, ModelConfig};
