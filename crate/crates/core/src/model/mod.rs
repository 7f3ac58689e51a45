//! The four image-conditioned caption generators and the text-only language
//! model, all built from one schema:
//!
//! ```text
//! tokens ─ embed ─┐
//!                 ├─ RNN ─ state ─┬────────────── output ─ softmax
//! image ─ dense ──┘ (inject)      └─ ⧺ post-image (merge)
//! ```
//!
//! * init-inject: the post-image vector is the initial RNN state.
//! * pre-inject: the post-image vector is the first RNN input; its output is dropped.
//! * par-inject: the post-image vector is concatenated to every word input.
//! * merge: the RNN never sees the image; the post-image vector is concatenated
//!   to each state before the output layer.

mod checkpoint;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, START};
use crate::error::{Error, Result};
use crate::hyper::HyperparamSpec;
use crate::layers::{
    Binder, CellKind, CellState, Dense, DenseParams, Embedding, EmbeddingParams, ParamArray,
    ParamRole, Parameterized, RecurrentCell, RecurrentParams,
};
use crate::tensor::{Activation, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    #[serde(alias = "init-inject")]
    InitInject,
    #[serde(alias = "pre-inject")]
    PreInject,
    #[serde(alias = "par-inject")]
    ParInject,
    Merge,
    #[serde(alias = "text-only-lm")]
    TextOnlyLm,
}

impl ArchitectureKind {
    pub const CONDITIONED: [ArchitectureKind; 4] = [
        ArchitectureKind::InitInject,
        ArchitectureKind::PreInject,
        ArchitectureKind::ParInject,
        ArchitectureKind::Merge,
    ];

    pub fn is_conditioned(self) -> bool {
        self != ArchitectureKind::TextOnlyLm
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::InitInject => "init-inject",
            ArchitectureKind::PreInject => "pre-inject",
            ArchitectureKind::ParInject => "par-inject",
            ArchitectureKind::Merge => "merge",
            ArchitectureKind::TextOnlyLm => "text-only-lm",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "init-inject" | "init" => Ok(ArchitectureKind::InitInject),
            "pre-inject" | "pre" => Ok(ArchitectureKind::PreInject),
            "par-inject" | "par" => Ok(ArchitectureKind::ParInject),
            "merge" => Ok(ArchitectureKind::Merge),
            "text-only-lm" | "lm" | "text-only" => Ok(ArchitectureKind::TextOnlyLm),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Which LSTM state receives the image under init-inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmInjectTarget {
    Hidden,
    #[default]
    Cell,
}

/// Layer sizes and flags of a built model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ArchitectureKind,
    pub cell: CellKind,
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub embed_size: usize,
    pub rnn_size: usize,
    pub post_image_size: usize,
    pub post_image_activation: Activation,
    pub normalize_image: bool,
    pub image_dropout: f64,
    pub post_image_dropout: f64,
    pub embed_dropout: f64,
    pub rnn_dropout: f64,
    pub lstm_inject_target: LstmInjectTarget,
}

impl ModelConfig {
    pub fn from_hyper(
        kind: ArchitectureKind,
        hyper: &HyperparamSpec,
        vocab_size: usize,
        feat_dim: usize,
    ) -> Self {
        ModelConfig {
            kind,
            cell: hyper.cell,
            vocab_size,
            feat_dim,
            embed_size: hyper.embed_size,
            rnn_size: hyper.rnn_size,
            post_image_size: hyper.post_image_size,
            post_image_activation: hyper.post_image_activation,
            normalize_image: hyper.normalize_image,
            image_dropout: hyper.image_dropout,
            post_image_dropout: hyper.post_image_dropout,
            embed_dropout: hyper.embed_dropout,
            rnn_dropout: hyper.rnn_dropout,
            lstm_inject_target: hyper.lstm_inject_target,
        }
    }

    fn rnn_input_size(&self) -> usize {
        match self.kind {
            ArchitectureKind::ParInject => self.embed_size + self.post_image_size,
            _ => self.embed_size,
        }
    }

    /// Width of the vector fed to the output layer.
    pub fn multimodal_size(&self) -> usize {
        match self.kind {
            ArchitectureKind::Merge => self.rnn_size + self.post_image_size,
            _ => self.rnn_size,
        }
    }

    /// Checks the size-tying constraints of the architecture.
    pub fn validate(&self) -> Result<()> {
        if [self.vocab_size, self.embed_size, self.rnn_size].contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        if self.kind.is_conditioned() && (self.feat_dim == 0 || self.post_image_size == 0) {
            return Err(Error::invalid("conditioned models need positive feat_dim and post_image_size"));
        }
        check_tying(self.kind, self.embed_size, self.rnn_size, self.post_image_size)
    }
}

/// Init-inject ties the post-image size to the RNN size, pre-inject to the
/// embedding size.
pub(crate) fn check_tying(kind: ArchitectureKind, embed: usize, rnn: usize, post_image: usize) -> Result<()> {
    match kind {
        ArchitectureKind::InitInject if post_image != rnn => Err(Error::constraint(format!(
            "init-inject needs post_image_size == rnn_size, got {post_image} vs {rnn}"
        ))),
        ArchitectureKind::PreInject if post_image != embed => Err(Error::constraint(format!(
            "pre-inject needs post_image_size == embed_size, got {post_image} vs {embed}"
        ))),
        _ => Ok(()),
    }
}

/// A caption generator (or language model) and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingParams,
    pub rnn: RecurrentParams,
    pub post_image: Option<DenseParams>,
    /// Produces logits; softmax is applied by the model.
    pub output: DenseParams,
}

/// Builds a freshly initialized model. Biases start at zero.
pub fn build_model<R: Rng + ?Sized>(
    kind: ArchitectureKind,
    hyper: &HyperparamSpec,
    vocab_size: usize,
    feat_dim: usize,
    rng: &mut R,
) -> Result<CaptionModel> {
    hyper.validate()?;
    CaptionModel::new(ModelConfig::from_hyper(kind, hyper, vocab_size, feat_dim), &hyper.init_spec(), rng)
}

/// Which part of the forward pass gradients should reach.
pub enum Mode<'r> {
    Inference,
    Training(&'r mut dyn RngCore),
}

impl Mode<'_> {
    fn dropout(&mut self, x: &Tensor, rate: f64) -> Result<Tensor> {
        match self {
            Mode::Inference => Ok(x.clone()),
            Mode::Training(rng) => x.dropout(rate, true, &mut **rng),
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Training(_))
    }
}

/// Parameters bound into graph leaves for one pass.
pub struct BoundModel {
    pub embedding: Embedding,
    pub cell: RecurrentCell,
    pub post_image: Option<Dense>,
    pub output: Dense,
}

/// Everything a batched forward pass produced, step by step. Index `t`
/// corresponds to the prediction after consuming input token `t`.
pub struct ForwardTrace {
    /// Image features as fed in, `[B × F]`.
    pub image: Option<Tensor>,
    /// Post-image vectors after dropout, `[B × P]`.
    pub post_image: Option<Tensor>,
    /// Embedded word inputs after dropout, one `[B × E]` per step.
    pub word_inputs: Vec<Tensor>,
    /// RNN hidden states, one `[B × S]` per word step.
    pub states: Vec<Tensor>,
    pub multimodal: Vec<Tensor>,
    pub logits: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.logits.len()
    }

    pub fn softmax(&self, t: usize) -> Result<Tensor> {
        self.logits[t].softmax()
    }

    pub fn log_softmax(&self, t: usize) -> Result<Tensor> {
        self.logits[t].log_softmax()
    }
}

/// Single-sequence forward results.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub dists: Tensor,
    pub states: Tensor,
    pub multimodal: Tensor,
}

impl CaptionModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, init: &crate::layers::InitSpec, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding = EmbeddingParams::new(config.vocab_size, config.embed_size, init, rng)?;
        let rnn = RecurrentParams::new(config.cell, config.rnn_input_size(), config.rnn_size, init, rng)?;
        let post_image = if config.kind.is_conditioned() {
            Some(DenseParams::new(
                config.feat_dim,
                config.post_image_size,
                config.post_image_activation,
                init,
                rng,
            )?)
        } else {
            None
        };
        let output = DenseParams::new(
            config.multimodal_size(),
            config.vocab_size,
            Activation::Identity,
            init,
            rng,
        )?;
        Ok(CaptionModel {
            config,
            embedding,
            rnn,
            post_image,
            output,
        })
    }

    pub fn kind(&self) -> ArchitectureKind {
        self.config.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn bind(&self, binder: &mut Binder) -> BoundModel {
        BoundModel {
            embedding: self.embedding.bind("embedding", binder),
            cell: self.rnn.bind("rnn", binder),
            post_image: self.post_image.as_ref().map(|p| p.bind("post_image", binder)),
            output: self.output.bind("output", binder),
        }
    }

    /// Names of the embedding and RNN parameters.
    pub fn prefix_encoding_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.embedding.visit("embedding", &mut |n, _, _| names.push(n));
        self.rnn.visit("rnn", &mut |n, _, _| names.push(n));
        names
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |n, _, _| names.push(n));
        names
    }

    pub fn param_roles(&self) -> HashMap<String, ParamRole> {
        let mut roles = HashMap::new();
        self.visit("", &mut |n, _, r| {
            roles.insert(n, r);
        });
        roles
    }

    pub fn param(&self, name: &str) -> Option<&ParamArray> {
        let mut found = None;
        self.visit("", &mut |n, p, _| {
            if n == name {
                found = Some(p);
            }
        });
        found
    }

    /// Post-image vectors `[B × P]` (after dropout), or `None` for the text-only model.
    fn image_path(
        &self,
        bound: &BoundModel,
        image: Option<&Tensor>,
        batch: usize,
        mode: &mut Mode<'_>,
    ) -> Result<Option<Tensor>> {
        let cfg = &self.config;
        let img = match (cfg.kind.is_conditioned(), image) {
            (false, None) => return Ok(None),
            (false, Some(_)) => return Err(Error::invalid("text-only language model takes no image")),
            (true, None) => return Err(Error::invalid(format!("{} model requires an image", cfg.kind))),
            (true, Some(img)) => img,
        };
        if img.shape() != [batch, cfg.feat_dim] {
            return Err(Error::Shape {
                op: "image features",
                left: img.shape().to_vec(),
                right: vec![batch, cfg.feat_dim],
            });
        }
        let mut x = img.clone();
        if cfg.normalize_image {
            x = x.l2_normalize_rows()?;
        }
        x = mode.dropout(&x, cfg.image_dropout)?;
        let dense = bound.post_image.as_ref().expect("conditioned model has post-image layer");
        let p = dense.forward(&x)?;
        Ok(Some(mode.dropout(&p, cfg.post_image_dropout)?))
    }

    /// RNN state before the start token is consumed.
    fn initial_state(&self, bound: &BoundModel, post_image: Option<&Tensor>, batch: usize) -> Result<CellState> {
        let state = match (self.kind(), post_image) {
            (ArchitectureKind::InitInject, Some(p)) => match &bound.cell {
                RecurrentCell::Gru(_) => CellState { h: p.clone(), c: None },
                RecurrentCell::Lstm(_) => {
                    let learned = bound.cell.learned_initial(batch)?;
                    match self.config.lstm_inject_target {
                        LstmInjectTarget::Hidden => CellState { h: p.clone(), c: learned.c },
                        LstmInjectTarget::Cell => CellState {
                            h: learned.h,
                            c: Some(p.clone()),
                        },
                    }
                }
            },
            (ArchitectureKind::PreInject, Some(p)) => {
                let learned = bound.cell.learned_initial(batch)?;
                bound.cell.step(&learned, p)?
            }
            _ => bound.cell.learned_initial(batch)?,
        };
        Ok(state)
    }

    /// Batched forward over equal-length token rows.
    ///
    /// `image` is `[B × F]` for conditioned kinds and must be `None` for the
    /// text-only model. Each returned step predicts the token following the
    /// corresponding input token.
    pub fn run(
        &self,
        bound: &BoundModel,
        image: Option<&Tensor>,
        tokens: &[Vec<usize>],
        mode: &mut Mode<'_>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let batch = tokens.len();
        let steps = tokens.first().map_or(0, Vec::len);
        if batch == 0 || steps == 0 {
            return Err(Error::invalid("forward needs at least one token"));
        }
        if tokens.iter().any(|r| r.len() != steps) {
            return Err(Error::invalid("token rows must have equal length"));
        }

        let post_image = self.image_path(bound, image, batch, mode)?;
        let mut state = self.initial_state(bound, post_image.as_ref(), batch)?;

        let mut trace = ForwardTrace {
            image: image.cloned(),
            post_image: post_image.clone(),
            word_inputs: Vec::with_capacity(steps),
            states: Vec::with_capacity(steps),
            multimodal: Vec::with_capacity(steps),
            logits: Vec::with_capacity(steps),
        };
        let mut column = vec![0; batch];
        for t in 0..steps {
            for (c, row) in column.iter_mut().zip(tokens) {
                *c = row[t];
            }
            let x = mode.dropout(&bound.embedding.lookup(&column)?, cfg.embed_dropout)?;
            let input = match (&post_image, cfg.kind) {
                (Some(p), ArchitectureKind::ParInject) => x.concat(p, 1)?,
                _ => x.clone(),
            };
            state = bound.cell.step(&state, &input)?;
            let h = state.h.clone();
            let h_out = mode.dropout(&h, cfg.rnn_dropout)?;
            let mm = match (&post_image, cfg.kind) {
                (Some(p), ArchitectureKind::Merge) => h_out.concat(p, 1)?,
                _ => h_out,
            };
            let logits = bound.output.linear(&mm)?;
            trace.word_inputs.push(x);
            trace.states.push(h);
            trace.multimodal.push(mm);
            trace.logits.push(logits);
        }
        Ok(trace)
    }

    /// Image features of a batch as a constant `[B × F]` tensor, or `None` for
    /// the text-only model.
    pub fn image_tensor(&self, features: &[Vec<f64>]) -> Result<Option<Tensor>> {
        if !self.kind().is_conditioned() {
            return Ok(None);
        }
        Ok(Some(Tensor::new(vec![features.len(), self.config.feat_dim], features.concat())?))
    }

    /// Mean masked cross-entropy of a batch, `−mean ln p(target)`.
    pub fn batch_loss(&self, bound: &BoundModel, batch: &Batch, mode: &mut Mode<'_>) -> Result<Tensor> {
        let image = self.image_tensor(&batch.features)?;
        self.batch_loss_on(bound, image.as_ref(), batch, mode)
    }

    fn batch_loss_on(&self, bound: &BoundModel, image: Option<&Tensor>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Tensor> {
        let trace = self.run(bound, image, &batch.inputs, mode)?;
        let mut log_probs = Vec::with_capacity(trace.steps());
        for t in 0..trace.steps() {
            log_probs.push(trace.log_softmax(t)?);
        }
        // stack step-major: row (t, b)
        let stacked = Tensor::cat(&log_probs, 0)?;
        let targets: Vec<usize> = (0..trace.steps())
            .flat_map(|t| batch.targets.iter().map(move |r| r[t]))
            .collect();
        let mask: Vec<f64> = (0..trace.steps())
            .flat_map(|t| batch.mask.iter().map(move |r| r[t]))
            .collect();
        cross_entropy_from_log_probs(&stacked, &targets, &mask)
    }

    /// Loss of a batch and the gradient of every non-frozen parameter.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch,
        frozen: &HashSet<String>,
        mode: &mut Mode<'_>,
    ) -> Result<(f64, crate::trainer::Gradients)> {
        let mut binder = Binder::training(frozen);
        let bound = self.bind(&mut binder);
        let loss = self.batch_loss(&bound, batch, mode)?;
        let value = loss.item()?;
        loss.backward()?;
        Ok((value, binder.gradients()))
    }

    /// Gradient of the inference-mode batch loss with respect to the image
    /// features, row-major `[B × feat_dim]`.
    pub fn image_gradient(&self, batch: &Batch) -> Result<Vec<f64>> {
        if !self.kind().is_conditioned() {
            return Err(Error::invalid("text-only language model takes no image"));
        }
        let image = Tensor::param(vec![batch.features.len(), self.config.feat_dim], batch.features.concat())?;
        let bound = self.bind(&mut Binder::inference());
        self.batch_loss_on(&bound, Some(&image), batch, &mut Mode::Inference)?.backward()?;
        Ok(image.grad().unwrap_or_else(|| vec![0.0; image.numel()]))
    }

    /// Loss of a batch without tracking gradients.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let bound = self.bind(&mut Binder::inference());
        self.batch_loss(&bound, batch, &mut Mode::Inference)?.item()
    }

    /// Forward pass over a single token sequence (starting with the start
    /// token). Returns per-step distributions, states and multimodal vectors.
    pub fn forward(
        &self,
        image: Option<&[f64]>,
        tokens: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<ForwardOutput> {
        let bound = self.bind(&mut Binder::inference());
        let image = match image {
            Some(f) => Some(Tensor::new(vec![1, f.len()], f.to_vec())?),
            None => None,
        };
        let trace = self.run(&bound, image.as_ref(), &[tokens.to_vec()], mode)?;
        let dists: Vec<Tensor> = (0..trace.steps()).map(|t| trace.softmax(t)).collect::<Result<_>>()?;
        Ok(ForwardOutput {
            dists: Tensor::cat(&dists, 0)?,
            states: Tensor::cat(&trace.states, 0)?,
            multimodal: Tensor::cat(&trace.multimodal, 0)?,
        })
    }

    /// The multimodal vector after consuming `prefix[..t]`, `1 <= t <= len`.
    pub fn multimodal_at(&self, image: Option<&[f64]>, prefix: &[usize], t: usize) -> Result<Vec<f64>> {
        if t == 0 || t > prefix.len() {
            return Err(Error::OutOfRange {
                index: t,
                size: prefix.len(),
            });
        }
        let out = self.forward(image, &prefix[..t], &mut Mode::Inference)?;
        Ok(out.multimodal.row(t - 1).to_vec())
    }

    /// An incremental decoder conditioned on `image`.
    pub fn decoder(&self, image: Option<&[f64]>) -> Result<StepDecoder<'_>> {
        let bound = self.bind(&mut Binder::inference());
        let image_t = match image {
            Some(f) => Some(Tensor::new(vec![1, f.len()], f.to_vec())?),
            None => None,
        };
        let post_image = self.image_path(&bound, image_t.as_ref(), 1, &mut Mode::Inference)?;
        let initial = self.initial_state(&bound, post_image.as_ref(), 1)?;
        Ok(StepDecoder {
            model: self,
            bound,
            post_image,
            initial,
        })
    }
}

/// `−Σ mask·log p(target) / Σ mask` over rows of a `[N × V]` log-probability
/// matrix.
pub fn cross_entropy_from_log_probs(log_probs: &Tensor, targets: &[usize], mask: &[f64]) -> Result<Tensor> {
    let denom: f64 = mask.iter().sum();
    if denom <= 0.0 {
        return Err(Error::invalid("cross-entropy over an all-masked batch"));
    }
    let picked = log_probs.pick_per_row(targets)?;
    let masked = picked.mul(&Tensor::vector(mask.to_vec()))?;
    Ok(masked.sum().scale(-1.0 / denom))
}

impl Parameterized for CaptionModel {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ParamArray, ParamRole)) {
        let p = |name: &str| crate::layers::join(prefix, name);
        self.embedding.visit(&p("embedding"), f);
        self.rnn.visit(&p("rnn"), f);
        if let Some(post) = &self.post_image {
            post.visit(&p("post_image"), f);
        }
        self.output.visit(&p("output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ParamArray, ParamRole)) {
        let p = |name: &str| crate::layers::join(prefix, name);
        self.embedding.visit_mut(&p("embedding"), f);
        self.rnn.visit_mut(&p("rnn"), f);
        if let Some(post) = &mut self.post_image {
            post.visit_mut(&p("post_image"), f);
        }
        self.output.visit_mut(&p("output"), f);
    }
}

/// A next-token model that can be advanced one token at a time.
pub trait SequenceModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// State after the start token, and log-probabilities of the first word.
    fn start(&self) -> Result<(Self::State, Vec<f64>)>;

    /// State after `token`, and log-probabilities of the token after it.
    fn advance(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// Inference-only stepping through a [`CaptionModel`] for one image.
pub struct StepDecoder<'m> {
    model: &'m CaptionModel,
    bound: BoundModel,
    post_image: Option<Tensor>,
    initial: CellState,
}

impl StepDecoder<'_> {
    fn consume(&self, state: &CellState, token: usize) -> Result<(CellState, Vec<f64>)> {
        let x = self.bound.embedding.lookup(&[token])?;
        let input = match (&self.post_image, self.model.kind()) {
            (Some(p), ArchitectureKind::ParInject) => x.concat(p, 1)?,
            _ => x,
        };
        let next = self.bound.cell.step(state, &input)?;
        let mm = match (&self.post_image, self.model.kind()) {
            (Some(p), ArchitectureKind::Merge) => next.h.concat(p, 1)?,
            _ => next.h.clone(),
        };
        let lp = self.bound.output.linear(&mm)?.log_softmax()?;
        Ok((next, lp.to_vec()))
    }
}

impl SequenceModel for StepDecoder<'_> {
    type State = CellState;

    fn vocab_size(&self) -> usize {
        self.model.vocab_size()
    }

    fn start(&self) -> Result<(CellState, Vec<f64>)> {
        self.consume(&self.initial, START)
    }

    fn advance(&self, state: &CellState, token: usize) -> Result<(CellState, Vec<f64>)> {
        self.consume(state, token)
    }
}
