//! Minibatch training with early stopping on validation perplexity.

mod optim;

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, CaptionedItem};
use crate::error::{Error, Result};
use crate::hyper::HyperparamSpec;
use crate::layers::{ParamArray, Parameterized};
use crate::metrics::{geomean_perplexity, score_items};
use crate::model::{CaptionModel, Mode};

pub use optim::{add_weight_decay, clip_by_norm, global_norm, weight_decay_penalty, Gradients, Optimizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub seed: u64,
    pub max_epochs: usize,
    /// Stop at the first epoch whose validation perplexity is worse than the
    /// previous one, keeping the previous parameters.
    pub early_stopping: bool,
    /// Stop once the epoch's mean training loss falls below this.
    pub target_loss: Option<f64>,
    /// Record wall-clock seconds per epoch (makes histories non-reproducible).
    pub record_timing: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            max_epochs: 100,
            early_stopping: true,
            target_loss: None,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean training loss, weight decay included.
    pub loss: f64,
    pub val_geomean_pplx: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum StopReason {
    /// Validation perplexity got worse at this epoch.
    Degraded { epoch: usize },
    TargetLoss,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epoch whose parameters were returned (0 = untrained).
    pub kept_epoch: usize,
}

impl History {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Compares each epoch's validation score with the one before it.
#[derive(Debug, Clone, Default)]
pub struct EarlyStopping {
    previous: Option<f64>,
}

impl EarlyStopping {
    /// True when `val` is worse than the previous observation.
    pub fn degraded(&mut self, val: f64) -> bool {
        let worse = self.previous.is_some_and(|p| val > p);
        self.previous = Some(val);
        worse
    }
}

/// Mean masked cross-entropy of `−ln p(target)` over rows of per-position
/// distributions. Oracle-style scalar version of the graph loss.
pub fn cross_entropy(dists: &[Vec<Vec<f64>>], targets: &[Vec<usize>], mask: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0.0;
    for ((rows, tgt), m) in dists.iter().zip(targets).zip(mask) {
        if rows.len() != tgt.len() || rows.len() != m.len() {
            return Err(Error::invalid("dists, targets and mask disagree in length"));
        }
        for ((dist, &t), &w) in rows.iter().zip(tgt).zip(m) {
            if w > 0.0 {
                total -= w * dist[t].ln();
                count += w;
            }
        }
    }
    if count == 0.0 {
        return Err(Error::invalid("cross-entropy over an all-masked batch"));
    }
    Ok(total / count)
}

/// Validation criterion: geometric-mean perplexity under teacher forcing.
pub fn validation_perplexity(model: &CaptionModel, items: &[CaptionedItem]) -> Result<f64> {
    geomean_perplexity(&score_items(model, items, None)?)
}

fn snapshot(model: &CaptionModel) -> Vec<ParamArray> {
    let mut out = Vec::new();
    model.visit("", &mut |_, p, _| out.push(p.clone()));
    out
}

fn restore(model: &mut CaptionModel, params: Vec<ParamArray>) {
    let mut it = params.into_iter();
    model.visit_mut("", &mut |_, p, _| *p = it.next().expect("same model"));
}

pub fn train(
    model: CaptionModel,
    train_set: &[CaptionedItem],
    val_set: &[CaptionedItem],
    hyper: &HyperparamSpec,
    frozen: &HashSet<String>,
    opts: &TrainOptions,
) -> Result<(CaptionModel, History)> {
    train_with(model, train_set, val_set, hyper, frozen, opts, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: CaptionModel,
    train_set: &[CaptionedItem],
    val_set: &[CaptionedItem],
    hyper: &HyperparamSpec,
    frozen: &HashSet<String>,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(CaptionModel, History)> {
    hyper.validate()?;
    if train_set.iter().all(|it| it.captions.is_empty()) {
        return Err(Error::invalid("training set is empty"));
    }
    if val_set.iter().all(|it| it.captions.is_empty()) {
        return Err(Error::invalid("validation set is empty"));
    }
    let names: HashSet<String> = model.param_names().into_iter().collect();
    if let Some(unknown) = frozen.iter().find(|n| !names.contains(*n)) {
        return Err(Error::invalid(format!("cannot freeze unknown parameter {unknown}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut optimizer = Optimizer::new(hyper.optimizer, hyper.learning_rate, hyper.optimizer_constants);
    let mut stopper = EarlyStopping::default();
    let mut history = History {
        epochs: Vec::new(),
        stop: StopReason::MaxEpochs,
        kept_epoch: 0,
    };
    let mut previous = snapshot(&model);

    for epoch in 1..=opts.max_epochs {
        let started = Instant::now();
        let batches = make_batches(train_set, hyper.minibatch_size, Some(&mut rng))?;
        let mut loss_sum = 0.0;
        let mut tokens = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (data_loss, mut grads) = model.loss_and_gradients(batch, frozen, &mut Mode::Training(&mut rng))?;
            let loss = data_loss + weight_decay_penalty(&model, hyper.weight_decay);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    value: loss,
                });
            }
            add_weight_decay(&model, &mut grads, hyper.weight_decay);
            clip_by_norm(&mut grads, hyper.max_grad_norm)?;
            optimizer.step(&mut model, &grads)?;
            let n = batch.token_count();
            loss_sum += loss * n;
            tokens += n;
        }
        let loss = loss_sum / tokens;
        let val = validation_perplexity(&model, val_set)?;
        if !val.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: batches.len(),
                value: val,
            });
        }
        let record = EpochRecord {
            epoch,
            loss,
            val_geomean_pplx: val,
            wall_seconds: opts.record_timing.then(|| started.elapsed().as_secs_f64()),
        };
        on_epoch(&record);
        history.epochs.push(record);

        if stopper.degraded(val) && opts.early_stopping {
            restore(&mut model, previous);
            history.stop = StopReason::Degraded { epoch };
            history.kept_epoch = epoch - 1;
            return Ok((model, history));
        }
        history.kept_epoch = epoch;
        if opts.target_loss.is_some_and(|t| loss < t) {
            history.stop = StopReason::TargetLoss;
            return Ok((model, history));
        }
        previous = snapshot(&model);
    }
    Ok((model, history))
}
