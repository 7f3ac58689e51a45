//! Reusing a text-only language model's embedding and RNN in a merge
//! caption generator.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaptionedItem, Vocabulary};
use crate::error::{Error, Result};
use crate::hyper::HyperparamSpec;
use crate::model::{ArchitectureKind, CaptionModel, ModelConfig};
use crate::trainer::{train, EarlyStopping, EpochRecord, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Transferred parameters are held fixed while training.
    Frozen,
    FineTuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub mode: TransferMode,
    /// Language-model corpus size is `10^exponent · base_count` sentences.
    #[serde(default)]
    pub exponent: f64,
    #[serde(default)]
    pub base_count: Option<usize>,
    /// Epochs of language-model training before transfer.
    #[serde(default)]
    pub partial_epochs: Option<usize>,
}

/// `round(10^exponent · base_count)`.
pub fn subsample_size(exponent: f64, base_count: usize) -> usize {
    (10f64.powf(exponent) * base_count as f64).round() as usize
}

/// Uniform sample without replacement of `round(10^exponent · base_count)`
/// sentences, kept in corpus order.
pub fn subsample_corpus<T: Clone, R: Rng + ?Sized>(
    corpus: &[T],
    exponent: f64,
    base_count: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    let n = subsample_size(exponent, base_count);
    if n > corpus.len() {
        return Err(Error::invalid(format!(
            "requested {n} sentences from a corpus of {}",
            corpus.len()
        )));
    }
    let mut picked = sample(rng, corpus.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Words known to both vocabularies, with caption-corpus counts.
pub fn intersect_vocab(lm_vocab: &Vocabulary, caption_vocab: &Vocabulary) -> Vocabulary {
    caption_vocab.intersect(lm_vocab)
}

/// Builds a merge caption generator over `target_vocab` whose RNN is a copy of
/// the language model's and whose embedding rows are copied for every word the
/// two vocabularies share (reserved tokens included). Everything else is
/// freshly initialized.
pub fn transfer<R: Rng + ?Sized>(
    lm: &CaptionModel,
    lm_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    kind: ArchitectureKind,
    hyper: &HyperparamSpec,
    feat_dim: usize,
    rng: &mut R,
) -> Result<CaptionModel> {
    if kind != ArchitectureKind::Merge {
        return Err(Error::constraint(format!("transfer targets the merge architecture, not {kind}")));
    }
    if lm.config.vocab_size != lm_vocab.len() {
        return Err(Error::invalid(format!(
            "language model has {} outputs but its vocabulary has {} words",
            lm.config.vocab_size,
            lm_vocab.len()
        )));
    }
    let src = &lm.config;
    if src.embed_size != hyper.embed_size || src.rnn_size != hyper.rnn_size || src.cell != hyper.cell {
        return Err(Error::constraint(format!(
            "geometry mismatch: source {:?} embed {} rnn {}, target {:?} embed {} rnn {}",
            src.cell, src.embed_size, src.rnn_size, hyper.cell, hyper.embed_size, hyper.rnn_size
        )));
    }
    hyper.validate()?;
    let config = ModelConfig::from_hyper(kind, hyper, target_vocab.len(), feat_dim);
    let mut model = CaptionModel::new(config, &hyper.init_spec(), rng)?;
    model.rnn = lm.rnn.clone();
    let e = hyper.embed_size;
    for i in 0..target_vocab.len() {
        let word = target_vocab.word(i).expect("index in range");
        if let Some(j) = lm_vocab.index_of(word) {
            model.embedding.e.data[i * e..(i + 1) * e].copy_from_slice(&lm.embedding.e.data[j * e..(j + 1) * e]);
        }
    }
    Ok(model)
}

/// Trainer freeze set for a transfer mode.
pub fn freeze_set(model: &CaptionModel, mode: TransferMode) -> HashSet<String> {
    match mode {
        TransferMode::Frozen => model.prefix_encoding_names().into_iter().collect(),
        TransferMode::FineTuned => HashSet::new(),
    }
}

pub const MAX_RESTARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialTrainLog {
    pub epochs: Vec<EpochRecord>,
    pub seed: u64,
    pub restarts: usize,
    /// First epoch whose validation perplexity was worse than the one before.
    pub degraded_at: Option<usize>,
}

fn first_degradation(epochs: &[EpochRecord]) -> Option<usize> {
    let mut stopper = EarlyStopping::default();
    epochs.iter().find(|r| stopper.degraded(r.val_geomean_pplx)).map(|r| r.epoch)
}

/// Trains a freshly built language model for exactly `n_epochs`. With
/// `enforce_improving`, a run whose validation perplexity worsens within those
/// epochs is restarted from a new seed, up to [`MAX_RESTARTS`] times; the last
/// attempt is kept regardless and the epoch where degradation began is
/// recorded.
pub fn partial_train_lm(
    build: &dyn Fn(u64) -> Result<CaptionModel>,
    train_set: &[CaptionedItem],
    val_set: &[CaptionedItem],
    hyper: &HyperparamSpec,
    n_epochs: usize,
    enforce_improving: bool,
    seed: u64,
) -> Result<(CaptionModel, PartialTrainLog)> {
    let mut restarts = 0;
    loop {
        let run_seed = seed.wrapping_add(restarts as u64);
        let model = build(run_seed)?;
        if model.kind() != ArchitectureKind::TextOnlyLm {
            return Err(Error::invalid("partial training expects a text-only language model"));
        }
        let opts = TrainOptions {
            seed: run_seed,
            max_epochs: n_epochs,
            early_stopping: false,
            target_loss: None,
            record_timing: false,
        };
        let (trained, history) = train(model, train_set, val_set, hyper, &HashSet::new(), &opts)?;
        let degraded_at = first_degradation(&history.epochs);
        if degraded_at.is_none() || !enforce_improving || restarts == MAX_RESTARTS {
            return Ok((
                trained,
                PartialTrainLog {
                    epochs: history.epochs,
                    seed: run_seed,
                    restarts,
                    degraded_at,
                },
            ));
        }
        restarts += 1;
    }
}
