use std::collections::HashSet;

use caplab::data::CaptionedItem;
use caplab::trainer::{History, StopReason};
use caplab::transfer::{partial_train_lm, subsample_corpus, PartialTrainLog};
use caplab::{build_model, ArchitectureKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{fit, load_corpus, save_run, split_items, train_options, training_vocab, TrainOutput};
use crate::config::RunConfig;

#[derive(Serialize)]
struct PartialInfo {
    sentences: usize,
    seed: u64,
    restarts: usize,
    degraded_at: Option<usize>,
}

/// One caption per item, so a sentence corpus can be subsampled.
fn sentences(items: &[CaptionedItem]) -> Vec<CaptionedItem> {
    items
        .iter()
        .flat_map(|it| {
            it.captions.iter().map(|c| CaptionedItem {
                id: it.id.clone(),
                features: it.features.clone(),
                captions: vec![c.clone()],
            })
        })
        .collect()
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<TrainOutput> {
    let seed = cfg.seed()?;
    let kind = cfg.architecture()?;
    let hyper = cfg.hyperparams()?;
    hyper.check_tying(kind)?;
    cfg.output_dir()?;
    let corpus = load_corpus(cfg, kind.is_conditioned())?;
    let vocab = training_vocab(cfg, &corpus)?;
    let mut train_set = split_items(&corpus, &cfg.splits.train, &vocab)?;
    let val_set = split_items(&corpus, &cfg.splits.val, &vocab)?;
    let build = |s: u64| build_model(kind, &hyper, vocab.len(), corpus.feat_dim, &mut ChaCha8Rng::seed_from_u64(s));
    let opts = train_options(cfg, seed);
    let frozen = HashSet::new();

    let plan = cfg.transfer.as_ref().filter(|_| kind == ArchitectureKind::TextOnlyLm);
    let mut extra = None;
    if let Some(base) = plan.and_then(|t| t.plan.base_count) {
        let all = sentences(&train_set);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        train_set = subsample_corpus(&all, plan.expect("checked").plan.exponent, base, &mut rng)?;
    }
    let (model, history) = match plan.and_then(|t| t.plan.partial_epochs) {
        Some(n) => {
            let enforce = plan.is_some_and(|t| t.enforce_improving);
            let (model, log): (_, PartialTrainLog) =
                partial_train_lm(&build, &train_set, &val_set, &hyper, n, enforce, seed)?;
            extra = Some(PartialInfo {
                sentences: train_set.iter().map(|it| it.captions.len()).sum(),
                seed: log.seed,
                restarts: log.restarts,
                degraded_at: log.degraded_at,
            });
            let kept_epoch = log.epochs.len();
            let history = History {
                epochs: log.epochs,
                stop: StopReason::MaxEpochs,
                kept_epoch,
            };
            (model, history)
        }
        None => fit(build(seed)?, &train_set, &val_set, &hyper, &frozen, &opts, true)?,
    };
    let checkpoint = save_run("train", cfg, &hyper, &model, &vocab, &frozen, &history, extra)?;
    Ok(TrainOutput { checkpoint, history })
}
