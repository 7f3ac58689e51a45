use caplab::transfer::{freeze_set, intersect_vocab, transfer};
use caplab::ArchitectureKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{fit, load_corpus, load_model, save_run, split_items, train_options, training_vocab, TrainOutput};
use crate::config::{invalid, RunConfig};

#[derive(Serialize)]
struct TransferInfo<'a> {
    mode: caplab::transfer::TransferMode,
    source_fingerprint: &'a str,
    shared_words: usize,
}

/// Builds a merge model from a trained language model, trains it with the
/// prefix encoder frozen or free, and saves it like `train` does.
pub fn cmd_transfer(cfg: &RunConfig) -> anyhow::Result<TrainOutput> {
    let seed = cfg.seed()?;
    let plan = cfg
        .transfer
        .as_ref()
        .ok_or_else(|| invalid("a \"transfer\" section is required"))?;
    let lm_path = plan
        .lm_checkpoint
        .as_ref()
        .ok_or_else(|| invalid("transfer needs \"lm_checkpoint\""))?;
    let kind = cfg.architecture.unwrap_or(ArchitectureKind::Merge);
    let hyper = cfg.hyperparams()?;
    hyper.check_tying(kind)?;
    cfg.output_dir()?;
    let source = load_model(lm_path)?;
    if source.model.kind() != ArchitectureKind::TextOnlyLm {
        return Err(invalid(format!(
            "{} holds a {} model, not a text-only language model",
            lm_path.display(),
            source.model.kind()
        )));
    }
    let corpus = load_corpus(cfg, true)?;
    let caption_vocab = training_vocab(cfg, &corpus)?;
    let vocab = intersect_vocab(&source.vocab, &caption_vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = transfer(&source.model, &source.vocab, &vocab, kind, &hyper, corpus.feat_dim, &mut rng)?;
    let frozen = freeze_set(&model, plan.plan.mode);
    let train_set = split_items(&corpus, &cfg.splits.train, &vocab)?;
    let val_set = split_items(&corpus, &cfg.splits.val, &vocab)?;
    let (model, history) = fit(model, &train_set, &val_set, &hyper, &frozen, &train_options(cfg, seed), true)?;
    let info = TransferInfo {
        mode: plan.plan.mode,
        source_fingerprint: &source.header.config_fingerprint,
        shared_words: vocab.len() - caplab::data::RESERVED,
    };
    let checkpoint = save_run("transfer", cfg, &hyper, &model, &vocab, &frozen, &history, Some(info))?;
    Ok(TrainOutput { checkpoint, history })
}
