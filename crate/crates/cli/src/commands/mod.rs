//! One function per subcommand. Each reads a [`RunConfig`] and writes its
//! artifacts under the output directory.

mod analyze;
mod evaluate;
mod generate;
mod synth;
mod train;
mod transfer;
mod tune;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use caplab::data::{
    build_vocab, read_captions_jsonl, CaptionedItem, Corpus, RawItem, Vocabulary,
};
use caplab::model::{load_checkpoint, save_checkpoint, CheckpointHeader};
use caplab::trainer::{train_with, History, TrainOptions};
use caplab::{CaptionModel, Error, HyperparamSpec};
use serde::Serialize;

pub use analyze::cmd_analyze;
pub use evaluate::cmd_evaluate;
pub use generate::{cmd_generate, CaptionsFile, GeneratedCaption};
pub use synth::cmd_synth;
pub use train::cmd_train;
pub use transfer::cmd_transfer;
pub use tune::cmd_tune;

use crate::config::{invalid, RunConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const HISTORY_FILE: &str = "history.json";
pub const RUN_FILE: &str = "run.json";

/// Where a training-like command put its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub history: History,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(())
}

/// Captions and features; the features file may be left out when
/// `need_features` is false, giving every image an empty feature vector.
fn load_corpus(cfg: &RunConfig, need_features: bool) -> anyhow::Result<Corpus> {
    let captions = cfg.captions()?;
    match (&cfg.features, need_features) {
        (Some(features), _) => Ok(Corpus::load(captions, features)?),
        (None, true) => Err(invalid("a features file is required (config \"features\")")),
        (None, false) => {
            let records = read_captions_jsonl(captions)?;
            let items = records
                .into_iter()
                .map(|r| RawItem {
                    id: r.id,
                    split: r.split,
                    features: Vec::new(),
                    captions: r.captions.iter().map(|c| caplab::data::preprocess(c)).collect(),
                })
                .collect();
            Ok(Corpus { feat_dim: 0, items })
        }
    }
}

fn split_items(corpus: &Corpus, split: &str, vocab: &Vocabulary) -> anyhow::Result<Vec<CaptionedItem>> {
    let items: Vec<CaptionedItem> = corpus
        .encode(split, vocab)
        .into_iter()
        .filter(|it| !it.captions.is_empty())
        .collect();
    if items.is_empty() {
        return Err(invalid(format!("split {split:?} has no captioned images")));
    }
    Ok(items)
}

fn training_vocab(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<Vocabulary> {
    Ok(build_vocab(&corpus.sentences(&cfg.splits.train), cfg.min_freq.unwrap_or(1))?)
}

fn train_options(cfg: &RunConfig, seed: u64) -> TrainOptions {
    TrainOptions {
        seed,
        max_epochs: cfg.training.max_epochs,
        early_stopping: cfg.training.early_stopping,
        target_loss: cfg.training.target_loss,
        record_timing: false,
    }
}

fn fit(
    model: CaptionModel,
    train: &[CaptionedItem],
    val: &[CaptionedItem],
    hyper: &HyperparamSpec,
    frozen: &HashSet<String>,
    opts: &TrainOptions,
    verbose: bool,
) -> anyhow::Result<(CaptionModel, History)> {
    let (model, history) = train_with(model, train, val, hyper, frozen, opts, &mut |r: &caplab::trainer::EpochRecord| {
        if verbose && r.epoch.is_multiple_of(10) {
            eprintln!("epoch {:>4}  loss {:.6}  val pplx {:.4}", r.epoch, r.loss, r.val_geomean_pplx);
        }
    })?;
    if verbose {
        let last = history.epochs.last().expect("at least one epoch");
        eprintln!(
            "stopped after epoch {} ({:?}), kept epoch {}, loss {:.6}, val pplx {:.4}",
            last.epoch, history.stop, history.kept_epoch, last.loss, last.val_geomean_pplx
        );
    }
    Ok((model, history))
}

#[derive(Serialize)]
struct HistoryFile<'a, E: Serialize> {
    config_fingerprint: &'a str,
    #[serde(flatten)]
    history: &'a History,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<E>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_fingerprint: &'a str,
    model_fingerprint: &'a str,
    config: &'a RunConfig,
    hyperparams: &'a HyperparamSpec,
}

/// Checkpoint, vocabulary, history and a record of the resolved run.
#[allow(clippy::too_many_arguments)]
fn save_run<E: Serialize>(
    command: &str,
    cfg: &RunConfig,
    hyper: &HyperparamSpec,
    model: &CaptionModel,
    vocab: &Vocabulary,
    frozen: &HashSet<String>,
    history: &History,
    details: Option<E>,
) -> anyhow::Result<PathBuf> {
    let out = cfg.output_dir()?;
    create_dir(out)?;
    let fingerprint = cfg.fingerprint()?;
    let mut frozen: Vec<String> = frozen.iter().cloned().collect();
    frozen.sort();
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, model, &vocab.fingerprint(), &frozen)?;
    write_json(&out.join(VOCAB_FILE), vocab)?;
    write_json(
        &out.join(HISTORY_FILE),
        &HistoryFile {
            config_fingerprint: &fingerprint,
            history,
            details,
        },
    )?;
    let header = CheckpointHeader::new(model, &vocab.fingerprint(), &frozen)?;
    write_json(
        &out.join(RUN_FILE),
        &RunRecord {
            command,
            config_fingerprint: &fingerprint,
            model_fingerprint: &header.config_fingerprint,
            config: cfg,
            hyperparams: hyper,
        },
    )?;
    Ok(ckpt)
}

/// A checkpoint and the vocabulary stored beside it.
pub struct LoadedModel {
    pub model: CaptionModel,
    pub header: CheckpointHeader,
    pub vocab: Vocabulary,
}

pub fn load_model(path: &Path) -> anyhow::Result<LoadedModel> {
    let (model, header) = load_checkpoint(path)?;
    let vocab_path = path.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE);
    let text = std::fs::read_to_string(&vocab_path).map_err(io_err(&vocab_path))?;
    let vocab: Vocabulary = serde_json::from_str(&text)
        .map_err(|e| Error::Format {
            what: "vocabulary file",
            detail: format!("{}: {e}", vocab_path.display()),
        })
        .with_context(|| format!("loading {}", vocab_path.display()))?;
    if vocab.fingerprint() != header.vocab_fingerprint || vocab.len() != model.vocab_size() {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("{} does not match the vocabulary in {}", path.display(), vocab_path.display()),
        }
        .into());
    }
    Ok(LoadedModel { model, header, vocab })
}
