use std::collections::HashSet;
use std::path::PathBuf;

use caplab::decoder::generate_all;
use caplab::metrics::cider;
use caplab::trainer::{train, validation_perplexity, TrainOptions};
use caplab::tuner::{random_search, write_results, SearchSpace, Trial};
use caplab::build_model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{create_dir, load_corpus, split_items, training_vocab};
use crate::config::{invalid, RunConfig, TuneScore};

/// Random search over the hyperparameter space of the configured
/// architecture. Writes `tune.csv` and `best_hyperparams.json`.
pub fn cmd_tune(cfg: &RunConfig, budget: Option<usize>) -> anyhow::Result<(PathBuf, Vec<Trial>)> {
    let seed = cfg.seed()?;
    let kind = cfg.architecture()?;
    let tune = cfg.tune.as_ref().ok_or_else(|| invalid("a \"tune\" section is required"))?;
    let budget = budget.unwrap_or(tune.budget);
    let out = cfg.output_dir()?;
    let corpus = load_corpus(cfg, kind.is_conditioned())?;
    let vocab = training_vocab(cfg, &corpus)?;
    let train_set = split_items(&corpus, &cfg.splits.train, &vocab)?;
    let val_set = split_items(&corpus, &cfg.splits.val, &vocab)?;
    if tune.score == TuneScore::Cider && val_set.len() < 2 {
        return Err(invalid("CIDEr scoring needs at least two validation images"));
    }
    let references: Vec<Vec<Vec<usize>>> = val_set.iter().map(|it| it.captions.clone()).collect();
    let max_epochs = tune.max_epochs.unwrap_or(cfg.training.max_epochs);

    let trials = random_search(&SearchSpace::new(kind), budget, tune.repeats, seed, |spec, s| {
        let model = build_model(kind, spec, vocab.len(), corpus.feat_dim, &mut ChaCha8Rng::seed_from_u64(s))?;
        let opts = TrainOptions {
            seed: s,
            max_epochs,
            early_stopping: cfg.training.early_stopping,
            target_loss: cfg.training.target_loss,
            record_timing: false,
        };
        let (model, _) = train(model, &train_set, &val_set, spec, &HashSet::new(), &opts)?;
        match tune.score {
            TuneScore::NegGeomeanPerplexity => Ok(-validation_perplexity(&model, &val_set)?),
            TuneScore::Cider => {
                let hyps = generate_all(&model, &val_set, &cfg.beam(Some(spec)))?;
                let cands: Vec<Vec<usize>> = hyps.into_iter().map(|h| h.tokens).collect();
                cider(&cands, &references)
            }
        }
    })?;
    create_dir(out)?;
    let csv = out.join("tune.csv");
    write_results(&trials, &csv, &out.join("best_hyperparams.json"))?;
    Ok((csv, trials))
}
