//! Random search over the hyperparameter space.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper::{ranges, HyperparamSpec, OptimizerConstants, OptimizerKind};
use crate::layers::{CellKind, InitMethod};
use crate::metrics::csv_err;
use crate::model::{ArchitectureKind, LstmInjectTarget};
use crate::tensor::Activation;

/// The sampled space. Scale-like values are log-uniform, sizes and dropouts
/// uniform, the rest categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub kind: ArchitectureKind,
    pub cell: CellKind,
    pub lstm_inject_target: LstmInjectTarget,
    pub optimizers: Vec<OptimizerKind>,
    pub init_methods: Vec<InitMethod>,
    pub activations: Vec<Activation>,
}

impl SearchSpace {
    pub fn new(kind: ArchitectureKind) -> Self {
        SearchSpace {
            kind,
            cell: CellKind::Gru,
            lstm_inject_target: LstmInjectTarget::Cell,
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Rmsprop, OptimizerKind::Adadelta],
            init_methods: vec![InitMethod::Normal, InitMethod::Xavier],
            activations: vec![Activation::Relu, Activation::Identity],
        }
    }

    /// One spec inside every range that satisfies the architecture's size tying.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<HyperparamSpec> {
        let log_uniform = |rng: &mut R, (lo, hi): (f64, f64)| rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi);
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        let size = |rng: &mut R| rng.random_range(ranges::LAYER_SIZE.0..=ranges::LAYER_SIZE.1);
        let init_method = *self.init_methods.choose(rng).ok_or_else(|| Error::invalid("search space has no init method choices"))?;
        let max_init_weight = log_uniform(rng, ranges::MAX_INIT_WEIGHT);
        let (embed_size, rnn_size, post_image_size) = loop {
            let sizes = (size(rng), size(rng), size(rng));
            if crate::model::check_tying(self.kind, sizes.0, sizes.1, sizes.2).is_ok() {
                break sizes;
            }
        };
        let post_image_activation = *self.activations.choose(rng).ok_or_else(|| Error::invalid("search space has no activation choices"))?;
        let optimizer = *self.optimizers.choose(rng).ok_or_else(|| Error::invalid("search space has no optimizer choices"))?;
        let spec = HyperparamSpec {
            init_method,
            max_init_weight,
            embed_size,
            rnn_size,
            post_image_size,
            post_image_activation,
            optimizer,
            learning_rate: log_uniform(rng, ranges::LEARNING_RATE),
            normalize_image: rng.random_bool(0.5),
            weight_decay: log_uniform(rng, ranges::WEIGHT_DECAY),
            image_dropout: uniform(rng, ranges::DROPOUT),
            post_image_dropout: uniform(rng, ranges::DROPOUT),
            embed_dropout: uniform(rng, ranges::DROPOUT),
            rnn_dropout: uniform(rng, ranges::DROPOUT),
            max_grad_norm: uniform(rng, ranges::MAX_GRAD_NORM),
            minibatch_size: rng.random_range(ranges::MINIBATCH.0..=ranges::MINIBATCH.1),
            beam_width: rng.random_range(ranges::BEAM_WIDTH.0..=ranges::BEAM_WIDTH.1),
            cell: self.cell,
            lstm_inject_target: self.lstm_inject_target,
            optimizer_constants: OptimizerConstants::default(),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Sampling order.
    pub index: usize,
    pub spec: HyperparamSpec,
    pub seeds: Vec<u64>,
    /// One score per repeat; a failed evaluation scores negative infinity.
    pub scores: Vec<f64>,
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Samples `budget` specs, scores each `repeats` times with distinct seeds and
/// ranks them by mean score, best first. Ties keep sampling order.
pub fn random_search<F>(space: &SearchSpace, budget: usize, repeats: usize, seed: u64, eval: F) -> Result<Vec<Trial>>
where
    F: Fn(&HyperparamSpec, u64) -> Result<f64> + Sync,
{
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planned = Vec::with_capacity(budget);
    for index in 0..budget {
        let spec = space.sample(&mut rng)?;
        let seeds: Vec<u64> = (0..repeats).map(|_| rng.random()).collect();
        planned.push((index, spec, seeds));
    }
    let mut trials: Vec<Trial> = planned
        .into_par_iter()
        .map(|(index, spec, seeds)| {
            let mut scores = Vec::with_capacity(seeds.len());
            let mut errors = Vec::new();
            for &s in &seeds {
                match eval(&spec, s) {
                    Ok(v) if !v.is_nan() => scores.push(v),
                    Ok(_) => {
                        errors.push(format!("seed {s}: score is NaN"));
                        scores.push(f64::NEG_INFINITY);
                    }
                    Err(e) => {
                        errors.push(format!("seed {s}: {e}"));
                        scores.push(f64::NEG_INFINITY);
                    }
                }
            }
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            Trial {
                index,
                spec,
                seeds,
                scores,
                mean,
                errors,
            }
        })
        .collect();
    trials.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.index.cmp(&b.index)));
    Ok(trials)
}

fn scalar_fields(spec: &HyperparamSpec) -> Result<Vec<(String, String)>> {
    let value = serde_json::to_value(spec)?;
    let obj = value.as_object().expect("spec serializes to an object");
    Ok(obj
        .iter()
        .filter(|(_, v)| !v.is_object())
        .map(|(k, v)| {
            let text = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), text)
        })
        .collect())
}

/// One row per trial, in ranked order: index, spec fields, repeat scores, mean.
pub fn trials_to_csv(trials: &[Trial]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = trials.first() {
        let mut header = vec!["rank".to_string(), "index".to_string()];
        header.extend(scalar_fields(&first.spec)?.into_iter().map(|(k, _)| k));
        header.extend((1..=first.scores.len()).map(|i| format!("score_{i}")));
        header.push("mean".into());
        w.write_record(&header).map_err(csv_err)?;
    }
    for (rank, t) in trials.iter().enumerate() {
        let mut row = vec![(rank + 1).to_string(), t.index.to_string()];
        row.extend(scalar_fields(&t.spec)?.into_iter().map(|(_, v)| v));
        row.extend(t.scores.iter().map(f64::to_string));
        row.push(t.mean.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the ranked CSV and the best spec as JSON.
pub fn write_results(trials: &[Trial], csv_path: &Path, best_path: &Path) -> Result<()> {
    let best = trials.first().ok_or_else(|| Error::invalid("no trials to write"))?;
    std::fs::write(csv_path, trials_to_csv(trials)?).map_err(|e| Error::io(csv_path, e))?;
    let json = serde_json::to_string_pretty(&best.spec)? + "\n";
    std::fs::write(best_path, json).map_err(|e| Error::io(best_path, e))
}
