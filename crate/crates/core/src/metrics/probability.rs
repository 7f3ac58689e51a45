//! Caption probability and perplexity under teacher forcing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batch, CaptionedItem, UNKNOWN};
use crate::error::{Error, Result};
use crate::layers::Binder;
use crate::model::{CaptionModel, Mode};

/// Rows per forward pass when scoring many captions.
const SCORING_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionScore {
    /// `Σ ln P` over every predicted token, end token included.
    pub logprob: f64,
    /// Bits per token, divided by the sentence length counting start and end.
    pub entropy: f64,
    pub perplexity: f64,
}

impl CaptionScore {
    /// Scores a caption from the probabilities of its predicted tokens
    /// (the words followed by the end token).
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid("caption must contain at least one word"));
        }
        let sentence_len = (probs.len() + 1) as f64;
        let log2_sum: f64 = probs.iter().map(|p| p.log2()).sum();
        let entropy = -log2_sum / sentence_len;
        Ok(CaptionScore {
            logprob: probs.iter().map(|p| p.ln()).sum(),
            entropy,
            perplexity: entropy.exp2(),
        })
    }

    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }
}

/// Divides the probability of every unknown target by `oov_type_count`.
pub fn adjust_unknown(probs: &mut [f64], targets: &[usize], oov_type_count: usize) -> Result<()> {
    let has_unknown = targets.contains(&UNKNOWN);
    if has_unknown && oov_type_count == 0 {
        return Err(Error::invalid("oov_type_count must be positive when unknown tokens occur"));
    }
    for (p, &t) in probs.iter_mut().zip(targets) {
        if t == UNKNOWN {
            *p /= oov_type_count as f64;
        }
    }
    Ok(())
}

/// Probabilities the model assigns to each word of `caption` and then to the end token.
pub fn token_probabilities(model: &CaptionModel, image: Option<&[f64]>, caption: &[usize]) -> Result<Vec<f64>> {
    if caption.is_empty() {
        return Err(Error::invalid("empty caption"));
    }
    let features = image.map(<[f64]>::to_vec).unwrap_or_default();
    let rows = [(features.as_slice(), caption)];
    Ok(batch_probabilities(model, &rows)?.pop().expect("one row"))
}

pub fn caption_logprob(model: &CaptionModel, image: Option<&[f64]>, caption: &[usize]) -> Result<CaptionScore> {
    CaptionScore::from_probs(&token_probabilities(model, image, caption)?)
}

/// Like [`caption_logprob`] with each unknown-token probability divided by the
/// number of out-of-vocabulary word types it stands for.
pub fn adjusted_unknown_logprob(
    model: &CaptionModel,
    image: Option<&[f64]>,
    caption: &[usize],
    oov_type_count: usize,
) -> Result<CaptionScore> {
    let mut probs = token_probabilities(model, image, caption)?;
    let mut targets = caption.to_vec();
    targets.push(crate::data::END);
    adjust_unknown(&mut probs, &targets, oov_type_count)?;
    CaptionScore::from_probs(&probs)
}

fn batch_probabilities(model: &CaptionModel, rows: &[(&[f64], &[usize])]) -> Result<Vec<Vec<f64>>> {
    let batch = make_batch(rows);
    let bound = model.bind(&mut Binder::inference());
    let image = model.image_tensor(&batch.features)?;
    let trace = model.run(&bound, image.as_ref(), &batch.inputs, &mut Mode::Inference)?;
    let mut out: Vec<Vec<f64>> = rows.iter().map(|(_, c)| Vec::with_capacity(c.len() + 1)).collect();
    for t in 0..trace.steps() {
        let dist = trace.softmax(t)?;
        for (r, probs) in out.iter_mut().enumerate() {
            if batch.mask[r][t] > 0.0 {
                probs.push(dist.row(r)[batch.targets[r][t]]);
            }
        }
    }
    Ok(out)
}

/// Scores every `(features, caption)` row, in order. Work is spread over the
/// rayon pool in fixed chunks, so results do not depend on the thread count.
pub fn score_rows(
    model: &CaptionModel,
    rows: &[(&[f64], &[usize])],
    oov_type_count: Option<usize>,
) -> Result<Vec<CaptionScore>> {
    if rows.iter().any(|(_, c)| c.is_empty()) {
        return Err(Error::invalid("empty caption"));
    }
    let chunks: Vec<Vec<CaptionScore>> = rows
        .par_chunks(SCORING_CHUNK)
        .map(|chunk| {
            let probs = batch_probabilities(model, chunk)?;
            probs
                .into_iter()
                .zip(chunk)
                .map(|(mut p, (_, caption))| {
                    if let Some(oov) = oov_type_count {
                        let mut targets = caption.to_vec();
                        targets.push(crate::data::END);
                        adjust_unknown(&mut p, &targets, oov)?;
                    }
                    CaptionScore::from_probs(&p)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Scores every caption of every item, item-major.
pub fn score_items(
    model: &CaptionModel,
    items: &[CaptionedItem],
    oov_type_count: Option<usize>,
) -> Result<Vec<CaptionScore>> {
    let rows: Vec<(&[f64], &[usize])> = items
        .iter()
        .flat_map(|it| it.captions.iter().map(move |c| (it.features.as_slice(), c.as_slice())))
        .collect();
    score_rows(model, &rows, oov_type_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityStats {
    pub mean_probability: f64,
    pub median_probability: f64,
    pub geomean_probability: f64,
    pub mean_perplexity: f64,
    pub median_perplexity: f64,
    pub geomean_perplexity: f64,
}

/// `2^(mean entropy)`.
pub fn geomean_perplexity(scores: &[CaptionScore]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("no captions to score"));
    }
    let mean_entropy = scores.iter().map(|s| s.entropy).sum::<f64>() / scores.len() as f64;
    Ok(mean_entropy.exp2())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

impl ProbabilityStats {
    pub fn from_scores(scores: &[CaptionScore]) -> Result<Self> {
        let n = scores.len() as f64;
        let probs: Vec<f64> = scores.iter().map(CaptionScore::probability).collect();
        let pplx: Vec<f64> = scores.iter().map(|s| s.perplexity).collect();
        let geomean_perplexity = geomean_perplexity(scores)?;
        Ok(ProbabilityStats {
            mean_probability: probs.iter().sum::<f64>() / n,
            median_probability: median(&probs).expect("nonempty"),
            geomean_probability: (scores.iter().map(|s| s.logprob).sum::<f64>() / n).exp(),
            mean_perplexity: pplx.iter().sum::<f64>() / n,
            median_perplexity: median(&pplx).expect("nonempty"),
            geomean_perplexity,
        })
    }
}
