//! Constrained beam search.
//!
//! Hypotheses are ranked by raw cumulative log-probability. Generated words
//! never include the pad, start or unknown tokens, never repeat the previous
//! word, and the end token is only allowed once `min_len` words exist and is
//! forced at `max_len`. Search ends when the best hypothesis in the beam is
//! complete; completed hypotheses stay in the beam until then.

pub mod toy;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CaptionedItem, END, PAD, START, UNKNOWN};
use crate::error::{Error, Result};
use crate::model::{CaptionModel, SequenceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            width: 3,
            min_len: 5,
            max_len: 20,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        if self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "need 1 <= max_len and min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// A finished caption: words without start or end tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of `ln p` over every chosen token, end token included.
    pub logprob: f64,
    pub complete: bool,
}

/// Whether `token` may follow `words` under the generation constraints.
pub fn allowed(words: &[usize], token: usize, cfg: &BeamConfig) -> bool {
    if token == PAD || token == START || token == UNKNOWN {
        return false;
    }
    if words.last() == Some(&token) {
        return false;
    }
    if token == END {
        words.len() >= cfg.min_len
    } else {
        words.len() < cfg.max_len
    }
}

struct Entry<S> {
    words: Vec<usize>,
    logprob: f64,
    complete: bool,
    /// State after the last word and the log-distribution of the next token.
    next: Option<(S, Vec<f64>)>,
}

struct Candidate {
    parent: usize,
    token: usize,
    logprob: f64,
}

/// Orders by descending log-probability, then by the token sequence.
fn rank(a_lp: f64, a_seq: &[usize], b_lp: f64, b_seq: &[usize]) -> Ordering {
    b_lp.total_cmp(&a_lp).then_with(|| a_seq.cmp(b_seq))
}

pub fn beam_search<M: SequenceModel>(model: &M, cfg: &BeamConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let start = model.start()?;
    let mut beam = vec![Entry {
        words: Vec::new(),
        logprob: 0.0,
        complete: false,
        next: Some(start),
    }];
    loop {
        if beam[0].complete {
            let best = beam.swap_remove(0);
            return Ok(Hypothesis {
                tokens: best.words,
                logprob: best.logprob,
                complete: true,
            });
        }

        let mut candidates: Vec<Candidate> = Vec::new();
        for (i, e) in beam.iter().enumerate() {
            match &e.next {
                None => candidates.push(Candidate {
                    parent: i,
                    token: END,
                    logprob: e.logprob,
                }),
                Some((_, lp)) => {
                    if lp.len() != model.vocab_size() {
                        return Err(Error::invalid("model returned a distribution of the wrong size"));
                    }
                    for (token, &l) in lp.iter().enumerate() {
                        if allowed(&e.words, token, cfg) {
                            candidates.push(Candidate {
                                parent: i,
                                token,
                                logprob: e.logprob + l,
                            });
                        }
                    }
                }
            }
        }
        if candidates.is_empty() {
            return Err(Error::invalid("every continuation is forbidden; the vocabulary has no usable words"));
        }
        // Completed entries keep their sequence (the END is already counted).
        let seq = |c: &Candidate| -> Vec<usize> {
            let e = &beam[c.parent];
            let mut s = e.words.clone();
            if e.complete {
                s.push(END);
            } else {
                s.push(c.token);
            }
            s
        };
        let mut keyed: Vec<(Vec<usize>, Candidate)> = candidates.into_iter().map(|c| (seq(&c), c)).collect();
        keyed.sort_by(|(sa, a), (sb, b)| rank(a.logprob, sa, b.logprob, sb));
        keyed.truncate(cfg.width);

        let mut next_beam = Vec::with_capacity(keyed.len());
        for (_, c) in keyed {
            let parent = &beam[c.parent];
            if parent.complete {
                next_beam.push(Entry {
                    words: parent.words.clone(),
                    logprob: parent.logprob,
                    complete: true,
                    next: None,
                });
                continue;
            }
            let mut words = parent.words.clone();
            if c.token == END {
                next_beam.push(Entry {
                    words,
                    logprob: c.logprob,
                    complete: true,
                    next: None,
                });
            } else {
                let (state, _) = parent.next.as_ref().expect("incomplete entries carry a state");
                let next = model.advance(state, c.token)?;
                words.push(c.token);
                next_beam.push(Entry {
                    words,
                    logprob: c.logprob,
                    complete: false,
                    next: Some(next),
                });
            }
        }
        beam = next_beam;
    }
}

/// Beam search for one image (or none, for the text-only model).
pub fn generate(model: &CaptionModel, image: Option<&[f64]>, cfg: &BeamConfig) -> Result<Hypothesis> {
    beam_search(&model.decoder(image)?, cfg)
}

/// One generated caption per item, in item order.
pub fn generate_all(model: &CaptionModel, items: &[CaptionedItem], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    let conditioned = model.kind().is_conditioned();
    items
        .par_iter()
        .map(|it| generate(model, conditioned.then_some(it.features.as_slice()), cfg))
        .collect()
}
