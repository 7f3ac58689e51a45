use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    /// Share of the non-reserved vocabulary appearing in any candidate.
    pub vocab_used_pct: f64,
    /// Lowest training frequency among the vocabulary words used.
    pub min_freq_of_used: Option<u64>,
    pub mean_length: f64,
    /// Candidates that appear verbatim in the training set.
    pub reused_pct: f64,
    pub unique_pct: f64,
}

pub fn diversity<S: AsRef<str>>(
    candidates: &[Vec<S>],
    vocab: &Vocabulary,
    training_sentences: &HashSet<String>,
) -> DiversityStats {
    let n = candidates.len();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let mut used = HashSet::new();
    let mut sentences = HashSet::new();
    let mut reused = 0;
    let mut total_len = 0;
    for c in candidates {
        total_len += c.len();
        for w in c {
            if let Some(i) = vocab.index_of(w.as_ref()) {
                if !Vocabulary::is_reserved(i) {
                    used.insert(i);
                }
            }
        }
        let joined = join_words(c);
        if training_sentences.contains(&joined) {
            reused += 1;
        }
        sentences.insert(joined);
    }
    let content = vocab.len().saturating_sub(crate::data::RESERVED);
    DiversityStats {
        vocab_used_pct: if content == 0 {
            0.0
        } else {
            100.0 * used.len() as f64 / content as f64
        },
        min_freq_of_used: used.iter().map(|&i| vocab.count(i)).min(),
        mean_length: if n == 0 { 0.0 } else { total_len as f64 / n as f64 },
        reused_pct: pct(reused),
        unique_pct: pct(sentences.len()),
    }
}

pub fn join_words<S: AsRef<str>>(words: &[S]) -> String {
    words.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}
