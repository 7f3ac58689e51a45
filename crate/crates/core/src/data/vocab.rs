use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNKNOWN: usize = 3;
/// Number of reserved pseudo-token indices.
pub const RESERVED: usize = 4;

const RESERVED_WORDS: [&str; RESERVED] = ["<pad>", "<start>", "<end>", "<unk>"];

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
    counts: Vec<u64>,
}

/// Bidirectional word/index map. Indices 0..4 are pad, start, end and unknown;
/// the remaining words are ordered by descending training frequency, then
/// alphabetically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.words.len() != f.counts.len()
            || f.words.len() < RESERVED
            || f.words[..RESERVED] != RESERVED_WORDS
        {
            return Err(Error::Format {
                what: "vocabulary",
                detail: "reserved tokens missing or counts misaligned".into(),
            });
        }
        let index: HashMap<String, usize> =
            f.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != f.words.len() {
            return Err(Error::Format {
                what: "vocabulary",
                detail: "duplicate words".into(),
            });
        }
        Ok(Vocabulary {
            words: f.words,
            counts: f.counts,
            index,
        })
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            words: v.words,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` pairs, keeping words with
    /// `count >= min_freq`.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>, min_freq: u64) -> Self {
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !RESERVED_WORDS.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words: Vec<String> = RESERVED_WORDS.iter().map(|s| s.to_string()).collect();
        let mut freq = vec![0; RESERVED];
        for (w, c) in kept {
            words.push(w);
            freq.push(c);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary {
            words,
            counts: freq,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == RESERVED
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    pub fn is_reserved(index: usize) -> bool {
        index < RESERVED
    }

    /// Non-reserved `(index, word)` pairs in index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &str)> {
        self.words
            .iter()
            .enumerate()
            .skip(RESERVED)
            .map(|(i, w)| (i, w.as_str()))
    }

    /// Maps words to indices; unknown words become [`UNKNOWN`].
    pub fn encode<S: AsRef<str>>(&self, caption: &[S]) -> Vec<usize> {
        caption
            .iter()
            .map(|w| self.index_of(w.as_ref()).unwrap_or(UNKNOWN))
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.word(i).unwrap_or(RESERVED_WORDS[UNKNOWN]).to_string())
            .collect()
    }

    /// Hex SHA-256 of the ordered word list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Words present in both vocabularies, with counts taken from `self`.
    pub fn intersect(&self, other: &Vocabulary) -> Vocabulary {
        Vocabulary::from_counts(
            self.entries()
                .filter(|(_, w)| other.index_of(w).is_some())
                .map(|(i, w)| (w.to_string(), self.counts[i])),
            0,
        )
    }
}

/// Counts words over a tokenized corpus and keeps those seen `min_freq` times.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: u64) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::invalid("min_freq must be at least 1"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for sentence in corpus {
        for w in sentence {
            *counts.entry(w.as_ref().to_string()).or_default() += 1;
        }
    }
    Ok(Vocabulary::from_counts(counts, min_freq))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(s: &[&str]) -> Vec<Vec<String>> {
        s.iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn thresholds_and_ordering() {
        let v = build_vocab(&corpus(&["a a b"]), 1).unwrap();
        assert_eq!(v.len(), RESERVED + 2);
        assert_eq!(v.word(RESERVED), Some("a"));
        assert_eq!(v.word(RESERVED + 1), Some("b"));

        let v = build_vocab(&corpus(&["one two three four"]), 5).unwrap();
        assert!(v.is_empty());
        assert_eq!(v.len(), RESERVED);

        // ties broken alphabetically
        let v = build_vocab(&corpus(&["zeta alpha zeta alpha beta"]), 1).unwrap();
        assert_eq!(v.decode(&[4, 5, 6]), ["alpha", "zeta", "beta"]);
        assert!(build_vocab(&corpus(&["a"]), 0).is_err());
    }

    #[test]
    fn min_freq_respected() {
        let v = build_vocab(&corpus(&["a a a b b c", "a a b b b"]), 5).unwrap();
        for (i, _) in v.entries() {
            assert!(v.count(i) >= 5);
        }
        assert_eq!(v.decode(&[4, 5]), ["a", "b"]);
        assert_eq!(v.len(), RESERVED + 2);
    }

    #[test]
    fn encode_rules() {
        let v = build_vocab(&corpus(&["dog cat"]), 1).unwrap();
        assert_eq!(v.encode(&["dog"]), vec![v.index_of("dog").unwrap()]);
        assert_eq!(v.encode(&["zebra"]), vec![UNKNOWN]);
        assert!(v.encode::<&str>(&[]).is_empty());
        let words = ["cat", "dog"];
        assert_eq!(v.decode(&v.encode(&words)), words);
    }

    #[test]
    fn serde_round_trip_and_fingerprint() {
        let v = build_vocab(&corpus(&["x y y z"]), 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
        assert_eq!(v.fingerprint().len(), 64);
        assert!(serde_json::from_str::<Vocabulary>(r#"{"words":["a"],"counts":[1]}"#).is_err());
    }

    #[test]
    fn intersection() {
        let a = build_vocab(&corpus(&["a b c"]), 1).unwrap();
        let b = build_vocab(&corpus(&["b c d"]), 1).unwrap();
        let i = a.intersect(&b);
        let words: Vec<&str> = i.entries().map(|(_, w)| w).collect();
        assert_eq!(words, ["b", "c"]);
        assert_eq!(a.intersect(&a), a);
    }
}
