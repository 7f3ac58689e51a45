//! N-gram overlap metrics: BLEU, ROUGE-L and CIDEr.
//!
//! Candidates and references are token sequences of any hashable type.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_corpus<T>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every candidate needs at least one reference"));
    }
    Ok(())
}

/// Corpus-level clipped n-gram precision for a single order, as
/// `(matches, total)`.
pub fn clipped_precision<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], n: usize) -> (usize, usize) {
    let mut matched = 0;
    let mut total = 0;
    for (cand, refs) in candidates.iter().zip(references) {
        let counts = ngram_counts(cand, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in counts {
            matched += c.min(max_ref.get(g).copied().unwrap_or(0));
            total += c;
        }
    }
    (matched, total)
}

/// Corpus BLEU with orders `1..=n`, uniform weights, brevity penalty and no smoothing.
pub fn bleu_n<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], n: usize) -> Result<f64> {
    check_corpus(candidates, references)?;
    if !(1..=4).contains(&n) {
        return Err(Error::invalid(format!("BLEU order {n} outside 1..=4")));
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, t) = clipped_precision(candidates, references, k);
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| {
            refs.iter()
                .map(Vec::len)
                .min_by_key(|&r| (r.abs_diff(c.len()), r))
                .expect("nonempty references")
        })
        .sum();
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * (log_sum / n as f64).exp())
}

/// BLEU-1 through BLEU-4.
pub fn bleu<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<[f64; 4]> {
    Ok([
        bleu_n(candidates, references, 1)?,
        bleu_n(candidates, references, 2)?,
        bleu_n(candidates, references, 3)?,
        bleu_n(candidates, references, 4)?,
    ])
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair<T: PartialEq>(cand: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(cand, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over items of the best LCS F-measure against any reference.
pub fn rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, refs)| refs.iter().map(|r| rouge_l_pair(c, r)).fold(0.0, f64::max))
        .sum();
    Ok(total / candidates.len() as f64)
}

type TfIdf<'a, T> = [HashMap<&'a [T], f64>; 4];

fn tfidf<'a, T: Hash + Eq>(tokens: &'a [T], df: &HashMap<&[T], usize>, log_n: f64) -> (TfIdf<'a, T>, [f64; 4]) {
    let mut vecs: TfIdf<'a, T> = Default::default();
    let mut norms = [0.0; 4];
    for n in 1..=4 {
        for (g, c) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = c as f64 * (log_n - d.ln());
            norms[n - 1] += w * w;
            vecs[n - 1].insert(g, w);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    (vecs, norms)
}

/// CIDEr with n-gram orders 1 to 4, document frequencies over the reference
/// sets, no length penalty and no count clipping; scaled by 10.
pub fn cider<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    if candidates.len() < 2 {
        return Err(Error::invalid("CIDEr needs a corpus of at least two items"));
    }
    let mut df: HashMap<&[T], usize> = HashMap::new();
    for refs in references {
        let mut seen: HashSet<&[T]> = HashSet::new();
        for r in refs {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let mut total = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        let (cv, cn) = tfidf(cand, &df, log_n);
        let mut per_n = [0.0; 4];
        for r in refs {
            let (rv, rn) = tfidf(r, &df, log_n);
            for n in 0..4 {
                let dot: f64 = cv[n].iter().filter_map(|(g, w)| rv[n].get(g).map(|v| w * v)).sum();
                if cn[n] != 0.0 && rn[n] != 0.0 {
                    per_n[n] += dot / (cn[n] * rn[n]);
                }
            }
        }
        total += per_n.iter().sum::<f64>() / 4.0 / refs.len() as f64 * 10.0;
    }
    Ok(total / candidates.len() as f64)
}
