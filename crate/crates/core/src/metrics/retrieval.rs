use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::probability::score_rows;
use super::median;
use crate::error::{Error, Result};
use crate::model::CaptionModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub median_rank: f64,
}

/// Rank (1-based) of image `correct` for one caption: images scoring higher
/// come first, equal scores are ordered by image id.
pub fn rank_of<S: AsRef<str>>(scores: &[f64], ids: &[S], correct: usize) -> usize {
    let target = scores[correct];
    let cid = ids[correct].as_ref();
    1 + scores
        .iter()
        .zip(ids)
        .enumerate()
        .filter(|&(j, (&s, id))| j != correct && (s > target || (s == target && id.as_ref() < cid)))
        .count()
}

/// Retrieval statistics from a caption × image score table whose diagonal
/// holds the correct pairs.
pub fn retrieval_from_scores<S: AsRef<str>>(scores: &[Vec<f64>], ids: &[S]) -> Result<RetrievalStats> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::invalid("retrieval needs at least one image"));
    }
    if ids.len() != n || scores.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("retrieval score table must be square and match the ids"));
    }
    let ranks: Vec<f64> = (0..n).map(|c| rank_of(&scores[c], ids, c) as f64).collect();
    let at = |k: f64| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    Ok(RetrievalStats {
        r_at_1: at(1.0),
        r_at_5: at(5.0),
        r_at_10: at(10.0),
        median_rank: median(&ranks).expect("nonempty"),
    })
}

/// `scores[c][i]` = log-probability of caption `c` given image `i`.
pub fn retrieval_scores(model: &CaptionModel, images: &[&[f64]], captions: &[&[usize]]) -> Result<Vec<Vec<f64>>> {
    let by_image: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| {
            let rows: Vec<(&[f64], &[usize])> = captions.iter().map(|c| (*img, *c)).collect();
            Ok(score_rows(model, &rows, None)?.into_iter().map(|s| s.logprob).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..captions.len())
        .map(|c| by_image.iter().map(|col| col[c]).collect())
        .collect())
}

/// Image retrieval with one caption per image; `captions[i]` belongs to image `i`.
pub fn retrieval<S: AsRef<str>>(
    model: &CaptionModel,
    ids: &[S],
    images: &[&[f64]],
    captions: &[&[usize]],
) -> Result<RetrievalStats> {
    if images.len() != captions.len() {
        return Err(Error::invalid("need exactly one caption per image"));
    }
    retrieval_from_scores(&retrieval_scores(model, images, captions)?, ids)
}
