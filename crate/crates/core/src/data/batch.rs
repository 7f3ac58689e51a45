use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::CaptionedItem;
use super::vocab::{END, PAD, START};
use crate::error::{Error, Result};

/// Padded minibatch. Row `r` of `inputs` is `start ⧺ caption ⧺ pads`, of
/// `targets` is `caption ⧺ end ⧺ pads`; `mask` is 1 on real targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    pub mask: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Padded sequence length (caption length + 1).
    pub fn steps(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn token_count(&self) -> f64 {
        self.mask.iter().flatten().sum()
    }
}

/// Pads `(features, caption)` rows to their longest caption.
pub fn make_batch(rows: &[(&[f64], &[usize])]) -> Batch {
    let steps = rows.iter().map(|(_, c)| c.len()).max().unwrap_or(0) + 1;
    let mut batch = Batch {
        inputs: Vec::with_capacity(rows.len()),
        targets: Vec::with_capacity(rows.len()),
        mask: Vec::with_capacity(rows.len()),
        features: Vec::with_capacity(rows.len()),
    };
    for (feats, caption) in rows {
        let mut input = Vec::with_capacity(steps);
        input.push(START);
        input.extend_from_slice(caption);
        input.resize(steps, PAD);
        let mut target = caption.to_vec();
        target.push(END);
        let mut mask = vec![1.0; target.len()];
        target.resize(steps, PAD);
        mask.resize(steps, 0.0);
        batch.inputs.push(input);
        batch.targets.push(target);
        batch.mask.push(mask);
        batch.features.push(feats.to_vec());
    }
    batch
}

/// One row per (image, caption) pair, optionally shuffled, chunked into
/// batches padded to their own longest caption.
pub fn make_batches<R: Rng + ?Sized>(
    items: &[CaptionedItem],
    batch_size: usize,
    rng: Option<&mut R>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut rows: Vec<(&[f64], &[usize])> = items
        .iter()
        .flat_map(|it| it.captions.iter().map(move |c| (it.features.as_slice(), c.as_slice())))
        .collect();
    if let Some(rng) = rng {
        rows.shuffle(rng);
    }
    Ok(rows.chunks(batch_size).map(make_batch).collect())
}
