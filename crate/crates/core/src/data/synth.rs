//! Synthetic captioned images: one-hot features and template captions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::CaptionRecord;
use crate::error::{Error, Result};

const COLOURS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "brown", "grey"];
const ANIMALS: [&str; 8] = ["dog", "cat", "horse", "bird", "cow", "sheep", "goat", "duck"];
const VERBS: [&str; 8] = ["runs", "sits", "sleeps", "jumps", "walks", "stands", "plays", "waits"];
const PREPOSITIONS: [&str; 4] = ["on", "in", "near", "under"];
const PLACES: [&str; 8] = ["grass", "snow", "sand", "water", "road", "field", "beach", "hill"];

/// Largest number of images with pairwise distinct captions.
pub const MAX_SYNTHETIC_IMAGES: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub feat_dim: usize,
    pub records: Vec<CaptionRecord>,
    pub features: Vec<(String, Vec<f32>)>,
}

fn template(code: usize, variant: usize) -> String {
    let colour = code % 8;
    let animal = (code / 8) % 8;
    let verb = (code / 64 + colour) % 8;
    let prep = (code + variant) % 4;
    let place = (code / 8 + code + variant) % 8;
    format!(
        "a {} {} {} {} {}",
        COLOURS[colour], ANIMALS[animal], VERBS[verb], PREPOSITIONS[prep], PLACES[place]
    )
}

/// `k` images with one-hot `k`-dimensional features and six-word captions that
/// differ between images. The seed only permutes which caption goes to which
/// image.
pub fn synthetic_dataset(k: usize, captions_per_image: usize, seed: u64) -> Result<SyntheticData> {
    if k == 0 || k > MAX_SYNTHETIC_IMAGES {
        return Err(Error::invalid(format!(
            "synthetic image count must be in 1..={MAX_SYNTHETIC_IMAGES}, got {k}"
        )));
    }
    if captions_per_image == 0 || captions_per_image > 4 {
        return Err(Error::invalid("captions_per_image must be in 1..=4"));
    }
    let mut codes: Vec<usize> = (0..k).collect();
    codes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut records = Vec::with_capacity(k);
    let mut features = Vec::with_capacity(k);
    for (i, &code) in codes.iter().enumerate() {
        let id = format!("img{i:04}");
        let mut one_hot = vec![0.0f32; k];
        one_hot[i] = 1.0;
        records.push(CaptionRecord {
            id: id.clone(),
            split: "train".into(),
            captions: (0..captions_per_image).map(|v| template(code, v)).collect(),
        });
        features.push((id, one_hot));
    }
    Ok(SyntheticData {
        feat_dim: k,
        records,
        features,
    })
}
