//! Caption (JSON-lines) and feature (binary `CAPF`) files.
//!
//! Feature file layout, little-endian:
//!
//! ```text
//! "CAPF"  u32 feat_dim  { u32 id_len  id  feat_dim × f32 }*
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::preprocess;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"CAPF";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub split: String,
    pub captions: Vec<String>,
}

pub fn read_captions_jsonl(path: &Path) -> Result<Vec<CaptionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "captions file",
            detail: format!("{}:{}: {e}", path.display(), lineno + 1),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_captions_jsonl(path: &Path, records: &[CaptionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Image ids with their feature vectors.
pub type FeatureRows = Vec<(String, Vec<f32>)>;

pub fn read_features(path: &Path) -> Result<(usize, FeatureRows)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::Format {
        what: "features file",
        detail: format!("{}: {detail}", path.display()),
    };
    if bytes.len() < 8 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing CAPF header".into()));
    }
    let u32_at = |pos: usize| -> Option<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    let feat_dim = u32_at(4).expect("checked length") as usize;
    let mut pos = 8;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let id_len = u32_at(pos).ok_or_else(|| bad(format!("truncated record at byte {pos}")))? as usize;
        pos += 4;
        let id = bytes
            .get(pos..pos + id_len)
            .ok_or_else(|| bad(format!("truncated id at byte {pos}")))?;
        let id = String::from_utf8(id.to_vec()).map_err(|e| bad(e.to_string()))?;
        pos += id_len;
        let raw = bytes
            .get(pos..pos + 4 * feat_dim)
            .ok_or_else(|| bad(format!("truncated features for {id}")))?;
        let feats = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        pos += 4 * feat_dim;
        out.push((id, feats));
    }
    Ok((feat_dim, out))
}

pub fn write_features(path: &Path, feat_dim: usize, records: &[(String, Vec<f32>)]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + records.len() * (8 + 4 * feat_dim));
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(feat_dim as u32).to_le_bytes());
    for (id, feats) in records {
        if feats.len() != feat_dim {
            return Err(Error::invalid(format!(
                "features for {id} have length {}, expected {feat_dim}",
                feats.len()
            )));
        }
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for v in feats {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// An image with its features and preprocessed (word-level) captions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawItem {
    pub id: String,
    pub split: String,
    pub features: Vec<f64>,
    pub captions: Vec<Vec<String>>,
}

/// An image with its features and index-encoded captions (no pads, none empty).
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionedItem {
    pub id: String,
    pub features: Vec<f64>,
    pub captions: Vec<Vec<usize>>,
}

/// A joined captions + features dataset.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub feat_dim: usize,
    pub items: Vec<RawItem>,
}

impl Corpus {
    pub fn load(captions: &Path, features: &Path) -> Result<Self> {
        let records = read_captions_jsonl(captions)?;
        let (feat_dim, feats) = read_features(features)?;
        Self::join(records, feat_dim, feats)
    }

    /// Joins caption records with features by id. Every record needs features.
    pub fn join(
        records: Vec<CaptionRecord>,
        feat_dim: usize,
        features: Vec<(String, Vec<f32>)>,
    ) -> Result<Self> {
        let mut by_id: HashMap<String, Vec<f32>> = features.into_iter().collect();
        let mut items = Vec::with_capacity(records.len());
        for r in records {
            let feats = by_id.remove(&r.id).ok_or_else(|| Error::Format {
                what: "dataset",
                detail: format!("no features for image id {:?}", r.id),
            })?;
            items.push(RawItem {
                id: r.id,
                split: r.split,
                features: feats.into_iter().map(f64::from).collect(),
                captions: r.captions.iter().map(|c| preprocess(c)).collect(),
            });
        }
        Ok(Corpus { feat_dim, items })
    }

    pub fn split(&self, name: &str) -> Vec<&RawItem> {
        self.items.iter().filter(|i| i.split == name).collect()
    }

    /// All captions of a split, tokenized.
    pub fn sentences(&self, split: &str) -> Vec<Vec<String>> {
        self.split(split)
            .into_iter()
            .flat_map(|i| i.captions.iter().cloned())
            .collect()
    }

    /// Encodes a split against `vocab`, dropping captions that are empty.
    pub fn encode(&self, split: &str, vocab: &Vocabulary) -> Vec<CaptionedItem> {
        self.split(split)
            .into_iter()
            .map(|item| encode_item(item, vocab))
            .collect()
    }
}

pub fn encode_item(item: &RawItem, vocab: &Vocabulary) -> CaptionedItem {
    CaptionedItem {
        id: item.id.clone(),
        features: item.features.clone(),
        captions: item
            .captions
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| vocab.encode(c))
            .collect(),
    }
}
