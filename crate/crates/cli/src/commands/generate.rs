use std::path::{Path, PathBuf};

use caplab::decoder::generate_all;
use serde::{Deserialize, Serialize};

use super::{create_dir, load_corpus, load_model, split_items, write_json};
use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub id: String,
    pub caption: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionsFile {
    pub config_fingerprint: String,
    pub beam_width: usize,
    pub captions: Vec<GeneratedCaption>,
}

impl CaptionsFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        Ok(serde_json::from_str(&text).map_err(|e| caplab::Error::Format {
            what: "captions file",
            detail: format!("{}: {e}", path.display()),
        })?)
    }
}

/// Captions for every image of `split` (the test split by default),
/// written to `captions.json`.
pub fn cmd_generate(cfg: &RunConfig, split: Option<&str>) -> anyhow::Result<(PathBuf, CaptionsFile)> {
    let loaded = load_model(&cfg.checkpoint()?)?;
    let beam = cfg.decoding_beam()?;
    let out = cfg.output_dir()?;
    let corpus = load_corpus(cfg, loaded.model.kind().is_conditioned())?;
    let items = split_items(&corpus, split.unwrap_or(&cfg.splits.test), &loaded.vocab)?;
    let hyps = generate_all(&loaded.model, &items, &beam)?;
    let captions = items
        .iter()
        .zip(hyps)
        .map(|(it, h)| GeneratedCaption {
            id: it.id.clone(),
            caption: loaded.vocab.decode(&h.tokens).join(" "),
            logprob: h.logprob,
        })
        .collect();
    let file = CaptionsFile {
        config_fingerprint: cfg.fingerprint()?,
        beam_width: beam.width,
        captions,
    };
    create_dir(out)?;
    let path = out.join("captions.json");
    write_json(&path, &file)?;
    Ok((path, file))
}
