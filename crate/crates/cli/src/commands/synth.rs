use std::path::PathBuf;

use caplab::data::{synthetic_dataset, write_captions_jsonl, write_features};

use super::create_dir;
use crate::config::RunConfig;

/// Writes `captions.jsonl` and `features.bin` for a synthetic dataset.
pub fn cmd_synth(cfg: &RunConfig) -> anyhow::Result<(PathBuf, PathBuf)> {
    let out = cfg.output_dir()?;
    let data = synthetic_dataset(cfg.synth.images, cfg.synth.captions_per_image, cfg.seed.unwrap_or(0))?;
    create_dir(out)?;
    let captions = out.join("captions.jsonl");
    let features = out.join("features.bin");
    write_captions_jsonl(&captions, &data.records)?;
    write_features(&features, data.feat_dim, &data.features)?;
    Ok((captions, features))
}
