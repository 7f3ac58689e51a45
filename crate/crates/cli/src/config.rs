//! The run configuration: one JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use caplab::decoder::BeamConfig;
use caplab::groundedness::Measure;
use caplab::transfer::TransferPlan;
use caplab::{ArchitectureKind, Error, HyperparamSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub captions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub architecture: Option<ArchitectureKind>,
    /// Partial or full spec, laid over `hyperparams_file` (or the defaults).
    pub hyperparams: Option<serde_json::Value>,
    pub hyperparams_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// Model checkpoint read by generate, evaluate and analyze. Its
    /// vocabulary is expected next to it as `vocab.json`.
    pub checkpoint: Option<PathBuf>,
    pub min_freq: Option<u64>,
    pub splits: Splits,
    pub training: Training,
    pub decoding: Decoding,
    pub evaluation: Evaluation,
    pub analysis: Option<Analysis>,
    pub transfer: Option<Transfer>,
    pub tune: Option<Tune>,
    pub synth: Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Splits {
    pub train: String,
    pub val: String,
    pub test: String,
}

impl Default for Splits {
    fn default() -> Self {
        Splits {
            train: "train".into(),
            val: "val".into(),
            test: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub max_epochs: usize,
    pub early_stopping: bool,
    pub target_loss: Option<f64>,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            max_epochs: 100,
            early_stopping: true,
            target_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    /// Falls back to the spec's `beam_width`.
    pub width: Option<usize>,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            width: None,
            min_len: 5,
            max_len: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evaluation {
    /// Spread unknown-token probability over the test words missing from the vocabulary.
    pub adjust_unknown: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    pub length: usize,
    pub measure: Measure,
    /// Models averaged into one curve; defaults to `checkpoint`.
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transfer {
    /// A text-only language model checkpoint with `vocab.json` beside it.
    pub lm_checkpoint: Option<PathBuf>,
    pub plan: TransferPlan,
    /// Restart language-model runs whose validation perplexity worsens.
    #[serde(default)]
    pub enforce_improving: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneScore {
    Cider,
    NegGeomeanPerplexity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tune {
    pub budget: usize,
    #[serde(default = "two")]
    pub repeats: usize,
    #[serde(default = "default_score")]
    pub score: TuneScore,
    /// Epoch cap for every trial.
    pub max_epochs: Option<usize>,
}

fn two() -> usize {
    2
}

fn default_score() -> TuneScore {
    TuneScore::Cider
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub images: usize,
    pub captions_per_image: usize,
}

impl Default for Synth {
    fn default() -> Self {
        Synth {
            images: 16,
            captions_per_image: 1,
        }
    }
}

/// Keys that only locate files; they do not change results.
const LOCATION_KEYS: [&str; 6] = ["captions", "features", "output_dir", "checkpoint", "hyperparams_file", "lm_checkpoint"];

fn strip_locations(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            for k in LOCATION_KEYS {
                map.remove(k);
            }
            map.remove("checkpoints");
            map.values_mut().for_each(strip_locations);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_locations),
        _ => {}
    }
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken from the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "run config",
            detail: format!("{}: {e}", path.display()),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.captions);
        fix(&mut self.features);
        fix(&mut self.hyperparams_file);
        fix(&mut self.output_dir);
        fix(&mut self.checkpoint);
        if let Some(t) = &mut self.transfer {
            fix(&mut t.lm_checkpoint);
        }
        if let Some(a) = &mut self.analysis {
            for c in &mut a.checkpoints {
                if c.is_relative() {
                    *c = base.join(&*c);
                }
            }
        }
    }

    /// SHA-256 of the config with file locations removed, so runs of the same
    /// experiment in different directories share a fingerprint.
    pub fn fingerprint(&self) -> anyhow::Result<String> {
        let mut v = serde_json::to_value(self)?;
        strip_locations(&mut v);
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| invalid("a seed is required (config \"seed\" or --seed)"))
    }

    pub fn architecture(&self) -> anyhow::Result<ArchitectureKind> {
        self.architecture
            .ok_or_else(|| invalid("an architecture is required (config \"architecture\" or --arch)"))
    }

    pub fn output_dir(&self) -> anyhow::Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| invalid("an output directory is required (config \"output_dir\" or --out)"))
    }

    pub fn captions(&self) -> anyhow::Result<&Path> {
        self.captions
            .as_deref()
            .ok_or_else(|| invalid("a captions file is required (config \"captions\")"))
    }

    /// Checkpoint to read: the configured one, else `model.ckpt` in the output directory.
    pub fn checkpoint(&self) -> anyhow::Result<PathBuf> {
        match &self.checkpoint {
            Some(p) => Ok(p.clone()),
            None => Ok(self.output_dir()?.join("model.ckpt")),
        }
    }

    /// Defaults, then `hyperparams_file`, then inline `hyperparams`.
    pub fn hyperparams(&self) -> anyhow::Result<HyperparamSpec> {
        let mut base = serde_json::to_value(HyperparamSpec::default())?;
        if let Some(path) = &self.hyperparams_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let file: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
                what: "hyperparameter file",
                detail: format!("{}: {e}", path.display()),
            })?;
            overlay(&mut base, file)?;
        }
        if let Some(inline) = &self.hyperparams {
            overlay(&mut base, inline.clone())?;
        }
        let spec: HyperparamSpec = serde_json::from_value(base).map_err(|e| Error::Format {
            what: "hyperparameters",
            detail: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn beam(&self, hyper: Option<&HyperparamSpec>) -> BeamConfig {
        BeamConfig {
            width: self.decoding.width.or(hyper.map(|h| h.beam_width)).unwrap_or(3),
            min_len: self.decoding.min_len,
            max_len: self.decoding.max_len,
        }
    }

    /// Beam settings for decoding a trained model: `decoding.width`, else the
    /// configured spec's `beam_width`, else 3.
    pub fn decoding_beam(&self) -> anyhow::Result<BeamConfig> {
        let hyper = if self.hyperparams.is_some() || self.hyperparams_file.is_some() {
            Some(self.hyperparams()?)
        } else {
            None
        };
        let beam = self.beam(hyper.as_ref());
        beam.validate()?;
        Ok(beam)
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) -> anyhow::Result<()> {
    let (serde_json::Value::Object(b), serde_json::Value::Object(t)) = (base, top) else {
        return Err(invalid("hyperparameters must be a JSON object"));
    };
    b.extend(t);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_hyperparams_overlay_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"hyperparams": {"rnn_size": 7}}"#).unwrap();
        let h = cfg.hyperparams().unwrap();
        assert_eq!(h.rnn_size, 7);
        assert_eq!(h.embed_size, HyperparamSpec::default().embed_size);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        let cfg: RunConfig = serde_json::from_str(r#"{"hyperparams": {"rnn_sise": 7}}"#).unwrap();
        assert!(cfg.hyperparams().is_err());
    }

    #[test]
    fn fingerprint_ignores_locations() {
        let mut a: RunConfig = serde_json::from_str(r#"{"seed": 1, "output_dir": "x"}"#).unwrap();
        let fa = a.fingerprint().unwrap();
        a.output_dir = Some("elsewhere".into());
        assert_eq!(a.fingerprint().unwrap(), fa);
        a.seed = Some(2);
        assert_ne!(a.fingerprint().unwrap(), fa);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"captions": "c.jsonl", "output_dir": "/abs"}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.captions.unwrap(), dir.path().join("c.jsonl"));
        assert_eq!(cfg.output_dir.unwrap(), PathBuf::from("/abs"));
    }
}
