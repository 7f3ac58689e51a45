//! Binary model checkpoints: `CAPM`, a JSON header, then a parameter container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchitectureKind, CaptionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{read_params, write_params, InitMethod, InitSpec, Parameterized};

const MAGIC: &[u8; 4] = b"CAPM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ArchitectureKind,
    pub config: ModelConfig,
    pub vocab_fingerprint: String,
    /// True when some parameters were held fixed during training.
    pub frozen: bool,
    pub frozen_params: Vec<String>,
    pub config_fingerprint: String,
}

impl CheckpointHeader {
    pub fn new(model: &CaptionModel, vocab_fingerprint: &str, frozen_params: &[String]) -> Result<Self> {
        Ok(CheckpointHeader {
            kind: model.kind(),
            config: model.config.clone(),
            vocab_fingerprint: vocab_fingerprint.to_string(),
            frozen: !frozen_params.is_empty(),
            frozen_params: frozen_params.to_vec(),
            config_fingerprint: config_fingerprint(&model.config)?,
        })
    }
}

pub fn config_fingerprint(config: &ModelConfig) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

pub fn save_checkpoint(
    path: &Path,
    model: &CaptionModel,
    vocab_fingerprint: &str,
    frozen_params: &[String],
) -> Result<()> {
    let header = CheckpointHeader::new(model, vocab_fingerprint, frozen_params)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_model(&mut out, &header, model).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_model<W: Write>(out: &mut W, header: &CheckpointHeader, model: &CaptionModel) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::invalid("checkpoint header too large"))?;
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&len.to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    let mut params = Vec::new();
    model.visit("", &mut |n, p, _| params.push((n, p)));
    write_params(out, params.iter().map(|(n, p)| (n.as_str(), *p)))
}

pub fn load_checkpoint(path: &Path) -> Result<(CaptionModel, CheckpointHeader)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn read_model<R: Read>(input: &mut R) -> Result<(CaptionModel, CheckpointHeader)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| format_err("truncated"))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len).map_err(|_| format_err("truncated"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json).map_err(|_| format_err("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.config_fingerprint != config_fingerprint(&header.config)? {
        return Err(format_err("config fingerprint mismatch"));
    }
    if header.kind != header.config.kind {
        return Err(format_err("architecture kind disagrees with config"));
    }

    // Shapes come from the config; values are overwritten below.
    let init = InitSpec {
        method: InitMethod::Normal,
        max_abs: 1.0,
    };
    let mut model = CaptionModel::new(header.config.clone(), &init, &mut ChaCha8Rng::seed_from_u64(0))?;
    let records = read_params(input)?;
    let mut expected = Vec::new();
    model.visit("", &mut |n, p, _| expected.push((n, p.shape.clone())));
    if records.len() != expected.len() {
        return Err(format_err(format!(
            "expected {} parameters, found {}",
            expected.len(),
            records.len()
        )));
    }
    for ((name, shape), (rec_name, rec)) in expected.iter().zip(&records) {
        if name != rec_name || shape != &rec.shape {
            return Err(format_err(format!("parameter {rec_name} {:?} does not match {name} {shape:?}", rec.shape)));
        }
    }
    let mut it = records.into_iter();
    model.visit_mut("", &mut |_, p, _| {
        let (_, rec) = it.next().expect("counted above");
        *p = rec;
    });
    Ok((model, header))
}
