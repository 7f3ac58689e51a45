use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::*;
use crate::config::{invalid, RunConfig};

/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "CAPLAB_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "caplab", version, about = "Conditioned neural language models for image captioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of one-hot images and template captions.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        captions_per_image: Option<usize>,
    },
    /// Train a model and save checkpoint, vocabulary and history.
    Train(Common),
    /// Caption every image of a split with beam search.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: Option<String>,
    },
    /// Compute probability, quality, diversity and retrieval metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Captions file written by `generate`; captions are generated when absent.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    /// Compute a length-grouped influence curve.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Build and train a merge model from a language model.
    Transfer(Common),
    /// Random hyperparameter search.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
    },
}

/// Options shared by every subcommand; flags override the config file.
#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<caplab::ArchitectureKind>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Hyperparameter JSON, such as the best spec written by `tune`. Replaces
    /// the config's hyperparameters.
    #[arg(long)]
    pub hyperparams: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

fn parse_arch(s: &str) -> Result<caplab::ArchitectureKind, String> {
    s.parse().map_err(|e: caplab::Error| e.to_string())
}

impl Common {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(a) = self.arch {
            cfg.architecture = Some(a);
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(c) = &self.captions {
            cfg.captions = Some(c.clone());
        }
        if let Some(f) = &self.features {
            cfg.features = Some(f.clone());
        }
        if let Some(h) = &self.hyperparams {
            cfg.hyperparams_file = Some(h.clone());
            cfg.hyperparams = None;
        }
        if let Some(m) = self.max_epochs {
            cfg.training.max_epochs = m;
        }
        Ok(cfg)
    }
}

fn init_workers() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
    // a second call in the same process finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    init_workers()?;
    match cli.command {
        Command::Synth {
            common,
            images,
            captions_per_image,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(k) = images {
                cfg.synth.images = k;
            }
            if let Some(c) = captions_per_image {
                cfg.synth.captions_per_image = c;
            }
            let (c, f) = cmd_synth(&cfg)?;
            println!("{}\n{}", c.display(), f.display());
        }
        Command::Train(common) => {
            let out = cmd_train(&common.resolve()?)?;
            println!("{}", out.checkpoint.display());
        }
        Command::Generate { common, split } => {
            let (path, _) = cmd_generate(&common.resolve()?, split.as_deref())?;
            println!("{}", path.display());
        }
        Command::Evaluate { common, candidates } => {
            let report = cmd_evaluate(&common.resolve()?, candidates.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Analyze { common, length } => {
            let (path, _) = cmd_analyze(&common.resolve()?, length)?;
            println!("{}", path.display());
        }
        Command::Transfer(common) => {
            let out = cmd_transfer(&common.resolve()?)?;
            println!("{}", out.checkpoint.display());
        }
        Command::Tune { common, budget } => {
            let (path, _) = cmd_tune(&common.resolve()?, budget)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// 2 for configuration and validation errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|c| c.downcast_ref::<caplab::Error>())
        .map_or(1, |e| if e.is_validation() { 2 } else { 1 })
}
