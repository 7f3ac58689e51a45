use std::path::PathBuf;

use caplab::groundedness::{influence_curve, select_foil, AnalysisItem, FoilCandidate, FoilPair, InfluenceCurve};

use super::{create_dir, load_corpus, load_model, LoadedModel};
use crate::config::{invalid, RunConfig};

/// Influence curve over every caption of the configured length, averaged over
/// the configured checkpoints. Writes `curve_<measure>_len<L>.csv` with a JSON
/// sidecar.
pub fn cmd_analyze(cfg: &RunConfig, length: Option<usize>) -> anyhow::Result<(PathBuf, InfluenceCurve)> {
    let analysis = cfg
        .analysis
        .as_ref()
        .ok_or_else(|| invalid("an \"analysis\" section is required"))?;
    let length = length.unwrap_or(analysis.length);
    let paths = if analysis.checkpoints.is_empty() {
        vec![cfg.checkpoint()?]
    } else {
        analysis.checkpoints.clone()
    };
    let models: Vec<LoadedModel> = paths.iter().map(|p| load_model(p)).collect::<anyhow::Result<_>>()?;
    let vocab = &models[0].vocab;
    if models.iter().any(|m| m.header.vocab_fingerprint != models[0].header.vocab_fingerprint) {
        return Err(invalid("analysed checkpoints must share one vocabulary"));
    }
    let conditioned = models.iter().any(|m| m.model.kind().is_conditioned());
    let out = cfg.output_dir()?;
    let corpus = load_corpus(cfg, conditioned || analysis.measure.needs_foil())?;
    let split = analysis.split.as_deref().unwrap_or(&cfg.splits.test);
    let raw = corpus.split(split);
    if raw.is_empty() {
        return Err(invalid(format!("split {split:?} has no images")));
    }

    let mut foils: Vec<Option<FoilPair>> = vec![None; raw.len()];
    if analysis.measure.needs_foil() {
        let pool: Vec<FoilCandidate> = raw
            .iter()
            .map(|it| FoilCandidate {
                id: it.id.clone(),
                features: it.features.clone(),
                captions: it.captions.clone(),
            })
            .collect();
        for (i, f) in foils.iter_mut().enumerate() {
            *f = Some(select_foil(i, &pool)?);
        }
    }
    let mut items = Vec::new();
    for (it, foil) in raw.iter().zip(&foils) {
        let foil_features = foil
            .as_ref()
            .map(|f| raw.iter().find(|r| r.id == f.foil).expect("foil comes from the pool").features.clone());
        for c in it.captions.iter().filter(|c| !c.is_empty()) {
            items.push(AnalysisItem {
                id: it.id.clone(),
                features: it.features.clone(),
                caption: vocab.encode(c),
                foil: foil_features.clone(),
            });
        }
    }

    let refs: Vec<&caplab::CaptionModel> = models.iter().map(|m| &m.model).collect();
    let curve = influence_curve(&refs, &items, length, analysis.measure)?;
    let sidecar = serde_json::json!({
        "config_fingerprint": cfg.fingerprint()?,
        "split": split,
        "measure": analysis.measure,
        "checkpoints": models.iter().map(|m| &m.header.config_fingerprint).collect::<Vec<_>>(),
        "foils": foils.iter().flatten().collect::<Vec<_>>(),
    });
    create_dir(out)?;
    let path = out.join(format!("curve_{}_len{length}.csv", curve.measure));
    curve.write(&path, &sidecar)?;
    Ok((path, curve))
}
