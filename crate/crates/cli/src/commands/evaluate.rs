use std::collections::{HashMap, HashSet};
use std::path::Path;

use caplab::data::CaptionedItem;
use caplab::decoder::generate_all;
use caplab::metrics::{
    diversity, join_words, retrieval, score_items, MetricsReport, ProbabilityStats, QualityStats,
};

use super::generate::CaptionsFile;
use super::{create_dir, load_corpus, load_model, split_items};
use crate::config::{invalid, RunConfig};

/// Probability, quality, diversity and retrieval metrics on the test split,
/// written to `metrics.json` and `metrics.csv`. Candidates come from a
/// captions file when given, else they are generated.
pub fn cmd_evaluate(cfg: &RunConfig, candidates: Option<&Path>) -> anyhow::Result<MetricsReport> {
    let loaded = load_model(&cfg.checkpoint()?)?;
    let (model, vocab) = (&loaded.model, &loaded.vocab);
    let out = cfg.output_dir()?;
    let corpus = load_corpus(cfg, model.kind().is_conditioned())?;
    let test_split = &cfg.splits.test;
    let raw = corpus.split(test_split);
    let items: Vec<CaptionedItem> = split_items(&corpus, test_split, vocab)?;

    let oov = cfg.evaluation.adjust_unknown.then(|| {
        raw.iter()
            .flat_map(|it| it.captions.iter().flatten())
            .filter(|w| vocab.index_of(w).is_none())
            .collect::<HashSet<_>>()
            .len()
    });
    let scores = score_items(model, &items, oov.filter(|&n| n > 0))?;
    let probability = ProbabilityStats::from_scores(&scores)?;

    let cand_words: Vec<Vec<String>> = match candidates {
        Some(path) => {
            let file = CaptionsFile::load(path)?;
            let by_id: HashMap<&str, &str> =
                file.captions.iter().map(|c| (c.id.as_str(), c.caption.as_str())).collect();
            items
                .iter()
                .map(|it| {
                    by_id
                        .get(it.id.as_str())
                        .map(|c| c.split_whitespace().map(String::from).collect())
                        .ok_or_else(|| invalid(format!("no candidate caption for image {}", it.id)))
                })
                .collect::<anyhow::Result<_>>()?
        }
        None => {
            let beam = cfg.decoding_beam()?;
            generate_all(model, &items, &beam)?
                .iter()
                .map(|h| vocab.decode(&h.tokens))
                .collect()
        }
    };
    let references: Vec<Vec<Vec<String>>> = raw
        .iter()
        .filter(|it| it.captions.iter().any(|c| !c.is_empty()))
        .map(|it| it.captions.iter().filter(|c| !c.is_empty()).cloned().collect())
        .collect();
    let quality = if items.len() < 2 {
        eprintln!("warning: quality metrics need at least two test images; skipped");
        None
    } else {
        Some(QualityStats::compute(&cand_words, &references)?)
    };

    let training: HashSet<String> = corpus
        .sentences(&cfg.splits.train)
        .iter()
        .map(|s| join_words(s))
        .collect();
    let diversity = Some(diversity(&cand_words, vocab, &training));

    let retrieval = if model.kind().is_conditioned() {
        let ids: Vec<&str> = items.iter().map(|it| it.id.as_str()).collect();
        let images: Vec<&[f64]> = items.iter().map(|it| it.features.as_slice()).collect();
        let caps: Vec<&[usize]> = items.iter().map(|it| it.captions[0].as_slice()).collect();
        Some(retrieval(model, &ids, &images, &caps)?)
    } else {
        None
    };

    let report = MetricsReport {
        config_fingerprint: cfg.fingerprint()?,
        probability: Some(probability),
        quality,
        diversity,
        retrieval,
    };
    create_dir(out)?;
    report.write(&out.join("metrics.json"), &out.join("metrics.csv"))?;
    Ok(report)
}
