//! Probability, quality, diversity and retrieval metrics, and the combined report.

mod diversity;
mod probability;
mod quality;
mod retrieval;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use diversity::{diversity, join_words, DiversityStats};
pub use probability::{
    adjust_unknown, adjusted_unknown_logprob, caption_logprob, geomean_perplexity, median, score_items,
    score_rows, token_probabilities, CaptionScore, ProbabilityStats,
};
pub use quality::{bleu, bleu_n, cider, clipped_precision, lcs_len, rouge_l, ROUGE_BETA};
pub use retrieval::{rank_of, retrieval, retrieval_from_scores, retrieval_scores, RetrievalStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl QualityStats {
    /// All quality metrics; fails on a single-item corpus, where CIDEr is undefined.
    pub fn compute<T: std::hash::Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<Self> {
        let [bleu_1, bleu_2, bleu_3, bleu_4] = bleu(candidates, references)?;
        Ok(QualityStats {
            bleu_1,
            bleu_2,
            bleu_3,
            bleu_4,
            rouge_l: rouge_l(candidates, references)?,
            cider: cider(candidates, references)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_fingerprint: String,
    pub probability: Option<ProbabilityStats>,
    pub quality: Option<QualityStats>,
    pub diversity: Option<DiversityStats>,
    pub retrieval: Option<RetrievalStats>,
}

const CSV_COLUMNS: [&str; 22] = [
    "config_fingerprint",
    "mean_probability",
    "median_probability",
    "geomean_probability",
    "mean_perplexity",
    "median_perplexity",
    "geomean_perplexity",
    "bleu_1",
    "bleu_2",
    "bleu_3",
    "bleu_4",
    "rouge_l",
    "cider",
    "vocab_used_pct",
    "min_freq_of_used",
    "mean_length",
    "reused_pct",
    "unique_pct",
    "r_at_1",
    "r_at_5",
    "r_at_10",
    "median_rank",
];

impl MetricsReport {
    fn csv_row(&self) -> Vec<String> {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let p = self.probability.as_ref();
        let q = self.quality.as_ref();
        let d = self.diversity.as_ref();
        let r = self.retrieval.as_ref();
        vec![
            self.config_fingerprint.clone(),
            opt(p.map(|p| p.mean_probability)),
            opt(p.map(|p| p.median_probability)),
            opt(p.map(|p| p.geomean_probability)),
            opt(p.map(|p| p.mean_perplexity)),
            opt(p.map(|p| p.median_perplexity)),
            opt(p.map(|p| p.geomean_perplexity)),
            opt(q.map(|q| q.bleu_1)),
            opt(q.map(|q| q.bleu_2)),
            opt(q.map(|q| q.bleu_3)),
            opt(q.map(|q| q.bleu_4)),
            opt(q.map(|q| q.rouge_l)),
            opt(q.map(|q| q.cider)),
            opt(d.map(|d| d.vocab_used_pct)),
            opt(d.and_then(|d| d.min_freq_of_used)),
            opt(d.map(|d| d.mean_length)),
            opt(d.map(|d| d.reused_pct)),
            opt(d.map(|d| d.unique_pct)),
            opt(r.map(|r| r.r_at_1)),
            opt(r.map(|r| r.r_at_5)),
            opt(r.map(|r| r.r_at_10)),
            opt(r.map(|r| r.median_rank)),
        ]
    }

    /// Header plus a single data row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        w.write_record(self.csv_row()).map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv()?).map_err(|e| Error::io(csv_path, e))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        what: "csv",
        detail: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row() {
        let report = MetricsReport {
            config_fingerprint: "ab".into(),
            retrieval: Some(RetrievalStats {
                r_at_1: 50.0,
                r_at_5: 100.0,
                r_at_10: 100.0,
                median_rank: 1.5,
            }),
            ..Default::default()
        };
        let text = report.to_csv().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(lines[1].ends_with("50,100,100,1.5"));
    }
}
