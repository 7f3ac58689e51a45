//! How much generated words depend on the image: gradient sensitivity,
//! foil-image omission scores, per-position influence curves and logit ranges.

mod distance;
mod stopwords;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::START;
use crate::error::{Error, Result};
use crate::layers::Binder;
use crate::metrics::csv_err;
use crate::model::{CaptionModel, ForwardTrace, Mode};
use crate::tensor::Tensor;

pub use distance::{cosine_distance, jsd};
pub use stopwords::{is_stopword, STOPWORDS};

/// Input vector a sensitivity is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wrt {
    Image,
    PostImage,
    PrevTokenEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Multimodal,
    Logits,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Cosine,
    Jsd,
}

/// The per-position quantity plotted by an influence curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "measure")]
pub enum Measure {
    Sensitivity { wrt: Wrt },
    Omission { layer: Layer, metric: DistanceMetric },
    MinLogit,
    MaxLogit,
}

impl Measure {
    pub fn tag(&self) -> String {
        match self {
            Measure::Sensitivity { wrt } => format!("sensitivity_{}", snake(wrt)),
            Measure::Omission { layer, metric } => format!("omission_{}_{}", snake(layer), snake(metric)),
            Measure::MinLogit => "min_logit".into(),
            Measure::MaxLogit => "max_logit".into(),
        }
    }

    pub fn needs_foil(&self) -> bool {
        matches!(self, Measure::Omission { .. })
    }
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(String::from))
        .unwrap_or_default()
}

fn check_step(prefix: &[usize], t: usize) -> Result<()> {
    if t == 0 || t > prefix.len() {
        return Err(Error::OutOfRange {
            index: t,
            size: prefix.len(),
        });
    }
    if prefix[0] != START {
        return Err(Error::invalid("prefix must begin with the start token"));
    }
    Ok(())
}

fn image_leaf(model: &CaptionModel, image: Option<&[f64]>, trainable: bool) -> Result<Option<Tensor>> {
    match (model.kind().is_conditioned(), image) {
        (true, Some(f)) if trainable => Ok(Some(Tensor::param(vec![1, f.len()], f.to_vec())?)),
        (true, Some(f)) => Ok(Some(Tensor::new(vec![1, f.len()], f.to_vec())?)),
        (true, None) => Err(Error::invalid(format!("{} model requires an image", model.kind()))),
        (false, Some(_)) => Err(Error::invalid("text-only language model takes no image")),
        (false, None) => Ok(None),
    }
}

/// Inference-mode forward over one prefix.
fn trace(model: &CaptionModel, image: Option<&[f64]>, prefix: &[usize]) -> Result<ForwardTrace> {
    let bound = model.bind(&mut Binder::inference());
    let img = image_leaf(model, image, false)?;
    model.run(&bound, img.as_ref(), &[prefix.to_vec()], &mut Mode::Inference)
}

/// Mean absolute gradient of the most probable next-word probability after
/// `prefix[..t]` with respect to the chosen input vector.
pub fn sensitivity(model: &CaptionModel, image: Option<&[f64]>, prefix: &[usize], t: usize, wrt: Wrt) -> Result<f64> {
    Ok(mean_abs(&sensitivity_gradient(model, image, prefix, t, wrt)?))
}

/// The full gradient vector behind [`sensitivity`].
pub fn sensitivity_gradient(
    model: &CaptionModel,
    image: Option<&[f64]>,
    prefix: &[usize],
    t: usize,
    wrt: Wrt,
) -> Result<Vec<f64>> {
    check_step(prefix, t)?;
    if matches!(wrt, Wrt::Image | Wrt::PostImage) && !model.kind().is_conditioned() {
        return Err(Error::invalid("image sensitivity is undefined for the text-only language model"));
    }
    // Every parameter is a graph leaf so intermediate vectors collect gradients too.
    let bound = model.bind(&mut Binder::training(&HashSet::new()));
    let img = image_leaf(model, image, true)?;
    let tr = model.run(&bound, img.as_ref(), &[prefix[..t].to_vec()], &mut Mode::Inference)?;
    let probs = tr.softmax(t - 1)?;
    let best = argmax(probs.values());
    probs.element(best)?.backward()?;
    let target = match wrt {
        Wrt::Image => img.expect("conditioned"),
        Wrt::PostImage => tr.post_image.clone().expect("conditioned"),
        Wrt::PrevTokenEmbedding => tr.word_inputs[t - 1].clone(),
    };
    Ok(target.grad().unwrap_or_else(|| vec![0.0; target.numel()]))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn mean_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

fn layer_rows(tr: &ForwardTrace, layer: Layer) -> Result<Vec<Vec<f64>>> {
    (0..tr.steps())
        .map(|t| {
            Ok(match layer {
                Layer::Multimodal => tr.multimodal[t].to_vec(),
                Layer::Logits => tr.logits[t].to_vec(),
                Layer::Softmax => tr.softmax(t)?.to_vec(),
            })
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64], metric: DistanceMetric) -> Result<f64> {
    match metric {
        DistanceMetric::Cosine => cosine_distance(a, b),
        DistanceMetric::Jsd => jsd(a, b),
    }
}

fn check_layer_metric(layer: Layer, metric: DistanceMetric) -> Result<()> {
    if metric == DistanceMetric::Jsd && layer != Layer::Softmax {
        return Err(Error::invalid("jsd is only defined on the softmax layer"));
    }
    Ok(())
}

/// The selected layer's vector after `prefix[..t]`, for the correct image and
/// for the foil.
pub fn omission_vectors(
    model: &CaptionModel,
    image: &[f64],
    foil: &[f64],
    prefix: &[usize],
    t: usize,
    layer: Layer,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(prefix, t)?;
    if !model.kind().is_conditioned() {
        return Err(Error::invalid("omission needs an image-conditioned model"));
    }
    let pick = |img: &[f64]| -> Result<Vec<f64>> {
        let tr = trace(model, Some(img), &prefix[..t])?;
        Ok(layer_rows(&tr, layer)?.pop().expect("t >= 1"))
    };
    Ok((pick(image)?, pick(foil)?))
}

/// Distance between a layer's vectors under the correct and the foil image.
pub fn omission_score(
    model: &CaptionModel,
    image: &[f64],
    foil: &[f64],
    prefix: &[usize],
    t: usize,
    layer: Layer,
    metric: DistanceMetric,
) -> Result<f64> {
    check_layer_metric(layer, metric)?;
    let (a, b) = omission_vectors(model, image, foil, prefix, t, layer)?;
    distance(&a, &b, metric)
}

/// Smallest and largest logit after `prefix[..t]`.
pub fn logit_stats(model: &CaptionModel, image: Option<&[f64]>, prefix: &[usize], t: usize) -> Result<(f64, f64)> {
    check_step(prefix, t)?;
    let tr = trace(model, image, &prefix[..t])?;
    let logits = tr.logits[t - 1].values();
    let min = logits.iter().copied().fold(f64::INFINITY, f64::min);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

/// One caption prepared for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisItem {
    pub id: String,
    pub features: Vec<f64>,
    /// Words only, no start or end token.
    pub caption: Vec<usize>,
    pub foil: Option<Vec<f64>>,
}

/// The measure at every position of a caption: positions `1..=L` predict the
/// words and position `L + 1` the end token.
pub fn caption_profile(model: &CaptionModel, item: &AnalysisItem, measure: Measure) -> Result<Vec<f64>> {
    let mut prefix = Vec::with_capacity(item.caption.len() + 1);
    prefix.push(START);
    prefix.extend_from_slice(&item.caption);
    let steps = prefix.len();
    let image = model.kind().is_conditioned().then_some(item.features.as_slice());
    match measure {
        Measure::Sensitivity { wrt } => (1..=steps)
            .map(|t| sensitivity(model, image, &prefix, t, wrt))
            .collect(),
        Measure::Omission { layer, metric } => {
            check_layer_metric(layer, metric)?;
            if !model.kind().is_conditioned() {
                return Err(Error::invalid("omission needs an image-conditioned model"));
            }
            let foil = item
                .foil
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("item {} has no foil image", item.id)))?;
            // causal model: one full pass gives every prefix's vectors
            let a = layer_rows(&trace(model, Some(&item.features), &prefix)?, layer)?;
            let b = layer_rows(&trace(model, Some(foil), &prefix)?, layer)?;
            a.iter().zip(&b).map(|(x, y)| distance(x, y, metric)).collect()
        }
        Measure::MinLogit | Measure::MaxLogit => {
            let tr = trace(model, image, &prefix)?;
            Ok(tr
                .logits
                .iter()
                .map(|l| {
                    let v = l.values().iter().copied();
                    if measure == Measure::MinLogit {
                        v.fold(f64::INFINITY, f64::min)
                    } else {
                        v.fold(f64::NEG_INFINITY, f64::max)
                    }
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceCurve {
    pub length: usize,
    /// Mean measure at positions `1..=length + 1`.
    pub values: Vec<f64>,
    /// Captions contributing to each position.
    pub count: usize,
    pub measure: String,
}

/// Mean per-position measure over every caption of exactly `length` words,
/// and over every supplied model.
pub fn influence_curve(
    models: &[&CaptionModel],
    items: &[AnalysisItem],
    length: usize,
    measure: Measure,
) -> Result<InfluenceCurve> {
    if models.is_empty() {
        return Err(Error::invalid("influence curve needs at least one model"));
    }
    let chosen: Vec<&AnalysisItem> = items.iter().filter(|it| it.caption.len() == length).collect();
    if chosen.is_empty() {
        let census = caption_length_census(items);
        return Err(Error::invalid(format!(
            "no captions of length {length}; available lengths: {:?}",
            census.keys().collect::<Vec<_>>()
        )));
    }
    let profiles: Vec<Vec<f64>> = models
        .iter()
        .flat_map(|m| chosen.iter().map(move |it| (*m, *it)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(m, it)| caption_profile(m, it, measure))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; length + 1];
    for p in &profiles {
        for (v, x) in values.iter_mut().zip(p) {
            *v += x;
        }
    }
    let n = profiles.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(InfluenceCurve {
        length,
        values,
        count: chosen.len(),
        measure: measure.tag(),
    })
}

/// Number of captions of each length.
pub fn caption_length_census(items: &[AnalysisItem]) -> BTreeMap<usize, usize> {
    let mut census = BTreeMap::new();
    for it in items {
        *census.entry(it.caption.len()).or_insert(0) += 1;
    }
    census
}

impl InfluenceCurve {
    /// `position,mean_value,n`, one row per position.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["position", "mean_value", "n"]).map_err(csv_err)?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([(i + 1).to_string(), v.to_string(), self.count.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes the CSV and a JSON sidecar (`<path>.json`) holding `config`.
    pub fn write(&self, csv_path: &Path, config: &serde_json::Value) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()?).map_err(|e| Error::io(csv_path, e))?;
        let sidecar = csv_path.with_extension("json");
        let meta = serde_json::json!({
            "length": self.length,
            "count": self.count,
            "measure": self.measure,
            "config": config,
        });
        std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&sidecar, e))
    }
}

/// A pool entry for foil selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FoilCandidate {
    pub id: String,
    pub features: Vec<f64>,
    pub captions: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoilPair {
    pub correct: String,
    pub foil: String,
    pub distance: f64,
    /// True when every other image shared a content word and the foil was
    /// picked from the whole pool.
    pub fallback: bool,
}

pub fn content_words(captions: &[Vec<String>]) -> HashSet<&str> {
    captions
        .iter()
        .flatten()
        .map(String::as_str)
        .filter(|w| !is_stopword(w))
        .collect()
}

/// The most distant image (by feature cosine distance) sharing no content
/// word with `pool[index]`; ties go to the smaller id.
pub fn select_foil(index: usize, pool: &[FoilCandidate]) -> Result<FoilPair> {
    if pool.len() < 2 {
        return Err(Error::invalid("foil selection needs a pool of at least two images"));
    }
    let item = pool.get(index).ok_or(Error::OutOfRange {
        index,
        size: pool.len(),
    })?;
    let words = content_words(&item.captions);
    let others: Vec<&FoilCandidate> = pool.iter().filter(|c| c.id != item.id).collect();
    if others.is_empty() {
        return Err(Error::invalid("foil pool has no other image"));
    }
    let disjoint: Vec<&FoilCandidate> = others
        .iter()
        .copied()
        .filter(|c| content_words(&c.captions).is_disjoint(&words))
        .collect();
    let fallback = disjoint.is_empty();
    let candidates = if fallback { others } else { disjoint };
    let mut best: Option<(&FoilCandidate, f64)> = None;
    for c in candidates {
        let d = cosine_distance(&item.features, &c.features)?;
        let better = match best {
            None => true,
            Some((b, bd)) => d > bd || (d == bd && c.id < b.id),
        };
        if better {
            best = Some((c, d));
        }
    }
    let (foil, distance) = best.expect("nonempty candidates");
    Ok(FoilPair {
        correct: item.id.clone(),
        foil: foil.id.clone(),
        distance,
        fallback,
    })
}

#[cfg(test)]
mod tests;
