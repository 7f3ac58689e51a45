use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::central_difference;
use crate::hyper::HyperparamSpec;
use crate::layers::CellKind;
use crate::model::{build_model, ArchitectureKind};

const CONDITIONED: [ArchitectureKind; 4] = ArchitectureKind::CONDITIONED;

fn model(kind: ArchitectureKind, cell: CellKind, seed: u64) -> CaptionModel {
    let h = HyperparamSpec {
        embed_size: 5,
        rnn_size: 5,
        post_image_size: 5,
        max_init_weight: 1.0,
        cell,
        ..Default::default()
    };
    build_model(kind, &h, 9, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn max_prob(m: &CaptionModel, image: Option<&[f64]>, prefix: &[usize], t: usize, index: usize) -> f64 {
    let out = m.forward(image, &prefix[..t], &mut Mode::Inference).unwrap();
    out.dists.row(t - 1)[index]
}

#[test]
fn image_sensitivity_matches_finite_differences() {
    let prefix = [START, 5, 7, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cell in [CellKind::Gru, CellKind::Lstm] {
        for kind in CONDITIONED {
            let m = model(kind, cell, 3);
            let img: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            for t in 1..=prefix.len() {
                let out = m.forward(Some(&img), &prefix[..t], &mut Mode::Inference).unwrap();
                let best = argmax(out.dists.row(t - 1));
                let numeric = central_difference(|x| max_prob(&m, Some(x), &prefix, t, best), &img, 1e-5);
                let analytic = sensitivity_gradient(&m, Some(&img), &prefix, t, Wrt::Image).unwrap();
                let s = sensitivity(&m, Some(&img), &prefix, t, Wrt::Image).unwrap();
                let s_num = numeric.iter().map(|x| x.abs()).sum::<f64>() / 4.0;
                assert!((s - s_num).abs() <= 1e-4 * s_num.max(1e-8), "{kind} t={t}: {s} vs {s_num}");
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert!((a - n).abs() <= 1e-4 * n.abs().max(1e-6), "{kind} {a} vs {n}");
                }
            }
        }
    }
}

#[test]
fn sensitivity_values_are_finite_and_nonnegative() {
    let prefix = [START, 6, 8];
    for kind in CONDITIONED {
        let m = model(kind, CellKind::Gru, 1);
        let img = [0.3, 0.0, -0.2, 1.0];
        for wrt in [Wrt::Image, Wrt::PostImage, Wrt::PrevTokenEmbedding] {
            for t in 1..=3 {
                let s = sensitivity(&m, Some(&img), &prefix, t, wrt).unwrap();
                assert!(s.is_finite() && s >= 0.0);
                if wrt == Wrt::Image && kind == ArchitectureKind::Merge {
                    assert!(s > 0.0);
                }
            }
        }
    }
}

#[test]
fn text_only_image_sensitivity_is_an_error() {
    let lm = model(ArchitectureKind::TextOnlyLm, CellKind::Gru, 0);
    assert!(sensitivity(&lm, None, &[START, 5], 1, Wrt::Image).is_err());
    assert!(sensitivity(&lm, None, &[START, 5], 1, Wrt::PostImage).is_err());
    assert!(sensitivity(&lm, None, &[START, 5], 2, Wrt::PrevTokenEmbedding).unwrap() >= 0.0);
    let m = model(ArchitectureKind::Merge, CellKind::Gru, 0);
    assert!(matches!(
        sensitivity(&m, Some(&[1.0; 4]), &[START, 5], 3, Wrt::Image),
        Err(Error::OutOfRange { .. })
    ));
}

const LAYER_METRICS: [(Layer, DistanceMetric); 4] = [
    (Layer::Multimodal, DistanceMetric::Cosine),
    (Layer::Logits, DistanceMetric::Cosine),
    (Layer::Softmax, DistanceMetric::Cosine),
    (Layer::Softmax, DistanceMetric::Jsd),
];

#[test]
fn omission_identity_and_symmetry() {
    let prefix = [START, 5, 6, 7];
    let a = [1.0, 0.0, 0.5, 0.0];
    let b = [0.0, 1.0, 0.0, -0.5];
    for kind in CONDITIONED {
        let m = model(kind, CellKind::Lstm, 2);
        for (layer, metric) in LAYER_METRICS {
            for t in 1..=4 {
                assert_eq!(omission_score(&m, &a, &a, &prefix, t, layer, metric).unwrap(), 0.0);
                let ab = omission_score(&m, &a, &b, &prefix, t, layer, metric).unwrap();
                let ba = omission_score(&m, &b, &a, &prefix, t, layer, metric).unwrap();
                assert!((ab - ba).abs() < 1e-15);
                assert!(ab > 0.0);
            }
        }
    }
    let m = model(ArchitectureKind::Merge, CellKind::Gru, 0);
    assert!(omission_score(&m, &a, &b, &prefix, 1, Layer::Logits, DistanceMetric::Jsd).is_err());
}

#[test]
fn omission_matches_two_forward_recomputation() {
    let prefix = [START, 8, 4];
    let a = [0.2, -0.4, 0.9, 0.1];
    let b = [-1.0, 0.3, 0.0, 0.6];
    let m = model(ArchitectureKind::ParInject, CellKind::Gru, 5);
    for t in 1..=3 {
        let fa = m.forward(Some(&a), &prefix, &mut Mode::Inference).unwrap();
        let fb = m.forward(Some(&b), &prefix, &mut Mode::Inference).unwrap();
        let expect = jsd(fa.dists.row(t - 1), fb.dists.row(t - 1)).unwrap();
        let got = omission_score(&m, &a, &b, &prefix, t, Layer::Softmax, DistanceMetric::Jsd).unwrap();
        assert!((got - expect).abs() < 1e-15);
        let expect = cosine_distance(fa.multimodal.row(t - 1), fb.multimodal.row(t - 1)).unwrap();
        let got = omission_score(&m, &a, &b, &prefix, t, Layer::Multimodal, DistanceMetric::Cosine).unwrap();
        assert!((got - expect).abs() < 1e-15);
    }
}

#[test]
fn merge_state_block_is_identical_under_foil() {
    let m = model(ArchitectureKind::Merge, CellKind::Gru, 9);
    let (x, y) = omission_vectors(&m, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 3.0, 1.0], &[START, 4, 5], 3, Layer::Multimodal).unwrap();
    let s = m.config.rnn_size;
    assert_eq!(x[..s], y[..s]);
    assert_ne!(x[s..], y[s..]);
}

#[test]
fn logit_stats_cases() {
    let mut m = model(ArchitectureKind::InitInject, CellKind::Gru, 1);
    let img = [0.5, 0.5, 0.0, 1.0];
    let (lo, hi) = logit_stats(&m, Some(&img), &[START, 6], 2).unwrap();
    assert!(lo <= hi);
    m.output.b.data.iter_mut().for_each(|b| *b += 2.5);
    let (lo2, hi2) = logit_stats(&m, Some(&img), &[START, 6], 2).unwrap();
    assert!((lo2 - lo - 2.5).abs() < 1e-12 && (hi2 - hi - 2.5).abs() < 1e-12);
    m.output.w.data.iter_mut().for_each(|w| *w = 0.0);
    m.output.b.data.iter_mut().for_each(|b| *b = 0.0);
    assert_eq!(logit_stats(&m, Some(&img), &[START, 6], 1).unwrap(), (0.0, 0.0));
}

fn analysis_items() -> Vec<AnalysisItem> {
    let caps: [&[usize]; 4] = [&[4, 5, 6], &[7, 8, 4], &[5, 6], &[4, 8, 7]];
    caps.iter()
        .enumerate()
        .map(|(i, c)| {
            let mut f = vec![0.0; 4];
            f[i] = 1.0;
            let mut foil = vec![0.0; 4];
            foil[(i + 2) % 4] = 1.0;
            AnalysisItem {
                id: format!("i{i}"),
                features: f,
                caption: c.to_vec(),
                foil: Some(foil),
            }
        })
        .collect()
}

#[test]
fn curves_average_profiles() {
    let m = model(ArchitectureKind::ParInject, CellKind::Gru, 4);
    let items = analysis_items();
    let measure = Measure::Omission {
        layer: Layer::Softmax,
        metric: DistanceMetric::Jsd,
    };
    let single = influence_curve(&[&m], &items[2..3], 2, measure).unwrap();
    assert_eq!(single.values, caption_profile(&m, &items[2], measure).unwrap());
    assert_eq!(single.values.len(), 3);

    let curve = influence_curve(&[&m], &items, 3, measure).unwrap();
    assert_eq!(curve.count, 3);
    let profiles: Vec<Vec<f64>> = [0, 1, 3].iter().map(|&i| caption_profile(&m, &items[i], measure).unwrap()).collect();
    for p in 0..4 {
        let mean = profiles.iter().map(|v| v[p]).sum::<f64>() / 3.0;
        assert!((curve.values[p] - mean).abs() < 1e-15);
    }
    let err = influence_curve(&[&m], &items, 7, measure).unwrap_err();
    assert!(err.to_string().contains("no captions of length 7"));
    assert_eq!(caption_length_census(&items), BTreeMap::from([(2, 1), (3, 3)]));

    let csv = curve.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn curves_average_over_models() {
    let items = analysis_items();
    let a = model(ArchitectureKind::Merge, CellKind::Gru, 1);
    let b = model(ArchitectureKind::Merge, CellKind::Gru, 2);
    let measure = Measure::Sensitivity { wrt: Wrt::PostImage };
    let ca = influence_curve(&[&a], &items, 3, measure).unwrap();
    let cb = influence_curve(&[&b], &items, 3, measure).unwrap();
    let both = influence_curve(&[&a, &b], &items, 3, measure).unwrap();
    for p in 0..4 {
        assert!((both.values[p] - (ca.values[p] + cb.values[p]) / 2.0).abs() < 1e-12);
    }
}

fn cand(id: &str, features: &[f64], caption: &str) -> FoilCandidate {
    FoilCandidate {
        id: id.into(),
        features: features.to_vec(),
        captions: vec![caption.split_whitespace().map(String::from).collect()],
    }
}

#[test]
fn foil_with_single_disjoint_candidate() {
    let pool = vec![
        cand("a", &[1.0, 0.0, 0.0], "a dog on the grass"),
        cand("b", &[0.0, 1.0, 0.0], "a dog in the water"),
        cand("c", &[1.0, 0.1, 0.0], "the red car"),
        cand("d", &[0.0, 0.0, 1.0], "grass and trees"),
    ];
    let f = select_foil(0, &pool).unwrap();
    assert_eq!((f.foil.as_str(), f.fallback), ("c", false));
}

#[test]
fn orthogonal_features_tie_on_id() {
    let pool = vec![
        cand("z", &[1.0, 0.0, 0.0], "cat"),
        cand("y", &[0.0, 1.0, 0.0], "dog"),
        cand("x", &[0.0, 0.0, 1.0], "bird"),
    ];
    let f = select_foil(0, &pool).unwrap();
    assert_eq!(f.foil, "x");
    assert_eq!(f.distance, 1.0);
    assert!(select_foil(0, &pool[..1]).is_err());
}

#[test]
fn fallback_when_everything_overlaps() {
    let pool = vec![
        cand("a", &[1.0, 0.0], "dog runs"),
        cand("b", &[0.0, 1.0], "dog sits"),
        cand("c", &[1.0, 1.0], "dog jumps"),
    ];
    let f = select_foil(0, &pool).unwrap();
    assert!(f.fallback);
    assert_eq!(f.foil, "b");
}

#[test]
fn foil_matches_brute_force_scan() {
    let words = ["dog", "cat", "the", "red", "ball", "a", "grass", "runs"];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let pool: Vec<FoilCandidate> = (0..5)
            .map(|i| {
                let f: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let cap: Vec<&str> = (0..3).map(|_| words[rng.random_range(0..words.len())]).collect();
                cand(&format!("p{i}"), &f, &cap.join(" "))
            })
            .collect();
        let pick = rng.random_range(0..5);
        let got = select_foil(pick, &pool).unwrap();
        // brute force: scan all others, content words by explicit loops
        let own: Vec<&str> = pool[pick].captions[0].iter().map(String::as_str).filter(|w| !STOPWORDS.contains(w)).collect();
        let mut best: Option<(String, f64)> = None;
        let mut any_disjoint = false;
        for pass in 0..2 {
            for (j, c) in pool.iter().enumerate() {
                if j == pick {
                    continue;
                }
                let shares = c.captions[0].iter().any(|w| own.contains(&w.as_str()));
                if pass == 0 && shares {
                    continue;
                }
                if pass == 0 {
                    any_disjoint = true;
                }
                let f = &pool[pick].features;
                let dot: f64 = f.iter().zip(&c.features).map(|(a, b)| a * b).sum();
                let n1 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                let n2 = c.features.iter().map(|x| x * x).sum::<f64>().sqrt();
                let d = 1.0 - dot / (n1 * n2);
                if best.as_ref().is_none_or(|(bid, bd)| d > *bd || (d == *bd && c.id < *bid)) {
                    best = Some((c.id.clone(), d));
                }
            }
            if any_disjoint {
                break;
            }
        }
        let (id, d) = best.unwrap();
        assert_eq!(got.foil, id);
        assert!((got.distance - d).abs() < 1e-12);
        assert_eq!(got.fallback, !any_disjoint);
    }
}

#[test]
fn jsd_of_disjoint_softmax_supports() {
    assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-12);
}
