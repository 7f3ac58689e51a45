use std::path::{Path, PathBuf};
use std::process::Command;

use caplab::data::{read_captions_jsonl, read_features, RESERVED};
use caplab::metrics::MetricsReport;
use caplab::model::load_checkpoint;
use caplab_cli::commands::{
    cmd_analyze, cmd_evaluate, cmd_generate, cmd_synth, cmd_train, cmd_transfer, cmd_tune, load_model,
    CaptionsFile,
};
use caplab_cli::RunConfig;
use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_caplab"))
}

fn synth(dir: &Path, images: usize, seed: u64) -> (PathBuf, PathBuf) {
    let cfg: RunConfig = serde_json::from_value(json!({
        "seed": seed,
        "output_dir": dir.join("data"),
        "synth": {"images": images, "captions_per_image": 1},
    }))
    .unwrap();
    cmd_synth(&cfg).unwrap()
}

/// A small run on synthetic data, validated and tested on its own training split.
fn config(dir: &Path, arch: &str, extra: serde_json::Value) -> RunConfig {
    let (captions, features) = synth(dir, 8, 0);
    let mut v = json!({
        "captions": captions,
        "features": features,
        "architecture": arch,
        "seed": 5,
        "output_dir": dir.join("out"),
        "hyperparams": {"embed_size": 16, "rnn_size": 16, "post_image_size": 16, "learning_rate": 0.02, "minibatch_size": 8},
        "splits": {"train": "train", "val": "train", "test": "train"},
        "training": {"max_epochs": 3},
        "decoding": {"min_len": 2, "max_len": 8},
    });
    let obj = v.as_object_mut().unwrap();
    for (k, x) in extra.as_object().unwrap() {
        obj.insert(k.clone(), x.clone());
    }
    serde_json::from_value(v).unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string(cfg).unwrap()).unwrap();
    p
}

#[test]
fn synth_items_are_one_hot_seeded_and_aligned() {
    let dir = tempfile::tempdir().unwrap();
    let (c, f) = synth(dir.path(), 12, 4);
    let records = read_captions_jsonl(&c).unwrap();
    let (dim, feats) = read_features(&f).unwrap();
    assert_eq!(records.len(), 12);
    assert_eq!(dim, 12);
    for (r, (id, v)) in records.iter().zip(&feats) {
        assert_eq!(&r.id, id);
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 11);
    }
    let again = tempfile::tempdir().unwrap();
    let (c2, f2) = synth(again.path(), 12, 4);
    assert_eq!(std::fs::read(&c).unwrap(), std::fs::read(c2).unwrap());
    assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(f2).unwrap());
}

#[test]
fn synthetic_training_overfits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "merge",
        json!({
            "hyperparams": {"embed_size": 32, "rnn_size": 32, "post_image_size": 32, "learning_rate": 0.01, "minibatch_size": 16},
            "training": {"max_epochs": 400, "target_loss": 0.01},
        }),
    );
    let out = cmd_train(&cfg).unwrap();
    let last = out.history.epochs.last().unwrap();
    assert!(last.loss < 0.01, "final loss {}", last.loss);
    for f in ["model.ckpt", "vocab.json", "history.json", "run.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/history.json")).unwrap()).unwrap();
    assert_eq!(history["config_fingerprint"], json!(cfg.fingerprint().unwrap()));
}

#[test]
fn missing_files_and_bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["train", "--config"]).arg(dir.path().join("absent.json")).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let mut cfg = config(dir.path(), "merge", json!({}));
    cfg.captions = Some(dir.path().join("absent.jsonl"));
    let p = write_config(dir.path(), &cfg);
    assert_eq!(bin().arg("train").arg("-c").arg(&p).status().unwrap().code(), Some(2));

    let cfg = RunConfig {
        seed: None,
        ..config(dir.path(), "merge", json!({}))
    };
    let p = write_config(dir.path(), &cfg);
    let out = bin().arg("train").arg("-c").arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    std::fs::write(&p, r#"{"seed": 1, "unknown_key": true}"#).unwrap();
    assert_eq!(bin().arg("train").arg("-c").arg(&p).status().unwrap().code(), Some(2));

    let status = bin()
        .args(["synth", "--out"])
        .arg(dir.path().join("x"))
        .env("CAPLAB_WORKERS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn binary_runs_end_to_end_with_worker_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "par_inject", json!({}));
    let p = write_config(dir.path(), &cfg);
    for cmd in ["train", "generate", "evaluate"] {
        let out = bin().arg(cmd).arg("-c").arg(&p).env("CAPLAB_WORKERS", "2").output().unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap();
    serde_json::from_str::<MetricsReport>(&metrics).unwrap();
}

#[test]
fn generation_respects_config_and_constraints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "init_inject", json!({"decoding": {"width": 2, "min_len": 3, "max_len": 6}}));
    cmd_train(&cfg).unwrap();
    let (path, file) = cmd_generate(&cfg, None).unwrap();
    assert_eq!(file.beam_width, 2);
    assert_eq!(file.captions.len(), 8);
    let loaded = load_model(&cfg.checkpoint().unwrap()).unwrap();
    for c in &file.captions {
        let words: Vec<&str> = c.caption.split(' ').collect();
        assert!((3..=6).contains(&words.len()), "{:?}", c.caption);
        assert!(words.windows(2).all(|w| w[0] != w[1]));
        for w in &words {
            let i = loaded.vocab.index_of(w).unwrap();
            assert!(i >= RESERVED);
        }
        assert!(c.logprob < 0.0);
    }
    let first = std::fs::read(&path).unwrap();
    cmd_generate(&cfg, None).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
    assert_eq!(CaptionsFile::load(&path).unwrap(), file);
}

#[test]
fn evaluation_of_reference_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "merge", json!({}));
    cmd_train(&cfg).unwrap();
    // candidates that are exactly the references
    let records = read_captions_jsonl(cfg.captions.as_ref().unwrap()).unwrap();
    let file = CaptionsFile {
        config_fingerprint: "x".into(),
        beam_width: 1,
        captions: records
            .iter()
            .map(|r| caplab_cli::commands::GeneratedCaption {
                id: r.id.clone(),
                caption: r.captions[0].clone(),
                logprob: 0.0,
            })
            .collect(),
    };
    let cand = dir.path().join("cand.json");
    std::fs::write(&cand, serde_json::to_string(&file).unwrap()).unwrap();
    let report = cmd_evaluate(&cfg, Some(&cand)).unwrap();
    let q = report.quality.unwrap();
    assert_eq!(q.bleu_1, 1.0);
    assert_eq!(q.bleu_4, 1.0);
    assert_eq!(report.diversity.as_ref().unwrap().reused_pct, 100.0);
    assert!(report.retrieval.is_some());

    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    let json: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(json.config_fingerprint, cfg.fingerprint().unwrap());

    let missing = dir.path().join("short.json");
    let mut short = file.clone();
    short.captions.pop();
    std::fs::write(&missing, serde_json::to_string(&short).unwrap()).unwrap();
    let err = cmd_evaluate(&cfg, Some(&missing)).unwrap_err();
    assert_eq!(caplab_cli::exit_code(&err), 2);
}

#[test]
fn analysis_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "merge",
        json!({"analysis": {"length": 6, "measure": {"measure": "omission", "layer": "softmax", "metric": "jsd"}}}),
    );
    cmd_train(&cfg).unwrap();
    let (path, curve) = cmd_analyze(&cfg, None).unwrap();
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
    assert_eq!(curve.count, 8);
    assert!(path.with_extension("json").exists());
    cmd_analyze(&cfg, None).unwrap();
    assert_eq!(csv, std::fs::read_to_string(&path).unwrap());

    let err = cmd_analyze(&cfg, Some(4)).unwrap_err();
    assert!(format!("{err}").contains("available lengths: [6]"), "{err}");
    assert_eq!(caplab_cli::exit_code(&err), 2);

    let sens = RunConfig {
        analysis: serde_json::from_value(json!({"length": 6, "measure": {"measure": "sensitivity", "wrt": "post_image"}}))
            .unwrap(),
        ..cfg
    };
    let (_, curve) = cmd_analyze(&sens, None).unwrap();
    assert!(curve.values.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn transfer_records_freezing_and_checks_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let lm_cfg = RunConfig {
        features: None,
        output_dir: Some(dir.path().join("lm")),
        ..config(dir.path(), "text_only_lm", json!({}))
    };
    let lm = cmd_train(&lm_cfg).unwrap();
    let transfer = |mode: &str, hyper: serde_json::Value, out: &str| {
        let mut cfg = config(
            dir.path(),
            "merge",
            json!({"transfer": {"lm_checkpoint": lm.checkpoint, "plan": {"mode": mode}}}),
        );
        if !hyper.is_null() {
            cfg.hyperparams = Some(hyper);
        }
        cfg.output_dir = Some(dir.path().join(out));
        cmd_transfer(&cfg)
    };
    let frozen = transfer("frozen", serde_json::Value::Null, "frozen").unwrap();
    let (model, header) = load_checkpoint(&frozen.checkpoint).unwrap();
    assert!(header.frozen);
    assert_eq!(header.frozen_params, {
        let mut v = model.prefix_encoding_names();
        v.sort();
        v
    });
    let tuned = transfer("fine_tuned", serde_json::Value::Null, "tuned").unwrap();
    assert!(!load_checkpoint(&tuned.checkpoint).unwrap().1.frozen);

    let err = transfer("frozen", json!({"embed_size": 16, "rnn_size": 12, "post_image_size": 16}), "bad").unwrap_err();
    assert_eq!(caplab_cli::exit_code(&err), 2);
}

#[test]
fn language_model_partial_training_on_a_subsample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        features: None,
        ..config(
            dir.path(),
            "text_only_lm",
            json!({"transfer": {"plan": {"mode": "frozen", "exponent": -std::f64::consts::LOG10_2, "base_count": 8, "partial_epochs": 2}}}),
        )
    };
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.history.epochs.len(), 2);
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/history.json")).unwrap()).unwrap();
    assert_eq!(history["details"]["sentences"], json!(4));
}

#[test]
fn tuning_budget_seed_and_best_spec() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "merge",
        json!({"tune": {"budget": 2, "repeats": 1, "max_epochs": 1, "score": "neg_geomean_perplexity"}}),
    );
    let (csv, trials) = cmd_tune(&cfg, None).unwrap();
    assert_eq!(trials.len(), 2);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    let again = RunConfig {
        output_dir: Some(dir.path().join("again")),
        ..cfg.clone()
    };
    let (csv2, _) = cmd_tune(&again, None).unwrap();
    assert_eq!(text, std::fs::read_to_string(csv2).unwrap());

    let train_cfg = RunConfig {
        hyperparams: None,
        hyperparams_file: Some(dir.path().join("out/best_hyperparams.json")),
        output_dir: Some(dir.path().join("best")),
        training: serde_json::from_value(json!({"max_epochs": 1})).unwrap(),
        ..cfg
    };
    assert_eq!(train_cfg.hyperparams().unwrap(), trials[0].spec);
    cmd_train(&train_cfg).unwrap();
}
