mod common;

use std::path::Path;

use common::*;
use stlm::format::{decode_map, read_checkpoint, write_checkpoint};
use stlm::report::MetricsReport;
use stlm_core::model::ParamStore;
use stlm_core::Tensor;

fn synth(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--config", "mini.json", "--out", out];
    args.extend_from_slice(extra);
    ok(&stlm_in(dir, &args));
}

fn train(dir: &Path, data: &str, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "--config", "mini.json", "--data", data, "--out", out];
    args.extend_from_slice(extra);
    ok(&stlm_in(dir, &args));
}

fn report(dir: &Path, out: &str) -> MetricsReport {
    MetricsReport::read_json(&dir.join(out).join("report.json")).unwrap()
}

fn loss_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn synth_writes_mvtec_layout_deterministically() {
    let w = workspace();
    let d = w.path();
    synth(d, "a", &[]);
    synth(d, "b", &[]);
    assert_eq!(std::fs::read_dir(d.join("a/train/good")).unwrap().count(), 4);
    let bad: Vec<_> = std::fs::read_dir(d.join("a/test/blend")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(bad.len(), 3);
    for p in bad {
        let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
        assert!(d.join(format!("a/ground_truth/blend/{stem}_mask.png")).is_file());
    }
    assert!(d.join("a/manifest.json").is_file());
    assert_eq!(digests(&d.join("a")), digests(&d.join("b")));

    ok(&stlm_env(d, &["synth", "--config", "mini.json", "--out", "c"], &[("STLM_SEED", "5")]));
    let cfg = stlm::Config::load(&d.join("c/config.json")).unwrap();
    assert_eq!((cfg.data.seed, cfg.train.seed), (5, 5));
    assert_ne!(digests(&d.join("a")), digests(&d.join("c")));
}

#[test]
fn invalid_config_is_rejected_before_writing() {
    let w = workspace();
    let d = w.path();
    std::fs::write(d.join("bad.json"), r#"{"model": {"heads": "four", "colour": 1}, "extra": {}}"#).unwrap();
    let out = stlm_in(d, &["synth", "--config", "bad.json", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for key in ["model.heads", "model.colour", "extra"] {
        assert!(err.contains(key), "{key} not reported: {err}");
    }
    let out = stlm_in(d, &["synth", "--config", "mini.json", "--out", "x", "--model.heads", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model.heads"));
    let out = stlm_in(d, &["synth", "--config", "mini.json", "--out", "x", "--train.stage_mode=three_stage"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("train.stage_mode"), "{}", stderr(&out));
    assert!(!d.join("x").exists());
}

#[test]
fn eval_without_positives_fails_fast() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &["--data.n_test_bad", "0"]);
    train(d, "ds", "run", &["--train.epochs", "1"]);
    let out = stlm_in(d, &["eval", "--checkpoint", "run/checkpoint.stlm", "--data", "ds", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no positive"), "{}", stderr(&out));
    assert!(!d.join("ev").exists());
}

#[test]
fn two_stage_log_has_two_segments() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    train(d, "ds", "run", &["--stage", "two_stage"]);
    let rows = loss_rows(&d.join("run/loss.csv"));
    assert_eq!(rows.len(), 4);
    let stages: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(stages, ["distill", "distill", "segment", "segment"]);
}

#[test]
fn resume_continues_the_schedule_exactly() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    train(d, "ds", "full", &["--train.epochs", "4"]);
    train(d, "ds", "part", &["--train.epochs", "2", "--train.checkpoint_every", "1"]);
    assert!(d.join("part/checkpoint_step000003.stlm").is_file());
    train(d, "ds", "part", &["--train.epochs", "4", "--resume", "part/checkpoint.stlm"]);
    let rows = loss_rows(&d.join("part/loss.csv"));
    let steps: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(steps, ["0", "1", "2", "3", "4", "5", "6", "7"]);
    assert_eq!(rows, loss_rows(&d.join("full/loss.csv")));
    let a = std::fs::read(d.join("full/checkpoint.stlm")).unwrap();
    let b = std::fs::read(d.join("part/checkpoint.stlm")).unwrap();
    assert!(a == b, "resumed run diverged from the uninterrupted one");
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    let mut store = ParamStore::new();
    store.insert(stlm::commands::ORACLE_TENSOR, Tensor::scalar(1.0f32));
    write_checkpoint(&d.join("oracle.stlm"), &store).unwrap();
    ok(&stlm_in(
        d,
        &["eval", "--config", "mini.json", "--checkpoint", "oracle.stlm", "--data", "ds", "--out", "ev"],
    ));
    let r = report(d, "ev");
    assert_eq!((r.image_auroc, r.pixel_auroc, r.pro, r.ap, r.fnr), (1.0, 1.0, 1.0, 1.0, 0.0));
}

#[test]
fn eval_is_teacher_free_and_k_only_touches_image_scores() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    train(d, "ds", "run", &[]);
    let store = read_checkpoint(&d.join("run/checkpoint.stlm")).unwrap();
    let mut student = ParamStore::new();
    for (k, v) in store.iter().filter(|(k, _)| !k.starts_with("teacher") && !k.starts_with("optim.")) {
        student.insert(k.clone(), v.clone());
    }
    write_checkpoint(&d.join("run/student.stlm"), &student).unwrap();

    let eval = |ckpt: &str, out: &str, k: &str| {
        ok(&stlm_in(d, &["eval", "--checkpoint", ckpt, "--data", "ds", "--out", out, "--k", k]));
        report(d, out)
    };
    let full = eval("run/checkpoint.stlm", "full", "5");
    let free = eval("run/student.stlm", "free", "5");
    assert_eq!(full, free);
    assert_eq!(digests(&d.join("full")), digests(&d.join("free")));

    let k1 = eval("run/student.stlm", "k1", "1");
    let k100 = eval("run/student.stlm", "k100", "100");
    assert_eq!((k1.pixel_auroc, k1.pro, k1.ap), (k100.pixel_auroc, k100.pro, k100.ap));
    let scores = |r: &MetricsReport| r.images.iter().map(|i| i.score).collect::<Vec<_>>();
    assert_ne!(scores(&k1), scores(&k100));

    let map = std::fs::read(d.join("k1/maps/ds/blend/000.stlmmap")).unwrap();
    let (h, w, v) = decode_map(&map).unwrap();
    assert_eq!((h, w), (16, 16));
    assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    let png = image::open(d.join("k1/maps/ds/blend/000.png")).unwrap();
    assert_eq!(png.color(), image::ColorType::L16);
}

#[test]
fn eval_names_missing_student_tensors() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    train(d, "ds", "run", &["--train.epochs", "1"]);
    let mut store = read_checkpoint(&d.join("run/checkpoint.stlm")).unwrap();
    store.remove_prefix("fa.head");
    write_checkpoint(&d.join("run/broken.stlm"), &store).unwrap();
    let out = stlm_in(d, &["eval", "--checkpoint", "run/broken.stlm", "--data", "ds", "--out", "ev"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("fa.head.conv.weight"), "{}", stderr(&out));
}

#[test]
fn infer_writes_maps_and_scores() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    train(d, "ds", "run", &["--train.epochs", "1"]);
    ok(&stlm_in(d, &["infer", "--checkpoint", "run/checkpoint.stlm", "--input", "ds/test/good", "--out", "inf"]));
    ok(&stlm_in(d, &["infer", "--checkpoint", "run/checkpoint.stlm", "--input", "ds/test/good", "--out", "inf2"]));
    assert_eq!(digests(&d.join("inf")), digests(&d.join("inf2")));
    let rows = loss_rows(&d.join("inf/scores.csv"));
    assert_eq!(rows.len(), 3);
    assert!(d.join("inf/000.png").is_file() && d.join("inf/000.stlmmap").is_file());
}

#[test]
fn ablation_tables() {
    let w = workspace();
    let d = w.path();
    let ablate = |axis: &str, out: &str| {
        let args = ["ablate", "--config", "mini.json", "--axis", axis, "--out", out, "--train.epochs", "1", "--jobs", "2"];
        ok(&stlm_in(d, &args));
        let mut r = csv::Reader::from_path(d.join(out).join("ablation.csv")).unwrap();
        r.deserialize::<stlm::commands::AblationRow>().map(|x| x.unwrap()).collect::<Vec<_>>()
    };
    let rows = ablate("decoder_sharing", "sharing");
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].variant.as_str(), rows[1].variant.as_str()), ("shared", "separate"));
    assert!(rows[0].params < rows[1].params);

    let rows = ablate("anomaly_prob", "prob");
    let probs: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(probs, ["0.25", "0.5", "0.75", "1"]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.pixel_auroc)));

    let rows = ablate("use_teacher", "teacher");
    assert_eq!(rows.len(), 2);
    // The teacher never takes part in inference.
    assert_eq!(rows[0].params, rows[1].params);

    let out = stlm_in(d, &["ablate", "--axis", "colour", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_flags_a_broken_rule() {
    let w = workspace();
    let out = stlm_in(w.path(), &["gradcheck", "--seeds", "2", "--inject-fault", "relu"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    let relu = text.lines().find(|l| l.contains(" relu ")).expect("relu line");
    assert!(relu.starts_with("FAIL"), "{relu}");
    assert!(stderr(&out).contains("relu"));

    let out = stlm_in(w.path(), &["gradcheck", "--inject-fault", "nosuch"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numeric_blow_up_exits_with_status_two() {
    let w = workspace();
    let d = w.path();
    synth(d, "ds", &[]);
    let args = ["train", "--config", "mini.json", "--data", "ds", "--out", "run", "--train.adam_lr", "1e38", "--train.clip_norm", "null"];
    let out = stlm_in(d, &args);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("batch seed"), "{}", stderr(&out));
}
