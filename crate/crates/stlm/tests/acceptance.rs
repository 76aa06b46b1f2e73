//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails. The desk-scale runs train the default
//! configuration six times and take several minutes on one core.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use rand::Rng;
use stlm::format::{read_checkpoint, write_checkpoint};
use stlm::report::MetricsReport;
use stlm_core::metrics::*;
use stlm_core::model::{Model, ParamStore};
use stlm_core::oracle::*;
use stlm_core::rng::stream;
use stlm_core::synth::{blend_pseudo_anomaly, Image, Mask};

const SEEDS: [u64; 3] = [0, 1, 2];
const GRADCHECK_BUDGET_S: f64 = 60.0;
const TRAIN_BUDGET_S: f64 = 600.0;
const MIN_AUROC: f64 = 0.90;
const LOSS_RATIO: f64 = 0.5;
const RANKING_TOL: f64 = 1e-9;
const PRO_TOL: f64 = 1e-6;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn gradient_suite(dir: &Path) -> Outcome {
    let t0 = Instant::now();
    let out = stlm_in(dir, &["gradcheck", "--seeds", "20"]);
    let secs = t0.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let checks = text.lines().filter(|l| l.starts_with("ok") || l.starts_with("FAIL")).count();
    let failed: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    let pass = out.status.success() && failed.is_empty() && checks > 0 && secs < GRADCHECK_BUDGET_S;
    outcome(
        "gradient suite",
        pass,
        format!("{checks} checks x 20 seeds, {} failed, {secs:.1}s (budget {GRADCHECK_BUDGET_S}s)", failed.len()),
    )
}

fn blend_invariants() -> Outcome {
    let mut rng = stream(0xb1e4d, 0);
    let mut violations = 0;
    let cases = 1000;
    let bits = |img: &Image| img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    for _ in 0..cases {
        let c = if rng.random_bool(0.5) { 1 } else { 3 };
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let mut img = || Image::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap();
        let (n, a) = (img(), img());
        let beta: f32 = rng.random();
        let density: f64 = rng.random();
        let mask = Mask::new(h, w, (0..h * w).map(|_| rng.random_bool(density) as u8).collect()).unwrap();
        let zero = Mask::zeros(h, w);
        let ones = Mask::new(h, w, vec![1; h * w]).unwrap();
        violations += (bits(&blend_pseudo_anomaly(&n, &a, &zero, beta).unwrap()) != bits(&n)) as usize;
        violations += (bits(&blend_pseudo_anomaly(&n, &a, &mask, 1.0).unwrap()) != bits(&n)) as usize;
        violations += (bits(&blend_pseudo_anomaly(&n, &a, &ones, 0.0).unwrap()) != bits(&a)) as usize;
    }
    outcome(
        "pseudo-anomaly blend invariants",
        violations == 0,
        format!("{cases} random cases x 3 identities, {violations} bitwise violations"),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = stream(0x0_7ac1e, 1);
    let (mut d_auc, mut d_ap, mut d_pro) = (0f64, 0f64, 0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..40);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| (rng.random_range(0..levels) as f64 + l as u8 as f64 * 3.0) / levels as f64)
            .collect();
        d_auc = d_auc.max((auroc(&scores, &labels).unwrap() - auroc_pairs(&scores, &labels)).abs());
        d_ap = d_ap.max((average_precision(&scores, &labels).unwrap() - ap_enumerated(&scores, &labels)).abs());
    }
    for _ in 0..100 {
        let (h, w) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let count = rng.random_range(1..4);
        let mut maps: Vec<(Vec<f64>, Vec<bool>)> = (0..count)
            .map(|_| {
                let density = rng.random_range(0.05..0.5);
                let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
                let s = mask.iter().map(|&m| (rng.random_range(0..20) as f64 + if m { 6.0 } else { 0.0 }) / 26.0).collect();
                (s, mask)
            })
            .collect();
        maps[0].1[0] = true;
        maps[0].1[h * w - 1] = false;
        let views: Vec<MapView> = maps
            .iter()
            .map(|(s, m)| MapView {
                scores: s,
                mask: m,
                height: h,
                width: w,
            })
            .collect();
        let limit = rng.random_range(0.05..1.0);
        let got = pro_score(&views, limit, Connectivity::Eight).unwrap();
        d_pro = d_pro.max((got - pro_explicit(&maps, h, w, limit)).abs());
    }
    let pass = d_auc <= RANKING_TOL && d_ap <= RANKING_TOL && d_pro <= PRO_TOL;
    outcome(
        "metric oracle equivalence",
        pass,
        format!("max |diff| auroc {d_auc:.1e}, ap {d_ap:.1e} (tol {RANKING_TOL:.0e}); pro {d_pro:.1e} (tol {PRO_TOL:.0e})"),
    )
}

struct Run {
    seed: u64,
    dir: PathBuf,
    data: PathBuf,
    report: MetricsReport,
    first_epoch: f64,
    last_epoch: f64,
    train_s: f64,
}

fn epoch_means(path: &Path, steps_per_epoch: usize) -> (f64, f64) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let totals: Vec<f64> = r.records().map(|x| x.unwrap()[6].parse().unwrap()).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&totals[..steps_per_epoch]), mean(&totals[totals.len() - steps_per_epoch..]))
}

/// synth, train and eval through the CLI with the default configuration.
fn desk_run(root: &Path, seed: u64, tag: &str, extra: &[&str]) -> Result<Run, String> {
    let seed_s = seed.to_string();
    let env = [("STLM_SEED", seed_s.as_str())];
    let data = root.join(format!("data{seed}"));
    if !data.exists() {
        let out = stlm_env(root, &["synth", "--out", data.to_str().unwrap()], &env);
        if !out.status.success() {
            return Err(stderr(&out));
        }
    }
    let dir = root.join(format!("{tag}{seed}"));
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let t0 = Instant::now();
    let out = stlm_env(root, &args, &env);
    let train_s = t0.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(stderr(&out));
    }
    let ev = dir.join("eval");
    let ckpt = dir.join("checkpoint.stlm");
    let out = stlm_env(
        root,
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", ev.to_str().unwrap()],
        &env,
    );
    if !out.status.success() {
        return Err(stderr(&out));
    }
    let cfg = stlm::Config::load(&dir.join("config.json")).unwrap();
    let spe = cfg.data.n_train.div_ceil(cfg.train.batch_size);
    let (first_epoch, last_epoch) = epoch_means(&dir.join("loss.csv"), spe);
    Ok(Run {
        seed,
        dir,
        data,
        report: MetricsReport::read_json(&ev.join("report.json")).unwrap(),
        first_epoch,
        last_epoch,
        train_s,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn desk_scale(runs: &[Run]) -> Outcome {
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: pixel {:.4} image {:.4} loss {:.3}->{:.3} {:.0}s",
                r.seed, r.report.pixel_auroc, r.report.image_auroc, r.first_epoch, r.last_epoch, r.train_s
            )
        })
        .collect();
    let first = mean(runs.iter().map(|r| r.first_epoch));
    let last = mean(runs.iter().map(|r| r.last_epoch));
    let pass = runs.iter().all(|r| {
        r.report.pixel_auroc >= MIN_AUROC && r.report.image_auroc >= MIN_AUROC && r.train_s <= TRAIN_BUDGET_S
    }) && last <= LOSS_RATIO * first;
    outcome(
        "desk-scale end-to-end",
        pass,
        format!(
            "{}; mean epoch l_total first {first:.3} last {last:.3} (ratio {:.2}, need <= {LOSS_RATIO})",
            per_seed.join("; "),
            last / first
        ),
    )
}

fn teacher_checksums_unchanged(run: &Run) -> bool {
    let cfg = stlm::Config::load(&run.dir.join("config.json")).unwrap();
    let fresh: Model<f32> = Model::new(cfg.model, cfg.train.seed).unwrap();
    let trained = read_checkpoint(&run.dir.join("checkpoint.stlm")).unwrap();
    let mut store = ParamStore::new();
    for (k, v) in trained.iter().filter(|(k, _)| k.starts_with("teacher.")) {
        store.insert(k.clone(), v.clone());
    }
    store.len() > 0 && store.checksum("teacher.") == fresh.params.checksum("teacher.")
}

fn teacher_free(root: &Path, runs: &[Run]) -> Outcome {
    let r = &runs[0];
    let full = read_checkpoint(&r.dir.join("checkpoint.stlm")).unwrap();
    let mut student = ParamStore::new();
    for (k, v) in full.iter().filter(|(k, _)| !k.starts_with("teacher")) {
        student.insert(k.clone(), v.clone());
    }
    write_checkpoint(&r.dir.join("student.stlm"), &student).unwrap();
    let ev = r.dir.join("eval_student");
    let out = stlm_in(
        root,
        &[
            "eval",
            "--checkpoint",
            r.dir.join("student.stlm").to_str().unwrap(),
            "--config",
            r.dir.join("config.json").to_str().unwrap(),
            "--data",
            r.data.to_str().unwrap(),
            "--out",
            ev.to_str().unwrap(),
        ],
    );
    let same = out.status.success() && MetricsReport::read_json(&ev.join("report.json")).ok().as_ref() == Some(&r.report);
    let checksums = runs.iter().all(teacher_checksums_unchanged);
    outcome(
        "teacher-free inference",
        same && checksums,
        format!(
            "eval without {} teacher tensors: {}; teacher checksums unchanged over {} runs: {checksums}",
            full.iter().filter(|(k, _)| k.starts_with("teacher")).count(),
            if same { "identical report" } else { "FAILED" },
            runs.len()
        ),
    )
}

fn ablation_direction(root: &Path, with: &[Run], without: &[Run]) -> Outcome {
    let a = mean(with.iter().map(|r| r.report.pixel_auroc));
    let b = mean(without.iter().map(|r| r.report.pixel_auroc));
    let table = root.join("ablate_sharing");
    let out = stlm_in(
        root,
        &["ablate", "--axis", "decoder_sharing", "--out", table.to_str().unwrap(), "--train.epochs", "1", "--data.n_train", "8"],
    );
    let rows: Vec<stlm::commands::AblationRow> = if out.status.success() {
        csv::Reader::from_path(table.join("ablation.csv")).unwrap().deserialize().map(|x| x.unwrap()).collect()
    } else {
        Vec::new()
    };
    let sharing = rows.len() == 2 && rows[0].variant == "shared" && rows[0].params < rows[1].params;
    let params = rows.iter().map(|r| format!("{} {}", r.variant, r.params)).collect::<Vec<_>>().join(", ");
    outcome(
        "ablation directionality",
        b < a && sharing,
        format!(
            "mean pixel AUROC default {a:.4} vs use_teacher=false {b:.4} ({:?}); decoder params {params}",
            without.iter().map(|r| (r.report.pixel_auroc * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

fn determinism(root: &Path) -> Outcome {
    let pipeline = |tag: &str| -> Result<Vec<(PathBuf, String)>, String> {
        let d = root.join(tag);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join("mini.json"), MINI_CONFIG).unwrap();
        let steps: [&[&str]; 4] = [
            &["synth", "--config", "mini.json", "--out", "ds"],
            &["train", "--config", "mini.json", "--data", "ds", "--out", "run", "--train.checkpoint_every", "2"],
            &["eval", "--checkpoint", "run/checkpoint.stlm", "--data", "ds", "--out", "ev"],
            &["infer", "--checkpoint", "run/checkpoint.stlm", "--input", "ds/test", "--input", "ds/train/good", "--out", "inf"],
        ];
        for args in steps {
            let out = stlm_in(&d, args);
            if !out.status.success() {
                return Err(stderr(&out));
            }
        }
        // Manifests carry timestamps; everything else must match.
        Ok(digests(&d))
    };
    match (pipeline("det_a"), pipeline("det_b")) {
        (Ok(a), Ok(b)) => {
            let kinds = ["stlm", "stlmmap", "json", "csv", "png"];
            let count = |ext: &str| a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == ext)).count();
            let summary = kinds.iter().map(|k| format!("{} .{k}", count(k))).collect::<Vec<_>>().join(", ");
            outcome("determinism", a == b, format!("two runs of synth/train/eval/infer, {summary}: identical {}", a == b))
        }
        (a, b) => outcome("determinism", false, format!("pipeline failed: {:?} {:?}", a.err(), b.err())),
    }
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let mut results = vec![gradient_suite(root), blend_invariants(), metric_oracles()];

    let mut default_runs = Vec::new();
    let mut free_runs = Vec::new();
    let mut failure = None;
    for seed in SEEDS {
        match desk_run(root, seed, "default", &[]) {
            Ok(r) => default_runs.push(r),
            Err(e) => failure = Some(e),
        }
        match desk_run(root, seed, "no_teacher", &["--model.use_teacher", "false"]) {
            Ok(r) => free_runs.push(r),
            Err(e) => failure = Some(e),
        }
    }
    if let Some(e) = failure {
        for name in ["desk-scale end-to-end", "teacher-free inference", "ablation directionality"] {
            results.push(outcome(name, false, format!("a training run failed: {e}")));
        }
    } else {
        results.push(desk_scale(&default_runs));
        results.push(teacher_free(root, &default_runs));
        results.push(ablation_direction(root, &default_runs, &free_runs));
    }
    results.push(determinism(root));

    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
