//! The subcommands as library functions. Each validates its inputs before
//! touching the output directory and ends by writing a manifest.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stlm_core::eval::{metrics_from_maps, Metrics};
use stlm_core::gradsuite::{full_suite, SuiteEntry, SuiteOptions, PRIMITIVES};
use stlm_core::metrics::{default_top_k, image_score};
use stlm_core::model::{is_buffer, is_teacher, FaInputMode, LayerSet, Model, ParamStore};
use stlm_core::synth::{make_synthetic_dataset, Dataset, Generator, Image, ImageSample, Mask, SourceBank, SourceKind};
use stlm_core::train::{StageMode, StepRecord, Trainer};
use stlm_core::Tensor;

use crate::config::Config;
use crate::error::{IoContext, Result, StlmError};
use crate::format::{read_checkpoint, write_checkpoint, write_map_png, write_map_raw};
use crate::manifest::RunManifest;
use crate::mvtec::{read_dataset, read_image, read_image_dir, write_dataset, LoadedDataset};
use crate::report::{write_rows, ClassMetrics, ImageScore, MetricsReport};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.stlm";
pub const LOSS_FILE: &str = "loss.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Name of the single tensor that marks the ground-truth oracle fixture.
pub const ORACLE_TENSOR: &str = "oracle.identity";

const ADAM_PREFIX: &str = "optim.adam";
const SGD_PREFIX: &str = "optim.sgd";
const STEP_TENSOR: &str = "train.step";

/// Invocation details shared by every command.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub args: Vec<String>,
    /// Worker threads for evaluation and ablation variants.
    pub jobs: usize,
    pub quiet: bool,
}

impl Default for RunContext {
    fn default() -> Self {
        Self {
            args: Vec::new(),
            jobs: 1,
            quiet: true,
        }
    }
}

impl RunContext {
    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .expect("thread pool")
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)
}

fn write_config(out: &Path, cfg: &Config) -> Result<PathBuf> {
    let p = out.join(CONFIG_FILE);
    std::fs::write(&p, cfg.to_json()).at(&p)?;
    Ok(p)
}

// ---- synth -----------------------------------------------------------------

pub fn synth(cfg: &Config, out: &Path, ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let ds = make_synthetic_dataset(&cfg.data)?;
    let manifest = RunManifest::new("synth", &ctx.args, cfg.digest(), cfg.data.seed, out);
    create_dir(out)?;
    let mut files = write_dataset(out, &ds)?;
    files.push(write_config(out, cfg)?);
    manifest.finish(&files)?;
    ctx.note(format!(
        "wrote {} train and {} test images to {}",
        ds.train.len(),
        ds.test.len(),
        out.display()
    ));
    Ok(files)
}

// ---- checkpoints -------------------------------------------------------------

/// Model weights plus optimizer state and the step counter.
pub fn training_state(tr: &Trainer) -> ParamStore<f32> {
    let mut store = tr.model.params.clone();
    tr.adam.export(ADAM_PREFIX, &mut store);
    tr.sgd.export(SGD_PREFIX, &mut store);
    store.insert(STEP_TENSOR, Tensor::scalar(tr.step as f32));
    store
}

fn is_state(name: &str) -> bool {
    name.starts_with("optim.") || name.starts_with("train.")
}

/// Model tensors of a checkpoint, checked against the names and shapes the
/// configuration implies. Teacher tensors may be absent.
pub fn model_from_store(store: &ParamStore<f32>, cfg: &Config) -> Result<Model<f32>> {
    let reference: Model<f32> = Model::new(cfg.model.clone(), 0)?;
    let mut missing = Vec::new();
    let mut params = ParamStore::new();
    for (name, t) in reference.params.iter() {
        match store.get(name) {
            Some(v) if v.shape() == t.shape() => params.insert(name.clone(), v.clone()),
            Some(v) => {
                return Err(StlmError::Usage(format!(
                    "tensor `{name}` has shape {:?}, the model config implies {:?}",
                    v.shape(),
                    t.shape()
                )))
            }
            // The teacher and its projection only matter for training.
            None if is_teacher(name) || name.starts_with("teacher_proj.") => {}
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(StlmError::Usage(format!("checkpoint lacks tensors: {}", missing.join(", "))));
    }
    for (name, _) in store.iter() {
        if !is_state(name) && !reference.params.contains(name) {
            return Err(StlmError::Usage(format!("checkpoint tensor `{name}` is not part of this model config")));
        }
    }
    Ok(Model {
        config: cfg.model.clone(),
        params,
    })
}

fn restore(tr: &mut Trainer, store: &ParamStore<f32>, cfg: &Config) -> Result<()> {
    let model = model_from_store(store, cfg)?;
    if model.params.len() != tr.model.params.len() {
        return Err(StlmError::Usage("resume checkpoint must contain the full model, teacher included".into()));
    }
    tr.model = model;
    tr.adam.import(ADAM_PREFIX, store);
    tr.sgd.import(SGD_PREFIX, store);
    tr.step = store.get(STEP_TENSOR).map_or(0, |t| t.item() as usize);
    Ok(())
}

/// Anything that turns an image into an anomaly map.
pub enum Predictor {
    Model(Box<Model<f32>>),
    /// Test fixture that answers with the ground-truth mask.
    Oracle,
}

impl Predictor {
    pub fn load(checkpoint: &Path, cfg: &Config) -> Result<Self> {
        let store = read_checkpoint(checkpoint)?;
        if store.contains(ORACLE_TENSOR) {
            return Ok(Predictor::Oracle);
        }
        Ok(Predictor::Model(Box::new(model_from_store(&store, cfg)?)))
    }

    /// Map at the image's own extent; the network sees the image resized to
    /// the configured input size and its output is resized back.
    pub fn predict(&self, image: &Image, mask: Option<&Mask>) -> Result<Vec<f32>> {
        match self {
            Predictor::Oracle => {
                let m = mask.ok_or_else(|| StlmError::Usage("the oracle fixture needs ground truth".into()))?;
                Ok(m.data().iter().map(|&v| v as f32).collect())
            }
            Predictor::Model(model) => {
                let cfg = &model.config;
                let x = image.conformed(cfg.channels, cfg.image_size, cfg.image_size);
                let map = model.anomaly_map(&x.to_tensor())?;
                if image.height() == cfg.image_size && image.width() == cfg.image_size {
                    return Ok(map.into_data());
                }
                let as_image = Image::new(1, cfg.image_size, cfg.image_size, map.into_data())?;
                Ok(as_image.conformed(1, image.height(), image.width()).data().to_vec())
            }
        }
    }
}

// ---- train -----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LossRow {
    step: usize,
    stage: String,
    l_p: f64,
    l_de: f64,
    l_focal: f64,
    l_l1: f64,
    l_total: f64,
}

impl From<&StepRecord> for LossRow {
    fn from(r: &StepRecord) -> Self {
        let l = r.losses;
        Self {
            step: r.step,
            stage: r.stage.name().into(),
            l_p: l.l_p,
            l_de: l.l_de,
            l_focal: l.l_focal,
            l_l1: l.l_l1,
            l_total: l.l_total,
        }
    }
}

fn source_bank(cfg: &Config) -> Result<SourceBank> {
    match (cfg.anomaly.source, &cfg.anomaly.source_dir) {
        (SourceKind::ImageDirectory, Some(dir)) => Ok(SourceBank::Images(read_image_dir(dir)?)),
        (SourceKind::ImageDirectory, None) => Err(StlmError::Config(vec!["anomaly.source_dir: required".into()])),
        (SourceKind::ProceduralTextureBank, _) => Ok(SourceBank::Procedural),
    }
}

/// Training images resized to the configured model input.
fn train_images(cfg: &Config, ds: &Dataset) -> Vec<Image> {
    let m = &cfg.model;
    ds.train.iter().map(|s| s.image.conformed(m.channels, m.image_size, m.image_size)).collect()
}

pub fn trainer(cfg: &Config, ds: &Dataset) -> Result<Trainer> {
    if ds.train.is_empty() {
        return Err(StlmError::Usage("dataset has no training images".into()));
    }
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    Ok(Trainer::new(
        model,
        cfg.train.clone(),
        cfg.anomaly.spec(),
        cfg.anomaly.perlin,
        source_bank(cfg)?,
        train_images(cfg, ds),
    )?)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_step: usize,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

pub fn train(cfg: &Config, data: &Path, out: &Path, resume: Option<&Path>, ctx: &RunContext) -> Result<TrainSummary> {
    let ds = read_dataset(data)?.dataset;
    let mut tr = trainer(cfg, &ds)?;
    if let Some(ckpt) = resume {
        restore(&mut tr, &read_checkpoint(ckpt)?, cfg)?;
    }
    let manifest = RunManifest::new("train", &ctx.args, cfg.digest(), cfg.train.seed, out);
    create_dir(out)?;
    let mut files = vec![write_config(out, cfg)?];

    let loss_path = out.join(LOSS_FILE);
    let append = resume.is_some() && loss_path.is_file();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&loss_path)
        .at(&loss_path)?;
    let mut log = csv::WriterBuilder::new().has_headers(!append).from_writer(file);
    let csv_err = |e: csv::Error| StlmError::format(&loss_path, e.to_string());

    let start = Instant::now();
    let first = tr.step;
    let spe = tr.steps_per_epoch();
    let every = cfg.train.checkpoint_every;
    let mut epoch_total = 0.0;
    let mut periodic = Vec::new();
    while !tr.is_done() {
        let r = tr.next_step()?;
        log.serialize(LossRow::from(&r)).map_err(csv_err)?;
        epoch_total += r.losses.l_total;
        if (r.step + 1) % spe == 0 {
            ctx.note(format!(
                "epoch {:4}  stage {:8} mean l_total {:.4}  {:.1}s",
                (r.step + 1) / spe,
                r.stage.name(),
                epoch_total / spe as f64,
                start.elapsed().as_secs_f64()
            ));
            epoch_total = 0.0;
        }
        if every > 0 && (r.step + 1) % every == 0 {
            let p = out.join(format!("checkpoint_step{:06}.stlm", r.step + 1));
            write_checkpoint(&p, &training_state(&tr))?;
            periodic.push(p);
        }
    }
    log.flush().at(&loss_path)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    write_checkpoint(&ckpt, &training_state(&tr))?;
    files.push(loss_path);
    files.extend(periodic);
    files.push(ckpt.clone());
    manifest.finish(&files)?;
    Ok(TrainSummary {
        steps: tr.step - first,
        final_step: tr.step,
        checkpoint: ckpt,
        seconds: start.elapsed().as_secs_f64(),
    })
}

// ---- eval ------------------------------------------------------------------

fn predict_all(pred: &Predictor, samples: &[&ImageSample], ctx: &RunContext) -> Result<Vec<Vec<f32>>> {
    use rayon::prelude::*;
    ctx.pool().install(|| {
        samples
            .par_iter()
            .map(|s| pred.predict(&s.image, Some(&s.mask)))
            .collect::<Result<Vec<_>>>()
    })
}

/// Metrics of one class plus its maps, in test-sample order.
pub fn evaluate_class(
    pred: &Predictor,
    ds: &Dataset,
    cfg: &Config,
    ctx: &RunContext,
) -> Result<(Metrics, Vec<Vec<f32>>, usize)> {
    let samples: Vec<&ImageSample> = ds.test.iter().map(|t| &t.sample).collect();
    if samples.is_empty() {
        return Err(StlmError::Core(stlm_core::Error::NoPositives));
    }
    if !samples.iter().any(|s| s.label()) {
        return Err(StlmError::Core(stlm_core::Error::NoPositives));
    }
    let maps = predict_all(pred, &samples, ctx)?;
    let wide: Vec<Vec<f64>> = maps.iter().map(|m| m.iter().map(|&v| v as f64).collect()).collect();
    let metrics = metrics_from_maps(&wide, &samples, &cfg.eval)?;
    let s0 = samples[0];
    let k = cfg.eval.top_k.unwrap_or_else(|| default_top_k(s0.mask.height(), s0.mask.width()));
    Ok((metrics, maps, k))
}

pub fn eval(cfg: &Config, checkpoint: &Path, data: &[PathBuf], out: &Path, ctx: &RunContext) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(StlmError::Usage("at least one --data directory is required".into()));
    }
    let pred = Predictor::load(checkpoint, cfg)?;
    let sets: Vec<LoadedDataset> = data.iter().map(|d| read_dataset(d)).collect::<Result<_>>()?;
    let mut results = Vec::new();
    for set in &sets {
        results.push(evaluate_class(&pred, &set.dataset, cfg, ctx)?);
    }

    let manifest = RunManifest::new("eval", &ctx.args, cfg.digest(), cfg.train.seed, out);
    create_dir(out)?;
    let mut files = Vec::new();
    let mut per_class = Vec::new();
    let mut images = Vec::new();
    for (set, (metrics, maps, k)) in sets.iter().zip(&results) {
        let ds = &set.dataset;
        let n_bad = ds.test.iter().filter(|t| t.sample.label()).count();
        per_class.push(ClassMetrics::new(&ds.class_name, metrics, *k, ds.test.len(), n_bad));
        for ((t, id), map) in ds.test.iter().zip(&set.test_ids).zip(maps) {
            let (h, w) = (t.sample.mask.height(), t.sample.mask.width());
            let wide: Vec<f64> = map.iter().map(|&v| v as f64).collect();
            images.push(ImageScore {
                class: ds.class_name.clone(),
                id: id.clone(),
                label: t.sample.label(),
                score: image_score(&wide, *k)?,
            });
            let base = out.join("maps").join(&ds.class_name).join(id);
            create_dir(base.parent().unwrap())?;
            let png = base.with_extension("png");
            let raw = base.with_extension("stlmmap");
            write_map_png(&png, h, w, map)?;
            write_map_raw(&raw, h, w, map)?;
            files.push(png);
            files.push(raw);
        }
    }
    let report = MetricsReport::from_classes(per_class, images, cfg.digest(), cfg.train.seed);
    let (json, csv) = (out.join(REPORT_JSON), out.join(REPORT_CSV));
    report.write_json(&json)?;
    report.write_csv(&csv)?;
    files.push(json);
    files.push(csv);
    files.push(write_config(out, cfg)?);
    manifest.finish(&files)?;
    Ok(report)
}

// ---- infer -----------------------------------------------------------------

#[derive(Debug, Serialize)]
struct InferRow {
    file: String,
    score: f64,
}

pub fn infer(cfg: &Config, checkpoint: &Path, inputs: &[PathBuf], out: &Path, ctx: &RunContext) -> Result<Vec<f64>> {
    let pred = Predictor::load(checkpoint, cfg)?;
    let mut files_in = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)
                .at(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            v.sort();
            files_in.extend(v);
        } else {
            files_in.push(p.clone());
        }
    }
    if files_in.is_empty() {
        return Err(StlmError::Usage("no input images".into()));
    }
    let images: Vec<Image> = files_in.iter().map(|p| read_image(p)).collect::<Result<_>>()?;
    let maps: Vec<Vec<f32>> = {
        use rayon::prelude::*;
        ctx.pool()
            .install(|| images.par_iter().map(|img| pred.predict(img, None)).collect::<Result<_>>())?
    };

    let manifest = RunManifest::new("infer", &ctx.args, cfg.digest(), cfg.train.seed, out);
    create_dir(out)?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for ((src, img), map) in files_in.iter().zip(&images).zip(&maps) {
        let (h, w) = (img.height(), img.width());
        let k = cfg.eval.top_k.unwrap_or_else(|| default_top_k(h, w));
        let wide: Vec<f64> = map.iter().map(|&v| v as f64).collect();
        let score = image_score(&wide, k)?;
        let stem = src.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (png, raw) = (out.join(format!("{stem}.png")), out.join(format!("{stem}.stlmmap")));
        write_map_png(&png, h, w, map)?;
        write_map_raw(&raw, h, w, map)?;
        files.push(png);
        files.push(raw);
        rows.push(InferRow {
            file: src.display().to_string(),
            score,
        });
    }
    let scores = out.join("scores.csv");
    write_rows(&scores, &rows)?;
    files.push(scores);
    manifest.finish(&files)?;
    Ok(rows.into_iter().map(|r| r.score).collect())
}

// ---- ablate ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Axis {
    DecoderSharing,
    FaInputMode,
    StageMode,
    UseTeacher,
    UsePlainStream,
    LayersUsed,
    AnomalyProb,
    DistillMode,
    Generator,
    FaWidth,
}

impl Axis {
    /// Variant labels and configurations, the baseline setting first.
    pub fn variants(self, base: &Config) -> Vec<(String, Config)> {
        let with = |label: &str, f: &dyn Fn(&mut Config)| {
            let mut c = base.clone();
            f(&mut c);
            (label.to_string(), c)
        };
        match self {
            Axis::DecoderSharing => vec![
                with("shared", &|c| c.model.shared_decoder = true),
                with("separate", &|c| c.model.shared_decoder = false),
            ],
            Axis::FaInputMode => [
                ("product", FaInputMode::Product),
                ("cosine", FaInputMode::Cosine),
                ("residual_concat", FaInputMode::ResidualConcat),
                ("concat", FaInputMode::Concat),
            ]
            .into_iter()
            .map(|(l, m)| with(l, &|c| c.model.fa_input_mode = m))
            .collect(),
            Axis::StageMode => vec![
                with("one_stage", &|c| c.train.stage_mode = StageMode::OneStage),
                with("two_stage", &|c| c.train.stage_mode = StageMode::TwoStage),
            ],
            Axis::UseTeacher => vec![
                with("true", &|c| c.model.use_teacher = true),
                with("false", &|c| c.model.use_teacher = false),
            ],
            Axis::UsePlainStream => vec![
                with("true", &|c| c.model.use_plain_stream = true),
                with("false", &|c| c.model.use_plain_stream = false),
            ],
            Axis::LayersUsed => [
                ("both", LayerSet::BOTH),
                ("first", LayerSet { first: true, second: false }),
                ("second", LayerSet { first: false, second: true }),
            ]
            .into_iter()
            .map(|(l, s)| with(l, &|c| c.model.layers_used = s))
            .collect(),
            Axis::AnomalyProb => [0.25, 0.5, 0.75, 1.0]
                .into_iter()
                .map(|p| with(&p.to_string(), &|c| c.anomaly.activation_prob = p))
                .collect(),
            Axis::DistillMode => vec![
                with("feature", &|c| c.model.distill_mode = stlm_core::model::DistillMode::Feature),
                with("logit", &|c| c.model.distill_mode = stlm_core::model::DistillMode::Logit),
            ],
            Axis::Generator => [
                ("perlin_blend", Generator::PerlinBlend),
                ("cutpaste_patch", Generator::CutPastePatch),
                ("cutpaste_scar", Generator::CutPasteScar),
            ]
            .into_iter()
            .map(|(l, g)| with(l, &|c| c.anomaly.generator = g))
            .collect(),
            Axis::FaWidth => [128, 256]
                .into_iter()
                .map(|w| with(&w.to_string(), &|c| c.model.fa_channels = w))
                .collect(),
        }
    }

    pub fn name(self) -> String {
        clap::ValueEnum::to_possible_value(&self).expect("named").get_name().to_string()
    }
}

/// Parameters read by teacher-free inference (normalization buffers excluded).
pub fn inference_params(model: &Model<f32>) -> Result<usize> {
    let c = &model.config;
    let probe = Tensor::zeros(&[c.channels, c.image_size, c.image_size]);
    let (_, names) = model.anomaly_map_traced(&probe)?;
    Ok(names
        .iter()
        .filter(|n| !is_buffer(n))
        .filter_map(|n| model.params.get(n))
        .map(|t| t.numel())
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub variant: String,
    pub seeds: usize,
    pub image_auroc: f64,
    pub pixel_auroc: f64,
    pub pro: f64,
    pub ap: f64,
    pub fnr: f64,
    pub params: usize,
    pub wall_time_s: f64,
}

/// Train-then-evaluate on an in-memory dataset; returns the metrics, the
/// inference parameter count and the final trainer.
pub fn run_pipeline(cfg: &Config, ds: &Dataset, ctx: &RunContext) -> Result<(Metrics, usize, Trainer)> {
    let mut tr = trainer(cfg, ds)?;
    while !tr.is_done() {
        tr.next_step()?;
    }
    let pred = Predictor::Model(Box::new(inference_model(&tr.model)));
    let (metrics, _, _) = evaluate_class(&pred, ds, cfg, ctx)?;
    let params = match &pred {
        Predictor::Model(m) => inference_params(m)?,
        Predictor::Oracle => 0,
    };
    Ok((metrics, params, tr))
}

/// The weights inference needs: the teacher is dropped unless it stands in
/// for the plain stream.
pub fn inference_model(model: &Model<f32>) -> Model<f32> {
    if model.config.use_plain_stream {
        model.without_teacher()
    } else {
        model.clone()
    }
}

pub fn ablate(
    cfg: &Config,
    axis: Axis,
    seeds: &[u64],
    data: Option<&Path>,
    out: &Path,
    ctx: &RunContext,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(StlmError::Usage("at least one seed is required".into()));
    }
    let variants = axis.variants(cfg);
    for (label, c) in &variants {
        c.validate().map_err(|e| StlmError::Usage(format!("variant {label}: {e}")))?;
    }
    let on_disk = data.map(read_dataset).transpose()?.map(|d| d.dataset);
    let datasets: Vec<Dataset> = seeds
        .iter()
        .map(|&s| match &on_disk {
            Some(d) => Ok(d.clone()),
            None => Ok(make_synthetic_dataset(&stlm_core::synth::DatasetSpec {
                seed: s,
                ..cfg.data.clone()
            })?),
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..seeds.len()).map(move |s| (v, s))).collect();
    let inner = RunContext { jobs: 1, ..ctx.clone() };
    let results: Vec<(Metrics, usize, f64)> = {
        use rayon::prelude::*;
        ctx.pool().install(|| {
            jobs.par_iter()
                .map(|&(v, s)| {
                    let mut c = variants[v].1.clone();
                    c.train.seed = seeds[s];
                    let t0 = Instant::now();
                    let (m, params, _) = run_pipeline(&c, &datasets[s], &inner)?;
                    let secs = t0.elapsed().as_secs_f64();
                    inner.note(format!("{} {} seed {}: pixel AUROC {:.4}", axis.name(), variants[v].0, seeds[s], m.pixel_auroc));
                    Ok((m, params, secs))
                })
                .collect::<Result<Vec<_>>>()
        })?
    };

    let n = seeds.len() as f64;
    let rows: Vec<AblationRow> = variants
        .iter()
        .enumerate()
        .map(|(v, (label, _))| {
            let mine: Vec<&(Metrics, usize, f64)> =
                jobs.iter().zip(&results).filter(|(j, _)| j.0 == v).map(|(_, r)| r).collect();
            let mean = |f: fn(&Metrics) -> f64| mine.iter().map(|r| f(&r.0)).sum::<f64>() / n;
            AblationRow {
                axis: axis.name(),
                variant: label.clone(),
                seeds: seeds.len(),
                image_auroc: mean(|m| m.image_auroc),
                pixel_auroc: mean(|m| m.pixel_auroc),
                pro: mean(|m| m.pro),
                ap: mean(|m| m.ap),
                fnr: mean(|m| m.fnr),
                params: mine[0].1,
                wall_time_s: mine.iter().map(|r| r.2).sum::<f64>() / n,
            }
        })
        .collect();

    let manifest = RunManifest::new("ablate", &ctx.args, cfg.digest(), seeds[0], out);
    create_dir(out)?;
    let table = out.join(ABLATION_FILE);
    write_rows(&table, &rows)?;
    let files = vec![table, write_config(out, cfg)?];
    manifest.finish(&files)?;
    Ok(rows)
}

// ---- gradcheck -------------------------------------------------------------

/// Resolves a primitive name to the static string the fault hook expects.
pub fn fault_name(name: &str) -> Result<&'static str> {
    PRIMITIVES
        .iter()
        .copied()
        .find(|p| *p == name)
        .ok_or_else(|| StlmError::Usage(format!("unknown primitive `{name}`; one of {}", PRIMITIVES.join(", "))))
}

pub fn gradcheck(seeds: usize, fault: Option<&'static str>, ctx: &RunContext) -> Result<Vec<SuiteEntry>> {
    let opts = SuiteOptions {
        seeds,
        fault,
        ..SuiteOptions::default()
    };
    let entries = full_suite(&opts)?;
    for e in &entries {
        println!(
            "{:4}  {:16} seeds {:3}  max rel err {:.3e}  tol {:.0e}",
            if e.passed() { "ok" } else { "FAIL" },
            e.name,
            e.seeds,
            e.max_rel_err,
            e.rel_tol
        );
    }
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    ctx.note(format!("{} checks, {} failed", entries.len(), failed.len()));
    if failed.is_empty() {
        Ok(entries)
    } else {
        Err(StlmError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))))
    }
}
