//! Joint optimization of the two student streams, decoder and FA head.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::losses::{cosine_distill, focal, l1, logit_distill, sum_all};
use crate::model::{
    fa_forward_batch, fa_input, is_buffer, is_fa, is_teacher, is_tlm, logit_map, Binder, DistillMode, Model, ModelConfig,
    NormStats, Pyramid, StreamKind,
};
use crate::real::Real;
use crate::optim::{clip_global_norm, Adam, GradMap, Sgd};
use crate::rng::{derive, stream};
use crate::synth::{sample_training_pair, AnomalySpec, Image, ImageSample, PerlinParams, SourceBank, TrainingPair};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum StageMode {
    OneStage,
    TwoStage,
}

/// What a step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Every loss, every trainable parameter.
    Joint,
    /// Distillation losses into the student streams only.
    Distill,
    /// Focal + L1 into the FA head only, students frozen.
    Segment,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::Distill => "distill",
            Stage::Segment => "segment",
        }
    }

    fn trains(self, name: &str) -> bool {
        match self {
            _ if is_buffer(name) => false,
            Stage::Joint => !is_teacher(name),
            Stage::Distill => is_tlm(name),
            Stage::Segment => is_fa(name),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub adam_lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stage_mode: StageMode,
    /// Steps between periodic checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub focal_gamma: f64,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam_lr: 5e-4,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            sgd_lr: 1e-2,
            sgd_momentum: 0.9,
            epochs: 20,
            batch_size: 2,
            seed: 0,
            stage_mode: StageMode::OneStage,
            checkpoint_every: 0,
            focal_gamma: 4.0,
            clip_norm: Some(10.0),
        }
    }
}

fn bad(key: &str, reason: &str) -> Error {
    Error::InvalidConfig {
        key: format!("train.{key}"),
        reason: reason.to_string(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.adam_lr) {
            return Err(bad("adam_lr", "must be > 0"));
        }
        if !positive(self.sgd_lr) {
            return Err(bad("sgd_lr", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(bad("sgd_momentum", "must be in [0, 1)"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(bad("adam_betas", "must be in [0, 1)"));
        }
        if !positive(self.adam_eps) {
            return Err(bad("adam_eps", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be ≥ 1"));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(bad("focal_gamma", "must be ≥ 0"));
        }
        if let Some(c) = self.clip_norm {
            if !positive(c) {
                return Err(bad("clip_norm", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Batch-mean loss components of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub l_p: f64,
    pub l_de: f64,
    pub l_focal: f64,
    pub l_l1: f64,
    pub l_total: f64,
}

impl LossBundle {
    pub fn from_parts(l_p: f64, l_de: f64, l_focal: f64, l_l1: f64) -> Self {
        Self {
            l_p,
            l_de,
            l_focal,
            l_l1,
            l_total: l_p + l_de + l_focal + l_l1,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_p, self.l_de, self.l_focal, self.l_l1, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    pub losses: LossBundle,
    pub grad_norm: f64,
}

const STEP_TAG: u64 = 0x57e9;
const EPOCH_TAG: u64 = 0xe90c;

/// One training pair with the frozen-teacher tokens of both its images.
#[derive(Clone, Debug)]
pub struct StepInput<T> {
    pub pair: TrainingPair,
    pub clean_tokens: Option<Tensor<T>>,
    pub corrupted_tokens: Option<Tensor<T>>,
}

fn needs_teacher(cfg: &ModelConfig, stage: Stage) -> bool {
    !cfg.use_plain_stream || (cfg.use_teacher && stage != Stage::Segment)
}

/// Loss nodes of one step on a tape, before the optimizer runs.
pub struct StepGraph<T> {
    pub l_p: Option<NodeId>,
    pub l_de: Option<NodeId>,
    pub l_focal: Option<NodeId>,
    pub l_l1: Option<NodeId>,
    pub total: NodeId,
    /// Batch statistics of the FA norms (empty when the head did not run).
    pub norm_stats: Vec<NormStats<T>>,
}

/// Training state: the model, both optimizers, the step counter and a
/// cache of frozen-teacher tokens for the clean training images.
pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub anomaly: AnomalySpec,
    pub perlin: PerlinParams,
    pub bank: SourceBank,
    pub adam: Adam<f32>,
    pub sgd: Sgd<f32>,
    pub step: usize,
    images: Vec<ImageSample>,
    teacher_cache: Vec<Option<Tensor<f32>>>,
}

impl Trainer {
    pub fn new(
        model: Model<f32>,
        config: TrainConfig,
        anomaly: AnomalySpec,
        perlin: PerlinParams,
        bank: SourceBank,
        images: Vec<Image>,
    ) -> Result<Self> {
        config.validate()?;
        anomaly.validate()?;
        let Some(first) = images.first() else {
            return Err(Error::InvalidArgument("training set is empty".into()));
        };
        perlin.validate(first.height(), first.width())?;
        let images: Vec<ImageSample> = images.into_iter().map(ImageSample::normal).collect();
        let mut adam = Adam::new(config.adam_lr, config.adam_eps);
        (adam.beta1, adam.beta2) = config.adam_betas;
        let sgd = Sgd::new(config.sgd_lr, config.sgd_momentum);
        let n = images.len();
        Ok(Self {
            model,
            config,
            anomaly,
            perlin,
            bank,
            adam,
            sgd,
            step: 0,
            images,
            teacher_cache: (0..n).map(|_| None).collect(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.images.len().div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch() * self.config.epochs
    }

    /// Stage of a given step; two-stage runs split the epochs in half.
    pub fn stage_at(&self, step: usize) -> Stage {
        match self.config.stage_mode {
            StageMode::OneStage => Stage::Joint,
            StageMode::TwoStage => {
                let first = self.config.epochs.div_ceil(2) * self.steps_per_epoch();
                if step < first {
                    Stage::Distill
                } else {
                    Stage::Segment
                }
            }
        }
    }

    /// Training-image indices of a step; each epoch is a seeded permutation.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (step / spe, step % spe);
        let mut order: Vec<usize> = (0..self.images.len()).collect();
        order.shuffle(&mut stream(derive(self.config.seed, epoch as u64), EPOCH_TAG));
        let b = self.config.batch_size;
        order[pos * b..((pos + 1) * b).min(order.len())].to_vec()
    }

    pub fn batch_seed(&self, step: usize) -> u64 {
        derive(derive(self.config.seed, STEP_TAG), step as u64)
    }

    fn teacher_tokens(&mut self, index: usize) -> Result<Tensor<f32>> {
        if let Some(t) = &self.teacher_cache[index] {
            return Ok(t.clone());
        }
        let t = self.model.teacher_tokens(&self.images[index].image.to_tensor())?;
        self.teacher_cache[index] = Some(t.clone());
        Ok(t)
    }

    /// Draws the pairs of a batch and attaches the frozen-teacher tokens
    /// the stage needs.
    pub fn step_inputs(&mut self, stage: Stage, indices: &[usize], batch_seed: u64) -> Result<Vec<StepInput<f32>>> {
        let needs_teacher = needs_teacher(&self.model.config, stage);
        let mut out = Vec::with_capacity(indices.len());
        for (s, &i) in indices.iter().enumerate() {
            let pair = sample_training_pair(
                &self.images[i],
                &self.anomaly,
                &self.perlin,
                &self.bank,
                derive(batch_seed, s as u64),
            )?;
            let (clean_tokens, corrupted_tokens) = if needs_teacher {
                let clean = self.teacher_tokens(i)?;
                let corrupted = if pair.activated() {
                    self.model.teacher_tokens(&pair.corrupted.image.to_tensor())?
                } else {
                    clean.clone()
                };
                (Some(clean), Some(corrupted))
            } else {
                (None, None)
            };
            out.push(StepInput {
                pair,
                clean_tokens,
                corrupted_tokens,
            });
        }
        Ok(out)
    }

    /// Runs one optimization step on explicit batch indices.
    pub fn train_step(&mut self, stage: Stage, indices: &[usize], batch_seed: u64) -> Result<StepRecord> {
        let inputs = self.step_inputs(stage, indices, batch_seed)?;
        let mut tape = Tape::new();
        let trains = move |n: &str| stage.trains(n);
        let mut binder = Binder::new(&self.model.params, &trains);
        let step = self.step as u64;
        let graph = step_graph(&mut tape, &mut binder, &self.model, stage, &inputs, self.config.focal_gamma)
            .map_err(|e| match e {
                Error::NonFinite { kind } => Error::NonFiniteLoss {
                    step,
                    batch_seed,
                    detail: format!("non-finite {kind} output"),
                },
                other => other,
            })?;
        let bound = binder.bound().clone();
        let val = |id: Option<NodeId>| id.map_or(0.0, |id| tape.value(id).item() as f64);
        let losses = LossBundle::from_parts(val(graph.l_p), val(graph.l_de), val(graph.l_focal), val(graph.l_l1));
        if !losses.is_finite() || !tape.value(graph.total).all_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step as u64,
                batch_seed,
                detail: format!("{losses:?}"),
            });
        }
        let mut grads = tape.backward(graph.total)?;
        let mut map: GradMap<f32> = BTreeMap::new();
        for (name, id) in bound {
            if !tape.requires_grad(id) {
                continue;
            }
            if let Some(g) = grads.take(id) {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(name));
                }
                map.insert(name, g);
            }
        }
        let grad_norm = match self.config.clip_norm {
            Some(c) => clip_global_norm(&mut map, c),
            None => crate::optim::global_norm(&map),
        };
        let (fa, tlm): (GradMap<f32>, GradMap<f32>) = map.into_iter().partition(|(k, _)| is_fa(k));
        if !tlm.is_empty() {
            self.adam.step(&mut self.model.params, &tlm)?;
        }
        if !fa.is_empty() {
            self.sgd.step(&mut self.model.params, &fa)?;
        }
        if stage != Stage::Distill {
            self.model.update_running_stats(&graph.norm_stats)?;
        }
        let record = StepRecord {
            step: self.step,
            stage,
            losses,
            grad_norm,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs the next scheduled step.
    pub fn next_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let stage = self.stage_at(step);
        let indices = self.batch_indices(step);
        let seed = self.batch_seed(step);
        self.train_step(stage, &indices, seed)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Trains to the end of the schedule, calling `on_step` after each step.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<Vec<StepRecord>> {
        let mut log = Vec::new();
        while !self.is_done() {
            let r = self.next_step()?;
            on_step(self, &r)?;
            log.push(r);
        }
        Ok(log)
    }
}

/// Builds every loss of one step. Teacher targets: the plain stream matches
/// the teacher on the corrupted image and the denoising stream matches the
/// teacher on the clean image (swapped under `swap_teacher_targets`).
pub fn step_graph<T: Real>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    model: &Model<T>,
    stage: Stage,
    inputs: &[StepInput<T>],
    focal_gamma: f64,
) -> Result<StepGraph<T>> {
    let cfg = &model.config;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let distill = cfg.use_teacher && stage != Stage::Segment;
    let segment = stage != Stage::Distill;
    let sel: Vec<usize> = cfg.layers_used.indices().collect();
    let pick = |p: &Pyramid| sel.iter().map(|&k| p.layers[k]).collect::<Vec<_>>();
    let pair_loss = |tape: &mut Tape<T>, t: &Pyramid, st: &Pyramid| -> Result<NodeId> {
        match cfg.distill_mode {
            DistillMode::Feature => cosine_distill(tape, &pick(t), &pick(st)),
            DistillMode::Logit => {
                let tm = logit_map(tape, cfg, t)?;
                let sm = logit_map(tape, cfg, st)?;
                logit_distill(tape, tm, sm, focal_gamma)
            }
        }
    };

    let (mut lp, mut lde, mut lf, mut ll) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut fa_inputs = Vec::new();
    for input in inputs {
        let pair = &input.pair;
        let x = tape.constant(pair.corrupted.image.to_tensor().cast());
        let teachers = match (&input.clean_tokens, &input.corrupted_tokens) {
            (Some(tc), Some(tx)) => {
                let tc_id = tape.constant(tc.clone());
                let t_clean = model.teacher_head(tape, binder, tc_id)?;
                let t_cor = if pair.activated() {
                    let tx_id = tape.constant(tx.clone());
                    model.teacher_head(tape, binder, tx_id)?
                } else {
                    t_clean.clone()
                };
                Some((t_clean, t_cor))
            }
            _ => None,
        };
        let missing = || Error::InvalidArgument("teacher tokens required by this configuration".into());
        let sp: Pyramid = if cfg.use_plain_stream {
            model.stream(tape, binder, StreamKind::Plain, x)?
        } else {
            teachers.as_ref().ok_or_else(missing)?.1.clone()
        };
        let sd = model.stream(tape, binder, StreamKind::Denoising, x)?;
        if distill {
            let (t_clean, t_cor) = teachers.as_ref().ok_or_else(missing)?;
            let (tp, td) = if cfg.swap_teacher_targets {
                (t_clean, t_cor)
            } else {
                (t_cor, t_clean)
            };
            if cfg.use_plain_stream {
                lp.push(pair_loss(tape, tp, &sp)?);
            }
            lde.push(pair_loss(tape, td, &sd)?);
        }
        if segment {
            fa_inputs.push(fa_input(tape, cfg, &sp.layers, &sd.layers)?);
        }
    }
    let mut stats = Vec::new();
    if segment {
        let maps = fa_forward_batch(tape, binder, cfg, &fa_inputs, true, &mut stats)?;
        for (input, &mo) in inputs.iter().zip(&maps) {
            let m = tape.constant(input.pair.corrupted.mask.to_tensor().cast());
            lf.push(focal(tape, m, mo, focal_gamma)?);
            ll.push(l1(tape, m, mo)?);
        }
    }
    let inv = 1.0 / inputs.len() as f64;
    let mut mean = |terms: &[NodeId]| -> Result<Option<NodeId>> {
        if terms.is_empty() {
            return Ok(None);
        }
        let s = sum_all(tape, terms)?;
        tape.scale(s, inv).map(Some)
    };
    let (l_p, l_de, l_focal, l_l1) = (mean(&lp)?, mean(&lde)?, mean(&lf)?, mean(&ll)?);
    let parts: Vec<NodeId> = [l_p, l_de, l_focal, l_l1].into_iter().flatten().collect();
    let total = sum_all(tape, &parts)?;
    Ok(StepGraph {
        l_p,
        l_de,
        l_focal,
        l_l1,
        total,
        norm_stats: stats,
    })
}
