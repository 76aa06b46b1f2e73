//! Frozen teacher, plain and denoising student streams, the two-way
//! decoder and the feature-aggregation segmentation head.
//!
//! Parameters live in a [`ParamStore`] under dotted names
//! `"{component}.{block}.{param}"`. Components: `teacher` (frozen),
//! `teacher_proj` (trained projection to decoder width), `plain`,
//! `denoising`, `decoder` (or `decoder_plain` / `decoder_denoising` when
//! not shared) and `fa`.

mod decoder;
mod encoder;
mod fa;
mod layers;
mod similarity;
mod stlm;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{derive, stream, Fnv64};
use crate::tensor::{NodeId, Tape, Tensor};

pub use decoder::decode;
pub use encoder::encode;
pub use fa::{fa_forward, fa_forward_batch, NormStats, BN_EPS, BN_MOMENTUM};
pub use similarity::{cosine_maps, fa_input, similarity_maps, SimilarityMaps};
pub use stlm::{logit_map, Pyramid, PyramidValues, StreamKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum FaInputMode {
    Product,
    Cosine,
    ResidualConcat,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum DistillMode {
    Feature,
    Logit,
}

/// Which decoder layers feed the losses and the FA head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct LayerSet {
    pub first: bool,
    pub second: bool,
}

impl Default for LayerSet {
    fn default() -> Self {
        Self::BOTH
    }
}

impl LayerSet {
    pub const BOTH: LayerSet = LayerSet {
        first: true,
        second: true,
    };

    /// Zero-based indices of the selected layers.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        [self.first, self.second]
            .into_iter()
            .enumerate()
            .filter_map(|(i, on)| on.then_some(i))
    }

    pub fn len(self) -> usize {
        self.first as usize + self.second as usize
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub student_dim: usize,
    pub teacher_dim: usize,
    pub encoder_depth: usize,
    pub teacher_depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub decoder_layers: usize,
    pub query_tokens: usize,
    pub fa_channels: usize,
    pub fa_dilations: [usize; 3],
    pub shared_decoder: bool,
    pub use_plain_stream: bool,
    pub use_teacher: bool,
    pub fa_input_mode: FaInputMode,
    pub distill_mode: DistillMode,
    pub layers_used: LayerSet,
    /// Debug wiring: plain stream matched to teacher(clean) and denoising
    /// stream to teacher(corrupted).
    pub swap_teacher_targets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 3,
            patch_size: 8,
            student_dim: 64,
            teacher_dim: 128,
            encoder_depth: 4,
            teacher_depth: 6,
            heads: 4,
            mlp_ratio: 2,
            decoder_layers: 2,
            query_tokens: 4,
            fa_channels: 128,
            fa_dilations: [1, 1, 3],
            shared_decoder: true,
            use_plain_stream: true,
            use_teacher: true,
            fa_input_mode: FaInputMode::Product,
            distill_mode: DistillMode::Feature,
            layers_used: LayerSet::BOTH,
            swap_teacher_targets: false,
        }
    }
}

fn bad(key: &str, reason: &str) -> Error {
    Error::InvalidConfig {
        key: format!("model.{key}"),
        reason: reason.to_string(),
    }
}

impl ModelConfig {
    /// A configuration small enough for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            student_dim: 8,
            teacher_dim: 16,
            encoder_depth: 1,
            teacher_depth: 1,
            heads: 2,
            query_tokens: 2,
            fa_channels: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decoder_layers != 2 {
            return Err(bad("decoder_layers", "the decoder has exactly two layers"));
        }
        if self.fa_dilations.iter().any(|&d| d < 1) {
            return Err(bad("fa_dilations", "dilations must be ≥ 1"));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(bad("patch_size", "must divide the image extent"));
        }
        if self.teacher_dim < self.student_dim {
            return Err(bad("teacher_dim", "must be ≥ student_dim"));
        }
        if self.heads == 0 || self.student_dim % self.heads != 0 || self.teacher_dim % self.heads != 0 {
            return Err(bad("heads", "must divide student_dim and teacher_dim"));
        }
        if self.layers_used.is_empty() {
            return Err(bad("layers_used", "select at least one layer"));
        }
        for (key, v) in [
            ("channels", self.channels),
            ("student_dim", self.student_dim),
            ("encoder_depth", self.encoder_depth),
            ("mlp_ratio", self.mlp_ratio),
            ("query_tokens", self.query_tokens),
            ("fa_channels", self.fa_channels),
        ] {
            if v == 0 {
                return Err(bad(key, "must be ≥ 1"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Channel count of the FA input for the configured mode.
    pub fn fa_in_channels(&self) -> usize {
        let l = self.layers_used.len();
        match self.fa_input_mode {
            FaInputMode::Product | FaInputMode::Cosine => l,
            FaInputMode::ResidualConcat => l * (1 + self.student_dim),
            FaInputMode::Concat => 2 * l * self.student_dim,
        }
    }

    pub fn decoder_name(&self, stream: StreamKind) -> &'static str {
        match (self.shared_decoder, stream) {
            (_, StreamKind::Teacher) => "teacher.decoder",
            (true, _) => "decoder",
            (false, StreamKind::Plain) => "decoder_plain",
            (false, StreamKind::Denoising) => "decoder_denoising",
        }
    }
}

/// Named parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Removes every tensor whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.tensors.len();
        self.tensors.retain(|k, _| !k.starts_with(prefix));
        before - self.tensors.len()
    }

    pub fn numel(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Digest of names, shapes and values under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = Fnv64::default();
        for (k, t) in self.tensors.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.write(k.as_bytes());
            for &d in t.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.write(&v.to_f64().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }
}

/// Inserts parameters into a tape on first use and remembers their nodes.
pub struct Binder<'a, T> {
    store: &'a ParamStore<T>,
    trainable: &'a dyn Fn(&str) -> bool,
    bound: BTreeMap<String, NodeId>,
}

impl<'a, T: Real> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>, trainable: &'a dyn Fn(&str) -> bool) -> Self {
        Self {
            store,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// A binder whose listed parameters are already on the tape.
    pub fn with_nodes(
        store: &'a ParamStore<T>,
        trainable: &'a dyn Fn(&str) -> bool,
        nodes: BTreeMap<String, NodeId>,
    ) -> Self {
        Self {
            store,
            trainable,
            bound: nodes,
        }
    }

    pub fn param(&mut self, tape: &mut Tape<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?
            .clone();
        let id = if (self.trainable)(name) {
            tape.variable(t)
        } else {
            tape.constant(t)
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Every parameter read so far, with its tape node.
    pub fn bound(&self) -> &BTreeMap<String, NodeId> {
        &self.bound
    }
}

pub fn frozen(_: &str) -> bool {
    false
}

/// Seeded initializer; each tensor's draw depends only on `(seed, name)`.
struct Init<'a, T> {
    seed: u64,
    store: &'a mut ParamStore<T>,
}

impl<'a, T: Real> Init<'a, T> {
    fn rng(&self, name: &str) -> crate::rng::Rng {
        let mut h = Fnv64::default();
        h.write(name.as_bytes());
        stream(derive(self.seed, h.finish()), 0x1417)
    }

    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) {
        let mut rng = self.rng(&name);
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)));
        self.store.insert(name, t);
    }

    fn filled(&mut self, name: String, shape: &[usize], v: f64) {
        self.store.insert(name, Tensor::full(shape, T::from_f64(v)));
    }

    /// Weight `(din, dout)` and zero bias `(dout)`.
    fn linear(&mut self, prefix: &str, din: usize, dout: usize) {
        let bound = libm::sqrt(6.0 / (din + dout) as f64);
        self.uniform(format!("{prefix}.weight"), &[din, dout], bound);
        self.filled(format!("{prefix}.bias"), &[dout], 0.0);
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.filled(format!("{prefix}.gamma"), &[d], 1.0);
        self.filled(format!("{prefix}.beta"), &[d], 0.0);
    }

    fn batch_norm(&mut self, prefix: &str, d: usize) {
        self.norm(prefix, d);
        self.filled(format!("{prefix}.running_mean"), &[d], 0.0);
        self.filled(format!("{prefix}.running_var"), &[d], 1.0);
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        let bound = libm::sqrt(6.0 / (cin * k * k) as f64);
        self.uniform(format!("{prefix}.weight"), &[cout, cin, k, k], bound);
        self.filled(format!("{prefix}.bias"), &[cout], 0.0);
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }

    fn encoder(&mut self, prefix: &str, cfg: &ModelConfig, dim: usize, depth: usize) {
        let p = cfg.patch_size;
        self.conv(&format!("{prefix}.patch"), cfg.channels, dim, p);
        self.uniform(format!("{prefix}.pos.embed"), &[cfg.tokens(), dim], 0.1);
        for b in 0..depth {
            let blk = format!("{prefix}.block{b}");
            self.norm(&format!("{blk}.norm1"), dim);
            self.attention(&format!("{blk}.attn"), dim);
            self.norm(&format!("{blk}.norm2"), dim);
            self.linear(&format!("{blk}.mlp1"), dim, dim * cfg.mlp_ratio);
            self.linear(&format!("{blk}.mlp2"), dim * cfg.mlp_ratio, dim);
        }
        self.norm(&format!("{prefix}.final.norm"), dim);
    }

    fn decoder(&mut self, prefix: &str, cfg: &ModelConfig) {
        let d = cfg.student_dim;
        self.uniform(format!("{prefix}.queries.embed"), &[cfg.query_tokens, d], 1.0);
        for b in 0..cfg.decoder_layers {
            let blk = format!("{prefix}.block{b}");
            self.attention(&format!("{blk}.self_attn"), d);
            self.norm(&format!("{blk}.norm1"), d);
            self.attention(&format!("{blk}.to_image"), d);
            self.norm(&format!("{blk}.norm2"), d);
            self.linear(&format!("{blk}.mlp1"), d, d * cfg.mlp_ratio);
            self.linear(&format!("{blk}.mlp2"), d * cfg.mlp_ratio, d);
            self.norm(&format!("{blk}.norm3"), d);
            self.attention(&format!("{blk}.to_tokens"), d);
            self.norm(&format!("{blk}.norm4"), d);
        }
    }

    fn fa(&mut self, cfg: &ModelConfig) {
        let c = cfg.fa_channels;
        self.conv("fa.stem.conv", cfg.fa_in_channels(), c, 3);
        self.batch_norm("fa.stem.norm", c);
        for r in 0..2 {
            self.conv(&format!("fa.res{r}.conv"), c, c, 3);
            self.batch_norm(&format!("fa.res{r}.norm"), c);
        }
        for (i, _) in cfg.fa_dilations.iter().enumerate() {
            self.conv(&format!("fa.aspp{i}.conv"), c, c, 3);
            self.batch_norm(&format!("fa.aspp{i}.norm"), c);
        }
        self.conv("fa.fuse.conv", 3 * c, c, 1);
        self.batch_norm("fa.fuse.norm", c);
        self.conv("fa.head.conv", c, 1, 1);
    }
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            seed,
            store: &mut params,
        };
        let needs_teacher = config.use_teacher || !config.use_plain_stream;
        if needs_teacher {
            init.encoder("teacher.encoder", &config, config.teacher_dim, config.teacher_depth);
            init.linear("teacher_proj.linear", config.teacher_dim, config.student_dim);
            init.decoder("teacher.decoder", &config);
        }
        if config.use_plain_stream {
            init.encoder("plain.encoder", &config, config.student_dim, config.encoder_depth);
        }
        init.encoder("denoising.encoder", &config, config.student_dim, config.encoder_depth);
        if config.shared_decoder {
            init.decoder("decoder", &config);
        } else {
            if config.use_plain_stream {
                init.decoder("decoder_plain", &config);
            }
            init.decoder("decoder_denoising", &config);
        }
        init.fa(&config);
        Ok(Self { config, params })
    }

    /// Strips everything only the teacher path needs, as for deployment.
    pub fn without_teacher(&self) -> Self {
        let mut m = self.clone();
        m.params.remove_prefix("teacher");
        m
    }

    /// Trainable parameter count (excludes the frozen teacher).
    pub fn trainable_params(&self) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| !is_teacher(k) && !is_buffer(k))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[NormStats<T>]) -> Result<()> {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::ONE - m;
        for s in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let name = format!("{}.{suffix}", s.prefix);
                let t = self
                    .params
                    .get_mut(&name)
                    .ok_or_else(|| Error::MissingParameter(name.clone()))?;
                for (r, &b) in t.data_mut().iter_mut().zip(batch.data()) {
                    *r = keep * *r + m * b;
                }
            }
        }
        Ok(())
    }

    pub fn total_params(&self) -> usize {
        self.params.numel("")
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

pub fn is_teacher(name: &str) -> bool {
    name.starts_with("teacher.")
}

/// Running normalization statistics: stored with the weights, never trained.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

pub fn is_fa(name: &str) -> bool {
    name.starts_with("fa.")
}

/// Student encoders, decoders and the teacher projection.
pub fn is_tlm(name: &str) -> bool {
    !is_teacher(name) && !is_fa(name)
}

pub fn names_with_prefix<T: Real>(store: &ParamStore<T>, prefix: &str) -> Vec<String> {
    store.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, _)| k.clone()).collect()
}
