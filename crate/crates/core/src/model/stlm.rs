use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{decode, encode, fa_forward, fa_input, frozen, Binder, Model, ModelConfig};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Teacher,
    Plain,
    Denoising,
}

/// A stream's decoder outputs on a tape.
#[derive(Clone, Debug)]
pub struct Pyramid {
    /// Image tokens `(N, D)` after each decoder block.
    pub layers: Vec<NodeId>,
    /// Final query tokens `(Q, D)`.
    pub queries: NodeId,
}

/// Detached decoder outputs, e.g. cached teacher features.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidValues<T> {
    pub layers: Vec<Tensor<T>>,
    pub queries: Tensor<T>,
}

impl<T: Real> PyramidValues<T> {
    pub fn on_tape(&self, tape: &mut Tape<T>) -> Pyramid {
        Pyramid {
            layers: self.layers.iter().map(|t| tape.constant(t.clone())).collect(),
            queries: tape.constant(self.queries.clone()),
        }
    }

    pub fn read(tape: &Tape<T>, p: &Pyramid) -> Self {
        Self {
            layers: p.layers.iter().map(|&id| tape.value(id).clone()).collect(),
            queries: tape.value(p.queries).clone(),
        }
    }
}

impl<T: Real> Model<T> {
    /// Runs one stream (encoder, plus projection for the teacher, then decoder).
    pub fn stream(
        &self,
        tape: &mut Tape<T>,
        binder: &mut Binder<'_, T>,
        kind: StreamKind,
        image: NodeId,
    ) -> Result<Pyramid> {
        let cfg = &self.config;
        let tokens = match kind {
            StreamKind::Teacher => {
                let t = encode(tape, binder, cfg, "teacher.encoder", cfg.teacher_depth, image)?;
                return self.teacher_head(tape, binder, t);
            }
            StreamKind::Plain => encode(tape, binder, cfg, "plain.encoder", cfg.encoder_depth, image)?,
            StreamKind::Denoising => encode(tape, binder, cfg, "denoising.encoder", cfg.encoder_depth, image)?,
        };
        let (layers, queries) = decode(tape, binder, cfg, cfg.decoder_name(kind), tokens)?;
        Ok(Pyramid { layers, queries })
    }

    /// Projects `(N, teacher_dim)` teacher tokens and runs the teacher decoder.
    pub fn teacher_head(&self, tape: &mut Tape<T>, binder: &mut Binder<'_, T>, tokens: NodeId) -> Result<Pyramid> {
        let cfg = &self.config;
        let w = binder.param(tape, "teacher_proj.linear.weight")?;
        let b = binder.param(tape, "teacher_proj.linear.bias")?;
        let t = tape.linear(tokens, w, b)?;
        let (layers, queries) = decode(tape, binder, cfg, cfg.decoder_name(StreamKind::Teacher), t)?;
        Ok(Pyramid { layers, queries })
    }

    /// Frozen teacher encoder output `(N, teacher_dim)`, computed off tape.
    pub fn teacher_tokens(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, &frozen);
        let x = tape.constant(image.clone());
        let cfg = &self.config;
        let t = encode(&mut tape, &mut binder, cfg, "teacher.encoder", cfg.teacher_depth, x)?;
        Ok(tape.value(t).clone())
    }

    /// Full teacher decoder outputs for one image, computed off tape.
    pub fn teacher_features(&self, image: &Tensor<T>) -> Result<PyramidValues<T>> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, &frozen);
        let x = tape.constant(image.clone());
        let p = self.stream(&mut tape, &mut binder, StreamKind::Teacher, x)?;
        Ok(PyramidValues::read(&tape, &p))
    }

    /// Anomaly map `(H, W)` for a `(C, H, W)` image, plus the names of every
    /// parameter that was read.
    pub fn anomaly_map_traced(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<String>)> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, &frozen);
        let x = tape.constant(image.clone());
        let plain_kind = if self.config.use_plain_stream {
            StreamKind::Plain
        } else {
            StreamKind::Teacher
        };
        let sp = self.stream(&mut tape, &mut binder, plain_kind, x)?;
        let sd = self.stream(&mut tape, &mut binder, StreamKind::Denoising, x)?;
        let input = fa_input(&mut tape, &self.config, &sp.layers, &sd.layers)?;
        let map = fa_forward(&mut tape, &mut binder, &self.config, input)?;
        let names = binder.bound().keys().cloned().collect();
        Ok((tape.value(map).clone(), names))
    }

    pub fn anomaly_map(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.anomaly_map_traced(image)?.0)
    }
}

/// Mask-style map `(H, W)` from the last decoder layer and the first query
/// token: `sigmoid(tokens · q₀ / √D)`, upsampled to the image.
pub fn logit_map<T: Real>(tape: &mut Tape<T>, cfg: &ModelConfig, p: &Pyramid) -> Result<NodeId> {
    let q_shape = tape.value(p.queries).shape().to_vec();
    let (nq, d) = (q_shape[0], q_shape[1]);
    let mut pick = vec![T::ZERO; nq];
    pick[0] = T::ONE;
    let pick = tape.constant(Tensor::new(&[1, nq], pick)?);
    let q0 = tape.matmul(pick, p.queries)?;
    let q0t = tape.transpose(q0)?;
    let last = *p.layers.last().expect("decoder has layers");
    let logits = tape.matmul(last, q0t)?;
    let logits = tape.scale(logits, 1.0 / libm::sqrt(d as f64))?;
    let prob = tape.sigmoid(logits)?;
    let g = cfg.grid();
    let grid = tape.reshape(prob, &[1, g, g])?;
    let up = tape.resize(grid, cfg.image_size, cfg.image_size)?;
    tape.reshape(up, &[cfg.image_size, cfg.image_size])
}
