use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::layers::Ctx;
use super::{Binder, ModelConfig};
use crate::error::Result;
use crate::losses::sum_all;
use crate::real::Real;
use crate::tensor::{NodeId, Tape, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch statistics of one norm layer, for the running-average update.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub prefix: String,
    pub mean: Tensor<T>,
    /// Unbiased variance.
    pub var: Tensor<T>,
}

struct Head<'t, 'b, 'a, 's, T> {
    cx: Ctx<'t, 'b, 'a, T>,
    train: bool,
    stats: &'s mut Vec<NormStats<T>>,
}

impl<'t, 'b, 'a, 's, T: Real> Head<'t, 'b, 'a, 's, T> {
    /// Per-channel normalization over batch and space.
    fn batch_norm(&mut self, prefix: &str, xs: &[NodeId]) -> Result<Vec<NodeId>> {
        let tape = &mut *self.cx.tape;
        let shape = tape.value(xs[0]).shape().to_vec();
        let (c, hw) = (shape[0], shape[1] * shape[2]);
        let flat = xs.iter().map(|&x| tape.reshape(x, &[c, hw])).collect::<Result<Vec<_>>>()?;
        let gamma = self.cx.p(&format!("{prefix}.gamma"))?;
        let beta = self.cx.p(&format!("{prefix}.beta"))?;
        let tape = &mut *self.cx.tape;
        let (centered, scale) = if self.train {
            let inv_b = 1.0 / xs.len() as f64;
            let means = flat.iter().map(|&f| tape.mean(f, Some(1))).collect::<Result<Vec<_>>>()?;
            let mu = sum_all(tape, &means)?;
            let mu = tape.scale(mu, inv_b)?;
            let neg_mu = tape.scale(mu, -1.0)?;
            let ones = tape.constant(Tensor::full(&[c], T::ONE));
            let centered = flat
                .iter()
                .map(|&f| tape.channel_affine(f, ones, neg_mu))
                .collect::<Result<Vec<_>>>()?;
            let sq = centered
                .iter()
                .map(|&d| {
                    let s = tape.mul(d, d)?;
                    tape.mean(s, Some(1))
                })
                .collect::<Result<Vec<_>>>()?;
            let var = sum_all(tape, &sq)?;
            let var = tape.scale(var, inv_b)?;
            let n = (xs.len() * hw) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            self.stats.push(NormStats {
                prefix: String::from(prefix),
                mean: tape.value(mu).clone(),
                var: tape.value(var).map(|v| v * T::from_f64(unbiased)),
            });
            let ve = tape.add_scalar(var, BN_EPS)?;
            let rstd = tape.pow(ve, -0.5)?;
            (centered, tape.mul(gamma, rstd)?)
        } else {
            let rm = self.cx.p(&format!("{prefix}.running_mean"))?;
            let rv = self.cx.p(&format!("{prefix}.running_var"))?;
            let tape = &mut *self.cx.tape;
            let neg = tape.scale(rm, -1.0)?;
            let ones = tape.constant(Tensor::full(&[c], T::ONE));
            let centered = flat
                .iter()
                .map(|&f| tape.channel_affine(f, ones, neg))
                .collect::<Result<Vec<_>>>()?;
            let ve = tape.add_scalar(rv, BN_EPS)?;
            let rstd = tape.pow(ve, -0.5)?;
            (centered, tape.mul(gamma, rstd)?)
        };
        let tape = &mut *self.cx.tape;
        centered
            .iter()
            .map(|&d| {
                let y = tape.channel_affine(d, scale, beta)?;
                tape.reshape(y, &shape)
            })
            .collect()
    }

    fn conv_block(&mut self, name: &str, xs: &[NodeId], pad: usize, dil: usize) -> Result<Vec<NodeId>> {
        let ys = xs
            .iter()
            .map(|&x| self.cx.conv(&format!("fa.{name}.conv"), x, 1, pad, dil))
            .collect::<Result<Vec<_>>>()?;
        let ys = self.batch_norm(&format!("fa.{name}.norm"), &ys)?;
        ys.iter().map(|&y| self.cx.tape.relu(y)).collect()
    }
}

/// Segmentation head over a batch of `(C_in, h, w)` inputs, each mapped to
/// an `(H, W)` anomaly map in `[0, 1]` at the image resolution.
///
/// With `train` set, norms use batch statistics and report them in `stats`;
/// otherwise they use the stored running statistics.
pub fn fa_forward_batch<T: Real>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    inputs: &[NodeId],
    train: bool,
    stats: &mut Vec<NormStats<T>>,
) -> Result<Vec<NodeId>> {
    let mut h = Head {
        cx: Ctx { tape, binder },
        train,
        stats,
    };
    let mut x = h.conv_block("stem", inputs, 1, 1)?;
    for r in 0..2 {
        let y = h.conv_block(&format!("res{r}"), &x, 1, 1)?;
        x = y
            .iter()
            .zip(&x)
            .map(|(&a, &b)| h.cx.tape.add(a, b))
            .collect::<Result<Vec<_>>>()?;
    }
    let mut branches = Vec::new();
    for (i, &d) in cfg.fa_dilations.iter().enumerate() {
        branches.push(h.conv_block(&format!("aspp{i}"), &x, d, d)?);
    }
    let cat = (0..inputs.len())
        .map(|s| {
            let parts: Vec<NodeId> = branches.iter().map(|b| b[s]).collect();
            h.cx.tape.concat(&parts, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = h.conv_block("fuse", &cat, 0, 1)?;
    let size = cfg.image_size;
    fused
        .iter()
        .map(|&f| {
            let logit = h.cx.conv("fa.head.conv", f, 1, 0, 1)?;
            let prob = h.cx.tape.sigmoid(logit)?;
            let up = h.cx.tape.resize(prob, size, size)?;
            h.cx.tape.reshape(up, &[size, size])
        })
        .collect()
}

/// Inference form of [`fa_forward_batch`] for a single input.
pub fn fa_forward<T: Real>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &ModelConfig,
    input: NodeId,
) -> Result<NodeId> {
    let mut unused = Vec::new();
    Ok(fa_forward_batch(tape, binder, cfg, &[input], false, &mut unused)?[0])
}
