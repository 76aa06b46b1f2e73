use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Every differentiable operation the model needs. Attributes travel with
/// the variant; inputs are supplied separately as tape node ids.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    /// `(m,k)·(k,n)`, optional third input: bias of shape `(n)`.
    MatMul,
    /// Input `(C,H,W)`, weight `(O,C,kh,kw)`, optional bias `(O)`.
    Conv2d {
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    /// Normalizes the last axis; optional gamma and beta inputs.
    LayerNorm { eps: f64 },
    /// Softmax along the last axis.
    Softmax,
    Gelu,
    Relu,
    Sigmoid,
    /// Half-pixel bilinear resize of a `(C,H,W)` map.
    BilinearResize { height: usize, width: usize },
    Concat { axis: usize },
    /// Reduces `axis` (removing it), or every element when `None`.
    Mean { axis: Option<usize> },
    Sum { axis: Option<usize> },
    /// `x / (‖x‖₂ + ε)` along `axis`, ε = 1e-8.
    L2Normalize { axis: usize },
    /// Rank-2 transpose.
    Transpose,
    Reshape { shape: Vec<usize> },
    /// Multi-head `softmax(QKᵀ/√d_h)·V` for `q (n,d)`, `k (m,d)`, `v (m,d)`.
    ScaledDotAttention { heads: usize },
    Log,
    Abs,
    Pow { exponent: f64 },
    /// `x[c, …]·scale[c] + shift[c]` for `x` with leading channel axis.
    ChannelAffine,
}

pub(crate) const L2_EPS: f64 = 1e-8;

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Softmax => "softmax",
            Primitive::Gelu => "gelu",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::BilinearResize { .. } => "bilinear_resize",
            Primitive::Concat { .. } => "concat",
            Primitive::Mean { .. } => "mean",
            Primitive::Sum { .. } => "sum",
            Primitive::L2Normalize { .. } => "l2_normalize",
            Primitive::Transpose => "transpose",
            Primitive::Reshape { .. } => "reshape",
            Primitive::ScaledDotAttention { .. } => "scaled_dot_attention",
            Primitive::Log => "log",
            Primitive::Abs => "abs",
            Primitive::Pow { .. } => "pow",
            Primitive::ChannelAffine => "channel_affine",
        }
    }
}

/// Values kept from the forward pass for the backward rule.
#[derive(Clone, Debug)]
pub(crate) enum Saved<T> {
    None,
    /// Per-row mean and reciprocal standard deviation.
    Moments(Vec<T>, Vec<T>),
    /// Attention probabilities, `(heads, n, m)`.
    Probs(Vec<T>),
}

pub(crate) fn mismatch<T: Real>(prim: &Primitive, inputs: &[&Tensor<T>]) -> Error {
    Error::ShapeMismatch {
        kind: prim.name(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

/// `(outer, len, inner)` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn arity(prim: &Primitive) -> (usize, usize) {
    match prim {
        Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => (2, 2),
        Primitive::MatMul | Primitive::Conv2d { .. } => (2, 3),
        Primitive::LayerNorm { .. } => (1, 3),
        Primitive::ScaledDotAttention { .. } | Primitive::ChannelAffine => (3, 3),
        Primitive::Concat { .. } => (1, usize::MAX),
        _ => (1, 1),
    }
}

pub(crate) fn forward<T: Real>(prim: &Primitive, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Saved<T>)> {
    let (lo, hi) = arity(prim);
    if inputs.len() < lo || inputs.len() > hi {
        return Err(mismatch(prim, inputs));
    }
    let bad = || mismatch(prim, inputs);
    let x = inputs[0];
    let plain = |t: Tensor<T>| Ok((t, Saved::None));
    match prim {
        Primitive::Add => plain(binary(x, inputs[1], |a, b| a + b).ok_or_else(bad)?),
        Primitive::Sub => plain(binary(x, inputs[1], |a, b| a - b).ok_or_else(bad)?),
        Primitive::Mul => plain(binary(x, inputs[1], |a, b| a * b).ok_or_else(bad)?),
        Primitive::Div => plain(binary(x, inputs[1], |a, b| a / b).ok_or_else(bad)?),
        Primitive::MatMul => {
            let b = inputs[1];
            if x.rank() != 2 || b.rank() != 2 || x.shape()[1] != b.shape()[0] {
                return Err(bad());
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
            let mut out = vec![T::ZERO; m * n];
            if let Some(bias) = inputs.get(2) {
                if bias.numel() != n || bias.rank() != 1 {
                    return Err(bad());
                }
                for row in out.chunks_mut(n) {
                    row.copy_from_slice(bias.data());
                }
            }
            kernels::gemm(m, k, n, x.data(), b.data(), &mut out, inputs.len() == 3);
            plain(Tensor::new(&[m, n], out)?)
        }
        Primitive::Conv2d {
            stride,
            padding,
            dilation,
        } => {
            let w = inputs[1];
            let geom = conv_geom(x, w, *stride, *padding, *dilation).ok_or_else(bad)?;
            let (oh, ow) = geom.out_hw().ok_or_else(bad)?;
            let o = w.shape()[0];
            let ck = geom.channels * geom.kh * geom.kw;
            let cols = kernels::im2col(&geom, x.data());
            let mut out = vec![T::ZERO; o * oh * ow];
            if let Some(bias) = inputs.get(2) {
                if bias.numel() != o || bias.rank() != 1 {
                    return Err(bad());
                }
                for (row, &b) in out.chunks_mut(oh * ow).zip(bias.data()) {
                    row.iter_mut().for_each(|v| *v = b);
                }
            }
            kernels::gemm(o, ck, oh * ow, w.data(), &cols, &mut out, inputs.len() == 3);
            plain(Tensor::new(&[o, oh, ow], out)?)
        }
        Primitive::LayerNorm { eps } => {
            let d = *x.shape().last().ok_or_else(bad)?;
            let affine = inputs.len() == 3;
            if inputs.len() == 2 || (affine && (inputs[1].numel() != d || inputs[2].numel() != d)) {
                return Err(bad());
            }
            let rows = x.numel() / d;
            let eps = T::from_f64(*eps);
            let inv_d = T::ONE / T::from_usize(d);
            let mut out = vec![T::ZERO; x.numel()];
            let mut means = Vec::with_capacity(rows);
            let mut rstds = Vec::with_capacity(rows);
            for (r, (src, dst)) in x.data().chunks(d).zip(out.chunks_mut(d)).enumerate() {
                let _ = r;
                let mean = src.iter().copied().sum::<T>() * inv_d;
                let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let rstd = T::ONE / (var + eps).sqrt();
                for (i, (o, &v)) in dst.iter_mut().zip(src).enumerate() {
                    let xh = (v - mean) * rstd;
                    *o = if affine {
                        xh * inputs[1].data()[i] + inputs[2].data()[i]
                    } else {
                        xh
                    };
                }
                means.push(mean);
                rstds.push(rstd);
            }
            Ok((Tensor::new(x.shape(), out)?, Saved::Moments(means, rstds)))
        }
        Primitive::Softmax => {
            let d = *x.shape().last().ok_or_else(bad)?;
            let mut out = x.data().to_vec();
            out.chunks_mut(d).for_each(softmax_in_place);
            plain(Tensor::new(x.shape(), out)?)
        }
        Primitive::Gelu => plain(x.map(|v| v * gelu_cdf(v))),
        Primitive::Relu => plain(x.map(|v| if v > T::ZERO { v } else { T::ZERO })),
        Primitive::Sigmoid => plain(x.map(sigmoid)),
        Primitive::BilinearResize { height, width } => {
            if x.rank() != 3 || *height == 0 || *width == 0 {
                return Err(bad());
            }
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let ty = kernels::bilinear_axis(h, *height);
            let tx = kernels::bilinear_axis(w, *width);
            let mut out = vec![T::ZERO; c * height * width];
            for ch in 0..c {
                let src = &x.data()[ch * h * w..(ch + 1) * h * w];
                let dst = &mut out[ch * height * width..(ch + 1) * height * width];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    let wy = T::from_f64(wy);
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let wx = T::from_f64(wx);
                        let top = src[y0 * w + x0] * (T::ONE - wx) + src[y0 * w + x1] * wx;
                        let bot = src[y1 * w + x0] * (T::ONE - wx) + src[y1 * w + x1] * wx;
                        dst[oy * width + ox] = top * (T::ONE - wy) + bot * wy;
                    }
                }
            }
            plain(Tensor::new(&[c, *height, *width], out)?)
        }
        Primitive::Concat { axis } => {
            let axis = *axis;
            let rank = x.rank();
            if axis >= rank
                || inputs.iter().any(|t| {
                    t.rank() != rank
                        || t.shape()
                            .iter()
                            .zip(x.shape())
                            .enumerate()
                            .any(|(i, (a, b))| i != axis && a != b)
                })
            {
                return Err(bad());
            }
            let (outer, _, inner) = split_axis(x.shape(), axis);
            let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
            let mut shape = x.shape().to_vec();
            shape[axis] = total;
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let len = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
                }
            }
            plain(Tensor::new(&shape, out)?)
        }
        Primitive::Mean { axis } | Primitive::Sum { axis } => {
            let mean = matches!(prim, Primitive::Mean { .. });
            match axis {
                None => {
                    let s = x.sum();
                    let v = if mean { s / T::from_usize(x.numel()) } else { s };
                    plain(Tensor::scalar(v))
                }
                Some(a) => {
                    if *a >= x.rank() {
                        return Err(bad());
                    }
                    let (outer, len, inner) = split_axis(x.shape(), *a);
                    let mut out = vec![T::ZERO; outer * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    if mean {
                        let inv = T::ONE / T::from_usize(len);
                        out.iter_mut().for_each(|v| *v *= inv);
                    }
                    let mut shape = x.shape().to_vec();
                    shape.remove(*a);
                    plain(Tensor::new(&shape, out)?)
                }
            }
        }
        Primitive::L2Normalize { axis } => {
            if *axis >= x.rank() {
                return Err(bad());
            }
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let mut out = x.data().to_vec();
            let eps = T::from_f64(L2_EPS);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let norm = (0..len).map(|l| out[idx(l)] * out[idx(l)]).sum::<T>().sqrt();
                    let s = norm + eps;
                    for l in 0..len {
                        out[idx(l)] /= s;
                    }
                }
            }
            plain(Tensor::new(x.shape(), out)?)
        }
        Primitive::Transpose => {
            if x.rank() != 2 {
                return Err(bad());
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            plain(Tensor::new(&[c, r], kernels::transpose(r, c, x.data()))?)
        }
        Primitive::Reshape { shape } => {
            if shape.iter().product::<usize>() != x.numel() {
                return Err(bad());
            }
            plain(Tensor::new(shape, x.data().to_vec())?)
        }
        Primitive::ScaledDotAttention { heads } => {
            let (k, v) = (inputs[1], inputs[2]);
            if x.rank() != 2
                || k.rank() != 2
                || v.shape() != k.shape()
                || x.shape()[1] != k.shape()[1]
                || *heads == 0
                || x.shape()[1] % heads != 0
            {
                return Err(bad());
            }
            let (out, probs) = attention_forward(x, k, v, *heads);
            Ok((out, Saved::Probs(probs)))
        }
        Primitive::Log => plain(x.map(|v| v.ln())),
        Primitive::Abs => plain(x.map(|v| v.abs())),
        Primitive::Pow { exponent } => {
            let e = T::from_f64(*exponent);
            plain(x.map(|v| v.powf(e)))
        }
        Primitive::ChannelAffine => {
            let (scale, shift) = (inputs[1], inputs[2]);
            let c = *x.shape().first().ok_or_else(bad)?;
            if scale.shape() != [c] || shift.shape() != [c] {
                return Err(bad());
            }
            let inner = x.numel() / c.max(1);
            let mut out = x.clone();
            for (ch, row) in out.data.chunks_mut(inner.max(1)).enumerate().take(c) {
                let (a, b) = (scale.data[ch], shift.data[ch]);
                row.iter_mut().for_each(|v| *v = *v * a + b);
            }
            plain(out)
        }
    }
}

pub(crate) fn conv_geom<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<ConvGeom> {
    if x.rank() != 3 || w.rank() != 4 || w.shape()[1] != x.shape()[0] || dilation == 0 {
        return None;
    }
    let g = ConvGeom {
        channels: x.shape()[0],
        height: x.shape()[1],
        width: x.shape()[2],
        kh: w.shape()[2],
        kw: w.shape()[3],
        stride,
        padding,
        dilation,
    };
    g.out_hw().map(|_| g)
}

fn binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Option<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Some(Tensor {
            shape: a.shape().to_vec(),
            data,
        })
    } else if b.is_scalar() {
        let s = b.item();
        Some(a.map(|x| f(x, s)))
    } else if a.is_scalar() {
        let s = a.item();
        Some(b.map(|y| f(s, y)))
    } else {
        None
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(row[0], T::max);
    let mut total = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = T::ONE / total;
    row.iter_mut().for_each(|v| *v *= inv);
}

#[inline]
pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

/// Standard normal CDF Φ(x).
#[inline]
pub(crate) fn gelu_cdf<T: Real>(v: T) -> T {
    T::from_f64(0.5) * (T::ONE + (v * T::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Copy columns `[h·dh, (h+1)·dh)` of a `(rows, d)` matrix.
pub(crate) fn head_slice<T: Real>(src: &[T], rows: usize, d: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * dh);
    for r in 0..rows {
        out.extend_from_slice(&src[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

pub(crate) fn head_scatter<T: Real>(dst: &mut [T], src: &[T], rows: usize, d: usize, h: usize, dh: usize) {
    for r in 0..rows {
        dst[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

fn attention_forward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> (Tensor<T>, Vec<T>) {
    let (n, d) = (q.shape()[0], q.shape()[1]);
    let m = k.shape()[0];
    let dh = d / heads;
    let scale = T::ONE / T::from_usize(dh).sqrt();
    let mut out = vec![T::ZERO; n * d];
    let mut probs = vec![T::ZERO; heads * n * m];
    let mut oh = vec![T::ZERO; n * dh];
    for h in 0..heads {
        let qh = head_slice(q.data(), n, d, h, dh);
        let kh = head_slice(k.data(), m, d, h, dh);
        let vh = head_slice(v.data(), m, d, h, dh);
        let p = &mut probs[h * n * m..(h + 1) * n * m];
        for i in 0..n {
            let row = &mut p[i * m..(i + 1) * m];
            let qi = &qh[i * dh..(i + 1) * dh];
            for (j, s) in row.iter_mut().enumerate() {
                *s = kernels::dot(qi, &kh[j * dh..(j + 1) * dh]) * scale;
            }
            softmax_in_place(row);
        }
        kernels::gemm(n, m, dh, p, &vh, &mut oh, false);
        head_scatter(&mut out, &oh, n, d, h, dh);
    }
    (
        Tensor {
            shape: vec![n, d],
            data: out,
        },
        probs,
    )
}
