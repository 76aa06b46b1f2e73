use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::ops::{self, conv_geom, split_axis, Primitive, Saved, L2_EPS};
use super::tape::{NodeId, Tape};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Gradients of a scalar loss with respect to every node that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.contains(loss) {
            return Err(Error::UnknownNode(loss.0));
        }
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::LossNotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::ONE));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rec) = &node.record else { continue };
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = rec.inputs.iter().map(|id| self.value(*id)).collect();
            let needs: Vec<bool> = rec.inputs.iter().map(|id| self.requires_grad(*id)).collect();
            let mut gin = input_grads(&rec.prim, &inputs, &node.value, &rec.saved, &gout, &needs)?;
            if self.grad_fault == Some(rec.prim.name()) {
                for g in gin.iter_mut().flatten() {
                    g.data_mut().iter_mut().for_each(|v| *v *= T::from_f64(1.5));
                }
            }
            for (id, g) in rec.inputs.iter().zip(gin) {
                let Some(g) = g else { continue };
                match &mut grads[id.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }
}

fn reduce_to<T: Real>(g: Tensor<T>, target: &Tensor<T>) -> Tensor<T> {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::full(target.shape(), g.sum())
    }
}

fn zip_map<T: Real>(g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if other.shape() == g.shape() {
        Tensor::from_fn(g.shape(), |i| f(g.data()[i], other.data()[i]))
    } else {
        let s = other.item();
        g.map(|v| f(v, s))
    }
}

/// Element `i` of `t`, broadcasting one-element tensors.
#[inline]
fn at<T: Real>(t: &Tensor<T>, i: usize) -> T {
    if t.numel() == 1 {
        t.item()
    } else {
        t.data()[i]
    }
}

fn input_grads<T: Real>(
    prim: &Primitive,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    saved: &Saved<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let x = inputs[0];
    let mut res: Vec<Option<Tensor<T>>> = vec![None; inputs.len()];
    let unary = |t: Tensor<T>| Ok(vec![Some(t)]);
    match prim {
        Primitive::Add | Primitive::Sub => {
            let b = inputs[1];
            if needs[0] {
                res[0] = Some(reduce_to(g.clone(), x));
            }
            if needs[1] {
                let gb = if matches!(prim, Primitive::Sub) {
                    g.map(|v| -v)
                } else {
                    g.clone()
                };
                res[1] = Some(reduce_to(gb, b));
            }
            Ok(res)
        }
        Primitive::Mul => {
            let b = inputs[1];
            if needs[0] {
                res[0] = Some(reduce_to(zip_map(g, b, |gv, bv| gv * bv), x));
            }
            if needs[1] {
                res[1] = Some(reduce_to(zip_map(g, x, |gv, av| gv * av), b));
            }
            Ok(res)
        }
        Primitive::Div => {
            let b = inputs[1];
            if needs[0] {
                res[0] = Some(reduce_to(zip_map(g, b, |gv, bv| gv / bv), x));
            }
            if needs[1] {
                let gb = Tensor::from_fn(g.shape(), |i| {
                    let bv = at(b, i);
                    -g.data()[i] * at(x, i) / (bv * bv)
                });
                res[1] = Some(reduce_to(gb, b));
            }
            Ok(res)
        }
        Primitive::MatMul => {
            let b = inputs[1];
            let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
            if needs[0] {
                let bt = kernels::transpose(k, n, b.data());
                let mut ga = vec![T::ZERO; m * k];
                kernels::gemm(m, n, k, g.data(), &bt, &mut ga, false);
                res[0] = Some(Tensor::new(&[m, k], ga)?);
            }
            if needs[1] {
                let at = kernels::transpose(m, k, x.data());
                let mut gb = vec![T::ZERO; k * n];
                kernels::gemm(k, m, n, &at, g.data(), &mut gb, false);
                res[1] = Some(Tensor::new(&[k, n], gb)?);
            }
            if inputs.len() == 3 && needs[2] {
                let mut gbias = vec![T::ZERO; n];
                for row in g.data().chunks(n) {
                    gbias.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                res[2] = Some(Tensor::new(&[n], gbias)?);
            }
            Ok(res)
        }
        Primitive::Conv2d {
            stride,
            padding,
            dilation,
        } => {
            let w = inputs[1];
            let geom: ConvGeom = conv_geom(x, w, *stride, *padding, *dilation).ok_or_else(|| ops::mismatch(prim, inputs))?;
            let (oh, ow) = geom.out_hw().expect("validated");
            let o = w.shape()[0];
            let ck = geom.channels * geom.kh * geom.kw;
            let p = oh * ow;
            if needs[1] {
                let cols = kernels::im2col(&geom, x.data());
                let cols_t = kernels::transpose(ck, p, &cols);
                let mut gw = vec![T::ZERO; o * ck];
                kernels::gemm(o, p, ck, g.data(), &cols_t, &mut gw, false);
                res[1] = Some(Tensor::new(w.shape(), gw)?);
            }
            if needs[0] {
                let wt = kernels::transpose(o, ck, w.data());
                let mut gcols = vec![T::ZERO; ck * p];
                kernels::gemm(ck, o, p, &wt, g.data(), &mut gcols, false);
                res[0] = Some(Tensor::new(x.shape(), kernels::col2im(&geom, &gcols))?);
            }
            if inputs.len() == 3 && needs[2] {
                let gb = g.data().chunks(p).map(|c| c.iter().copied().sum()).collect();
                res[2] = Some(Tensor::new(&[o], gb)?);
            }
            Ok(res)
        }
        Primitive::LayerNorm { .. } => {
            let Saved::Moments(means, rstds) = saved else {
                unreachable!("layer_norm saves moments")
            };
            let d = *x.shape().last().expect("rank ≥ 1");
            let affine = inputs.len() == 3;
            let inv_d = T::ONE / T::from_usize(d);
            let mut gx = vec![T::ZERO; x.numel()];
            let mut ggamma = vec![T::ZERO; d];
            let mut gbeta = vec![T::ZERO; d];
            let mut xhat = vec![T::ZERO; d];
            let mut gxhat = vec![T::ZERO; d];
            for (r, (src, gr)) in x.data().chunks(d).zip(g.data().chunks(d)).enumerate() {
                let (mean, rstd) = (means[r], rstds[r]);
                for i in 0..d {
                    xhat[i] = (src[i] - mean) * rstd;
                    gxhat[i] = if affine { gr[i] * inputs[1].data()[i] } else { gr[i] };
                    if affine {
                        ggamma[i] += gr[i] * xhat[i];
                        gbeta[i] += gr[i];
                    }
                }
                let mg = gxhat.iter().copied().sum::<T>() * inv_d;
                let mgx = gxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                for i in 0..d {
                    gx[r * d + i] = rstd * (gxhat[i] - mg - xhat[i] * mgx);
                }
            }
            if needs[0] {
                res[0] = Some(Tensor::new(x.shape(), gx)?);
            }
            if affine {
                if needs[1] {
                    res[1] = Some(Tensor::new(inputs[1].shape(), ggamma)?);
                }
                if needs[2] {
                    res[2] = Some(Tensor::new(inputs[2].shape(), gbeta)?);
                }
            }
            Ok(res)
        }
        Primitive::Softmax => {
            let d = *x.shape().last().expect("rank ≥ 1");
            let mut gx = vec![T::ZERO; x.numel()];
            for ((y, gr), dst) in out.data().chunks(d).zip(g.data().chunks(d)).zip(gx.chunks_mut(d)) {
                let dotv = y.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                for i in 0..d {
                    dst[i] = y[i] * (gr[i] - dotv);
                }
            }
            unary(Tensor::new(x.shape(), gx)?)
        }
        Primitive::Gelu => {
            let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
            unary(Tensor::from_fn(x.shape(), |i| {
                let v = x.data()[i];
                let pdf = inv_sqrt_2pi * (T::from_f64(-0.5) * v * v).exp();
                g.data()[i] * (ops::gelu_cdf(v) + v * pdf)
            }))
        }
        Primitive::Relu => unary(Tensor::from_fn(x.shape(), |i| {
            if x.data()[i] > T::ZERO {
                g.data()[i]
            } else {
                T::ZERO
            }
        })),
        Primitive::Sigmoid => unary(Tensor::from_fn(x.shape(), |i| {
            let y = out.data()[i];
            g.data()[i] * y * (T::ONE - y)
        })),
        Primitive::BilinearResize { height, width } => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let ty = kernels::bilinear_axis(h, *height);
            let tx = kernels::bilinear_axis(w, *width);
            let mut gx = vec![T::ZERO; x.numel()];
            for ch in 0..c {
                let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
                let src = &g.data()[ch * height * width..(ch + 1) * height * width];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    let wy = T::from_f64(wy);
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let wx = T::from_f64(wx);
                        let gv = src[oy * width + ox];
                        let top = gv * (T::ONE - wy);
                        let bot = gv * wy;
                        dst[y0 * w + x0] += top * (T::ONE - wx);
                        dst[y0 * w + x1] += top * wx;
                        dst[y1 * w + x0] += bot * (T::ONE - wx);
                        dst[y1 * w + x1] += bot * wx;
                    }
                }
            }
            unary(Tensor::new(x.shape(), gx)?)
        }
        Primitive::Concat { axis } => {
            let (outer, _, inner) = split_axis(x.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            for (slot, (t, need)) in res.iter_mut().zip(inputs.iter().zip(needs)) {
                let len = t.shape()[*axis] * inner;
                if *need {
                    let mut buf = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = o * total * inner + offset;
                        buf.extend_from_slice(&g.data()[base..base + len]);
                    }
                    *slot = Some(Tensor::new(t.shape(), buf)?);
                }
                offset += len;
            }
            Ok(res)
        }
        Primitive::Mean { axis } | Primitive::Sum { axis } => {
            let mean = matches!(prim, Primitive::Mean { .. });
            match axis {
                None => {
                    let mut v = g.item();
                    if mean {
                        v /= T::from_usize(x.numel());
                    }
                    unary(Tensor::full(x.shape(), v))
                }
                Some(a) => {
                    let (outer, len, inner) = split_axis(x.shape(), *a);
                    let scale = if mean { T::ONE / T::from_usize(len) } else { T::ONE };
                    let mut gx = vec![T::ZERO; x.numel()];
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s * scale);
                        }
                    }
                    unary(Tensor::new(x.shape(), gx)?)
                }
            }
        }
        Primitive::L2Normalize { axis } => {
            let (outer, len, inner) = split_axis(x.shape(), *axis);
            let eps = T::from_f64(L2_EPS);
            let mut gx = vec![T::ZERO; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let norm = (0..len).map(|l| x.data()[idx(l)] * x.data()[idx(l)]).sum::<T>().sqrt();
                    let s = norm + eps;
                    let gdotx = (0..len).map(|l| g.data()[idx(l)] * x.data()[idx(l)]).sum::<T>();
                    let coef = if norm > T::ZERO { gdotx / (s * s * norm) } else { T::ZERO };
                    for l in 0..len {
                        gx[idx(l)] = g.data()[idx(l)] / s - coef * x.data()[idx(l)];
                    }
                }
            }
            unary(Tensor::new(x.shape(), gx)?)
        }
        Primitive::Transpose => {
            let (r, c) = (x.shape()[0], x.shape()[1]);
            unary(Tensor::new(&[r, c], kernels::transpose(c, r, g.data()))?)
        }
        Primitive::Reshape { .. } => unary(Tensor::new(x.shape(), g.data().to_vec())?),
        Primitive::ScaledDotAttention { heads } => {
            let Saved::Probs(probs) = saved else {
                unreachable!("attention saves probabilities")
            };
            attention_backward(inputs, probs, g, *heads, &mut res)?;
            Ok(res)
        }
        Primitive::Log => unary(zip_map(g, x, |gv, xv| gv / xv)),
        Primitive::Abs => unary(zip_map(g, x, |gv, xv| {
            if xv > T::ZERO {
                gv
            } else if xv < T::ZERO {
                -gv
            } else {
                T::ZERO
            }
        })),
        Primitive::Pow { exponent } => {
            let e = T::from_f64(*exponent);
            let em1 = T::from_f64(*exponent - 1.0);
            unary(zip_map(g, x, |gv, xv| gv * e * xv.powf(em1)))
        }
        Primitive::ChannelAffine => {
            let scale = inputs[1];
            let c = scale.numel();
            let inner = x.numel() / c.max(1);
            if needs[0] {
                let mut gx = g.clone();
                for (ch, row) in gx.data_mut().chunks_mut(inner.max(1)).enumerate().take(c) {
                    let a = scale.data()[ch];
                    row.iter_mut().for_each(|v| *v *= a);
                }
                res[0] = Some(gx);
            }
            let mut gs = vec![T::ZERO; c];
            let mut gb = vec![T::ZERO; c];
            if inner > 0 {
                for (ch, (gr, xr)) in g.data().chunks(inner).zip(x.data().chunks(inner)).enumerate() {
                    for (&gv, &xv) in gr.iter().zip(xr) {
                        gs[ch] += gv * xv;
                        gb[ch] += gv;
                    }
                }
            }
            if needs[1] {
                res[1] = Some(Tensor::new(&[c], gs)?);
            }
            if needs[2] {
                res[2] = Some(Tensor::new(&[c], gb)?);
            }
            Ok(res)
        }
    }
}

fn attention_backward<T: Real>(
    inputs: &[&Tensor<T>],
    probs: &[T],
    g: &Tensor<T>,
    heads: usize,
    res: &mut [Option<Tensor<T>>],
) -> Result<()> {
    let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
    let (n, d) = (q.shape()[0], q.shape()[1]);
    let m = k.shape()[0];
    let dh = d / heads;
    let scale = T::ONE / T::from_usize(dh).sqrt();
    let mut gq = vec![T::ZERO; n * d];
    let mut gk = vec![T::ZERO; m * d];
    let mut gv = vec![T::ZERO; m * d];
    let mut dp = vec![T::ZERO; n * m];
    let mut tmp_n = vec![T::ZERO; n * dh];
    let mut tmp_m = vec![T::ZERO; m * dh];
    for h in 0..heads {
        let qh = ops::head_slice(q.data(), n, d, h, dh);
        let kh = ops::head_slice(k.data(), m, d, h, dh);
        let vh = ops::head_slice(v.data(), m, d, h, dh);
        let goh = ops::head_slice(g.data(), n, d, h, dh);
        let p = &probs[h * n * m..(h + 1) * n * m];
        // dV = Pᵀ·dO
        let pt = kernels::transpose(n, m, p);
        kernels::gemm(m, n, dh, &pt, &goh, &mut tmp_m, false);
        ops::head_scatter(&mut gv, &tmp_m, m, d, h, dh);
        // dP = dO·Vᵀ, then dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
        for i in 0..n {
            let go = &goh[i * dh..(i + 1) * dh];
            for j in 0..m {
                dp[i * m + j] = kernels::dot(go, &vh[j * dh..(j + 1) * dh]);
            }
            let row_p = &p[i * m..(i + 1) * m];
            let row = &mut dp[i * m..(i + 1) * m];
            let s = row.iter().zip(row_p).map(|(&a, &b)| a * b).sum::<T>();
            for (dv, &pv) in row.iter_mut().zip(row_p) {
                *dv = pv * (*dv - s) * scale;
            }
        }
        kernels::gemm(n, m, dh, &dp, &kh, &mut tmp_n, false);
        ops::head_scatter(&mut gq, &tmp_n, n, d, h, dh);
        let dst = kernels::transpose(n, m, &dp);
        kernels::gemm(m, n, dh, &dst, &qh, &mut tmp_m, false);
        ops::head_scatter(&mut gk, &tmp_m, m, d, h, dh);
    }
    res[0] = Some(Tensor::new(q.shape(), gq)?);
    res[1] = Some(Tensor::new(k.shape(), gk)?);
    res[2] = Some(Tensor::new(v.shape(), gv)?);
    Ok(())
}
