//! Reverse-accumulation gradient engine over NCHW tensors.
//!
//! A `Tape` records eagerly evaluated ops; `backward` walks the recording
//! in reverse and accumulates gradients into every node. Convolutions run
//! as im2col + GEMM and are parallelized over the batch dimension only —
//! each item's output slab is written by exactly one worker and all
//! cross-item reductions happen in index order, so results are bit-stable
//! regardless of thread count.

use super::feat::Feat;
use super::scalar::{sigmoid, Scalar};
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { pad: usize },
    GroupNorm { groups: usize, eps: f64 },
    Silu,
    Add,
    AddChannelBias,
    ConcatChannels,
    AvgPool2,
    UpsampleNearest2,
    Linear,
    MseVs { target: Feat<T> },
}

struct Node<T> {
    op: Op<T>,
    parents: Vec<NodeId>,
    value: Feat<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

pub struct Gradients<T> {
    grads: Vec<Option<Feat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn take(&mut self, id: NodeId) -> Option<Feat<T>> {
        self.grads[id.0].take()
    }
}

fn im2col<T: Scalar>(
    x: &[T],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let s = oh * ow;
    for c in 0..ic {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * s;
                for oy in 0..oh {
                    let sy = (oy + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        for ox in 0..ow {
                            col[row + oy * ow + ox] = T::ZERO;
                        }
                        continue;
                    }
                    let src = (c * h + sy as usize) * w;
                    for ox in 0..ow {
                        let sx = (ox + kx) as isize - pad as isize;
                        col[row + oy * ow + ox] = if sx < 0 || sx >= w as isize {
                            T::ZERO
                        } else {
                            x[src + sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_accumulate<T: Scalar>(
    col: &[T],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let s = oh * ow;
    for c in 0..ic {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * s;
                for oy in 0..oh {
                    let sy = (oy + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = (c * h + sy as usize) * w;
                    for ox in 0..ow {
                        let sx = (ox + kx) as isize - pad as isize;
                        if sx >= 0 && sx < w as isize {
                            x[dst + sx as usize] += col[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Scalar>(x: &Feat<T>, weight: &Feat<T>, bias: &Feat<T>, pad: usize) -> Feat<T> {
    let (n, ic, h, w) = x.shape();
    let (oc, _, kh, kw) = weight.shape();
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    let k = ic * kh * kw;
    let s = oh * ow;
    let mut out = Feat::zeros(n, oc, oh, ow);
    let item = ic * h * w;
    out.data
        .par_chunks_mut(oc * s)
        .enumerate()
        .for_each(|(ni, chunk)| {
            let mut col = vec![T::ZERO; k * s];
            im2col(&x.data[ni * item..(ni + 1) * item], ic, h, w, kh, kw, pad, oh, ow, &mut col);
            unsafe {
                T::gemm(
                    oc,
                    k,
                    s,
                    T::ONE,
                    weight.data.as_ptr(),
                    k as isize,
                    1,
                    col.as_ptr(),
                    s as isize,
                    1,
                    T::ZERO,
                    chunk.as_mut_ptr(),
                    s as isize,
                    1,
                );
            }
            for c in 0..oc {
                let b = bias.data[c];
                for v in &mut chunk[c * s..(c + 1) * s] {
                    *v += b;
                }
            }
        });
    out
}

#[allow(clippy::type_complexity)]
fn conv_backward<T: Scalar>(
    x: &Feat<T>,
    weight: &Feat<T>,
    dy: &Feat<T>,
    pad: usize,
) -> (Feat<T>, Feat<T>, Feat<T>) {
    let (n, ic, h, w) = x.shape();
    let (oc, _, kh, kw) = weight.shape();
    let (_, _, oh, ow) = dy.shape();
    let k = ic * kh * kw;
    let s = oh * ow;
    let item = ic * h * w;
    let mut dx = Feat::zeros(n, ic, h, w);
    // Per-item (dw, db, dx-slab) in parallel; dw/db reduced in index order.
    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .data
        .par_chunks_mut(item)
        .enumerate()
        .map(|(ni, dx_chunk)| {
            let mut col = vec![T::ZERO; k * s];
            im2col(&x.data[ni * item..(ni + 1) * item], ic, h, w, kh, kw, pad, oh, ow, &mut col);
            let dy_item = &dy.data[ni * oc * s..(ni + 1) * oc * s];
            let mut dw_n = vec![T::ZERO; oc * k];
            let mut dcol = vec![T::ZERO; k * s];
            unsafe {
                // dW_n = dY_n · colᵀ
                T::gemm(
                    oc,
                    s,
                    k,
                    T::ONE,
                    dy_item.as_ptr(),
                    s as isize,
                    1,
                    col.as_ptr(),
                    1,
                    s as isize,
                    T::ZERO,
                    dw_n.as_mut_ptr(),
                    k as isize,
                    1,
                );
                // dcol = Wᵀ · dY_n
                T::gemm(
                    k,
                    oc,
                    s,
                    T::ONE,
                    weight.data.as_ptr(),
                    1,
                    k as isize,
                    dy_item.as_ptr(),
                    s as isize,
                    1,
                    T::ZERO,
                    dcol.as_mut_ptr(),
                    s as isize,
                    1,
                );
            }
            col2im_accumulate(&dcol, ic, h, w, kh, kw, pad, oh, ow, dx_chunk);
            let mut db_n = vec![T::ZERO; oc];
            for c in 0..oc {
                let mut acc = T::ZERO;
                for v in &dy_item[c * s..(c + 1) * s] {
                    acc += *v;
                }
                db_n[c] = acc;
            }
            (dw_n, db_n)
        })
        .collect();
    let mut dw = Feat::zeros(oc, ic, kh, kw);
    let mut db = Feat::zeros(1, oc, 1, 1);
    let _ = n;
    for (dw_n, db_n) in partials {
        for (a, b) in dw.data.iter_mut().zip(dw_n) {
            *a += b;
        }
        for (a, b) in db.data.iter_mut().zip(db_n) {
            *a += b;
        }
    }
    (dx, dw, db)
}

/// Per-(item, group) mean and reciprocal stddev, accumulated in f64.
fn group_stats<T: Scalar>(x: &Feat<T>, groups: usize, eps: f64) -> Vec<(f64, f64)> {
    let (n, c, h, w) = x.shape();
    let cg = c / groups;
    let m = (cg * h * w) as f64;
    let mut stats = Vec::with_capacity(n * groups);
    for ni in 0..n {
        for g in 0..groups {
            let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
            for cc in g * cg..(g + 1) * cg {
                let base = (ni * c + cc) * h * w;
                for i in 0..h * w {
                    let v = x.data[base + i].to_f64();
                    sum += v;
                    sumsq += v * v;
                }
            }
            let mean = sum / m;
            let var = (sumsq / m - mean * mean).max(0.0);
            stats.push((mean, 1.0 / (var + eps).sqrt()));
        }
    }
    stats
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<T>, parents: Vec<NodeId>, value: Feat<T>) -> NodeId {
        self.nodes.push(Node { op, parents, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Feat<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data[0].to_f64()
    }

    pub fn leaf(&mut self, value: Feat<T>) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: NodeId, pad: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = self.value(bias);
        let (_, ic, h, w) = xv.shape();
        let (oc, wic, kh, kw) = wv.shape();
        if ic != wic {
            return Err(Error::invalid(format!(
                "conv channels mismatch: input {ic}, weight expects {wic}"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::invalid("conv input smaller than kernel"));
        }
        if bv.numel() != oc {
            return Err(Error::invalid("conv bias must have one entry per out channel"));
        }
        let value = conv_forward(xv, wv, bv, pad);
        Ok(self.push(Op::Conv2d { pad }, vec![x, weight, bias], value))
    }

    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.shape();
        if groups == 0 || c % groups != 0 {
            return Err(Error::invalid(format!(
                "groups {groups} must divide channels {c}"
            )));
        }
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::invalid("gamma/beta must have one entry per channel"));
        }
        let stats = group_stats(xv, groups, eps);
        let cg = c / groups;
        let mut out = Feat::zeros(n, c, h, w);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let xv = self.value(x);
        for ni in 0..n {
            for cc in 0..c {
                let (mean, rstd) = stats[ni * groups + cc / cg];
                let (mean, rstd) = (T::from_f64(mean), T::from_f64(rstd));
                let (ga, be) = (gv.data[cc], bv.data[cc]);
                let base = (ni * c + cc) * h * w;
                for i in 0..h * w {
                    out.data[base + i] = ga * ((xv.data[base + i] - mean) * rstd) + be;
                }
            }
        }
        Ok(self.push(Op::GroupNorm { groups, eps }, vec![x, gamma, beta], out))
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut out = xv.clone();
        for v in &mut out.data {
            *v = *v * sigmoid(*v);
        }
        self.push(Op::Silu, vec![x], out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if !self.value(a).same_shape(self.value(b)) {
            return Err(Error::invalid("add shape mismatch"));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o += *v;
        }
        Ok(self.push(Op::Add, vec![a, b], out))
    }

    /// x[N,C,H,W] + bias[N,C,1,1] broadcast over spatial dims.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (n, c, h, w) = xv.shape();
        if bv.shape() != (n, c, 1, 1) {
            return Err(Error::invalid(format!(
                "channel bias must be [N,C,1,1]; got {:?} for x {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for ni in 0..n {
            for cc in 0..c {
                let b = bv.data[ni * c + cc];
                let base = (ni * c + cc) * h * w;
                for v in &mut out.data[base..base + h * w] {
                    *v += b;
                }
            }
        }
        Ok(self.push(Op::AddChannelBias, vec![x, bias], out))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, ca, h, w) = av.shape();
        let (nb, cb, hb, wb) = bv.shape();
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::invalid("concat needs matching batch/spatial dims"));
        }
        let mut out = Feat::zeros(n, ca + cb, h, w);
        let plane = h * w;
        for ni in 0..n {
            let dst = ni * (ca + cb) * plane;
            out.data[dst..dst + ca * plane]
                .copy_from_slice(&av.data[ni * ca * plane..(ni + 1) * ca * plane]);
            out.data[dst + ca * plane..dst + (ca + cb) * plane]
                .copy_from_slice(&bv.data[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        Ok(self.push(Op::ConcatChannels, vec![a, b], out))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.shape();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!("avg_pool2 needs even dims, got {h}x{w}")));
        }
        let quarter = T::from_f64(0.25);
        let mut out = Feat::zeros(n, c, h / 2, w / 2);
        for ni in 0..n {
            for cc in 0..c {
                for y in 0..h / 2 {
                    for x2 in 0..w / 2 {
                        let s = xv.at(ni, cc, 2 * y, 2 * x2)
                            + xv.at(ni, cc, 2 * y, 2 * x2 + 1)
                            + xv.at(ni, cc, 2 * y + 1, 2 * x2)
                            + xv.at(ni, cc, 2 * y + 1, 2 * x2 + 1);
                        let i = out.idx(ni, cc, y, x2);
                        out.data[i] = s * quarter;
                    }
                }
            }
        }
        Ok(self.push(Op::AvgPool2, vec![x], out))
    }

    pub fn upsample_nearest2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, c, h, w) = xv.shape();
        let mut out = Feat::zeros(n, c, 2 * h, 2 * w);
        for ni in 0..n {
            for cc in 0..c {
                for y in 0..2 * h {
                    for x2 in 0..2 * w {
                        let i = out.idx(ni, cc, y, x2);
                        out.data[i] = xv.at(ni, cc, y / 2, x2 / 2);
                    }
                }
            }
        }
        self.push(Op::UpsampleNearest2, vec![x], out)
    }

    /// x[N,Fin] · Wᵀ[Fin,Fout] + b. Vectors are [N,F,1,1] feats.
    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let (n, fin, h, w) = xv.shape();
        let (fout, fin2, _, _) = wv.shape();
        if h != 1 || w != 1 || fin != fin2 {
            return Err(Error::invalid(format!(
                "linear expects x [N,{fin2},1,1], got {:?}",
                xv.shape()
            )));
        }
        if self.value(bias).numel() != fout {
            return Err(Error::invalid("linear bias size mismatch"));
        }
        let mut out = Feat::zeros(n, fout, 1, 1);
        unsafe {
            T::gemm(
                n,
                fin,
                fout,
                T::ONE,
                xv.data.as_ptr(),
                fin as isize,
                1,
                wv.data.as_ptr(),
                1,
                fin as isize,
                T::ZERO,
                out.data.as_mut_ptr(),
                fout as isize,
                1,
            );
        }
        let bv = self.value(bias);
        for ni in 0..n {
            for o in 0..fout {
                out.data[ni * fout + o] += bv.data[o];
            }
        }
        Ok(self.push(Op::Linear, vec![x, weight, bias], out))
    }

    /// Mean squared error against a constant target; output is [1,1,1,1].
    pub fn mse_vs(&mut self, x: NodeId, target: Feat<T>) -> Result<NodeId> {
        let xv = self.value(x);
        if !xv.same_shape(&target) {
            return Err(Error::invalid("mse target shape mismatch"));
        }
        let mut acc = 0.0f64;
        for (a, b) in xv.data.iter().zip(&target.data) {
            let d = a.to_f64() - b.to_f64();
            acc += d * d;
        }
        let mut value = Feat::zeros(1, 1, 1, 1);
        value.data[0] = T::from_f64(acc / xv.numel() as f64);
        Ok(self.push(Op::MseVs { target }, vec![x], value))
    }

    /// Reverse pass from `loss`; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        let mut grads: Vec<Option<Feat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Feat::zeros(1, 1, 1, 1);
        seed.data[0] = T::ONE;
        grads[loss.0] = Some(seed);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gy);
                }
                Op::Conv2d { pad } => {
                    let x = node.parents[0];
                    let wgt = node.parents[1];
                    let b = node.parents[2];
                    let (dx, dw, db) =
                        conv_backward(self.value(x), self.value(wgt), &gy, *pad);
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[wgt.0], dw);
                    accumulate(&mut grads[b.0], db);
                }
                Op::GroupNorm { groups, eps } => {
                    let (x, gamma, beta) =
                        (node.parents[0], node.parents[1], node.parents[2]);
                    let xv = self.value(x);
                    let gv = self.value(gamma);
                    let (n, c, h, w) = xv.shape();
                    let cg = c / groups;
                    let m = (cg * h * w) as f64;
                    let stats = group_stats(xv, *groups, *eps);
                    let mut dx = Feat::zeros(n, c, h, w);
                    let mut dgamma = Feat::zeros(1, c, 1, 1);
                    let mut dbeta = Feat::zeros(1, c, 1, 1);
                    for ni in 0..n {
                        for g in 0..*groups {
                            let (mean, rstd) = stats[ni * groups + g];
                            let (mut s1, mut s2) = (0.0f64, 0.0f64);
                            for cc in g * cg..(g + 1) * cg {
                                let ga = gv.data[cc].to_f64();
                                let base = (ni * c + cc) * h * w;
                                for i in 0..h * w {
                                    let xh = (xv.data[base + i].to_f64() - mean) * rstd;
                                    let gyv = gy.data[base + i].to_f64();
                                    s1 += gyv * ga;
                                    s2 += gyv * ga * xh;
                                    dgamma.data[cc] += T::from_f64(gyv * xh);
                                    dbeta.data[cc] += T::from_f64(gyv);
                                }
                            }
                            let (a1, a2) = (s1 / m, s2 / m);
                            for cc in g * cg..(g + 1) * cg {
                                let ga = gv.data[cc].to_f64();
                                let base = (ni * c + cc) * h * w;
                                for i in 0..h * w {
                                    let xh = (xv.data[base + i].to_f64() - mean) * rstd;
                                    let gyv = gy.data[base + i].to_f64();
                                    dx.data[base + i] =
                                        T::from_f64(rstd * (gyv * ga - a1 - xh * a2));
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[gamma.0], dgamma);
                    accumulate(&mut grads[beta.0], dbeta);
                }
                Op::Silu => {
                    let x = node.parents[0];
                    let xv = self.value(x);
                    let mut dx = gy.clone();
                    for (d, xo) in dx.data.iter_mut().zip(&xv.data) {
                        let s = sigmoid(*xo);
                        *d = *d * s * (T::ONE + *xo * (T::ONE - s));
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Add => {
                    accumulate(&mut grads[node.parents[0].0], gy.clone());
                    accumulate(&mut grads[node.parents[1].0], gy);
                }
                Op::AddChannelBias => {
                    let (n, c, h, w) = gy.shape();
                    let mut dbias = Feat::zeros(n, c, 1, 1);
                    for ni in 0..n {
                        for cc in 0..c {
                            let base = (ni * c + cc) * h * w;
                            let mut acc = T::ZERO;
                            for v in &gy.data[base..base + h * w] {
                                acc += *v;
                            }
                            dbias.data[ni * c + cc] = acc;
                        }
                    }
                    accumulate(&mut grads[node.parents[0].0], gy);
                    accumulate(&mut grads[node.parents[1].0], dbias);
                }
                Op::ConcatChannels => {
                    let av = self.value(node.parents[0]);
                    let bv = self.value(node.parents[1]);
                    let (n, ca, h, w) = av.shape();
                    let cb = bv.c;
                    let plane = h * w;
                    let mut da = Feat::zeros(n, ca, h, w);
                    let mut db = Feat::zeros(n, cb, h, w);
                    for ni in 0..n {
                        let src = ni * (ca + cb) * plane;
                        da.data[ni * ca * plane..(ni + 1) * ca * plane]
                            .copy_from_slice(&gy.data[src..src + ca * plane]);
                        db.data[ni * cb * plane..(ni + 1) * cb * plane]
                            .copy_from_slice(&gy.data[src + ca * plane..src + (ca + cb) * plane]);
                    }
                    accumulate(&mut grads[node.parents[0].0], da);
                    accumulate(&mut grads[node.parents[1].0], db);
                }
                Op::AvgPool2 => {
                    let xv = self.value(node.parents[0]);
                    let (n, c, h, w) = xv.shape();
                    let quarter = T::from_f64(0.25);
                    let mut dx = Feat::zeros(n, c, h, w);
                    for ni in 0..n {
                        for cc in 0..c {
                            for y in 0..h {
                                for x2 in 0..w {
                                    let i = dx.idx(ni, cc, y, x2);
                                    dx.data[i] = gy.at(ni, cc, y / 2, x2 / 2) * quarter;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[node.parents[0].0], dx);
                }
                Op::UpsampleNearest2 => {
                    let xv = self.value(node.parents[0]);
                    let (n, c, h, w) = xv.shape();
                    let mut dx = Feat::zeros(n, c, h, w);
                    for ni in 0..n {
                        for cc in 0..c {
                            for y in 0..2 * h {
                                for x2 in 0..2 * w {
                                    let i = dx.idx(ni, cc, y / 2, x2 / 2);
                                    dx.data[i] += gy.at(ni, cc, y, x2);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[node.parents[0].0], dx);
                }
                Op::Linear => {
                    let (x, wgt, b) = (node.parents[0], node.parents[1], node.parents[2]);
                    let xv = self.value(x);
                    let wv = self.value(wgt);
                    let (n, fin, _, _) = xv.shape();
                    let fout = wv.n;
                    let mut dx = Feat::zeros(n, fin, 1, 1);
                    let mut dw = Feat::zeros(fout, fin, 1, 1);
                    let mut db = Feat::zeros(1, fout, 1, 1);
                    unsafe {
                        // dX = dY · W
                        T::gemm(
                            n,
                            fout,
                            fin,
                            T::ONE,
                            gy.data.as_ptr(),
                            fout as isize,
                            1,
                            wv.data.as_ptr(),
                            fin as isize,
                            1,
                            T::ZERO,
                            dx.data.as_mut_ptr(),
                            fin as isize,
                            1,
                        );
                        // dW = dYᵀ · X
                        T::gemm(
                            fout,
                            n,
                            fin,
                            T::ONE,
                            gy.data.as_ptr(),
                            1,
                            fout as isize,
                            xv.data.as_ptr(),
                            fin as isize,
                            1,
                            T::ZERO,
                            dw.data.as_mut_ptr(),
                            fin as isize,
                            1,
                        );
                    }
                    for ni in 0..n {
                        for o in 0..fout {
                            db.data[o] += gy.data[ni * fout + o];
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[wgt.0], dw);
                    accumulate(&mut grads[b.0], db);
                }
                Op::MseVs { target } => {
                    let x = node.parents[0];
                    let xv = self.value(x);
                    let scale = gy.data[0].to_f64() * 2.0 / xv.numel() as f64;
                    let mut dx = Feat::zeros(xv.n, xv.c, xv.h, xv.w);
                    for ((d, a), b) in dx.data.iter_mut().zip(&xv.data).zip(&target.data) {
                        *d = T::from_f64((a.to_f64() - b.to_f64()) * scale);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }
        Gradients { grads }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Feat<T>>, g: Feat<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    fn rand_feat(prng: &mut Prng, n: usize, c: usize, h: usize, w: usize) -> Feat<f64> {
        let mut f = Feat::zeros(n, c, h, w);
        for v in &mut f.data {
            *v = prng.normal();
        }
        f
    }

    /// Central-difference check of d(loss)/d(leaf) for a builder closure.
    fn fd_check(
        build: impl Fn(&mut Tape<f64>, Feat<f64>) -> NodeId,
        input: Feat<f64>,
        coords: &[usize],
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, input.clone());
        let x_id = NodeId(0);
        let mut grads = tape.backward(loss);
        let analytic = grads.take(x_id).expect("input grad");
        let h = 1e-5;
        for &i in coords {
            let mut plus = input.clone();
            plus.data[i] += h;
            let mut t1 = Tape::new();
            let lp_id = build(&mut t1, plus);
            let lp = t1.scalar_value(lp_id);
            let mut minus = input.clone();
            minus.data[i] -= h;
            let mut t2 = Tape::new();
            let lm_id = build(&mut t2, minus);
            let lm = t2.scalar_value(lm_id);
            let fd = (lp - lm) / (2.0 * h);
            let ad = analytic.data[i];
            let denom = ad.abs().max(fd.abs()).max(1e-8);
            assert!(
                (ad - fd).abs() / denom < tol,
                "coord {i}: ad {ad} fd {fd}"
            );
        }
    }

    #[test]
    fn conv_gradients_match_fd() {
        let mut p = Prng::from_seed(1);
        let x = rand_feat(&mut p, 2, 3, 5, 5);
        let w = rand_feat(&mut p, 4, 3, 3, 3);
        let b = rand_feat(&mut p, 1, 4, 1, 1);
        let target = rand_feat(&mut p, 2, 4, 5, 5);
        let build = move |tape: &mut Tape<f64>, input: Feat<f64>| {
            let x = tape.leaf(input);
            let w = tape.leaf(w.clone());
            let b = tape.leaf(b.clone());
            let y = tape.conv2d(x, w, b, 1).unwrap();
            tape.mse_vs(y, target.clone()).unwrap()
        };
        fd_check(build, x, &[0, 7, 33, 74, 149], 1e-6);
    }

    #[test]
    fn composite_graph_gradients_match_fd() {
        // groupnorm → silu → conv → pool → upsample → add input → mse
        let mut p = Prng::from_seed(2);
        let x = rand_feat(&mut p, 1, 4, 4, 4);
        let gamma = rand_feat(&mut p, 1, 4, 1, 1);
        let beta = rand_feat(&mut p, 1, 4, 1, 1);
        let w = rand_feat(&mut p, 4, 4, 3, 3);
        let b = rand_feat(&mut p, 1, 4, 1, 1);
        let target = rand_feat(&mut p, 1, 4, 4, 4);
        let build = move |tape: &mut Tape<f64>, input: Feat<f64>| {
            let x = tape.leaf(input);
            let gm = tape.leaf(gamma.clone());
            let bt = tape.leaf(beta.clone());
            let wl = tape.leaf(w.clone());
            let bl = tape.leaf(b.clone());
            let gn = tape.group_norm(x, gm, bt, 2, 1e-5).unwrap();
            let s = tape.silu(gn);
            let cv = tape.conv2d(s, wl, bl, 1).unwrap();
            let pooled = tape.avg_pool2(cv).unwrap();
            let up = tape.upsample_nearest2(pooled);
            let sum = tape.add(up, x).unwrap();
            tape.mse_vs(sum, target.clone()).unwrap()
        };
        fd_check(build, x, &[0, 5, 17, 31, 47, 63], 1e-5);
    }

    #[test]
    fn linear_and_bias_gradients_match_fd() {
        let mut p = Prng::from_seed(3);
        let x = rand_feat(&mut p, 3, 6, 1, 1);
        let w = rand_feat(&mut p, 5, 6, 1, 1);
        let b = rand_feat(&mut p, 1, 5, 1, 1);
        let target = rand_feat(&mut p, 3, 5, 1, 1);
        let build = move |tape: &mut Tape<f64>, input: Feat<f64>| {
            let x = tape.leaf(input);
            let wl = tape.leaf(w.clone());
            let bl = tape.leaf(b.clone());
            let y = tape.linear(x, wl, bl).unwrap();
            let s = tape.silu(y);
            tape.mse_vs(s, target.clone()).unwrap()
        };
        fd_check(build, x, &[0, 5, 11, 17]
, 1e-6);
    }

    #[test]
    fn concat_and_channel_bias_gradients_match_fd() {
        let mut p = Prng::from_seed(4);
        let x = rand_feat(&mut p, 2, 3, 3, 3);
        let other = rand_feat(&mut p, 2, 2, 3, 3);
        let bias = rand_feat(&mut p, 2, 5, 1, 1);
        let target = rand_feat(&mut p, 2, 5, 3, 3);
        let build = move |tape: &mut Tape<f64>, input: Feat<f64>| {
            let x = tape.leaf(input);
            let o = tape.leaf(other.clone());
            let bn = tape.leaf(bias.clone());
            let cat = tape.concat_channels(x, o).unwrap();
            let with_bias = tape.add_channel_bias(cat, bn).unwrap();
            tape.mse_vs(with_bias, target.clone()).unwrap()
        };
        fd_check(build, x, &[0, 13, 26, 53], 1e-6);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        // detached target equal to the input value: d/dx mean((x-x0)^2) = 0 at x = x0
        let mut p = Prng::from_seed(5);
        let x = rand_feat(&mut p, 1, 2, 2, 2);
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let loss = tape.mse_vs(xid, x.clone()).unwrap();
        let mut grads = tape.backward(loss);
        let g = grads.take(xid).unwrap();
        assert!(g.data.iter().all(|v| *v == 0.0));
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn doubling_loss_doubles_gradients_exactly() {
        let mut p = Prng::from_seed(6);
        let x = rand_feat(&mut p, 1, 2, 4, 4);
        let w = rand_feat(&mut p, 2, 2, 3, 3);
        let b = rand_feat(&mut p, 1, 2, 1, 1);
        let target = rand_feat(&mut p, 1, 2, 4, 4);
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let wid = tape.leaf(w);
        let bid = tape.leaf(b);
        let y = tape.conv2d(xid, wid, bid, 1).unwrap();
        let loss = tape.mse_vs(y, target).unwrap();
        let doubled_loss = tape.add(loss, loss).unwrap();
        let g1 = tape.backward(loss).take(wid).unwrap();
        let g2 = tape.backward(doubled_loss).take(wid).unwrap();
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert_eq!(*b, 2.0 * *a);
        }
    }
}
