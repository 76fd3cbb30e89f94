//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value;
//! [`Graph::backward`] walks the tape in reverse and applies each node's
//! adjoint. Parameters enter through [`Graph::param`], which remembers the
//! binding so gradients can be folded back into the owning [`ParamSet`].

use std::ops::Range;

use super::kernels::{self, ConvGeom, NormStats};
use super::param::{ParamId, ParamSet};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How disallowed attention pairs are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionKernel {
    /// Dense scores with an additive −∞ bias on disallowed pairs.
    Masked,
    /// Per-segment blocks only; disallowed pairs are never computed.
    #[default]
    Blockwise,
}

/// Attention probabilities saved for one head: `(rows, P[rows×rows])` blocks.
type HeadProbs<T> = Vec<(Range<usize>, Tensor<T>)>;

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats<T> },
    Conv2d { x: Var, k: Var, geom: ConvGeom },
    TransposedConv2d { x: Var, k: Var, stride: usize },
    Resize(Var),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SuppressRows { x: Var, keep: Vec<bool> },
    Softmax { x: Var, axis: usize },
    Attention { qkv: Var, heads: usize, probs: Vec<HeadProbs<T>> },
    BootstrappedBce { logits: Var, target: Vec<T>, selected: Vec<usize> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients indexed by [`Var`], produced by [`Graph::backward`].
pub struct Grads<T: Real> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, what: &'static str) -> Result<Var> {
        if !matches!(op, Op::SuppressRows { .. } | Op::Leaf) && !value.all_finite() {
            return Err(Error::NonFinite(what));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, ps: &ParamSet<T>, id: ParamId) -> Var {
        let v = self.constant(ps.value(id).clone());
        if ps.get(id).learnable {
            self.bindings.push((id, v));
        }
        v
    }

    pub fn bindings(&self) -> &[(ParamId, Var)] {
        &self.bindings
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose2d()?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(dims)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    /// `x[…×C] + b[C]` broadcast over every leading index.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = *xv.dims().last().unwrap();
        if bv.len() != c {
            return Err(Error::shape(format!("bias {:?} for {:?}", bv.dims(), xv.dims())));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, b), "add_bias")
    }

    /// `x[C×H×W] + b[C]` per channel.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.dims()[0];
        if bv.len() != c {
            return Err(Error::shape(format!("channel bias {:?} for {:?}", bv.dims(), xv.dims())));
        }
        let plane = xv.len() / c;
        let mut out = xv.clone();
        for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bb = bv.data()[ch];
            chunk.iter_mut().for_each(|o| *o += bb);
        }
        self.push(out, Op::AddChannelBias(x, b), "add_channel_bias")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = kernels::gelu(self.value(a));
        self.push(out, Op::Gelu(a), "gelu")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, stats) = kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta))?;
        self.push(out, Op::LayerNorm { x, gamma, beta, stats }, "layer_norm")
    }

    pub fn conv2d(&mut self, x: Var, k: Var, geom: ConvGeom) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(k), geom)?;
        self.push(out, Op::Conv2d { x, k, geom }, "conv2d")
    }

    pub fn transposed_conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let out = kernels::transposed_conv2d(self.value(x), self.value(k), stride)?;
        self.push(out, Op::TransposedConv2d { x, k, stride }, "transposed_conv2d")
    }

    pub fn bilinear_resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = kernels::bilinear_resize(self.value(x), h, w)?;
        self.push(out, Op::Resize(x), "bilinear_resize")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&vals)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn slice_rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let out = self.value(x).slice_rows(rows.start, rows.end)?;
        self.push(out, Op::SliceRows { x, start: rows.start }, "slice_rows")
    }

    /// Rows with `keep[i] == false` become −∞; the others pass through.
    pub fn suppress_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.rows() {
            return Err(Error::shape(format!("{} keep flags for {:?}", keep.len(), xv.dims())));
        }
        let mut out = xv.clone();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).fill(T::neg_infinity());
            }
        }
        self.push(out, Op::SuppressRows { x, keep: keep.to_vec() }, "suppress_rows")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax_over_axis(self.value(x), axis)?;
        self.push(out, Op::Softmax { x, axis }, "softmax")
    }

    /// Multi-head scaled dot-product attention over a fused `qkv[T×3C]` input.
    ///
    /// `segments` lists the token ranges allowed to attend to each other; a
    /// single range covering `0..T` is global attention. Returns `[T×C]`.
    pub fn attention(
        &mut self,
        qkv: Var,
        heads: usize,
        segments: &[Range<usize>],
        kernel: AttentionKernel,
    ) -> Result<Var> {
        let (out, probs) = attention_forward(self.value(qkv), heads, segments, kernel)?;
        self.push(out, Op::Attention { qkv, heads, probs }, "attention")
    }

    /// Full `T×T` attention matrix per head for an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<Vec<Tensor<T>>> {
        let Op::Attention { probs, .. } = &self.nodes[v.0].op else {
            return None;
        };
        let t = self.value(v).rows();
        Some(
            probs
                .iter()
                .map(|blocks| {
                    let mut full = Tensor::zeros(&[t, t]);
                    for (r, p) in blocks {
                        let n = r.len();
                        for i in 0..n {
                            full.row_mut(r.start + i)[r.start..r.end].copy_from_slice(p.row(i));
                        }
                    }
                    full
                })
                .collect(),
        )
    }

    /// Mean binary cross-entropy over the `⌈top_p·n⌉` highest-loss pixels.
    pub fn bootstrapped_bce(&mut self, logits: Var, target: &[T], top_p: f64) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != target.len() {
            return Err(Error::shape(format!("{} targets for logits {:?}", target.len(), lv.dims())));
        }
        let (loss, selected) = bootstrapped_bce_forward(lv.data(), target, top_p)?;
        self.push(
            Tensor::scalar(loss),
            Op::BootstrappedBce { logits, target: target.to_vec(), selected },
            "bootstrapped_bce",
        )
    }

    /// Reverse pass from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!("backward from non-scalar {:?}", self.value(loss).dims())));
        }
        let mut slots: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = slots[idx].take() else {
                continue;
            };
            self.apply_adjoint(idx, &g, &mut slots)?;
            slots[idx] = Some(g);
        }
        Ok(Grads { slots })
    }

    /// Fold gradients of bound parameters into `ps[..].grad`.
    pub fn accumulate(&self, grads: &Grads<T>, ps: &mut ParamSet<T>) -> Result<()> {
        for &(id, v) in &self.bindings {
            if let Some(g) = grads.get(v) {
                ps.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    fn apply_adjoint(&self, idx: usize, g: &Tensor<T>, slots: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = kernels::matmul_nt(g, val(*b))?;
                let db = kernels::matmul_tn(val(*a), g)?;
                acc(slots, *a, da)?;
                acc(slots, *b, db)?;
            }
            Op::Transpose(a) => acc(slots, *a, g.transpose2d()?)?,
            Op::Reshape(a) => acc(slots, *a, g.reshape(val(*a).dims())?)?,
            Op::Add(a, b) => {
                acc(slots, *a, g.clone())?;
                acc(slots, *b, g.clone())?;
            }
            Op::AddBias(x, b) => {
                let c = val(*b).len();
                let mut db = Tensor::zeros(val(*b).dims());
                for row in g.data().chunks(c) {
                    for (d, &gg) in db.data_mut().iter_mut().zip(row) {
                        *d += gg;
                    }
                }
                acc(slots, *x, g.clone())?;
                acc(slots, *b, db)?;
            }
            Op::AddChannelBias(x, b) => {
                let c = val(*b).len();
                let plane = g.len() / c;
                let db = Tensor::from_fn(val(*b).dims(), |ch| {
                    g.data()[ch * plane..(ch + 1) * plane].iter().fold(T::zero(), |s, &v| s + v)
                });
                acc(slots, *x, g.clone())?;
                acc(slots, *b, db)?;
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(val(*b), |gg, y| gg * y)?;
                let db = g.zip_map(val(*a), |gg, x| gg * x)?;
                acc(slots, *a, da)?;
                acc(slots, *b, db)?;
            }
            Op::Scale(a, s) => acc(slots, *a, g.scale(*s))?,
            Op::Sum(a) => {
                let gg = g.data()[0];
                acc(slots, *a, Tensor::full(val(*a).dims(), gg))?;
            }
            Op::Gelu(a) => {
                let da = val(*a).zip_map(g, |x, gg| kernels::gelu_grad_scalar(x) * gg)?;
                acc(slots, *a, da)?;
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let (dx, dg, db) = kernels::layer_norm_backward(val(*x), val(*gamma), stats, g);
                acc(slots, *x, dx)?;
                acc(slots, *gamma, dg)?;
                acc(slots, *beta, db)?;
            }
            Op::Conv2d { x, k, geom } => {
                let (dx, dk) = kernels::conv2d_backward(val(*x), val(*k), *geom, g)?;
                acc(slots, *x, dx)?;
                acc(slots, *k, dk)?;
            }
            Op::TransposedConv2d { x, k, stride } => {
                let (dx, dk) = kernels::transposed_conv2d_backward(val(*x), val(*k), *stride, g)?;
                acc(slots, *x, dx)?;
                acc(slots, *k, dk)?;
            }
            Op::Resize(x) => acc(slots, *x, kernels::bilinear_resize_backward(val(*x).dims(), g))?,
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = val(p).rows();
                    acc(slots, p, g.slice_rows(start, start + n)?)?;
                    start += n;
                }
            }
            Op::SliceRows { x, start } => {
                let src = val(*x);
                let c = src.cols();
                let mut dx = Tensor::zeros(src.dims());
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(slots, *x, dx)?;
            }
            Op::SuppressRows { x, keep } => {
                let mut dx = g.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        dx.row_mut(r).fill(T::zero());
                    }
                }
                acc(slots, *x, dx)?;
            }
            Op::Softmax { x, axis } => acc(slots, *x, kernels::softmax_backward(&node.value, g, *axis))?,
            Op::Attention { qkv, heads, probs } => {
                let dqkv = attention_backward(val(*qkv), *heads, probs, g)?;
                acc(slots, *qkv, dqkv)?;
            }
            Op::BootstrappedBce { logits, target, selected } => {
                let lv = val(*logits);
                let scale = g.data()[0] / T::of(selected.len() as f64);
                let mut dl = Tensor::zeros(lv.dims());
                for &i in selected {
                    let x = lv.data()[i];
                    dl.data_mut()[i] = (sigmoid(x) - target[i]) * scale;
                }
                acc(slots, *logits, dl)?;
            }
        }
        Ok(())
    }
}

fn acc<T: Real>(slots: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut slots[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable per-pixel BCE on a logit.
#[inline]
pub fn bce_with_logit<T: Real>(x: T, y: T) -> T {
    x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln()
}

fn bootstrapped_bce_forward<T: Real>(logits: &[T], target: &[T], top_p: f64) -> Result<(T, Vec<usize>)> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::config(format!("top_p {top_p} outside (0, 1]")));
    }
    let n = logits.len();
    let losses: Vec<T> = logits.iter().zip(target).map(|(&x, &y)| bce_with_logit(x, y)).collect();
    let k = ((top_p * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    if k < n {
        order.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap().then(a.cmp(&b)));
        order.truncate(k);
        order.sort_unstable();
    }
    let total = order.iter().fold(T::zero(), |s, &i| s + losses[i]);
    Ok((total / T::of(k as f64), order))
}

/// Contiguous `[rows × dh]` copy of columns `col..col+dh` of `qkv`.
fn gather<T: Real>(qkv: &Tensor<T>, rows: &Range<usize>, col: usize, dh: usize) -> Tensor<T> {
    let mut out = Vec::with_capacity(rows.len() * dh);
    for r in rows.clone() {
        out.extend_from_slice(&qkv.row(r)[col..col + dh]);
    }
    Tensor::new(&[rows.len(), dh], out).expect("gather dims")
}

fn check_segments(t: usize, segments: &[Range<usize>]) -> Result<()> {
    let mut next = 0;
    for s in segments {
        if s.start != next || s.end <= s.start {
            return Err(Error::Structure(format!("segments {segments:?} do not tile 0..{t}")));
        }
        next = s.end;
    }
    if next != t {
        return Err(Error::Structure(format!("segments {segments:?} do not tile 0..{t}")));
    }
    Ok(())
}

pub(crate) fn attention_forward<T: Real>(
    qkv: &Tensor<T>,
    heads: usize,
    segments: &[Range<usize>],
    kernel: AttentionKernel,
) -> Result<(Tensor<T>, Vec<HeadProbs<T>>)> {
    if qkv.rank() != 2 || heads == 0 || qkv.dims()[1] % (3 * heads) != 0 {
        return Err(Error::shape(format!("attention qkv {:?} with {heads} heads", qkv.dims())));
    }
    let t = qkv.rows();
    check_segments(t, segments)?;
    let c = qkv.dims()[1] / 3;
    let dh = c / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut out = Tensor::zeros(&[t, c]);
    let mut all = Vec::with_capacity(heads);

    let blocks: Vec<Range<usize>> = match kernel {
        AttentionKernel::Blockwise => segments.to_vec(),
        AttentionKernel::Masked => vec![0..t],
    };
    let seg_of: Vec<usize> = {
        let mut v = vec![0; t];
        for (s, r) in segments.iter().enumerate() {
            v[r.clone()].iter_mut().for_each(|x| *x = s);
        }
        v
    };

    for h in 0..heads {
        let mut head_probs = Vec::with_capacity(blocks.len());
        for r in &blocks {
            let q = gather(qkv, r, h * dh, dh);
            let k = gather(qkv, r, c + h * dh, dh);
            let v = gather(qkv, r, 2 * c + h * dh, dh);
            let n = r.len();
            let mut s = kernels::matmul_nt(&q, &k)?;
            for x in s.data_mut() {
                *x = *x * scale;
            }
            if kernel == AttentionKernel::Masked {
                for i in 0..n {
                    let si = seg_of[r.start + i];
                    for j in 0..n {
                        let bias = if seg_of[r.start + j] == si { T::zero() } else { T::neg_infinity() };
                        s.data_mut()[i * n + j] = s.data()[i * n + j] + bias;
                    }
                }
            }
            for i in 0..n {
                if !kernels::softmax_strided(s.data_mut(), i * n, n, 1) {
                    return Err(Error::DegenerateSlice(r.start + i));
                }
            }
            let o = kernels::matmul(&s, &v)?;
            for i in 0..n {
                out.row_mut(r.start + i)[h * dh..(h + 1) * dh].copy_from_slice(o.row(i));
            }
            head_probs.push((r.clone(), s));
        }
        all.push(head_probs);
    }
    Ok((out, all))
}

fn attention_backward<T: Real>(
    qkv: &Tensor<T>,
    heads: usize,
    probs: &[HeadProbs<T>],
    dout: &Tensor<T>,
) -> Result<Tensor<T>> {
    let c = qkv.dims()[1] / 3;
    let dh = c / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dqkv = Tensor::zeros(qkv.dims());
    for (h, blocks) in probs.iter().enumerate() {
        for (r, p) in blocks {
            let q = gather(qkv, r, h * dh, dh);
            let k = gather(qkv, r, c + h * dh, dh);
            let v = gather(qkv, r, 2 * c + h * dh, dh);
            let dout_b = gather(dout, r, h * dh, dh);
            let dv = kernels::matmul_tn(p, &dout_b)?;
            let dp = kernels::matmul_nt(&dout_b, &v)?;
            let mut ds = kernels::softmax_backward(p, &dp, 1);
            for x in ds.data_mut() {
                *x = *x * scale;
            }
            let dq = kernels::matmul(&ds, &k)?;
            let dk = kernels::matmul_tn(&ds, &q)?;
            for i in 0..r.len() {
                let row = dqkv.row_mut(r.start + i);
                for j in 0..dh {
                    row[h * dh + j] += dq.row(i)[j];
                    row[c + h * dh + j] += dk.row(i)[j];
                    row[2 * c + h * dh + j] += dv.row(i)[j];
                }
            }
        }
    }
    Ok(dqkv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn backward_through_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("p", Tensor::new(&[3], vec![1.0, -2.0, 0.25]).unwrap());
        let mut g = Graph::new();
        let p = g.param(&ps, id);
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq).unwrap();
        let loss = g.scale(s, 0.5).unwrap();
        let grads = g.backward(loss).unwrap();
        g.accumulate(&grads, &mut ps).unwrap();
        assert_eq!(ps.get(id).grad.data(), &[1.0, -2.0, 0.25]);
    }

    #[test]
    fn bootstrapped_selection_by_hand() {
        // logits chosen so per-pixel losses are 0.1, 0.2, 0.3, 0.4 against target 1
        let losses = [0.1f64, 0.2, 0.3, 0.4];
        let logits: Vec<f64> = losses.iter().map(|l| -((l.exp() - 1.0).ln())).collect();
        for (x, l) in logits.iter().zip(losses) {
            assert_abs_diff_eq!(bce_with_logit(*x, 1.0), l, epsilon = 1e-12);
        }
        let (loss, sel) = bootstrapped_bce_forward(&logits, &[1.0; 4], 0.5).unwrap();
        assert_abs_diff_eq!(loss, 0.35, epsilon = 1e-12);
        assert_eq!(sel, vec![2, 3]);
        let (full, _) = bootstrapped_bce_forward(&logits, &[1.0; 4], 1.0).unwrap();
        assert_abs_diff_eq!(full, 0.25, epsilon = 1e-12);
        assert!(bootstrapped_bce_forward(&logits, &[1.0; 4], 0.0).is_err());
    }

    #[test]
    fn segments_must_tile() {
        let qkv = Tensor::<f64>::zeros(&[4, 6]);
        assert!(attention_forward(&qkv, 1, &[0..2, 3..4], AttentionKernel::Blockwise).is_err());
        assert!(attention_forward(&qkv, 1, &[0..2, 2..3], AttentionKernel::Blockwise).is_err());
        assert!(attention_forward(&qkv, 1, &[0..2, 2..4], AttentionKernel::Blockwise).is_ok());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::full(&[2], f32::MAX));
        assert!(matches!(g.scale(a, 10.0), Err(Error::NonFinite("scale"))));
    }
}
