//! Token refinement: mask-guided pooling of a memory frame's tokens into
//! foreground and background prototypes.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::init;
use crate::numkern::{kernels, ConvGeom, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::tokenizer::{Grid, MaskMap};

/// Shared conv trunk `[(C/4)×(C+1)×3×3]` and the fc heads `[(C/4)×K]`.
/// `fc_bg` is `None` when both prototype counts agree and one head serves both.
#[derive(Clone, Copy, Debug)]
pub struct TrWeights {
    pub conv: ParamId,
    pub fc_fg: ParamId,
    pub fc_bg: Option<ParamId>,
}

impl TrWeights {
    pub fn register<T: Real, R: Rng>(ps: &mut ParamSet<T>, dim: usize, k_fg: usize, k_bg: usize, rng: &mut R) -> Self {
        let q = dim / 4;
        let conv = ps.add("refine.conv", init::fan_in_normal(&[q, dim + 1, 3, 3], (dim + 1) * 9, 1.0, rng));
        let fc_fg = ps.add("refine.fc_fg", init::trunc_normal(&[q, k_fg], 0.02, rng));
        let fc_bg = (k_fg != k_bg).then(|| ps.add("refine.fc_bg", init::trunc_normal(&[q, k_bg], 0.02, rng)));
        Self { conv, fc_fg, fc_bg }
    }

    pub fn head(&self, kind: ProtoKind) -> ParamId {
        match kind {
            ProtoKind::Foreground => self.fc_fg,
            ProtoKind::Background => self.fc_bg.unwrap_or(self.fc_fg),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtoKind {
    Foreground,
    Background,
}

/// Column-stochastic `N×K` weights; suppressed rows are exactly zero.
#[derive(Clone, Debug)]
pub struct AssignmentMatrix<T: Real = f32> {
    pub weights: Tensor<T>,
    pub suppressed: Vec<bool>,
}

impl<T: Real> AssignmentMatrix<T> {
    /// Each token's weight averaged over the `K` prototypes.
    pub fn row_means(&self) -> Vec<T> {
        let k = T::of(self.weights.cols() as f64);
        (0..self.weights.rows()).map(|i| self.weights.row(i).iter().fold(T::zero(), |a, &x| a + x) / k).collect()
    }
}

/// `K` pooled tokens on a graph. Inert sets are zero vectors produced when
/// the region they pool from is empty.
#[derive(Clone, Debug)]
pub struct PrototypeSet {
    pub protos: Var,
    pub kind: ProtoKind,
    pub inert: bool,
}

#[derive(Clone, Debug)]
pub struct RefinedMemory<T: Real> {
    pub fg: PrototypeSet,
    pub bg: PrototypeSet,
    pub a_fg: Option<AssignmentMatrix<T>>,
    pub a_bg: Option<AssignmentMatrix<T>>,
}

/// Per-patch foreground fraction `[N×1]` and the eligibility flags `frac > 0`.
pub fn downsample_mask<T: Real>(mask: &MaskMap, patch: usize) -> Result<(Tensor<T>, Vec<bool>)> {
    let grid = Grid::of(mask.height, mask.width, patch)?;
    let area = (patch * patch) as f64;
    let mut frac = Vec::with_capacity(grid.len());
    let mut target = Vec::with_capacity(grid.len());
    for gy in 0..grid.rows {
        for gx in 0..grid.cols {
            let mut on = 0usize;
            for y in gy * patch..(gy + 1) * patch {
                for x in gx * patch..(gx + 1) * patch {
                    on += mask.is_fg(y, x) as usize;
                }
            }
            frac.push(T::of(on as f64 / area));
            target.push(on > 0);
        }
    }
    Ok((Tensor::new(&[grid.len(), 1], frac)?, target))
}

/// `fc(GELU(conv3×3([h, frac])))` as `N×K` logits.
pub fn cluster_logits<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    h: Var,
    frac: &Tensor<T>,
    grid: Grid,
    conv: ParamId,
    fc: ParamId,
) -> Result<Var> {
    let (n, c) = (g.value(h).rows(), g.value(h).cols());
    if c % 4 != 0 {
        return Err(Error::config(format!("token dim {c} not divisible by 4")));
    }
    if n != grid.len() || frac.len() != n {
        return Err(Error::shape(format!("{n} tokens, {} fractions, grid {grid:?}", frac.len())));
    }
    let ht = g.transpose(h)?;
    let f = g.constant(frac.reshape(&[1, n])?);
    let stacked = g.concat_rows(&[ht, f])?;
    let map = g.reshape(stacked, &[c + 1, grid.rows, grid.cols])?;
    let k = g.param(ps, conv);
    let y = g.conv2d(map, k, ConvGeom { stride: 1, pad: 1 })?;
    let y = g.gelu(y)?;
    let y = g.reshape(y, &[c / 4, n])?;
    let y = g.transpose(y)?;
    let w = g.param(ps, fc);
    g.matmul(y, w)
}

/// Rows with `target == false` set to −∞.
pub fn suppress_nontarget<T: Real>(logits: &Tensor<T>, target: &[bool]) -> Result<Tensor<T>> {
    check_target(logits.rows(), target)?;
    let mut out = logits.clone();
    for (i, &t) in target.iter().enumerate() {
        if !t {
            out.row_mut(i).fill(T::neg_infinity());
        }
    }
    Ok(out)
}

fn check_target(rows: usize, target: &[bool]) -> Result<()> {
    if target.len() != rows {
        return Err(Error::shape(format!("{} flags for {rows} rows", target.len())));
    }
    if !target.contains(&true) {
        return Err(Error::EmptyRegion("no target token"));
    }
    Ok(())
}

/// Column-wise softmax of suppressed logits.
pub fn assign<T: Real>(suppressed_logits: &Tensor<T>, target: &[bool]) -> Result<AssignmentMatrix<T>> {
    let weights = kernels::softmax_over_axis(suppressed_logits, 0)?;
    Ok(AssignmentMatrix { weights, suppressed: target.iter().map(|t| !t).collect() })
}

/// `Ŵᵀ H`.
pub fn pool_prototypes<T: Real>(a: &AssignmentMatrix<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    kernels::matmul_tn(&a.weights, h)
}

/// Graph form of logits → suppression → softmax → pooling for one kind.
/// Falls back to an inert zero set when no token is eligible.
fn pool_kind<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    h: Var,
    frac: &Tensor<T>,
    target: &[bool],
    grid: Grid,
    tr: &TrWeights,
    kind: ProtoKind,
) -> Result<(PrototypeSet, Option<AssignmentMatrix<T>>)> {
    let fc = tr.head(kind);
    if !target.contains(&true) {
        let k = ps.value(fc).dims()[1];
        let c = g.value(h).cols();
        let protos = g.constant(Tensor::zeros(&[k, c]));
        return Ok((PrototypeSet { protos, kind, inert: true }, None));
    }
    let logits = cluster_logits(g, ps, h, frac, grid, tr.conv, fc)?;
    let sup = g.suppress_rows(logits, target)?;
    let w = g.softmax(sup, 0)?;
    let a = AssignmentMatrix { weights: g.value(w).clone(), suppressed: target.iter().map(|t| !t).collect() };
    let wt = g.transpose(w)?;
    let protos = g.matmul(wt, h)?;
    Ok((PrototypeSet { protos, kind, inert: false }, Some(a)))
}

/// Foreground prototypes from `M`, background prototypes from `1 − M`.
pub fn refine_memory<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    h: Var,
    grid: Grid,
    mask: &MaskMap,
    tr: &TrWeights,
    patch: usize,
) -> Result<RefinedMemory<T>> {
    let (frac, target) = downsample_mask::<T>(mask, patch)?;
    if frac.rows() != g.value(h).rows() {
        return Err(Error::shape(format!("mask gives {} patches for {} tokens", frac.rows(), g.value(h).rows())));
    }
    let frac_bg = frac.map(|f| T::one() - f);
    let target_bg: Vec<bool> = frac.data().iter().map(|&f| f < T::one()).collect();
    let (fg, a_fg) = pool_kind(g, ps, h, &frac, &target, grid, tr, ProtoKind::Foreground)?;
    let (bg, a_bg) = pool_kind(g, ps, h, &frac_bg, &target_bg, grid, tr, ProtoKind::Background)?;
    Ok(RefinedMemory { fg, bg, a_fg, a_bg })
}
