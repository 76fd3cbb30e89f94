//! Mask decoder over the final search tokens and the training loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::numkern::{sigmoid, ConvGeom, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::tokenizer::{Grid, MaskMap};

const SAME: ConvGeom = ConvGeom { stride: 1, pad: 1 };

/// Two ×2 upsampling stages, each followed by a 3×3 refinement conv, then a
/// single-channel prediction conv. Channels run C → C/2 → C/4 → 1.
#[derive(Clone, Copy, Debug)]
pub struct DecoderWeights {
    pub up1: ParamId,
    pub up1_b: ParamId,
    pub ref1: ParamId,
    pub ref1_b: ParamId,
    pub up2: ParamId,
    pub up2_b: ParamId,
    pub ref2: ParamId,
    pub ref2_b: ParamId,
    pub pred: ParamId,
    pub pred_b: ParamId,
}

impl DecoderWeights {
    pub fn register<T: Real, R: Rng>(ps: &mut ParamSet<T>, dim: usize, rng: &mut R) -> Self {
        let (c1, c2) = (dim / 2, dim / 4);
        Self {
            up1: ps.add("decoder.up1.weight", init::fan_in_normal(&[dim, c1, 4, 4], dim * 4, 1.0, rng)),
            up1_b: ps.add("decoder.up1.bias", Tensor::zeros(&[c1])),
            ref1: ps.add("decoder.ref1.weight", init::fan_in_normal(&[c1, c1, 3, 3], c1 * 9, 1.0, rng)),
            ref1_b: ps.add("decoder.ref1.bias", Tensor::zeros(&[c1])),
            up2: ps.add("decoder.up2.weight", init::fan_in_normal(&[c1, c2, 4, 4], c1 * 4, 1.0, rng)),
            up2_b: ps.add("decoder.up2.bias", Tensor::zeros(&[c2])),
            ref2: ps.add("decoder.ref2.weight", init::fan_in_normal(&[c2, c2, 3, 3], c2 * 9, 1.0, rng)),
            ref2_b: ps.add("decoder.ref2.bias", Tensor::zeros(&[c2])),
            pred: ps.add("decoder.pred.weight", Tensor::zeros(&[1, c2, 3, 3])),
            pred_b: ps.add("decoder.pred.bias", Tensor::zeros(&[1])),
        }
    }
}

fn conv_gelu<T: Real>(g: &mut Graph<T>, ps: &ParamSet<T>, x: Var, k: ParamId, b: ParamId) -> Result<Var> {
    let (kv, bv) = (g.param(ps, k), g.param(ps, b));
    let y = g.conv2d(x, kv, SAME)?;
    let y = g.add_channel_bias(y, bv)?;
    g.gelu(y)
}

fn up_gelu<T: Real>(g: &mut Graph<T>, ps: &ParamSet<T>, x: Var, k: ParamId, b: ParamId) -> Result<Var> {
    let (kv, bv) = (g.param(ps, k), g.param(ps, b));
    let y = g.transposed_conv2d(x, kv, 2)?;
    let y = g.add_channel_bias(y, bv)?;
    g.gelu(y)
}

/// Logits `[1×H×W]` for the search tokens `[N×C]` laid out on `grid`.
pub fn decode_mask<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    tokens: Var,
    grid: Grid,
    w: &DecoderWeights,
    height: usize,
    width: usize,
) -> Result<Var> {
    let tv = g.value(tokens);
    if tv.rank() != 2 || tv.rows() != grid.len() {
        return Err(Error::shape(format!("search tokens {:?} for grid {grid:?}", tv.dims())));
    }
    let c = tv.cols();
    let x = g.transpose(tokens)?;
    let x = g.reshape(x, &[c, grid.rows, grid.cols])?;
    let x = up_gelu(g, ps, x, w.up1, w.up1_b)?;
    let x = conv_gelu(g, ps, x, w.ref1, w.ref1_b)?;
    let x = up_gelu(g, ps, x, w.up2, w.up2_b)?;
    let x = conv_gelu(g, ps, x, w.ref2, w.ref2_b)?;
    let (kv, bv) = (g.param(ps, w.pred), g.param(ps, w.pred_b));
    let x = g.conv2d(x, kv, SAME)?;
    let x = g.add_channel_bias(x, bv)?;
    g.bilinear_resize(x, height, width)
}

/// Elementwise logistic.
pub fn sigmoid_prob<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(sigmoid)
}

/// Per-pixel targets in `{0, 1}` from a binary mask.
pub fn mask_targets<T: Real>(mask: &MaskMap) -> Vec<T> {
    mask.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect()
}

/// Mean BCE over the `⌈top_p·HW⌉` hardest pixels.
pub fn bootstrapped_ce<T: Real>(g: &mut Graph<T>, logits: Var, gt: &MaskMap, top_p: f64) -> Result<Var> {
    g.bootstrapped_bce(logits, &mask_targets(gt), top_p)
}

/// Threshold probabilities at 0.5 into a binary mask with id 1.
pub fn binarize<T: Real>(prob: &Tensor<T>, height: usize, width: usize) -> Result<MaskMap> {
    let half = T::of(0.5);
    MaskMap::new(height, width, prob.data().iter().map(|&p| (p > half) as u8).collect())
}
