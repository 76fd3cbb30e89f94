//! ViT backbone over the joint sequence with a scheduled attention policy:
//! within-frame attention for the first `L` layers, optional token refinement
//! of both memory frames after layer `L`, global attention afterwards.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::numkern::{AttentionKernel, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::refine::{self, RefinedMemory, TrWeights};
use crate::tokenizer::{FrameTag, MaskMap, TokenSeq};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub patch_size: usize,
    /// Number of leading layers that use within-frame attention.
    pub within_frame_layers: usize,
    pub token_refinement: bool,
    pub fg_prototypes: usize,
    pub bg_prototypes: usize,
    pub mlp_ratio: usize,
}

impl ViTConfig {
    /// Desk-scale preset used by the toy trainer.
    pub fn toy() -> Self {
        Self {
            num_layers: 4,
            embed_dim: 64,
            num_heads: 4,
            patch_size: 8,
            within_frame_layers: 1,
            token_refinement: true,
            fg_prototypes: 8,
            bg_prototypes: 8,
            mlp_ratio: 4,
        }
    }

    /// ViT-Base geometry with the default schedule (L = 4, 384/384 prototypes).
    pub fn base() -> Self {
        Self {
            num_layers: 12,
            embed_dim: 768,
            num_heads: 12,
            patch_size: 16,
            within_frame_layers: 4,
            token_refinement: true,
            fg_prototypes: 384,
            bg_prototypes: 384,
            mlp_ratio: 4,
        }
    }

    pub fn large() -> Self {
        Self { num_layers: 24, embed_dim: 1024, num_heads: 16, ..Self::base() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.patch_size == 0 || self.mlp_ratio == 0 {
            return Err(Error::config("layers, heads, patch size and mlp ratio must be positive"));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.embed_dim % 4 != 0 {
            return Err(Error::config(format!("embed dim {} not divisible by 4", self.embed_dim)));
        }
        if self.within_frame_layers > self.num_layers {
            return Err(Error::config(format!(
                "within-frame layers {} exceed {} layers",
                self.within_frame_layers, self.num_layers
            )));
        }
        if self.token_refinement {
            if self.within_frame_layers == 0 {
                return Err(Error::config("token refinement requires at least one within-frame layer"));
            }
            if self.fg_prototypes == 0 || self.bg_prototypes == 0 {
                return Err(Error::config("prototype counts must be positive"));
            }
        }
        Ok(())
    }

    /// Sequence length seen by the global layers for `n` tokens per frame.
    pub fn global_len(&self, n: usize) -> usize {
        if self.token_refinement {
            n + 2 * (self.fg_prototypes + self.bg_prototypes)
        } else {
            3 * n
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Global,
    WithinFrame,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionPolicy {
    pub kind: PolicyKind,
    /// Token ranges that attend among themselves; one range for global.
    pub segments: Vec<Range<usize>>,
}

impl AttentionPolicy {
    pub fn global(len: usize) -> Self {
        Self { kind: PolicyKind::Global, segments: vec![0..len] }
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |r| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.segments.iter().any(|r| r.contains(&i) && r.contains(&j))
    }

    /// Dense boolean matrix, row-major `len × len`.
    pub fn dense(&self) -> Vec<bool> {
        let n = self.len();
        let mut out = vec![false; n * n];
        for r in &self.segments {
            for i in r.clone() {
                out[i * n + r.start..i * n + r.end].iter_mut().for_each(|x| *x = true);
            }
        }
        out
    }

    pub fn allowed_pairs(&self) -> usize {
        self.segments.iter().map(|r| r.len() * r.len()).sum()
    }
}

/// Block-diagonal policy: token `i` attends to `j` iff they share a frame tag.
pub fn within_frame_mask(tags: &[FrameTag]) -> Result<AttentionPolicy> {
    let mut segments: Vec<Range<usize>> = Vec::new();
    let mut seen: Vec<FrameTag> = Vec::new();
    for (i, &tag) in tags.iter().enumerate() {
        match seen.last() {
            Some(&last) if last == tag => segments.last_mut().unwrap().end = i + 1,
            _ => {
                if seen.contains(&tag) {
                    return Err(Error::Structure(format!("frame tag {tag:?} is not contiguous")));
                }
                seen.push(tag);
                segments.push(i..i + 1);
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::Structure("empty token sequence".into()));
    }
    Ok(AttentionPolicy { kind: PolicyKind::WithinFrame, segments })
}

#[derive(Clone, Copy, Debug)]
pub struct BlockWeights {
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    pub heads: usize,
}

impl BlockWeights {
    pub fn register<T: Real, R: Rng>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = dim * mlp_ratio;
        let mut add = |name: &str, t: Tensor<T>| ps.add(format!("{prefix}.{name}"), t);
        Self {
            norm1_gamma: add("norm1.gamma", Tensor::full(&[dim], T::one())),
            norm1_beta: add("norm1.beta", Tensor::zeros(&[dim])),
            qkv_w: add("attn.qkv.weight", init::trunc_normal(&[dim, 3 * dim], 0.02, rng)),
            qkv_b: add("attn.qkv.bias", Tensor::zeros(&[3 * dim])),
            proj_w: add("attn.proj.weight", init::trunc_normal(&[dim, dim], 0.02, rng)),
            proj_b: add("attn.proj.bias", Tensor::zeros(&[dim])),
            norm2_gamma: add("norm2.gamma", Tensor::full(&[dim], T::one())),
            norm2_beta: add("norm2.beta", Tensor::zeros(&[dim])),
            fc1_w: add("mlp.fc1.weight", init::trunc_normal(&[dim, hidden], 0.02, rng)),
            fc1_b: add("mlp.fc1.bias", Tensor::zeros(&[hidden])),
            fc2_w: add("mlp.fc2.weight", init::trunc_normal(&[hidden, dim], 0.02, rng)),
            fc2_b: add("mlp.fc2.bias", Tensor::zeros(&[dim])),
            heads,
        }
    }
}

fn linear<T: Real>(g: &mut Graph<T>, ps: &ParamSet<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let wv = g.param(ps, w);
    let bv = g.param(ps, b);
    let y = g.matmul(x, wv)?;
    g.add_bias(y, bv)
}

/// Fused QKV projection, per-head scaled dot-product attention under
/// `policy`, output projection. Returns `(output, attention node)`.
pub fn multi_head_attention<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    x: Var,
    w: &BlockWeights,
    policy: &AttentionPolicy,
    kernel: AttentionKernel,
) -> Result<(Var, Var)> {
    let qkv = linear(g, ps, x, w.qkv_w, w.qkv_b)?;
    let attn = g.attention(qkv, w.heads, &policy.segments, kernel)?;
    let out = linear(g, ps, attn, w.proj_w, w.proj_b)?;
    Ok((out, attn))
}

/// Pre-norm block: `x + attn(norm(x))`, then `x + mlp(norm(x))`.
pub fn transformer_block<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    x: Var,
    w: &BlockWeights,
    policy: &AttentionPolicy,
    kernel: AttentionKernel,
) -> Result<Var> {
    Ok(run_layer(g, ps, x, w, policy, kernel)?.0)
}

/// Every learnable tensor of the backbone.
#[derive(Clone, Debug)]
pub struct BackboneWeights {
    pub blocks: Vec<BlockWeights>,
    pub refine: Option<TrWeights>,
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
}

impl BackboneWeights {
    pub fn register<T: Real, R: Rng>(ps: &mut ParamSet<T>, cfg: &ViTConfig, rng: &mut R) -> Self {
        let blocks = (0..cfg.num_layers)
            .map(|i| BlockWeights::register(ps, &format!("blocks.{i}"), cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, rng))
            .collect();
        let refine = cfg.token_refinement.then(|| TrWeights::register(ps, cfg.embed_dim, cfg.fg_prototypes, cfg.bg_prototypes, rng));
        let norm_gamma = ps.add("norm.gamma", Tensor::full(&[cfg.embed_dim], T::one()));
        let norm_beta = ps.add("norm.beta", Tensor::zeros(&[cfg.embed_dim]));
        Self { blocks, refine, norm_gamma, norm_beta }
    }
}

/// What one layer saw: its policy and sequence geometry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub policy: PolicyKind,
    pub seq_len: usize,
    pub segment_lens: Vec<usize>,
}

pub struct BackboneOutput<T: Real> {
    /// Final search segment `[N × C]` after the closing layer norm.
    pub search: Var,
    /// Token refinement results for (memory 1, memory 2), when enabled.
    pub refined: Vec<RefinedMemory<T>>,
    pub trace: Vec<LayerTrace>,
    /// Attention nodes per layer, for inspection.
    pub attention: Vec<Var>,
}

fn run_layer<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    x: Var,
    w: &BlockWeights,
    policy: &AttentionPolicy,
    kernel: AttentionKernel,
) -> Result<(Var, Var)> {
    let (gm, bt) = (g.param(ps, w.norm1_gamma), g.param(ps, w.norm1_beta));
    let n1 = g.layer_norm(x, gm, bt)?;
    let (a, attn) = multi_head_attention(g, ps, n1, w, policy, kernel)?;
    let x = g.add(x, a)?;
    let (gm, bt) = (g.param(ps, w.norm2_gamma), g.param(ps, w.norm2_beta));
    let n2 = g.layer_norm(x, gm, bt)?;
    let h = linear(g, ps, n2, w.fc1_w, w.fc1_b)?;
    let h = g.gelu(h)?;
    let m = linear(g, ps, h, w.fc2_w, w.fc2_b)?;
    Ok((g.add(x, m)?, attn))
}

/// Run the schedule over `h0 = [mem1; mem2; search]`.
///
/// `masks` carries the two memory masks and is required iff token
/// refinement is enabled.
pub fn run_backbone<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    h0: &TokenSeq,
    cfg: &ViTConfig,
    weights: &BackboneWeights,
    masks: Option<[&MaskMap; 2]>,
    kernel: AttentionKernel,
) -> Result<BackboneOutput<T>> {
    cfg.validate()?;
    if h0.segments.len() != 3 {
        return Err(Error::Structure(format!("joint sequence has {} segments", h0.segments.len())));
    }
    let n = h0.segments[2].range.len();
    if h0.segments.iter().any(|s| s.range.len() != n) {
        return Err(Error::Structure("memory and search segments differ in length".into()));
    }
    if cfg.token_refinement != masks.is_some() {
        return Err(Error::config("memory masks must be given exactly when token refinement is on"));
    }

    let within = within_frame_mask(&h0.tags())?;
    let mut x = h0.tokens;
    let mut trace = Vec::with_capacity(cfg.num_layers);
    let mut attention = Vec::with_capacity(cfg.num_layers);
    let mut refined = Vec::new();

    for (layer, w) in weights.blocks.iter().enumerate().take(cfg.within_frame_layers) {
        let (y, a) = run_layer(g, ps, x, w, &within, kernel)?;
        x = y;
        attention.push(a);
        trace.push(LayerTrace {
            layer,
            policy: PolicyKind::WithinFrame,
            seq_len: within.len(),
            segment_lens: within.segments.iter().map(|r| r.len()).collect(),
        });
    }

    let mut search_range = h0.segments[2].range.clone();
    if let (true, Some([m1, m2])) = (cfg.token_refinement, masks) {
        let tr = weights.refine.as_ref().ok_or_else(|| Error::config("token refinement weights missing"))?;
        let mut parts = Vec::with_capacity(5);
        for (seg, mask) in h0.segments[..2].iter().zip([m1, m2]) {
            let h = g.slice_rows(x, seg.range.clone())?;
            let r = refine::refine_memory(g, ps, h, seg.grid, mask, tr, cfg.patch_size)?;
            parts.push(r.fg.protos);
            parts.push(r.bg.protos);
            refined.push(r);
        }
        parts.push(g.slice_rows(x, search_range.clone())?);
        x = g.concat_rows(&parts)?;
        let len = g.value(x).rows();
        if len != cfg.global_len(n) {
            return Err(Error::Structure(format!(
                "refined sequence has {len} tokens, expected {}",
                cfg.global_len(n)
            )));
        }
        search_range = len - n..len;
    }

    let global = AttentionPolicy::global(g.value(x).rows());
    for (layer, w) in weights.blocks.iter().enumerate().skip(cfg.within_frame_layers) {
        let (y, a) = run_layer(g, ps, x, w, &global, kernel)?;
        x = y;
        attention.push(a);
        trace.push(LayerTrace { layer, policy: PolicyKind::Global, seq_len: global.len(), segment_lens: vec![global.len()] });
        if global.len() != cfg.global_len(n) {
            return Err(Error::Structure(format!(
                "global layer {layer} sees {} tokens, expected {}",
                global.len(),
                cfg.global_len(n)
            )));
        }
    }

    let search = g.slice_rows(x, search_range)?;
    let (gm, bt) = (g.param(ps, weights.norm_gamma), g.param(ps, weights.norm_beta));
    let search = g.layer_norm(search, gm, bt)?;
    Ok(BackboneOutput { search, refined, trace, attention })
}

/// The first `L` layers applied to one memory frame on its own. Within-frame
/// attention makes this identical to that frame's segment inside the joint pass.
pub fn run_within_frame_prefix<T: Real>(
    g: &mut Graph<T>,
    ps: &ParamSet<T>,
    seq: &TokenSeq,
    cfg: &ViTConfig,
    weights: &BackboneWeights,
    kernel: AttentionKernel,
) -> Result<Var> {
    let policy = within_frame_mask(&seq.tags())?;
    let mut x = seq.tokens;
    for w in weights.blocks.iter().take(cfg.within_frame_layers) {
        x = run_layer(g, ps, x, w, &policy, kernel)?.0;
    }
    Ok(x)
}
