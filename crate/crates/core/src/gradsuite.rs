//! Finite-difference checks of every learnable module at small dims.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backbone::{transformer_block, within_frame_mask, AttentionPolicy, BlockWeights, ViTConfig};
use crate::error::Result;
use crate::head::{decode_mask, DecoderWeights};
use crate::model::SimVos;
use crate::numkern::{grad_check, Graph, ParamSet, Tensor, Var, DEFAULT_EPS};
use crate::refine::{refine_memory, TrWeights};
use crate::tokenizer::{EmbeddingTables, Frame, FrameTag, Grid, MaskMap};
use crate::trainkit::{pair_loss, TrainPair};

pub const TOLERANCE: f64 = 1e-4;

/// Small geometry with the same schedule flags as `cfg`.
pub fn small_config(cfg: &ViTConfig) -> ViTConfig {
    ViTConfig {
        num_layers: 2,
        embed_dim: 8,
        num_heads: 2,
        patch_size: 4,
        within_frame_layers: cfg.within_frame_layers.min(1).max(cfg.token_refinement as usize),
        token_refinement: cfg.token_refinement,
        fg_prototypes: 4,
        bg_prototypes: if cfg.fg_prototypes == cfg.bg_prototypes { 4 } else { 3 },
        mlp_ratio: 2,
    }
}

fn randomize(ps: &mut ParamSet<f64>, rng: &mut ChaCha8Rng, std: f64) {
    for p in ps.iter_mut() {
        for x in p.value.data_mut() {
            *x = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn random_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.sample(StandardNormal))
}

/// `Σ x ⊙ r / len(x)` for a fixed random `r`.
fn probe(g: &mut Graph<f64>, x: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = g.constant(r.clone());
    let m = g.mul(x, rv)?;
    let s = g.sum(m)?;
    g.scale(s, 1.0 / r.len() as f64)
}

fn toy_frame(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame { height: h, width: w, pixels: (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect() }
}

/// A blob in the upper-left quadrant plus one stray pixel.
fn toy_mask(h: usize, w: usize) -> MaskMap {
    let mut m = MaskMap::empty(h, w);
    for y in 1..h / 2 + 1 {
        for x in 2..w / 2 + 2 {
            m.set(y, x, 1);
        }
    }
    m.set(h - 2, w - 3, 1);
    m
}

/// Worst relative error per module, in a fixed order.
pub fn run(cfg: &ViTConfig) -> Result<Vec<(&'static str, f64)>> {
    let cfg = small_config(cfg);
    let (c, p) = (cfg.embed_dim, cfg.patch_size);
    let (h, w) = (4 * p, 4 * p);
    let grid = Grid::of(h, w, p)?;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frame = toy_frame(h, w, &mut rng);
    let mask = toy_mask(h, w);
    let mut out = Vec::new();

    // tokenizer projections
    {
        let mut ps = ParamSet::<f64>::new();
        let tables = EmbeddingTables::register(&mut ps, p, c, &mut rng);
        randomize(&mut ps, &mut rng, 0.3);
        let model_like = |g: &mut Graph<f64>, ps: &ParamSet<f64>| -> Result<Var> {
            let rows = g.constant(crate::tokenizer::patchify(&frame, p)?);
            let pos = g.constant(crate::tokenizer::sinusoidal_table(grid, c)?);
            let e = g.param(ps, tables.patch_proj);
            let seq = crate::tokenizer::embed_patches(g, rows, e, pos, FrameTag::Mem1, grid)?;
            let m_hat = g.constant(crate::tokenizer::flatten_mask(&mask, p)?);
            let em = g.param(ps, tables.mask_proj);
            let seq = crate::tokenizer::encode_mask_into_memory(g, seq, m_hat, em)?;
            let r = Tensor::from_fn(&[n, c], |i| ((i * 7919) % 13) as f64 / 6.0 - 1.0);
            probe(g, seq.tokens, &r)
        };
        out.push(("tokenizer", grad_check(model_like, &mut ps, DEFAULT_EPS)?));
    }

    // one block under each policy, input included
    for (name, within) in [("block.within_frame", true), ("block.global", false)] {
        let mut ps = ParamSet::<f64>::new();
        let bw = BlockWeights::register(&mut ps, "b", c, cfg.num_heads, cfg.mlp_ratio, &mut rng);
        randomize(&mut ps, &mut rng, 0.4);
        let x = ps.add("x", random_tensor(&[3 * n, c], &mut rng));
        let r = random_tensor(&[3 * n, c], &mut rng);
        let policy = if within {
            let tags: Vec<FrameTag> = [FrameTag::Mem1, FrameTag::Mem2, FrameTag::Search]
                .iter()
                .flat_map(|&t| std::iter::repeat(t).take(n))
                .collect();
            within_frame_mask(&tags)?
        } else {
            AttentionPolicy::global(3 * n)
        };
        let f = |g: &mut Graph<f64>, ps: &ParamSet<f64>| -> Result<Var> {
            let xv = g.param(ps, x);
            let y = transformer_block(g, ps, xv, &bw, &policy, Default::default())?;
            probe(g, y, &r)
        };
        out.push((name, grad_check(f, &mut ps, DEFAULT_EPS)?));
    }

    // token refinement, both kinds, tokens included
    {
        let mut ps = ParamSet::<f64>::new();
        let tr = TrWeights::register(&mut ps, c, cfg.fg_prototypes, cfg.bg_prototypes, &mut rng);
        randomize(&mut ps, &mut rng, 0.5);
        let x = ps.add("h", random_tensor(&[n, c], &mut rng));
        let r_fg = random_tensor(&[cfg.fg_prototypes, c], &mut rng);
        let r_bg = random_tensor(&[cfg.bg_prototypes, c], &mut rng);
        let f = |g: &mut Graph<f64>, ps: &ParamSet<f64>| -> Result<Var> {
            let hv = g.param(ps, x);
            let rm = refine_memory(g, ps, hv, grid, &mask, &tr, p)?;
            let a = probe(g, rm.fg.protos, &r_fg)?;
            let b = probe(g, rm.bg.protos, &r_bg)?;
            g.add(a, b)
        };
        out.push(("refine", grad_check(f, &mut ps, DEFAULT_EPS)?));
    }

    // decoder
    {
        let mut ps = ParamSet::<f64>::new();
        let dw = DecoderWeights::register(&mut ps, c, &mut rng);
        randomize(&mut ps, &mut rng, 0.5);
        let x = ps.add("tokens", random_tensor(&[n, c], &mut rng));
        let r = random_tensor(&[1, h, w], &mut rng);
        let f = |g: &mut Graph<f64>, ps: &ParamSet<f64>| -> Result<Var> {
            let tv = g.param(ps, x);
            let l = decode_mask(g, ps, tv, grid, &dw, h, w)?;
            probe(g, l, &r)
        };
        out.push(("decoder", grad_check(f, &mut ps, DEFAULT_EPS)?));
    }

    // bootstrapped cross-entropy on free logits
    {
        let mut ps = ParamSet::<f64>::new();
        let x = ps.add("logits", random_tensor(&[1, h, w], &mut rng).scale(2.0));
        let f = |g: &mut Graph<f64>, ps: &ParamSet<f64>| -> Result<Var> {
            let l = g.param(ps, x);
            crate::head::bootstrapped_ce(g, l, &mask, 0.5)
        };
        out.push(("bootstrapped_ce", grad_check(f, &mut ps, DEFAULT_EPS)?));
    }

    // the complete training loss
    {
        let mut model = SimVos::<f64>::new(cfg, 5)?;
        randomize(&mut model.params, &mut rng, 0.3);
        let search = toy_frame(h, w, &mut rng);
        let mut search_mask = toy_mask(h, w);
        search_mask.set(h - 1, 0, 1);
        let pair = TrainPair { template: frame.clone(), template_mask: mask.clone(), search, search_mask };
        let mut ps = model.params.clone();
        let f = |g: &mut Graph<f64>, ps: &ParamSet<f64>| -> Result<Var> {
            let m = SimVos { params: ps.clone(), ..model.clone() };
            pair_loss(g, &m, &pair, 1.0)
        };
        // the loss is O(1) while many gradients are O(1e-6); a wider step keeps
        // rounding noise well below the tolerance
        out.push(("train_step", grad_check(f, &mut ps, 1e-4)?));
    }

    Ok(out)
}
