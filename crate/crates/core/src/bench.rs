//! Analytical multiply-accumulate accounting for attention schedules and
//! wall-clock timing of the backbone.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::backbone::{PolicyKind, ViTConfig};
use crate::error::{Error, Result};
use crate::model::{MemoryRef, SimVos};
use crate::numkern::Graph;
use crate::tokenizer::{Frame, Grid, MaskMap};

/// `N = HW / P²`.
pub fn token_count(height: usize, width: usize, patch: usize) -> Result<usize> {
    Ok(Grid::of(height, width, patch)?.len())
}

/// Score and value-mixing MACs: `T_q·T_k·C` for `QKᵀ` plus the same for `AV`.
pub fn attention_score_macs(t_query: usize, t_key: usize, dim: usize) -> u64 {
    2 * t_query as u64 * t_key as u64 * dim as u64
}

/// Per-token linear MACs of one block: QKV, output projection and the MLP.
pub fn projection_macs(tokens: usize, dim: usize, mlp_ratio: usize) -> u64 {
    let c = dim as u64;
    tokens as u64 * c * c * (4 + 2 * mlp_ratio as u64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub layer: usize,
    pub policy: PolicyKind,
    pub seq_len: usize,
    pub segment_lens: Vec<usize>,
    pub attention_macs: u64,
    pub projection_macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopReport {
    pub config: ViTConfig,
    pub height: usize,
    pub width: usize,
    pub tokens_per_frame: usize,
    /// Tokens each memory frame contributes to the global layers.
    pub memory_tokens_per_frame: usize,
    /// `N / (K_f + K_b)` when refinement is on, else 1.
    pub memory_reduction: f64,
    pub layers: Vec<LayerCost>,
    /// Conv and fc of the refinement module plus prototype pooling, both frames.
    pub refine_macs: u64,
    pub total_attention_macs: u64,
    pub total_projection_macs: u64,
    pub total_macs: u64,
}

pub fn pipeline_profile(cfg: &ViTConfig, height: usize, width: usize) -> Result<FlopReport> {
    cfg.validate()?;
    let n = token_count(height, width, cfg.patch_size)?;
    let c = cfg.embed_dim;
    let k_total = cfg.fg_prototypes + cfg.bg_prototypes;
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for layer in 0..cfg.num_layers {
        let (policy, segments) = if layer < cfg.within_frame_layers {
            (PolicyKind::WithinFrame, vec![n; 3])
        } else if cfg.token_refinement {
            (PolicyKind::Global, vec![n + 2 * k_total])
        } else {
            (PolicyKind::Global, vec![3 * n])
        };
        let seq_len = segments.iter().sum();
        layers.push(LayerCost {
            layer,
            policy,
            seq_len,
            attention_macs: segments.iter().map(|&s| attention_score_macs(s, s, c)).sum(),
            projection_macs: projection_macs(seq_len, c, cfg.mlp_ratio),
            segment_lens: segments,
        });
    }
    let refine_macs = if cfg.token_refinement {
        let q = (c / 4) as u64;
        let (n64, c64) = (n as u64, c as u64);
        let per_pass = |k: usize| n64 * q * (c64 + 1) * 9 + n64 * q * k as u64 + k as u64 * n64 * c64;
        2 * (per_pass(cfg.fg_prototypes) + per_pass(cfg.bg_prototypes))
    } else {
        0
    };
    let total_attention_macs = layers.iter().map(|l| l.attention_macs).sum();
    let total_projection_macs = layers.iter().map(|l| l.projection_macs).sum();
    let memory_tokens_per_frame = if cfg.token_refinement { k_total } else { n };
    Ok(FlopReport {
        config: *cfg,
        height,
        width,
        tokens_per_frame: n,
        memory_tokens_per_frame,
        memory_reduction: n as f64 / memory_tokens_per_frame as f64,
        layers,
        refine_macs,
        total_attention_macs,
        total_projection_macs,
        total_macs: total_attention_macs + total_projection_macs + refine_macs,
    })
}

impl FlopReport {
    /// Aligned-column table with a totals footer.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "{}x{} P={} C={} layers={} L={} TR={} K_f/K_b={}/{}  N={} memory tokens/frame={} (x{:.2})",
            self.height,
            self.width,
            c.patch_size,
            c.embed_dim,
            c.num_layers,
            c.within_frame_layers,
            if c.token_refinement { "on" } else { "off" },
            c.fg_prototypes,
            c.bg_prototypes,
            self.tokens_per_frame,
            self.memory_tokens_per_frame,
            self.memory_reduction
        );
        let _ = writeln!(s, "{:>5}  {:<12}  {:>8}  {:>16}  {:>16}", "layer", "policy", "tokens", "attention MACs", "projection MACs");
        for l in &self.layers {
            let policy = match l.policy {
                PolicyKind::Global => "global",
                PolicyKind::WithinFrame => "within-frame",
            };
            let _ = writeln!(
                s,
                "{:>5}  {:<12}  {:>8}  {:>16}  {:>16}",
                l.layer, policy, l.seq_len, l.attention_macs, l.projection_macs
            );
        }
        let _ = writeln!(s, "refinement MACs   {:>16}", self.refine_macs);
        let _ = writeln!(s, "attention total   {:>16}", self.total_attention_macs);
        let _ = writeln!(s, "projection total  {:>16}", self.total_projection_macs);
        let _ = writeln!(s, "total             {:>16}", self.total_macs);
        let _ = writeln!(
            s,
            "note: a within-frame layer scores 3·N² query/key pairs against (3N)² = 9·N² for a global one, an exact 1/3"
        );
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean_secs: f64,
    pub stddev_secs: f64,
    pub repeats: usize,
}

/// Time tokenization plus the backbone forward pass on random weights and a
/// synthetic input, after one warm-up pass.
pub fn time_forward(cfg: &ViTConfig, height: usize, width: usize, repeats: usize) -> Result<TimingStats> {
    if repeats < 3 {
        return Err(Error::config(format!("timing needs at least 3 repeats, got {repeats}")));
    }
    let model = SimVos::<f32>::new(*cfg, 0)?;
    let frame = Frame::new(
        height,
        width,
        (0..3 * height * width).map(|i| (i.wrapping_mul(2654435761) % 1000) as f32 / 1000.0).collect(),
    )?;
    let mut mask = MaskMap::empty(height, width);
    for y in height / 4..3 * height / 4 {
        for x in width / 4..3 * width / 4 {
            mask.set(y, x, 1);
        }
    }
    let mem = MemoryRef { frame: &frame, mask: &mask };
    let run = || -> Result<f64> {
        let start = Instant::now();
        let mut g = Graph::new();
        let (out, _) = model.encode(&mut g, mem, mem, &frame)?;
        std::hint::black_box(g.value(out.search));
        Ok(start.elapsed().as_secs_f64())
    };
    run()?;
    let samples = (0..repeats).map(|_| run()).collect::<Result<Vec<_>>>()?;
    let mean = samples.iter().sum::<f64>() / repeats as f64;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (repeats - 1) as f64;
    Ok(TimingStats { mean_secs: mean, stddev_secs: var.sqrt(), repeats })
}

/// Kendall rank correlation (tau-a) between two equally long sequences.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            score += s as i64;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    if pairs == 0.0 {
        1.0
    } else {
        score as f64 / pairs
    }
}
