//! The full network: embeddings, backbone, token refinement and decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{run_backbone, BackboneOutput, BackboneWeights, ViTConfig};
use crate::error::{Error, Result};
use crate::head::{decode_mask, DecoderWeights};
use crate::numkern::{AttentionKernel, Graph, ParamSet, Real, Var};
use crate::tokenizer::{
    build_joint_sequence, embed_patches, encode_mask_into_memory, flatten_mask, patchify, sinusoidal_table,
    EmbeddingTables, Frame, FrameTag, Grid, MaskMap, TokenSeq,
};

#[derive(Clone, Debug)]
pub struct SimVos<T: Real = f32> {
    pub cfg: ViTConfig,
    pub params: ParamSet<T>,
    pub embed: EmbeddingTables,
    pub backbone: BackboneWeights,
    pub decoder: DecoderWeights,
    pub kernel: AttentionKernel,
}

/// A memory slot for one object: its frame and binary mask.
#[derive(Clone, Copy, Debug)]
pub struct MemoryRef<'a> {
    pub frame: &'a Frame,
    pub mask: &'a MaskMap,
}

pub struct ForwardOutput<T: Real> {
    /// Search-frame logits `[1×H×W]`.
    pub logits: Var,
    pub backbone: BackboneOutput<T>,
    pub grid: Grid,
}

impl<T: Real> SimVos<T> {
    pub fn new(cfg: ViTConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let embed = EmbeddingTables::register(&mut params, cfg.patch_size, cfg.embed_dim, &mut rng);
        let backbone = BackboneWeights::register(&mut params, &cfg, &mut rng);
        let decoder = DecoderWeights::register(&mut params, cfg.embed_dim, &mut rng);
        Ok(Self { cfg, params, embed, backbone, decoder, kernel: AttentionKernel::default() })
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> SimVos<U> {
        SimVos {
            cfg: self.cfg,
            params: self.params.cast(),
            embed: self.embed,
            backbone: self.backbone.clone(),
            decoder: self.decoder,
            kernel: self.kernel,
        }
    }

    /// Embed one memory frame with its mask folded in.
    pub fn memory_tokens(&self, g: &mut Graph<T>, mem: MemoryRef<'_>, tag: FrameTag) -> Result<TokenSeq> {
        let seq = self.frame_tokens(g, mem.frame, tag)?;
        let m_hat = g.constant(flatten_mask(mem.mask, self.cfg.patch_size)?);
        let em = g.param(&self.params, self.embed.mask_proj);
        encode_mask_into_memory(g, seq, m_hat, em)
    }

    pub fn frame_tokens(&self, g: &mut Graph<T>, frame: &Frame, tag: FrameTag) -> Result<TokenSeq> {
        let grid = Grid::of(frame.height, frame.width, self.cfg.patch_size)?;
        let rows = g.constant(patchify(frame, self.cfg.patch_size)?);
        let pos = g.constant(sinusoidal_table(grid, self.cfg.embed_dim)?);
        let e = g.param(&self.params, self.embed.patch_proj);
        embed_patches(g, rows, e, pos, tag, grid)
    }

    /// Tokenize both memories and the search frame, then run the backbone.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        mem1: MemoryRef<'_>,
        mem2: MemoryRef<'_>,
        search: &Frame,
    ) -> Result<(BackboneOutput<T>, Grid)> {
        for m in [&mem1, &mem2] {
            if (m.frame.height, m.frame.width) != (search.height, search.width)
                || (m.mask.height, m.mask.width) != (search.height, search.width)
            {
                return Err(Error::shape("memory and search frames differ in size"));
            }
        }
        let h1 = self.memory_tokens(g, mem1, FrameTag::Mem1)?;
        let h2 = self.memory_tokens(g, mem2, FrameTag::Mem2)?;
        let hs = self.frame_tokens(g, search, FrameTag::Search)?;
        let grid = hs.segments[0].grid;
        let h0 = build_joint_sequence(g, &h1, &h2, &hs)?;
        let masks = self.cfg.token_refinement.then_some([mem1.mask, mem2.mask]);
        let out = run_backbone(g, &self.params, &h0, &self.cfg, &self.backbone, masks, self.kernel)?;
        Ok((out, grid))
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        mem1: MemoryRef<'_>,
        mem2: MemoryRef<'_>,
        search: &Frame,
    ) -> Result<ForwardOutput<T>> {
        let (backbone, grid) = self.encode(g, mem1, mem2, search)?;
        let logits = decode_mask(g, &self.params, backbone.search, grid, &self.decoder, search.height, search.width)?;
        Ok(ForwardOutput { logits, backbone, grid })
    }
}
