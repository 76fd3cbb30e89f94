//! Frames and masks to token sequences; mask annotation as additive embeddings.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::numkern::{Graph, ParamId, ParamSet, Real, Tensor, Var};

/// RGB frame stored channel-first, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    /// `3 × height × width`, row-major per channel.
    pub pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != 3 * height * width || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "frame {height}×{width} needs {} values, got {}",
                3 * height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; 3 * height * width] }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }
}

/// Per-pixel label map; `0` is background, other values are object ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "mask {height}×{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_fg(&self, y: usize, x: usize) -> bool {
        self.get(y, x) != 0
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Sorted distinct non-zero ids.
    pub fn object_ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.data.iter().for_each(|&v| seen[v as usize] = true);
        (1..=255u8).filter(|&v| seen[v as usize]).collect()
    }

    /// Binary `{0, 1}` mask of one object.
    pub fn select(&self, id: u8) -> MaskMap {
        MaskMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| u8::from(v == id)).collect(),
        }
    }

    /// `1 − M` on the binarised mask.
    pub fn complement(&self) -> MaskMap {
        MaskMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| u8::from(v == 0)).collect(),
        }
    }
}

/// Token grid `(rows, cols)` of a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub fn of(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(Error::shape(format!(
                "{height}×{width} is not divisible by patch size {patch}"
            )));
        }
        Ok(Self { rows: height / patch, cols: width / patch })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[N × 3P²]`; row `i` is patch `i` in row-major grid order, flattened as
/// `(py, px, channel)`.
pub fn patchify<T: Real>(frame: &Frame, patch: usize) -> Result<Tensor<T>> {
    let grid = Grid::of(frame.height, frame.width, patch)?;
    let width = 3 * patch * patch;
    let mut out = Vec::with_capacity(grid.len() * width);
    for gy in 0..grid.rows {
        for gx in 0..grid.cols {
            for py in 0..patch {
                for px in 0..patch {
                    for c in 0..3 {
                        out.push(T::of(frame.get(c, gy * patch + py, gx * patch + px) as f64));
                    }
                }
            }
        }
    }
    Tensor::new(&[grid.len(), width], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(rows: &Tensor<f32>, grid: Grid, patch: usize) -> Result<Frame> {
    if rows.dims() != [grid.len(), 3 * patch * patch] {
        return Err(Error::shape(format!(
            "unpatchify {:?} for grid {grid:?} and patch {patch}",
            rows.dims()
        )));
    }
    let mut frame = Frame::zeros(grid.rows * patch, grid.cols * patch);
    for gy in 0..grid.rows {
        for gx in 0..grid.cols {
            let row = rows.row(gy * grid.cols + gx);
            let mut k = 0;
            for py in 0..patch {
                for px in 0..patch {
                    for c in 0..3 {
                        frame.set(c, gy * patch + py, gx * patch + px, row[k]);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(frame)
}

/// `M̂ [N × P²]` in the same patch order as [`patchify`]; entries are 0 or 1.
pub fn flatten_mask<T: Real>(mask: &MaskMap, patch: usize) -> Result<Tensor<T>> {
    let grid = Grid::of(mask.height, mask.width, patch)?;
    let mut out = Vec::with_capacity(mask.data.len());
    for gy in 0..grid.rows {
        for gx in 0..grid.cols {
            for py in 0..patch {
                for px in 0..patch {
                    let on = mask.is_fg(gy * patch + py, gx * patch + px);
                    out.push(if on { T::one() } else { T::zero() });
                }
            }
        }
    }
    Tensor::new(&[grid.len(), patch * patch], out)
}

/// Fixed 2-D sinusoidal table `[N × C]`: the first `C/2` channels encode the
/// grid row, the rest the grid column.
pub fn sinusoidal_table<T: Real>(grid: Grid, dim: usize) -> Result<Tensor<T>> {
    if dim % 4 != 0 {
        return Err(Error::config(format!("embedding dim {dim} must be divisible by 4")));
    }
    let half = dim / 2;
    let quarter = dim / 4;
    let mut out = Tensor::zeros(&[grid.len(), dim]);
    for i in 0..grid.len() {
        let coords = [(i / grid.cols) as f64, (i % grid.cols) as f64];
        let row = out.row_mut(i);
        for (a, &pos) in coords.iter().enumerate() {
            for k in 0..quarter {
                let omega = 1.0 / 10_000f64.powf(k as f64 / quarter as f64);
                row[a * half + k] = T::of((pos * omega).sin());
                row[a * half + quarter + k] = T::of((pos * omega).cos());
            }
        }
    }
    Ok(out)
}

/// Patch projection `E [3P² × C]` and mask projection `E_m [P² × C]`.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTables {
    pub patch_proj: ParamId,
    pub mask_proj: ParamId,
}

impl EmbeddingTables {
    pub fn register<T: Real, R: Rng>(ps: &mut ParamSet<T>, patch: usize, dim: usize, rng: &mut R) -> Self {
        let p2 = patch * patch;
        Self {
            patch_proj: ps.add("embed.patch_proj", init::trunc_normal(&[3 * p2, dim], 0.02, rng)),
            mask_proj: ps.add("embed.mask_proj", init::trunc_normal(&[p2, dim], 0.02, rng)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameTag {
    Mem1,
    Mem2,
    Search,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub tag: FrameTag,
    pub range: Range<usize>,
    pub grid: Grid,
}

/// Tokens on a graph together with their frame segmentation.
#[derive(Clone, Debug)]
pub struct TokenSeq {
    pub tokens: Var,
    pub segments: Vec<Segment>,
}

impl TokenSeq {
    pub fn single(tokens: Var, tag: FrameTag, grid: Grid) -> Self {
        Self { tokens, segments: vec![Segment { tag, range: 0..grid.len(), grid }] }
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.range.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, tag: FrameTag) -> Option<&Segment> {
        self.segments.iter().find(|s| s.tag == tag)
    }

    /// Frame tag of every token.
    pub fn tags(&self) -> Vec<FrameTag> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.segments {
            out.extend(std::iter::repeat(s.tag).take(s.range.len()));
        }
        out
    }
}

/// `rows · E + Pos`.
pub fn embed_patches<T: Real>(
    g: &mut Graph<T>,
    rows: Var,
    patch_proj: Var,
    pos: Var,
    tag: FrameTag,
    grid: Grid,
) -> Result<TokenSeq> {
    let (rv, ev) = (g.value(rows), g.value(patch_proj));
    if rv.rank() != 2 || rv.dims()[1] != ev.dims()[0] || rv.rows() != grid.len() {
        return Err(Error::shape(format!(
            "patch rows {:?} for projection {:?} on grid {grid:?}",
            rv.dims(),
            ev.dims()
        )));
    }
    let proj = g.matmul(rows, patch_proj)?;
    let tokens = g.add(proj, pos)?;
    Ok(TokenSeq::single(tokens, tag, grid))
}

/// `H̄ = M̂ · E_m + H`.
pub fn encode_mask_into_memory<T: Real>(
    g: &mut Graph<T>,
    seq: TokenSeq,
    m_hat: Var,
    mask_proj: Var,
) -> Result<TokenSeq> {
    if g.value(m_hat).rows() != seq.len() {
        return Err(Error::shape(format!(
            "mask rows {} for {} tokens",
            g.value(m_hat).rows(),
            seq.len()
        )));
    }
    let shift = g.matmul(m_hat, mask_proj)?;
    let tokens = g.add(shift, seq.tokens)?;
    Ok(TokenSeq { tokens, segments: seq.segments })
}

/// `H⁰ = [H̄_mem1; H̄_mem2; H_search]`.
pub fn build_joint_sequence<T: Real>(
    g: &mut Graph<T>,
    mem1: &TokenSeq,
    mem2: &TokenSeq,
    search: &TokenSeq,
) -> Result<TokenSeq> {
    let tokens = g.concat_rows(&[mem1.tokens, mem2.tokens, search.tokens])?;
    let mut segments = Vec::with_capacity(3);
    let mut start = 0;
    for (seq, tag) in [(mem1, FrameTag::Mem1), (mem2, FrameTag::Mem2), (search, FrameTag::Search)] {
        let grid = seq.segments.first().map(|s| s.grid).ok_or_else(|| Error::shape("empty segment"))?;
        let n = seq.len();
        segments.push(Segment { tag, range: start..start + n, grid });
        start += n;
    }
    Ok(TokenSeq { tokens, segments })
}
