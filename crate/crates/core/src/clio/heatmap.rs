//! Per-pixel views of the refinement assignment weights.

use crate::backbone::run_within_frame_prefix;
use crate::error::{Error, Result};
use crate::model::{MemoryRef, SimVos};
use crate::numkern::{bilinear_resize, Graph, Tensor};
use crate::refine::{refine_memory, AssignmentMatrix};
use crate::tokenizer::{Frame, FrameTag, MaskMap};

/// Foreground and background maps at frame resolution. Each pixel holds the
/// bilinearly upsampled mean assignment weight of the covering tokens.
#[derive(Clone, Debug)]
pub struct AssignmentHeatmaps {
    pub height: usize,
    pub width: usize,
    pub fg: Vec<f32>,
    pub bg: Vec<f32>,
}

fn upsample(a: Option<&AssignmentMatrix<f32>>, rows: usize, cols: usize, h: usize, w: usize) -> Result<Vec<f32>> {
    let Some(a) = a else {
        return Ok(vec![0.0; h * w]);
    };
    let t = Tensor::new(&[1, rows, cols], a.row_means())?;
    Ok(bilinear_resize(&t, h, w)?.data().to_vec())
}

pub fn assignment_heatmaps(model: &SimVos<f32>, frame: &Frame, mask: &MaskMap) -> Result<AssignmentHeatmaps> {
    let tr = model
        .backbone
        .refine
        .as_ref()
        .ok_or_else(|| Error::config("assignment maps need token refinement enabled"))?;
    let mut g = Graph::new();
    let seq = model.memory_tokens(&mut g, MemoryRef { frame, mask }, FrameTag::Mem1)?;
    let grid = seq.segments[0].grid;
    let h = run_within_frame_prefix(&mut g, &model.params, &seq, &model.cfg, &model.backbone, model.kernel)?;
    let rm = refine_memory(&mut g, &model.params, h, grid, mask, tr, model.cfg.patch_size)?;
    let (r, c) = (grid.rows, grid.cols);
    Ok(AssignmentHeatmaps {
        height: frame.height,
        width: frame.width,
        fg: upsample(rm.a_fg.as_ref(), r, c, frame.height, frame.width)?,
        bg: upsample(rm.a_bg.as_ref(), r, c, frame.height, frame.width)?,
    })
}

/// Min-max scale to `0..=255`. A constant map becomes all zeros.
pub fn to_gray(map: &[f32]) -> Vec<u8> {
    let (lo, hi) = map.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if !(hi > lo) {
        return vec![0; map.len()];
    }
    map.iter().map(|&x| ((x - lo) / (hi - lo) * 255.0).round() as u8).collect()
}
