//! Online inference with a fixed first-frame memory and a rolling previous
//! frame, plus region and boundary metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::head::sigmoid_prob;
use crate::model::{MemoryRef, SimVos};
use crate::numkern::{Graph, Tensor};
use crate::tokenizer::{Frame, MaskMap};

pub struct Session<'m> {
    model: &'m SimVos<f32>,
    memory1: (Frame, MaskMap),
    memory_prev: (Frame, MaskMap),
    objects: Vec<u8>,
}

/// Start a session from the annotated first frame. `mask1` is indexed:
/// 0 is background, every other value an object id.
pub fn init_session<'m>(model: &'m SimVos<f32>, frame1: &Frame, mask1: &MaskMap) -> Result<Session<'m>> {
    if (frame1.height, frame1.width) != (mask1.height, mask1.width) {
        return Err(Error::shape("first mask and frame differ in size"));
    }
    let objects = mask1.object_ids();
    if objects.is_empty() {
        return Err(Error::EmptyRegion("first-frame mask has no object"));
    }
    let mem = (frame1.clone(), mask1.clone());
    Ok(Session { model, memory1: mem.clone(), memory_prev: mem, objects })
}

impl Session<'_> {
    pub fn objects(&self) -> &[u8] {
        &self.objects
    }

    pub fn memory1(&self) -> (&Frame, &MaskMap) {
        (&self.memory1.0, &self.memory1.1)
    }

    pub fn memory_prev(&self) -> (&Frame, &MaskMap) {
        (&self.memory_prev.0, &self.memory_prev.1)
    }

    /// Foreground probability `[1×H×W]` for one object.
    pub fn object_prob(&self, frame: &Frame, id: u8) -> Result<Tensor<f32>> {
        let m1 = self.memory1.1.select(id);
        let m2 = self.memory_prev.1.select(id);
        let mut g = Graph::new();
        let out = self.model.forward(
            &mut g,
            MemoryRef { frame: &self.memory1.0, mask: &m1 },
            MemoryRef { frame: &self.memory_prev.0, mask: &m2 },
            frame,
        )?;
        Ok(sigmoid_prob(g.value(out.logits)))
    }

    /// Predict `frame`'s indexed mask and roll it into the previous-frame memory.
    pub fn step(&mut self, frame: &Frame) -> Result<MaskMap> {
        let (h, w) = (self.memory1.0.height, self.memory1.0.width);
        if (frame.height, frame.width) != (h, w) {
            return Err(Error::shape(format!("frame {}×{} in a {h}×{w} session", frame.height, frame.width)));
        }
        let probs = self
            .objects
            .iter()
            .map(|&id| Ok((id, self.object_prob(frame, id)?)))
            .collect::<Result<Vec<_>>>()?;
        let mask = merge_objects(&probs, h, w)?;
        self.memory_prev = (frame.clone(), mask.clone());
        Ok(mask)
    }
}

/// Segment a whole clip; the first output is `mask1` itself.
pub fn run_video(model: &SimVos<f32>, frames: &[Frame], mask1: &MaskMap) -> Result<Vec<MaskMap>> {
    if frames.len() < 2 {
        return Err(Error::config("a video needs at least two frames"));
    }
    let mut s = init_session(model, &frames[0], mask1)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push(mask1.clone());
    for f in &frames[1..] {
        out.push(s.step(f)?);
    }
    Ok(out)
}

/// Per pixel, the most probable object if its probability exceeds 0.5,
/// else background. Ties go to the object listed first.
pub fn merge_objects(probs: &[(u8, Tensor<f32>)], height: usize, width: usize) -> Result<MaskMap> {
    if probs.is_empty() {
        return Err(Error::config("no objects to merge"));
    }
    let n = height * width;
    if let Some((id, _)) = probs.iter().find(|(_, p)| p.len() != n) {
        return Err(Error::shape(format!("object {id} probability map is not {height}×{width}")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by_key(|&i| probs[i].0);
    let data = (0..n)
        .map(|px| {
            let mut best: Option<(u8, f32)> = None;
            for &i in &order {
                let (id, p) = (probs[i].0, probs[i].1.data()[px]);
                if best.map_or(true, |(_, bp)| p > bp) {
                    best = Some((id, p));
                }
            }
            match best {
                Some((id, p)) if p > 0.5 => id,
                _ => 0,
            }
        })
        .collect();
    MaskMap::new(height, width, data)
}

fn check_dims(a: &MaskMap, b: &MaskMap) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(format!("masks {}×{} vs {}×{}", a.height, a.width, b.height, b.width)));
    }
    Ok(())
}

/// Intersection over union of the foreground sets; 1 when both are empty.
pub fn metric_j(pred: &MaskMap, gt: &MaskMap) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p != 0 && g != 0) as usize;
        union += (p != 0 || g != 0) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with at least one in-image 4-neighbour in background.
pub fn boundary(mask: &MaskMap) -> Vec<bool> {
    let (h, w) = (mask.height, mask.width);
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !mask.is_fg(y, x) {
                continue;
            }
            let edge = (y > 0 && !mask.is_fg(y - 1, x))
                || (y + 1 < h && !mask.is_fg(y + 1, x))
                || (x > 0 && !mask.is_fg(y, x - 1))
                || (x + 1 < w && !mask.is_fg(y, x + 1));
            out[y * w + x] = edge;
        }
    }
    out
}

/// Matching tolerance in pixels for an `h×w` image.
pub fn boundary_radius(h: usize, w: usize) -> usize {
    (0.008 * ((h * h + w * w) as f64).sqrt()).round() as usize
}

fn dilate(b: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let ri = r as isize;
    let mut out = vec![false; b.len()];
    for y in 0..h {
        for x in 0..w {
            if !b[y * w + x] {
                continue;
            }
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if dy * dy + dx * dx > ri * ri {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        out[yy as usize * w + xx as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Boundary F-measure with the default radius.
pub fn metric_f(pred: &MaskMap, gt: &MaskMap) -> Result<f64> {
    metric_f_radius(pred, gt, boundary_radius(gt.height, gt.width))
}

pub fn metric_f_radius(pred: &MaskMap, gt: &MaskMap, r: usize) -> Result<f64> {
    check_dims(pred, gt)?;
    let (h, w) = (gt.height, gt.width);
    let (bp, bg) = (boundary(pred), boundary(gt));
    let (np, ng) = (bp.iter().filter(|&&b| b).count(), bg.iter().filter(|&&b| b).count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (dp, dg) = (dilate(&bp, h, w, r), dilate(&bg, h, w, r));
    let hit_p = bp.iter().zip(&dg).filter(|(&b, &d)| b && d).count();
    let hit_g = bg.iter().zip(&dp).filter(|(&b, &d)| b && d).count();
    let precision = hit_p as f64 / np as f64;
    let recall = hit_g as f64 / ng as f64;
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_frame_j: Vec<f64>,
    pub per_frame_f: Vec<f64>,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf_mean: f64,
}

/// Scores frames `1..` (the first is the given annotation), averaging
/// over the objects present in the first ground-truth mask.
pub fn evaluate(preds: &[MaskMap], gts: &[MaskMap]) -> Result<MetricReport> {
    if preds.len() != gts.len() || preds.len() < 2 {
        return Err(Error::config(format!("{} predictions for {} ground-truth frames", preds.len(), gts.len())));
    }
    let objects = gts[0].object_ids();
    let mut per_frame_j = Vec::with_capacity(preds.len() - 1);
    let mut per_frame_f = Vec::with_capacity(preds.len() - 1);
    for (p, g) in preds[1..].iter().zip(&gts[1..]) {
        let (mut j, mut f) = (0.0, 0.0);
        for &id in &objects {
            let (ps, gs) = (p.select(id), g.select(id));
            j += metric_j(&ps, &gs)?;
            f += metric_f(&ps, &gs)?;
        }
        per_frame_j.push(j / objects.len().max(1) as f64);
        per_frame_f.push(f / objects.len().max(1) as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (j_mean, f_mean) = (mean(&per_frame_j), mean(&per_frame_f));
    Ok(MetricReport { per_frame_j, per_frame_f, j_mean, f_mean, jf_mean: (j_mean + f_mean) / 2.0 })
}
