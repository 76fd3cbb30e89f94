//! Browser demo. The logic lives in plain Rust so it can be tested natively;
//! the `wasm` module only adapts it to JavaScript.

use simvos::bench::pipeline_profile;
use simvos::clio::checkpoint;
use simvos::clio::config::RunConfig;
use simvos::clio::heatmap::assignment_heatmaps;
use simvos::engine::run_video;
use simvos::model::SimVos;
use simvos::tokenizer::{Frame, MaskMap};
use simvos::trainkit::{synth_video, Clip, ToyDatasetConfig};

#[cfg(target_arch = "wasm32")]
mod wasm;

/// Cost profile of a run configuration as pretty JSON. The configuration
/// uses the same shape as the CLI config file; `{}` means the base preset.
pub fn flop_profile_json(config_json: &str, height: usize, width: usize) -> Result<String, String> {
    let cfg = RunConfig::from_json(config_json).and_then(|c| c.vit()).map_err(|e| e.to_string())?;
    let report = pipeline_profile(&cfg, height, width).map_err(|e| e.to_string())?;
    serde_json::to_string_pretty(&report).map_err(|e| e.to_string())
}

/// Frame pixels as RGBA, with `mask` tinted in `tint` at half opacity.
pub fn overlay_rgba(frame: &Frame, mask: Option<&MaskMap>, tint: [u8; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * frame.height * frame.width);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let on = mask.is_some_and(|m| m.is_fg(y, x));
            for (c, &t) in tint.iter().enumerate() {
                let v = (frame.get(c, y, x).clamp(0.0, 1.0) * 255.0).round();
                out.push(if on { ((v + t as f32) / 2.0).round() as u8 } else { v as u8 });
            }
            out.push(255);
        }
    }
    out
}

/// Black, purple, orange, pale yellow.
const RAMP: [[f32; 3]; 4] = [[0.0, 0.0, 4.0], [120.0, 28.0, 109.0], [237.0, 105.0, 37.0], [252.0, 255.0, 164.0]];

/// Min-max scaled map through a dark-to-bright colour ramp. A constant map
/// renders as the darkest colour.
pub fn heat_rgba(map: &[f32]) -> Vec<u8> {
    let (lo, hi) = map.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(4 * map.len());
    for &v in map {
        let s = if hi > lo { (v - lo) / span } else { 0.0 } * (RAMP.len() - 1) as f32;
        let i = (s.floor() as usize).min(RAMP.len() - 2);
        let f = s - i as f32;
        for c in 0..3 {
            out.push((RAMP[i][c] * (1.0 - f) + RAMP[i + 1][c] * f).round() as u8);
        }
        out.push(255);
    }
    out
}

/// A toy model and one synthetic clip.
pub struct Demo {
    model: SimVos<f32>,
    clip: Clip,
    trained: bool,
    predictions: Option<Vec<MaskMap>>,
}

impl Demo {
    /// Untrained toy model with seeded weights and the clip for `clip_seed`.
    pub fn new(model_seed: u64, clip_seed: u64) -> Result<Self, String> {
        let model = SimVos::new(simvos::backbone::ViTConfig::toy(), model_seed).map_err(|e| e.to_string())?;
        Ok(Self { model, clip: clip(clip_seed)?, trained: false, predictions: None })
    }

    /// Replace the weights with an `SVCK` checkpoint, e.g. from `simvos train-toy`.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), String> {
        let model = checkpoint::decode_model(bytes).map_err(|e| e.to_string())?;
        self.model = model;
        self.trained = true;
        self.predictions = None;
        Ok(())
    }

    pub fn set_clip(&mut self, seed: u64) -> Result<(), String> {
        self.clip = clip(seed)?;
        self.predictions = None;
        Ok(())
    }

    pub fn trained(&self) -> bool {
        self.trained
    }

    pub fn width(&self) -> usize {
        self.clip.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.clip.frames[0].height
    }

    pub fn frames(&self) -> usize {
        self.clip.len()
    }

    /// Frame `t` with its ground-truth mask in green.
    pub fn truth_rgba(&self, t: usize) -> Result<Vec<u8>, String> {
        let f = self.clip.frames.get(t).ok_or_else(|| format!("frame {t} out of range"))?;
        Ok(overlay_rgba(f, Some(&self.clip.masks[t]), [40, 220, 90]))
    }

    /// Frame `t` with the tracked mask in red; the clip is segmented from
    /// its first mask on first use.
    pub fn tracked_rgba(&mut self, t: usize) -> Result<Vec<u8>, String> {
        if t >= self.clip.len() {
            return Err(format!("frame {t} out of range"));
        }
        if self.predictions.is_none() {
            let p = run_video(&self.model, &self.clip.frames, &self.clip.masks[0]).map_err(|e| e.to_string())?;
            self.predictions = Some(p);
        }
        let pred = &self.predictions.as_ref().unwrap()[t];
        Ok(overlay_rgba(&self.clip.frames[t], Some(pred), [230, 40, 40]))
    }

    /// Refinement assignment map of the first frame for foreground or background.
    pub fn heatmap_rgba(&self, foreground: bool) -> Result<Vec<u8>, String> {
        let maps = assignment_heatmaps(&self.model, &self.clip.frames[0], &self.clip.masks[0]).map_err(|e| e.to_string())?;
        Ok(heat_rgba(if foreground { &maps.fg } else { &maps.bg }))
    }
}

fn clip(seed: u64) -> Result<Clip, String> {
    synth_video(&ToyDatasetConfig { seed, ..Default::default() }).map_err(|e| e.to_string())
}
