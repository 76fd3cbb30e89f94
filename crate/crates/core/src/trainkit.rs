//! Synthetic moving-shape clips, frame-pair sampling and the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::bootstrapped_ce;
use crate::model::{MemoryRef, SimVos};
use crate::numkern::{adamw_step, AdamW, Graph, Real};
use crate::tokenizer::{Frame, MaskMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDatasetConfig {
    pub height: usize,
    pub width: usize,
    /// Shapes per clip including the target.
    pub shapes: usize,
    pub clip_len: usize,
    /// Maximum speed in pixels per frame.
    pub motion: f64,
    pub min_radius: f64,
    pub max_radius: f64,
    pub seed: u64,
}

impl Default for ToyDatasetConfig {
    fn default() -> Self {
        Self { height: 64, width: 64, shapes: 3, clip_len: 16, motion: 1.5, min_radius: 7.0, max_radius: 11.0, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disc,
    Square,
    Diamond,
}

impl ShapeKind {
    const ALL: [ShapeKind; 3] = [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Diamond];

    /// Whether pixel centre offset `(dx, dy)` lies inside a shape of radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeKind::Disc => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            ShapeKind::Diamond => dx.abs() + dy.abs() <= 1.2 * r,
        }
    }

    /// Half-extent of the bounding box.
    pub fn extent(self, r: f64) -> f64 {
        match self {
            ShapeKind::Disc => r,
            ShapeKind::Square => 0.85 * r,
            ShapeKind::Diamond => 1.2 * r,
        }
    }
}

/// One shape's trajectory parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShapeTrack {
    pub kind: ShapeKind,
    pub radius: f64,
    /// Centre per frame is produced by [`ShapeTrack::centre`].
    pub start: (f64, f64),
    pub velocity: (f64, f64),
}

/// Reflect `p` into `[lo, hi]`, folding like a bouncing ball.
fn bounce(p: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let t = (p - lo).rem_euclid(2.0 * span);
    lo + if t > span { 2.0 * span - t } else { t }
}

impl ShapeTrack {
    pub fn centre(&self, t: usize, height: usize, width: usize) -> (f64, f64) {
        let e = self.extent_px();
        let y = bounce(self.start.0 + self.velocity.0 * t as f64, e, height as f64 - e);
        let x = bounce(self.start.1 + self.velocity.1 * t as f64, e, width as f64 - e);
        (y, x)
    }

    fn extent_px(&self) -> f64 {
        self.kind.extent(self.radius) + 1.0
    }

    pub fn covers(&self, t: usize, height: usize, width: usize, y: usize, x: usize) -> bool {
        self.covers_at(self.centre(t, height, width), y, x)
    }

    fn covers_at(&self, (cy, cx): (f64, f64), y: usize, x: usize) -> bool {
        self.kind.contains(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, self.radius)
    }
}

/// Frames with exact target masks (id 1). The target is the last track and
/// is drawn on top; the other shapes share its colour.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub masks: Vec<MaskMap>,
    pub tracks: Vec<ShapeTrack>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn synth_video(cfg: &ToyDatasetConfig) -> Result<Clip> {
    let (h, w) = (cfg.height, cfg.width);
    if cfg.shapes == 0 || cfg.clip_len == 0 {
        return Err(Error::config("clips need at least one shape and one frame"));
    }
    if 2.0 * (1.2 * cfg.max_radius + 1.0) >= h.min(w) as f64 || cfg.min_radius > cfg.max_radius || cfg.min_radius <= 0.0 {
        return Err(Error::config("shape radii do not fit the frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // static background: two-tone sinusoidal texture plus fixed noise
    let base: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.45));
    let alt: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.45));
    let (fy, fx, phase) = (rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.0..6.3));
    let mut background = Frame::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let s = 0.5 + 0.5 * ((fy * y as f64 + fx * x as f64 + phase).sin()) as f32;
            for c in 0..3 {
                let noise: f32 = rng.gen_range(-0.04..0.04);
                background.set(c, y, x, (base[c] * s + alt[c] * (1.0 - s) + noise).clamp(0.0, 1.0));
            }
        }
    }
    let colour: [f32; 3] = loop {
        let c: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        if c.iter().cloned().fold(0.0, f32::max) > 0.7 {
            break c;
        }
    };

    let mut kinds = ShapeKind::ALL;
    let mut tracks: Vec<ShapeTrack> = Vec::with_capacity(cfg.shapes);
    for i in 0..cfg.shapes {
        if i % kinds.len() == 0 {
            for j in (1..kinds.len()).rev() {
                kinds.swap(j, rng.gen_range(0..=j));
            }
        }
        let kind = kinds[i % kinds.len()];
        let radius = rng.gen_range(cfg.min_radius..=cfg.max_radius);
        let e = kind.extent(radius) + 1.0;
        let mut start = (rng.gen_range(e..h as f64 - e), rng.gen_range(e..w as f64 - e));
        for _ in 0..50 {
            let clear = tracks.iter().all(|t| {
                let (dy, dx) = (t.start.0 - start.0, t.start.1 - start.1);
                (dy * dy + dx * dx).sqrt() > t.kind.extent(t.radius) + e + 1.0
            });
            if clear {
                break;
            }
            start = (rng.gen_range(e..h as f64 - e), rng.gen_range(e..w as f64 - e));
        }
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = if cfg.motion > 0.0 { rng.gen_range(0.3 * cfg.motion..=cfg.motion) } else { 0.0 };
        tracks.push(ShapeTrack { kind, radius, start, velocity: (speed * angle.sin(), speed * angle.cos()) });
    }

    let mut frames = Vec::with_capacity(cfg.clip_len);
    let mut masks = Vec::with_capacity(cfg.clip_len);
    for t in 0..cfg.clip_len {
        let mut f = background.clone();
        let mut m = MaskMap::empty(h, w);
        for (i, track) in tracks.iter().enumerate() {
            let target = i + 1 == tracks.len();
            let centre = track.centre(t, h, w);
            for y in 0..h {
                for x in 0..w {
                    if track.covers_at(centre, y, x) {
                        for (c, &v) in colour.iter().enumerate() {
                            f.set(c, y, x, v);
                        }
                        if target {
                            m.set(y, x, 1);
                        }
                    }
                }
            }
        }
        frames.push(f);
        masks.push(m);
    }
    Ok(Clip { frames, masks, tracks })
}

/// `(t1, t2)` uniform over all pairs with `1 ≤ t2 − t1 ≤ max_gap`.
pub fn sample_pair<R: Rng>(clip_len: usize, max_gap: usize, rng: &mut R) -> Result<(usize, usize)> {
    if clip_len < 2 || max_gap == 0 {
        return Err(Error::config("pair sampling needs two frames and a positive gap"));
    }
    let gap_cap = max_gap.min(clip_len - 1);
    // pairs with gap d number clip_len - d
    let total: usize = (1..=gap_cap).map(|d| clip_len - d).sum();
    let mut k = rng.gen_range(0..total);
    for d in 1..=gap_cap {
        let n = clip_len - d;
        if k < n {
            return Ok((k, k + d));
        }
        k -= n;
    }
    unreachable!("pair index within total")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_frame_gap: usize,
    /// Bootstrapping fraction for the first half of training.
    pub top_p_start: f64,
    /// Bootstrapping fraction for the second half.
    pub top_p_end: f64,
    /// Multiplier applied to the learning rate at half the iterations.
    pub lr_decay: f64,
    /// Size of the synthetic training pool.
    pub train_clips: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: 1e-7,
            max_frame_gap: 10,
            top_p_start: 1.0,
            top_p_end: 0.5,
            lr_decay: 0.1,
            train_clips: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_frame_gap == 0 {
            return Err(Error::config("max_frame_gap must be at least 1"));
        }
        if self.batch_size == 0 || self.train_clips == 0 {
            return Err(Error::config("batch size and pool size must be positive"));
        }
        for p in [self.top_p_start, self.top_p_end] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!("top_p {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, iteration: usize) -> f64 {
        if iteration < self.iterations / 2 {
            self.lr
        } else {
            self.lr * self.lr_decay
        }
    }

    pub fn top_p_at(&self, iteration: usize) -> f64 {
        if iteration < self.iterations / 2 {
            self.top_p_start
        } else {
            self.top_p_end
        }
    }
}

/// A template frame with its mask and a later search frame with its target.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub template: Frame,
    pub template_mask: MaskMap,
    pub search: Frame,
    pub search_mask: MaskMap,
}

impl TrainPair {
    pub fn from_clip(clip: &Clip, t1: usize, t2: usize) -> Self {
        Self {
            template: clip.frames[t1].clone(),
            template_mask: clip.masks[t1].clone(),
            search: clip.frames[t2].clone(),
            search_mask: clip.masks[t2].clone(),
        }
    }
}

/// Loss of one pair with the template in both memory slots.
pub fn pair_loss<T: Real>(g: &mut Graph<T>, model: &SimVos<T>, pair: &TrainPair, top_p: f64) -> Result<crate::numkern::Var> {
    let mem = MemoryRef { frame: &pair.template, mask: &pair.template_mask };
    let out = model.forward(g, mem, mem, &pair.search)?;
    bootstrapped_ce(g, out.logits, &pair.search_mask, top_p)
}

/// Forward and backward over a batch, then one AdamW update. Returns the
/// mean loss.
pub fn train_step<T: Real>(model: &mut SimVos<T>, batch: &[TrainPair], opt: &AdamW, top_p: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    model.params.zero_grad();
    let scale = T::of(1.0 / batch.len() as f64);
    let mut total = 0.0;
    for pair in batch {
        let mut g = Graph::new();
        let loss = pair_loss(&mut g, model, pair, top_p)?;
        let value = g.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        total += value;
        let scaled = g.scale(loss, scale)?;
        let grads = g.backward(scaled)?;
        g.accumulate(&grads, &mut model.params)?;
    }
    adamw_step(&mut model.params, opt);
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Deterministic pool of training clips; clip `i` uses seed `base + i`.
pub fn clip_pool(data: &ToyDatasetConfig, count: usize) -> Result<Vec<Clip>> {
    (0..count)
        .map(|i| synth_video(&ToyDatasetConfig { seed: data.seed.wrapping_add(i as u64), ..*data }))
        .collect()
}

/// Train `model` in place. `on_step` sees every record as it is produced.
pub fn fit(
    model: &mut SimVos<f32>,
    data: &ToyDatasetConfig,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let pool = clip_pool(data, cfg.train_clips)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let clip = &pool[rng.gen_range(0..pool.len())];
                let (t1, t2) = sample_pair(clip.len(), cfg.max_frame_gap, &mut rng)?;
                Ok(TrainPair::from_clip(clip, t1, t2))
            })
            .collect::<Result<Vec<_>>>()?;
        let lr = cfg.lr_at(it);
        let opt = AdamW { lr, weight_decay: cfg.weight_decay, ..AdamW::default() };
        let loss = train_step(model, &batch, &opt, cfg.top_p_at(it))?;
        let rec = LossRecord { iteration: it, loss, lr };
        on_step(&rec);
        curve.push(rec);
    }
    Ok(curve)
}

/// `iteration,loss,lr` with a header line.
pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("iteration,loss,lr\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.loss, r.lr));
    }
    out
}
