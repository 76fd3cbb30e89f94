//! Acceptance run: one PASS/FAIL line per criterion. Criterion 9 is
//! reported but does not affect the exit status.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simvos::backbone::{run_backbone, run_within_frame_prefix, PolicyKind, ViTConfig};
use simvos::bench::{attention_score_macs, kendall_tau, pipeline_profile, time_forward, token_count};
use simvos::clio::heatmap::assignment_heatmaps;
use simvos::clio::{checkpoint, netpbm};
use simvos::engine::{evaluate, init_session, metric_f, metric_j, run_video};
use simvos::model::{MemoryRef, SimVos};
use simvos::numkern::{AttentionKernel, Graph, ParamSet, Tensor};
use simvos::refine::{downsample_mask, refine_memory, AssignmentMatrix, TrWeights};
use simvos::tokenizer::{build_joint_sequence, patchify, Frame, FrameTag, Grid, MaskMap};
use simvos::trainkit::{fit, synth_video, Clip, ToyDatasetConfig, TrainConfig};

type Outcome = Result<(bool, String), String>;

struct Line {
    id: usize,
    title: &'static str,
    pass: bool,
    soft: bool,
    detail: String,
    secs: f64,
}

fn run(id: usize, title: &'static str, soft: bool, f: impl FnOnce() -> Outcome) -> Line {
    let start = Instant::now();
    let (pass, detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(_) => (false, "panicked".into()),
    };
    let line = Line { id, title, pass, soft, detail, secs: start.elapsed().as_secs_f64() };
    println!(
        "criterion {} {:<24} {}{}  {}  ({:.1}s)",
        line.id,
        line.title,
        if line.pass { "PASS" } else { "FAIL" },
        if line.soft { " [reported]" } else { "" },
        line.detail,
        line.secs
    );
    line
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_frame(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame::new(h, w, (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> MaskMap {
    MaskMap::new(h, w, (0..h * w).map(|_| rng.gen_bool(density) as u8).collect()).unwrap()
}

// ---------------------------------------------------------------- 1 and 2

fn token_arithmetic() -> Outcome {
    let n = token_count(480, 960, 16).map_err(err)?;
    let cfg = ViTConfig { fg_prototypes: 256, bg_prototypes: 256, ..ViTConfig::base() };
    let r = pipeline_profile(&cfg, 480, 960).map_err(err)?;
    let ok = n == 1800 && r.memory_tokens_per_frame == 512 && (r.memory_reduction - 3.52).abs() <= 0.01;
    Ok((ok, format!("N={n}, {}→{} tokens per memory frame (×{:.3})", n, r.memory_tokens_per_frame, r.memory_reduction)))
}

fn complexity_accounting() -> Outcome {
    let mut third = true;
    for (n, c) in [(576, 768), (1800, 768), (64, 64), (100, 8)] {
        third &= 3 * (3 * attention_score_macs(n, n, c)) == attention_score_macs(3 * n, 3 * n, c);
    }
    let plain = pipeline_profile(&ViTConfig { token_refinement: false, ..ViTConfig::base() }, 384, 384).map_err(err)?;
    let (w, g) = (plain.layers[0].attention_macs, plain.layers[4].attention_macs);
    third &= plain.layers[0].policy == PolicyKind::WithinFrame && 3 * w == g;

    let base = ViTConfig::base();
    let report = pipeline_profile(&base, 384, 384).map_err(err)?;
    let tail_ok = report.layers[4..].iter().all(|l| l.seq_len == 576 + 2 * 768);

    // the same schedule through the real backbone, narrowed to keep it quick
    let narrow = ViTConfig { embed_dim: 32, num_heads: 2, ..base };
    let model = SimVos::<f32>::new(narrow, 0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frame = random_frame(384, 384, &mut rng);
    let mask = random_mask(384, 384, 0.3, &mut rng);
    let mem = MemoryRef { frame: &frame, mask: &mask };
    let mut g = Graph::new();
    let (out, _) = model.encode(&mut g, mem, mem, &frame).map_err(err)?;
    let narrow_report = pipeline_profile(&narrow, 384, 384).map_err(err)?;
    let matched = out.trace.len() == narrow_report.layers.len()
        && out.trace.iter().zip(&narrow_report.layers).all(|(t, l)| {
            t.layer == l.layer && t.policy == l.policy && t.seq_len == l.seq_len && t.segment_lens == l.segment_lens
        })
        && report.layers.iter().zip(&narrow_report.layers).all(|(a, b)| a.seq_len == b.seq_len);
    let lens: Vec<usize> = out.trace.iter().map(|t| t.seq_len).collect();
    Ok((
        third && tail_ok && matched,
        format!("within/global = 1/3 exact: {third}; global tail {} tokens; traced lengths {:?}", report.layers[11].seq_len, lens),
    ))
}

// ---------------------------------------------------------------- 3

fn masking_exactness() -> Outcome {
    let (h, w) = (32, 32);
    let n = Grid::of(h, w, 8).map_err(err)?.len();
    let mut violations = 0usize;
    let mut checked = 0usize;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let l = 1 + (trial as usize % 4);
        let cfg = ViTConfig { within_frame_layers: l, ..ViTConfig::toy() };
        let mut model = SimVos::<f32>::new(cfg, trial).map_err(err)?;
        model.kernel = AttentionKernel::Masked;
        let search = random_frame(h, w, &mut rng);
        let sets: Vec<(Frame, MaskMap, Frame, MaskMap)> = (0..2)
            .map(|_| {
                (
                    random_frame(h, w, &mut rng),
                    random_mask(h, w, 0.4, &mut rng),
                    random_frame(h, w, &mut rng),
                    random_mask(h, w, 0.4, &mut rng),
                )
            })
            .collect();

        let mut prefix_out = Vec::new();
        let mut trunc_out = Vec::new();
        let trunc_cfg = ViTConfig { num_layers: l, token_refinement: false, ..cfg };
        let mut trunc = SimVos::<f32>::new(trunc_cfg, trial).map_err(err)?;
        trunc.kernel = AttentionKernel::Masked;
        for (f1, m1, f2, m2) in &sets {
            let (a, b) = (MemoryRef { frame: f1, mask: m1 }, MemoryRef { frame: f2, mask: m2 });

            // full schedule: cross-frame weights in the first L layers
            let mut g = Graph::new();
            let (out, _) = model.encode(&mut g, a, b, &search).map_err(err)?;
            for &att in &out.attention[..l] {
                for head in g.attention_weights(att).ok_or("no attention weights")? {
                    let t = head.rows();
                    for i in 0..t {
                        for (j, &v) in head.row(i).iter().enumerate() {
                            if i / n != j / n {
                                checked += 1;
                                violations += (v != 0.0) as usize;
                            }
                        }
                    }
                }
            }

            // search segment after the within-frame prefix
            let mut g = Graph::new();
            let h1 = model.memory_tokens(&mut g, a, FrameTag::Mem1).map_err(err)?;
            let h2 = model.memory_tokens(&mut g, b, FrameTag::Mem2).map_err(err)?;
            let hs = model.frame_tokens(&mut g, &search, FrameTag::Search).map_err(err)?;
            let h0 = build_joint_sequence(&mut g, &h1, &h2, &hs).map_err(err)?;
            let x = run_within_frame_prefix(&mut g, &model.params, &h0, &cfg, &model.backbone, model.kernel).map_err(err)?;
            prefix_out.push(g.value(x).slice_rows(2 * n, 3 * n).map_err(err)?);

            // the same through run_backbone when every layer is within-frame
            let mut g = Graph::new();
            let h1 = trunc.memory_tokens(&mut g, a, FrameTag::Mem1).map_err(err)?;
            let h2 = trunc.memory_tokens(&mut g, b, FrameTag::Mem2).map_err(err)?;
            let hs = trunc.frame_tokens(&mut g, &search, FrameTag::Search).map_err(err)?;
            let h0 = build_joint_sequence(&mut g, &h1, &h2, &hs).map_err(err)?;
            let out = run_backbone(&mut g, &trunc.params, &h0, &trunc_cfg, &trunc.backbone, None, trunc.kernel).map_err(err)?;
            trunc_out.push(g.value(out.search).clone());
        }
        violations += (!prefix_out[0].bit_eq(&prefix_out[1])) as usize;
        violations += (!trunc_out[0].bit_eq(&trunc_out[1])) as usize;
    }
    Ok((violations == 0, format!("100 trials, {checked} cross-frame weights inspected, {violations} violations")))
}

// ---------------------------------------------------------------- 4

/// Violations of stochasticity, suppression and convexity for one assignment.
fn audit(a: &AssignmentMatrix<f64>, eligible: &[bool], h: &Tensor<f64>, protos: &Tensor<f64>) -> usize {
    let (n, k, c) = (a.weights.rows(), a.weights.cols(), h.cols());
    let mut bad = 0;
    for j in 0..k {
        let mut col = 0.0;
        for i in 0..n {
            let wv = a.weights.data()[i * k + j];
            bad += (!(0.0..=1.0).contains(&wv)) as usize;
            bad += (a.suppressed[i] == eligible[i]) as usize;
            if !eligible[i] {
                bad += (wv != 0.0) as usize;
            }
            col += wv;
        }
        bad += ((col - 1.0).abs() > 1e-6) as usize;
        for d in 0..c {
            let (mut lo, mut hi, mut mix) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for i in (0..n).filter(|&i| eligible[i]) {
                let v = h.data()[i * c + d];
                lo = lo.min(v);
                hi = hi.max(v);
                mix += a.weights.data()[i * k + j] * v;
            }
            let p = protos.data()[j * c + d];
            bad += ((p - mix).abs() > 1e-9 || p < lo - 1e-9 || p > hi + 1e-9) as usize;
        }
    }
    bad
}

fn tr_algebra() -> Outcome {
    let mut violations = 0usize;
    let mut inert = 0usize;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let c = 4 * rng.gen_range(1..=4);
        let p = [1, 2, 4][rng.gen_range(0..3)];
        let grid = Grid { rows: rng.gen_range(1..=5), cols: rng.gen_range(1..=5) };
        let (kf, kb) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (hh, ww) = (grid.rows * p, grid.cols * p);
        let mask = match trial % 10 {
            0 => MaskMap::new(hh, ww, vec![1; hh * ww]).unwrap(),
            1 => MaskMap::empty(hh, ww),
            2 => {
                let mut m = MaskMap::empty(hh, ww);
                m.set(rng.gen_range(0..hh), rng.gen_range(0..ww), 1);
                m
            }
            _ => {
                let d = rng.gen_range(0.05..0.95);
                random_mask(hh, ww, d, &mut rng)
            }
        };
        let mut pa = ParamSet::<f64>::new();
        let a = TrWeights::register(&mut pa, c, kf, kb, &mut rng);
        for prm in pa.iter_mut() {
            let dims = prm.value.dims().to_vec();
            prm.value = Tensor::from_fn(&dims, |_| rng.gen_range(-3.0..3.0));
        }
        let mut pb = ParamSet::<f64>::new();
        let b = TrWeights::register(&mut pb, c, kb, kf, &mut rng);
        pb.get_mut(b.conv).value = pa.value(a.conv).clone();
        pb.get_mut(b.fc_fg).value = pa.value(a.head(simvos::refine::ProtoKind::Background)).clone();
        if let Some(id) = b.fc_bg {
            pb.get_mut(id).value = pa.value(a.fc_fg).clone();
        }
        let h_t = Tensor::from_fn(&[grid.len(), c], |_| rng.gen_range(-2.0..2.0));

        let mut g = Graph::new();
        let hv = g.constant(h_t.clone());
        let ra = refine_memory(&mut g, &pa, hv, grid, &mask, &a, p).map_err(err)?;
        let rb = refine_memory(&mut g, &pb, hv, grid, &mask.complement(), &b, p).map_err(err)?;
        let (frac, fg_ok) = downsample_mask::<f64>(&mask, p).map_err(err)?;
        let bg_ok: Vec<bool> = frac.data().iter().map(|&f| f < 1.0).collect();
        for (asg, ok, set) in [(&ra.a_fg, &fg_ok, &ra.fg), (&ra.a_bg, &bg_ok, &ra.bg)] {
            match asg {
                Some(m) => violations += audit(m, ok, &h_t, g.value(set.protos)),
                None => {
                    inert += 1;
                    violations += (!set.inert || ok.contains(&true) || g.value(set.protos).data().iter().any(|&v| v != 0.0)) as usize;
                }
            }
        }
        violations += (!g.value(ra.fg.protos).bit_eq(g.value(rb.bg.protos))) as usize;
        violations += (!g.value(ra.bg.protos).bit_eq(g.value(rb.fg.protos))) as usize;
    }
    Ok((violations == 0, format!("1000 trials ({inert} inert sets), {violations} violations")))
}

// ---------------------------------------------------------------- 5

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for cfg in [ViTConfig::toy(), ViTConfig { fg_prototypes: 8, bg_prototypes: 5, ..ViTConfig::toy() }] {
        for (name, e) in simvos::gradsuite::run(&cfg).map_err(err)? {
            worst = worst.max(e);
            parts.push(format!("{name} {e:.1e}"));
        }
    }
    parts.truncate(7);
    Ok((worst <= 1e-4, format!("max rel err {worst:.2e}; {}", parts.join(", "))))
}

// ---------------------------------------------------------------- 6

const HELD_OUT: u64 = 1_000_000;

fn held_out(data: &ToyDatasetConfig) -> Vec<Clip> {
    (0..5).map(|i| synth_video(&ToyDatasetConfig { seed: HELD_OUT + i, ..*data }).unwrap()).collect()
}

/// Copies, per P×P patch, the first-frame mask block of the most similar
/// first-frame patch.
fn nearest_patch_baseline(clip: &Clip, p: usize) -> Vec<MaskMap> {
    let (t0, m0) = (&clip.frames[0], &clip.masks[0]);
    let grid = Grid::of(t0.height, t0.width, p).unwrap();
    let tp = patchify::<f32>(t0, p).unwrap();
    let mut out = vec![m0.clone()];
    for f in &clip.frames[1..] {
        let sp = patchify::<f32>(f, p).unwrap();
        let mut m = MaskMap::empty(f.height, f.width);
        for i in 0..grid.len() {
            let best = (0..grid.len())
                .map(|j| (sp.row(i).iter().zip(tp.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f32>(), j))
                .fold((f32::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
                .1;
            let (gy, gx, sy, sx) = (i / grid.cols, i % grid.cols, best / grid.cols, best % grid.cols);
            for y in 0..p {
                for x in 0..p {
                    m.set(gy * p + y, gx * p + x, m0.get(sy * p + y, sx * p + x));
                }
            }
        }
        out.push(m);
    }
    out
}

fn toy_training(model: &SimVos<f32>, init_loss: f64, cfg: &TrainConfig, data: &ToyDatasetConfig) -> Outcome {
    let clips = held_out(data);
    let (mut j, mut jb, mut self_j) = (Vec::new(), Vec::new(), Vec::new());
    for clip in &clips {
        let pred = run_video(model, &clip.frames, &clip.masks[0]).map_err(err)?;
        j.push(evaluate(&pred, &clip.masks).map_err(err)?.j_mean);
        jb.push(evaluate(&nearest_patch_baseline(clip, 8), &clip.masks).map_err(err)?.j_mean);
        let mut s = init_session(model, &clip.frames[0], &clip.masks[0]).map_err(err)?;
        self_j.push(metric_j(&s.step(&clip.frames[0]).map_err(err)?, &clip.masks[0]).map_err(err)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mj, mb) = (mean(&j), mean(&jb));
    let ln2 = 2f64.ln();
    let init_ok = (init_loss / ln2 - 1.0).abs() <= 0.2;
    let pass = mj >= 0.7 && mb < 0.5 && init_ok && cfg.iterations <= 5000;
    Ok((
        pass,
        format!(
            "{} iters: mean J {mj:.3} (clips {}), nearest-patch baseline J {mb:.3}, init loss {init_loss:.4} vs ln2 {ln2:.4}, re-segmenting frame 1 J {:.3}",
            cfg.iterations,
            j.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("/"),
            mean(&self_j)
        ),
    ))
}

// ---------------------------------------------------------------- 7

// Few prototypes keep the refined configurations far enough apart in cost
// that a single-core timer can order them.
fn schedule_monotonicity() -> Outcome {
    let (h, w) = (128, 128);
    let mut macs = Vec::new();
    let mut cfgs = Vec::new();
    let mut labels = Vec::new();
    for tr in [false, true] {
        for l in [0, 2, 4, 6, 8] {
            if tr && l == 0 {
                continue;
            }
            let cfg = ViTConfig {
                num_layers: 12,
                embed_dim: 64,
                num_heads: 4,
                patch_size: 8,
                within_frame_layers: l,
                token_refinement: tr,
                fg_prototypes: 16,
                bg_prototypes: 16,
                mlp_ratio: 4,
            };
            macs.push(pipeline_profile(&cfg, h, w).map_err(err)?.total_macs as f64);
            cfgs.push(cfg);
            labels.push(format!("L{l}{}", if tr { "+TR" } else { "" }));
        }
    }
    // interleaved rounds, best mean per config, so a slow stretch of the
    // machine does not land on one config only
    let mut secs = vec![f64::INFINITY; cfgs.len()];
    for _ in 0..3 {
        for (s, cfg) in secs.iter_mut().zip(&cfgs) {
            *s = s.min(time_forward(cfg, h, w, 3).map_err(err)?.mean_secs);
        }
    }
    let tau = kendall_tau(&macs, &secs);
    let ms: Vec<String> = labels.iter().zip(&secs).map(|(l, s)| format!("{l} {:.0}ms", s * 1e3)).collect();
    Ok((tau >= 0.8, format!("{} valid configs (L=0 with TR is undefined), tau {tau:.3}; {}", macs.len(), ms.join(", "))))
}

// ---------------------------------------------------------------- 8

fn determinism_and_io(model: &SimVos<f32>, dir: &Path) -> Outcome {
    let ck = dir.join("ckpt/toy.svck");
    checkpoint::save(&ck, model).map_err(err)?;
    let back = checkpoint::load(&ck).map_err(err)?;
    let bit_exact = back.cfg == model.cfg
        && back.params.len() == model.params.len()
        && back.params.iter().zip(model.params.iter()).all(|(a, b)| a.name == b.name && a.value.bit_eq(&b.value))
        && checkpoint::encode_model(&back).map_err(err)? == std::fs::read(&ck).map_err(err)?;

    let clip = synth_video(&ToyDatasetConfig { clip_len: 6, seed: HELD_OUT + 77, ..Default::default() }).map_err(err)?;
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(err)?;
    for (t, f) in clip.frames.iter().enumerate() {
        netpbm::write_frame(&frames_dir.join(format!("{t:05}.ppm")), f).map_err(err)?;
    }
    netpbm::write_mask(&dir.join("first.pgm"), &clip.masks[0]).map_err(err)?;
    let decoded: Vec<Frame> = (0..clip.len()).map(|t| netpbm::read_frame(&frames_dir.join(format!("{t:05}.ppm"))).unwrap()).collect();
    let reload_same = run_video(model, &decoded, &clip.masks[0]).map_err(err)? == run_video(&back, &decoded, &clip.masks[0]).map_err(err)?;

    let cfg_path = dir.join("infer.json");
    std::fs::write(&cfg_path, r#"{"preset":"toy"}"#).map_err(err)?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out_dir = dir.join(format!("masks_{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_simvos"))
            .args(["infer", "--config"])
            .arg(&cfg_path)
            .arg("--frames-dir")
            .arg(&frames_dir)
            .arg("--first-mask")
            .arg(dir.join("first.pgm"))
            .arg("--out-dir")
            .arg(&out_dir)
            .arg("--checkpoint")
            .arg(&ck)
            .output()
            .map_err(err)?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let bytes: Vec<Vec<u8>> = (0..clip.len()).map(|t| std::fs::read(out_dir.join(format!("{t:05}.pgm"))).unwrap()).collect();
        outputs.push(bytes);
    }
    let cli_same = outputs[0] == outputs[1];

    let full = MaskMap::new(8, 8, vec![1; 64]).unwrap();
    let mut top = MaskMap::empty(8, 8);
    let mut bottom = MaskMap::empty(8, 8);
    for y in 0..8 {
        for x in 0..8 {
            if y < 4 {
                top.set(y, x, 1);
            } else {
                bottom.set(y, x, 1);
            }
        }
    }
    let metrics = metric_j(&full, &full).map_err(err)? == 1.0
        && metric_j(&top, &bottom).map_err(err)? == 0.0
        && metric_j(&top, &full).map_err(err)? == 0.5
        && metric_f(&full, &full).map_err(err)? == 1.0
        && metric_f(&top, &top).map_err(err)? == 1.0
        && metric_f(&MaskMap::empty(8, 8), &top).map_err(err)? == 0.0;
    Ok((
        bit_exact && reload_same && cli_same && metrics,
        format!("checkpoint bit-exact {bit_exact}, reload inference identical {reload_same}, infer runs byte-identical {cli_same}, metric closed forms {metrics}"),
    ))
}

// ---------------------------------------------------------------- 9

/// Foreground pixels within `band` pixels (Chebyshev) of the background or the
/// image edge versus the rest of the foreground.
fn band_and_interior(mask: &MaskMap, band: usize) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = (mask.height, mask.width);
    let (mut edge, mut inner) = (Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            if !mask.is_fg(y, x) {
                continue;
            }
            let near = (y.saturating_sub(band)..=(y + band).min(h + band))
                .any(|yy| (x.saturating_sub(band)..=x + band).any(|xx| yy >= h || xx >= w || !mask.is_fg(yy, xx)))
                || y < band
                || x < band;
            if near {
                edge.push(y * w + x);
            } else {
                inner.push(y * w + x);
            }
        }
    }
    (edge, inner)
}

fn heatmap_behaviour(model: &SimVos<f32>, data: &ToyDatasetConfig) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for clip in held_out(data) {
        let maps = assignment_heatmaps(model, &clip.frames[0], &clip.masks[0]).map_err(err)?;
        let (edge, inner) = band_and_interior(&clip.masks[0], 2);
        if edge.is_empty() || inner.is_empty() {
            return Err("mask too small for a band/interior split".into());
        }
        let mean = |idx: &[usize]| idx.iter().map(|&i| maps.fg[i] as f64).sum::<f64>() / idx.len() as f64;
        let (e, i) = (mean(&edge), mean(&inner));
        wins += (e > i) as usize;
        parts.push(format!("{:.4}/{:.4}", e, i));
    }
    Ok((wins >= 4, format!("band > interior on {wins}/5 clips (band/interior means {})", parts.join(", "))))
}

fn main() -> ExitCode {
    let mut lines = vec![
        run(1, "token arithmetic", false, token_arithmetic),
        run(2, "complexity accounting", false, complexity_accounting),
        run(3, "masking exactness", false, masking_exactness),
        run(4, "TR algebra", false, tr_algebra),
        run(5, "gradient oracle", false, gradient_oracle),
    ];

    let data = ToyDatasetConfig::default();
    let train = TrainConfig::default();
    let start = Instant::now();
    let mut model = SimVos::<f32>::new(ViTConfig::toy(), train.seed).unwrap();
    let trained = fit(&mut model, &data, &train, |r| {
        if (r.iteration + 1) % 500 == 0 {
            println!("  training: iteration {} loss {:.4} ({:.0}s)", r.iteration + 1, r.loss, start.elapsed().as_secs_f64());
        }
    });
    let init_loss = match &trained {
        Ok(curve) => curve[0].loss,
        Err(e) => {
            println!("  training failed: {e}");
            f64::NAN
        }
    };

    lines.push(run(6, "toy training", false, || {
        trained.as_ref().map_err(err)?;
        toy_training(&model, init_loss, &train, &data)
    }));
    lines.push(run(7, "schedule monotonicity", false, schedule_monotonicity));
    let dir = tempfile::tempdir().unwrap();
    lines.push(run(8, "determinism and IO", false, || determinism_and_io(&model, dir.path())));
    lines.push(run(9, "heatmap behaviour", true, || heatmap_behaviour(&model, &data)));

    let hard_fail = lines.iter().filter(|l| !l.pass && !l.soft).count();
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    if hard_fail > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
