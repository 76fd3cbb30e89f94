//! Subcommands of the `simvos` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::RunConfig;
use super::heatmap::{assignment_heatmaps, to_gray};
use super::{checkpoint, netpbm};
use crate::bench::{pipeline_profile, time_forward, FlopReport, TimingStats};
use crate::engine::run_video;
use crate::error::{Error, Result};
use crate::model::SimVos;
use crate::trainkit::{fit, loss_csv};

#[derive(Debug, Parser)]
#[command(name = "simvos", version, about = "Single-backbone video object segmentation on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every frame of a directory from the first-frame mask.
    Infer(InferArgs),
    /// Train the toy preset on synthetic moving-shape clips.
    TrainToy(TrainArgs),
    /// Print the analytical cost profile of a configuration.
    Bench(BenchArgs),
    /// Compare reverse-mode gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Write foreground and background assignment heatmaps as PGM.
    DumpAssignment(DumpArgs),
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of `.ppm` frames, processed in filename order.
    #[arg(long)]
    pub frames_dir: PathBuf,
    /// PGM mask of the first frame; pixel value is the object id.
    #[arg(long)]
    pub first_mask: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Weights to load; falls back to `paths.checkpoint` in the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Defaults to the toy preset with trainer defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Defaults to the base preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 384)]
    pub height: usize,
    #[arg(long, default_value_t = 384)]
    pub width: usize,
    #[arg(long)]
    pub json: bool,
    /// Also measure forward wall time on random weights.
    #[arg(long)]
    pub time: bool,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Only the schedule flags are used; dimensions are shrunk.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Output directory; receives `fg.pgm` and `bg.pgm`.
    #[arg(long)]
    pub out: PathBuf,
}

fn load_config(path: Option<&Path>, fallback: RunConfig) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(fallback),
    }?
    .with_env_seed()
}

/// Runs one command. Returns whether it succeeded in the sense of the
/// command's own check (only `gradcheck` can report `false`).
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    match cli.command {
        Command::Infer(a) => infer(&a, out).map(|_| true),
        Command::TrainToy(a) => train_toy(&a, out).map(|_| true),
        Command::Bench(a) => bench(&a, out).map(|_| true),
        Command::Gradcheck(a) => gradcheck(&a, out),
        Command::DumpAssignment(a) => dump_assignment(&a, out).map(|_| true),
    }
}

/// `.ppm` files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    v.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(v)
}

pub fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(Some(&a.config), RunConfig::default())?;
    let model = match a.checkpoint.as_ref().or(cfg.paths.checkpoint.as_ref()) {
        Some(p) => {
            let m = checkpoint::load(p)?;
            if m.cfg != cfg.vit()? {
                writeln!(out, "note: using the geometry stored in {}", p.display())?;
            }
            m
        }
        None => {
            writeln!(out, "warning: no checkpoint given, using seeded random weights")?;
            SimVos::new(cfg.vit()?, cfg.train.seed)?
        }
    };
    let paths = list_frames(&a.frames_dir)?;
    if paths.is_empty() {
        return Err(Error::config(format!("no .ppm frames in {}", a.frames_dir.display())));
    }
    let frames = paths.iter().map(|p| netpbm::read_frame(p)).collect::<Result<Vec<_>>>()?;
    let mask1 = netpbm::read_mask(&a.first_mask)?;
    let masks = run_video(&model, &frames, &mask1)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (p, m) in paths.iter().zip(&masks) {
        let stem = p.file_stem().unwrap_or_default();
        netpbm::write_mask(&a.out_dir.join(stem).with_extension("pgm"), m)?;
    }
    writeln!(out, "wrote {} masks to {}", masks.len(), a.out_dir.display())?;
    Ok(())
}

pub fn train_toy(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), RunConfig::toy())?;
    let mut model = SimVos::<f32>::new(cfg.vit()?, cfg.train.seed)?;
    let every = (cfg.train.iterations / 20).max(1);
    let curve = fit(&mut model, &cfg.data, &cfg.train, |r| {
        if r.iteration % every == 0 || r.iteration + 1 == cfg.train.iterations {
            let _ = writeln!(out, "iter {:>6}  loss {:.5}  lr {:.2e}", r.iteration, r.loss, r.lr);
        }
    })?;
    checkpoint::save(&a.out_checkpoint, &model)?;
    let csv = cfg.paths.loss_csv.clone().unwrap_or_else(|| a.out_checkpoint.with_extension("csv"));
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&csv, loss_csv(&curve))?;
    writeln!(out, "checkpoint {}  loss curve {}", a.out_checkpoint.display(), csv.display())?;
    Ok(())
}

#[derive(Serialize)]
struct BenchOutput {
    profile: FlopReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<TimingStats>,
}

pub fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), RunConfig::default())?;
    let vit = cfg.vit()?;
    let profile = pipeline_profile(&vit, a.height, a.width)?;
    let timing = if a.time { Some(time_forward(&vit, a.height, a.width, a.repeats)?) } else { None };
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&BenchOutput { profile, timing })?)?;
    } else {
        write!(out, "{}", profile.to_table())?;
        if let Some(t) = timing {
            writeln!(out, "forward {:.4}s ± {:.4}s over {} runs", t.mean_secs, t.stddev_secs, t.repeats)?;
        }
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let cfg = load_config(a.config.as_deref(), RunConfig::toy())?;
    let results = crate::gradsuite::run(&cfg.vit()?)?;
    let mut ok = true;
    for (name, err) in &results {
        let pass = *err <= crate::gradsuite::TOLERANCE;
        ok &= pass;
        writeln!(out, "{name:<20} {err:.3e}  {}", if pass { "ok" } else { "FAIL" })?;
    }
    Ok(ok)
}

pub fn dump_assignment(a: &DumpArgs, out: &mut dyn Write) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let frame = netpbm::read_frame(&a.frame)?;
    let mask = netpbm::read_mask(&a.mask)?;
    let maps = assignment_heatmaps(&model, &frame, &mask)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, map) in [("fg.pgm", &maps.fg), ("bg.pgm", &maps.bg)] {
        std::fs::write(a.out.join(name), netpbm::encode_pgm(maps.height, maps.width, &to_gray(map)))?;
    }
    writeln!(out, "wrote fg.pgm and bg.pgm to {}", a.out.display())?;
    Ok(())
}
