//! Subcommand implementations. Progress goes to stderr; machine-readable
//! results go to stdout or into the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use blocksplat_core::camera::Camera;
use blocksplat_core::dataset::Dataset;
use blocksplat_core::eval::{self, MetricsReport};
use blocksplat_core::free::{self, FreeSplats};
use blocksplat_core::hybrid::{HybridScene, SplatSet};
use blocksplat_core::losses::LossReport;
use blocksplat_core::optimize::{self, FitReport, Observer};
use blocksplat_core::render;
use blocksplat_core::synth::{self, Primitive, SynthOptions};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Stage};
use crate::config::RunConfig;
use crate::dataset_io::{self, ViewRecord};
use crate::error::{read_json, write_json};
use crate::export;
use crate::image_io;

/// Splat centers below this opacity are left out of point-level samples.
pub const EVAL_MIN_OPACITY: f64 = 0.1;
/// Surface samples drawn from the fitted representation for Chamfer.
pub const EVAL_SAMPLES: usize = 20_000;
const PROGRESS_EVERY: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSel {
    Block,
    Point,
    Both,
}

/// Streams loss records and periodic checkpoints of one stage.
struct RunObserver<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    log: std::io::BufWriter<std::fs::File>,
    stage: Stage,
}

impl<'a> RunObserver<'a> {
    fn new(config: &'a RunConfig, out: &'a Path, stage: Stage) -> anyhow::Result<Self> {
        let name = match stage {
            Stage::Block => "losses_block.jsonl",
            Stage::Point => "losses_point.jsonl",
        };
        let path = out.join(name);
        let f = std::fs::File::create(&path).with_context(|| path.display().to_string())?;
        Ok(RunObserver {
            config,
            out,
            log: std::io::BufWriter::new(f),
            stage,
        })
    }

    fn record(&mut self, iter: usize, rep: &LossReport, alive: usize) -> blocksplat_core::Result<()> {
        let line = serde_json::to_string(rep).unwrap_or_default();
        let _ = writeln!(self.log, "{line}");
        if iter % PROGRESS_EVERY == 0 {
            eprintln!(
                "[{:?}] iter {iter}: total {:.5} ren {:.5} blocks {alive}",
                self.stage, rep.total, rep.ren
            );
        }
        Ok(())
    }

    fn due(&self, iter: usize) -> bool {
        self.config.checkpoint_every > 0 && iter % self.config.checkpoint_every == 0
    }

    fn periodic(&self, ck: &Checkpoint) -> blocksplat_core::Result<()> {
        let dir = self.out.join("checkpoints");
        let tag = match self.stage {
            Stage::Block => "block",
            Stage::Point => "point",
        };
        std::fs::create_dir_all(&dir)
            .and_then(|_| {
                ck.save(&dir.join(format!("{tag}_{:06}.json", ck.iteration)))
                    .map_err(std::io::Error::other)
            })
            .map_err(|e| blocksplat_core::Error::InvalidInput(format!("checkpoint: {e}")))
    }
}

impl Observer for RunObserver<'_> {
    fn block_step(&mut self, iter: usize, scene: &HybridScene, rep: &LossReport) -> blocksplat_core::Result<()> {
        self.record(iter, rep, scene.alive_count())?;
        if self.due(iter) {
            self.periodic(&Checkpoint::new(Stage::Block, iter, self.config, scene, None))?;
        }
        Ok(())
    }

    fn point_step(&mut self, iter: usize, free: &FreeSplats, rep: &LossReport) -> blocksplat_core::Result<()> {
        self.record(iter, rep, 0)?;
        if self.due(iter) {
            // Block geometry is frozen during refinement, so only splats change.
            let path = self.out.join("checkpoints").join(format!("point_{iter:06}.ply"));
            std::fs::create_dir_all(self.out.join("checkpoints"))
                .map_err(|e| blocksplat_core::Error::InvalidInput(e.to_string()))?;
            export::export_splats(&free.materialize(), &path)
                .map_err(|e| blocksplat_core::Error::InvalidInput(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Reports {
    #[serde(skip_serializing_if = "Option::is_none")]
    block: Option<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    point: Option<FitReport>,
}

fn create_out(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_outputs(out: &Path, cfg: &RunConfig, ck: &Checkpoint, scene: &HybridScene, reports: &Reports) -> anyhow::Result<()> {
    ck.save(&out.join("checkpoint.json"))?;
    export::export_blocks(scene, &out.join("blocks"))?;
    if let Some(f) = &ck.free {
        export::export_splats(&f.materialize(), &out.join("splats.ply"))?;
    }
    write_json(&out.join("report.json"), reports)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn refine_scene(
    cfg: &RunConfig,
    data: &Dataset,
    scene: &HybridScene,
    free: Option<FreeSplats>,
    out: &Path,
) -> anyhow::Result<(FreeSplats, FitReport)> {
    let mut free = match free {
        Some(f) => f,
        None => free::decouple(scene)?,
    };
    let mut obs = RunObserver::new(cfg, out, Stage::Point)?;
    let rep = optimize::point_level_refine_with(&mut free, scene, data, &cfg.optim(), &mut obs)?;
    Ok((free, rep))
}

/// Runs the selected stages on the dataset in `data_dir`.
pub fn fit(data_dir: &Path, cfg: &RunConfig, out: &Path, stage: StageSel) -> anyhow::Result<()> {
    cfg.validate()?;
    if stage == StageSel::Point {
        bail!("--stage point needs a block-level checkpoint; use `refine`");
    }
    let data = dataset_io::load_dataset(data_dir)?;
    create_out(out)?;
    let mut reports = Reports { block: None, point: None };
    let mut obs = RunObserver::new(cfg, out, Stage::Block)?;
    let (scene, rep) = optimize::fit_blocks(&data, &cfg.optim(), cfg.hybrid(), cfg.weights(), &mut obs)?;
    drop(obs);
    eprintln!("block stage: {} blocks in {:.1} s", rep.part_count, rep.wall_clock_seconds);
    let ck = Checkpoint::new(Stage::Block, cfg.iters_block, cfg, &scene, None);
    reports.block = Some(rep);
    let ck = if stage == StageSel::Both {
        let (free, rep) = refine_scene(cfg, &data, &scene, None, out)?;
        reports.point = Some(rep);
        Checkpoint::new(Stage::Point, cfg.iters_point, cfg, &scene, Some(&free))
    } else {
        ck
    };
    write_outputs(out, cfg, &ck, &scene, &reports)
}

/// Decouples (when needed) and refines the splats of a checkpoint.
pub fn refine(checkpoint: &Path, data_dir: &Path, out: &Path, iters_point: Option<usize>) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(n) = iters_point {
        cfg.iters_point = n;
    }
    cfg.validate()?;
    let data = dataset_io::load_dataset(data_dir)?;
    let scene = ck.scene()?;
    create_out(out)?;
    let (free, rep) = refine_scene(&cfg, &data, &scene, ck.free.clone(), out)?;
    let done = if ck.stage == Stage::Point { ck.iteration } else { 0 } + cfg.iters_point;
    let ck = Checkpoint::new(Stage::Point, done, &cfg, &scene, Some(&free));
    write_outputs(out, &cfg, &ck, &scene, &Reports { block: None, point: Some(rep) })
}

/// Splats a checkpoint renders: the free splats after refinement, else the
/// block-bound ones.
pub fn checkpoint_splats(ck: &Checkpoint) -> anyhow::Result<(HybridScene, SplatSet)> {
    let scene = ck.scene()?;
    let splats = match &ck.free {
        Some(f) => f.materialize(),
        None => scene.bound_splats()?,
    };
    Ok((scene, splats))
}

pub enum CameraSource<'a> {
    DatasetView(&'a Path, usize),
    File(&'a Path),
}

pub fn render(checkpoint: &Path, camera: CameraSource<'_>, part: Option<usize>, out_png: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let (scene, splats) = checkpoint_splats(&ck)?;
    let cam = match camera {
        CameraSource::DatasetView(dir, v) => {
            let data = dataset_io::load_dataset(dir)?;
            *data
                .cameras
                .get(v)
                .with_context(|| format!("view {v} out of range (dataset has {})", data.len()))?
        }
        CameraSource::File(p) => {
            let r: ViewRecord = read_json(p)?;
            Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.w2c)?
        }
    };
    let splats = match part {
        Some(i) => {
            if !scene.blocks.get(i).is_some_and(|b| b.alive) {
                bail!("part {i} is not an alive block (alive: {:?})", scene.alive_ids());
            }
            splats.filter(|k| splats.block_ids[k] as usize == i)
        }
        None => splats,
    };
    let img = render::render(&splats, &cam);
    image_io::save_image(&img.rgb, out_png)?;
    Ok(())
}

/// Metrics of a checkpoint against a dataset; Chamfer only when the dataset
/// folder carries `truth.ply`.
pub fn evaluate(checkpoint: &Path, data_dir: &Path) -> anyhow::Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = dataset_io::load_dataset(data_dir)?;
    let (scene, splats) = checkpoint_splats(&ck)?;
    let views = if data.test_views.is_empty() { data.train_views() } else { data.test_views.clone() };
    let mut psnr = 0.0;
    let mut ssim = 0.0;
    for &v in &views {
        let img = render::render(&splats, &data.cameras[v]);
        let target = data.target(v);
        psnr += eval::psnr(&img.rgb, &target)?;
        ssim += eval::ssim(&img.rgb, &target)?;
    }
    let n = views.len().max(1) as f64;
    let truth_path = data_dir.join("truth.ply");
    let chamfer = if truth_path.exists() {
        let (truth, _) = export::read_labeled_points(&truth_path)?;
        let seed = ck.config.seed;
        let pts = match &ck.free {
            Some(_) => eval::sample_splats(&splats, EVAL_SAMPLES, EVAL_MIN_OPACITY, seed)?,
            None => eval::sample_blocks(&scene, EVAL_SAMPLES, seed)?,
        };
        Some(eval::chamfer(&pts, &truth)?)
    } else {
        None
    };
    Ok(MetricsReport {
        chamfer,
        psnr: psnr / n,
        ssim: ssim / n,
        part_count: scene.alive_count(),
    })
}

/// Primitive list plus optional rendering settings of `synth`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub options: Option<SynthOptions>,
}

#[derive(Serialize)]
struct TruthInfo<'a> {
    primitives: &'a [Primitive],
    part_count: usize,
}

/// Renders a synthetic dataset with ground truth into `out`.
pub fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<PathBuf> {
    let spec: SynthSpec = read_json(spec_path)?;
    let mut opts = spec.options.unwrap_or_default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    let (data, truth) = synth::make_synthetic(&spec.primitives, &opts)?;
    write_synthetic(&data, &truth, out)?;
    Ok(out.to_path_buf())
}

pub fn write_synthetic(data: &Dataset, truth: &synth::SyntheticTruth, out: &Path) -> anyhow::Result<()> {
    create_out(out)?;
    dataset_io::save_dataset(data, out)?;
    export::write_labeled_points(&truth.points, &truth.labels, &out.join("truth.ply"))?;
    write_json(
        &out.join("truth.json"),
        &TruthInfo {
            primitives: &truth.primitives,
            part_count: truth.part_count,
        },
    )?;
    Ok(())
}
