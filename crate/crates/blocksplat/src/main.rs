use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use blocksplat::commands::{self, CameraSource, StageSel};
use blocksplat::config::RunConfig;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blocksplat", version, about = "Part-aware reconstruction with superquadric blocks and 2D Gaussian splats")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Block,
    Point,
    Both,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit blocks (and optionally refine splats) to a dataset folder.
    Fit {
        dataset: PathBuf,
        #[arg(short = 'c', long)]
        config: Option<PathBuf>,
        #[arg(short = 'o', long, required_unless_present = "dump_config")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        #[arg(long)]
        iters_block: Option<usize>,
        #[arg(long)]
        iters_point: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Point-level refinement of a checkpoint.
    Refine {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(short = 'o', long)]
        out: PathBuf,
        #[arg(long)]
        iters_point: Option<usize>,
    },
    /// Render a checkpoint from a dataset view or a camera JSON file.
    Render {
        checkpoint: PathBuf,
        #[arg(long, requires = "view", conflicts_with = "camera")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        view: Option<usize>,
        /// Camera record with the `cameras.json` view fields.
        #[arg(long)]
        camera: Option<PathBuf>,
        /// Render only the splats of this block.
        #[arg(long)]
        part: Option<usize>,
        #[arg(short = 'o', long)]
        out: PathBuf,
    },
    /// Print metrics of a checkpoint as JSON.
    Eval { checkpoint: PathBuf, dataset: PathBuf },
    /// Render a synthetic dataset from a JSON primitive spec.
    Synth {
        spec: PathBuf,
        #[arg(short = 'o', long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Cmd::Fit {
            dataset,
            config,
            out,
            stage,
            iters_block,
            iters_point,
            seed,
            dump_config,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(n) = iters_block {
                cfg.iters_block = n;
                cfg.add_iters.retain(|&i| i < n);
            }
            if let Some(n) = iters_point {
                cfg.iters_point = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            if dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let stage = match stage {
                StageArg::Block => StageSel::Block,
                StageArg::Point => StageSel::Point,
                StageArg::Both => StageSel::Both,
            };
            let out = out.context("--out is required")?;
            commands::fit(&dataset, &cfg, &out, stage)
        }
        Cmd::Refine {
            checkpoint,
            dataset,
            out,
            iters_point,
        } => commands::refine(&checkpoint, &dataset, &out, iters_point),
        Cmd::Render {
            checkpoint,
            dataset,
            view,
            camera,
            part,
            out,
        } => {
            let source = match (&dataset, view, &camera) {
                (Some(d), Some(v), None) => CameraSource::DatasetView(d, v),
                (None, _, Some(c)) => CameraSource::File(c),
                _ => anyhow::bail!("pass either --dataset with --view, or --camera"),
            };
            commands::render(&checkpoint, source, part, &out)
        }
        Cmd::Eval { checkpoint, dataset } => {
            let rep = commands::evaluate(&checkpoint, &dataset)?;
            println!("{}", serde_json::to_string(&rep)?);
            Ok(())
        }
        Cmd::Synth { spec, out, seed } => {
            commands::synth(&spec, &out, seed)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
