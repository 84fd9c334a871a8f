//! `gsscale`: train, inspect and benchmark out-of-core Gaussian splatting.
//!
//! Every subcommand takes the same JSON training config (all fields
//! optional) plus flag overrides. Exit status is 2 for configuration errors
//! and 3 when verify mode detects a violated invariant.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gsscale::offload::write_events_csv;
use gsscale::render::render_gaussians;
use gsscale::scene::ply::{load_gaussians_ply, save_gaussians_ply};
use gsscale::split::{compute_split_points, SplitTable};
use gsscale::train::{bench_optimizer, bench_report, load_dataset, train, BenchConfig, Mode, TrainConfig, TrainReport};

#[derive(Parser)]
#[command(name = "gsscale", version, about = "Out-of-core 3D Gaussian splatting training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scene and write the report, loss curve and final Gaussians.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
    },
    /// Search per-view split points and dump the table as JSON.
    SplitPoints {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Compare optimizer memory traffic of dense, deferred and forwarding modes.
    BenchOptimizer {
        #[arg(long, default_value_t = BenchConfig::default().gaussians)]
        gaussians: usize,
        #[arg(long, default_value_t = BenchConfig::default().cameras)]
        cameras: usize,
        #[arg(long, default_value_t = BenchConfig::default().iterations)]
        iterations: u64,
        /// Target fraction of Gaussians visible per view.
        #[arg(long, default_value_t = BenchConfig::default().coverage)]
        coverage: f64,
        #[arg(long, default_value_t = BenchConfig::default().defer_max)]
        defer_max: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Render a Gaussian PLY from the config's cameras to PNG.
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Gaussians to render; the initial scene when omitted.
        #[arg(long)]
        gaussians: Option<PathBuf>,
        /// Views to render; all when omitted.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
        /// Also dump raw 32-bit float images.
        #[arg(long)]
        raw: bool,
        /// Also write the ground-truth images.
        #[arg(long)]
        ground_truth: bool,
        #[arg(long, short, default_value = "renders")]
        out: PathBuf,
    },
    /// Memory, peak-ratio and PSNR tables from one or more train reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, short, default_value = "tables")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON training config; defaults for every missing field.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["pipelined", "dense"])]
    serial: bool,
    #[arg(long, conflicts_with = "dense")]
    pipelined: bool,
    /// Dense single-arena oracle without tiering.
    #[arg(long)]
    dense: bool,
    #[arg(long)]
    chunk_bytes: Option<usize>,
    /// Defer limit of the host optimizer.
    #[arg(long)]
    defer_max: Option<u8>,
    /// 64-bit arithmetic with invariant checks.
    #[arg(long)]
    verify_f64: bool,
    /// Fraction of Gaussians above which a view is split in two.
    #[arg(long)]
    mem_limit: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record per-stage timings into the report and timeline.csv.
    #[arg(long)]
    timeline: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if self.serial {
            cfg.mode = Mode::OffloadSerial;
        } else if self.pipelined {
            cfg.mode = Mode::OffloadPipelined;
        } else if self.dense {
            cfg.mode = Mode::DenseOracle;
        }
        if let Some(v) = self.chunk_bytes {
            cfg.chunk_bytes = v;
        }
        if let Some(v) = self.defer_max {
            cfg.defer_max = v;
        }
        if let Some(v) = self.mem_limit {
            cfg.mem_limit = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.verify_f64 |= self.verify_f64;
        cfg.timeline |= self.timeline;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_train(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.resolve()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let trained = train(&cfg)?;
    let r = &trained.report;
    write(&out.join("report.json"), r.to_json()?)?;
    write(&out.join("loss.csv"), r.loss_csv())?;
    write(&out.join("memory.json"), serde_json::to_string_pretty(&r.memory)?)?;
    write(&out.join("access.json"), serde_json::to_string_pretty(&r.access)?)?;
    write(&out.join("splits.json"), trained.splits.to_json()?)?;
    if !r.timeline.is_empty() {
        let p = out.join("timeline.csv");
        let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        write_events_csv(&r.timeline, f)?;
    }
    save_gaussians_ply(out.join("gaussians.ply"), &trained.gaussians)?;
    println!(
        "{:?} ({}): {} iterations, final loss {:.5}, held-out PSNR {:.2} dB, {} Gaussians, {:.1} s",
        r.mode,
        r.precision,
        r.iterations,
        r.losses.last().copied().unwrap_or(f64::NAN),
        r.mean_psnr,
        r.final_gaussians,
        r.elapsed_s
    );
    Ok(())
}

fn run_split_points(args: &ConfigArgs, out: Option<&Path>) -> Result<()> {
    let cfg = args.resolve()?;
    let data = load_dataset::<f32>(&cfg.scene, cfg.sh_degree)?;
    let table = if cfg.mem_limit < 1.0 {
        compute_split_points(&data.init, &data.cameras, cfg.mem_limit, &cfg.render)?
    } else {
        SplitTable::unsplit(data.cameras.len())
    };
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} of {} views split, mean imbalance {:.3}",
        table.split_count(),
        table.entries.len(),
        table.mean_imbalance()
    );
    write_or_print(out, &(table.to_json()? + "\n"))
}

fn run_render(args: &ConfigArgs, gaussians: Option<&Path>, views: &[usize], raw: bool, gt: bool, out: &Path) -> Result<()> {
    let cfg = args.resolve()?;
    let data = load_dataset::<f32>(&cfg.scene, cfg.sh_degree)?;
    let gs = match gaussians {
        Some(p) => load_gaussians_ply::<f32>(p)?,
        None => data.init.clone(),
    };
    let views: Vec<usize> = if views.is_empty() { (0..data.cameras.len()).collect() } else { views.to_vec() };
    if let Some(&v) = views.iter().find(|&&v| v >= data.cameras.len()) {
        bail!(gsscale::Error::Config(format!("view {v} out of range, scene has {}", data.cameras.len())));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for &v in &views {
        let img = render_gaussians(&gs, &data.cameras[v], &cfg.render).1.image;
        img.save_png(&out.join(format!("view_{v:04}.png")))?;
        if raw {
            img.save_raw(&out.join(format!("view_{v:04}.f32")))?;
        }
        if gt {
            data.images[v].save_png(&out.join(format!("gt_{v:04}.png")))?;
        }
    }
    println!("rendered {} views to {}", views.len(), out.display());
    Ok(())
}

fn run_report(paths: &[PathBuf], out: &Path) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainReport::from_json(&text).map_err(|e| gsscale::Error::Config(format!("{}: {e}", p.display())).into())
        })
        .collect::<Result<Vec<_>>>()?;
    let tables = bench_report(&reports)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("memory.csv"), &tables.memory_csv)?;
    write(&out.join("peak_ratio.csv"), &tables.ratio_csv)?;
    write(&out.join("psnr.csv"), &tables.psnr_csv)?;
    print!("{}", tables.ratio_csv);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, out } => run_train(&cfg, &out),
        Command::SplitPoints { cfg, out } => run_split_points(&cfg, out.as_deref()),
        Command::BenchOptimizer {
            gaussians,
            cameras,
            iterations,
            coverage,
            defer_max,
            seed,
            out,
        } => {
            let rows = bench_optimizer(&BenchConfig {
                gaussians,
                cameras,
                iterations,
                coverage,
                defer_max,
                seed,
            })?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            let text = String::from_utf8(w.into_inner()?)?;
            write_or_print(out.as_deref(), &text)
        }
        Command::Render {
            cfg,
            gaussians,
            views,
            raw,
            ground_truth,
            out,
        } => run_render(&cfg, gaussians.as_deref(), &views, raw, ground_truth, &out),
        Command::Report { reports, out } => run_report(&reports, &out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gsscale::Error>() {
        Some(gsscale::Error::Config(_)) => 2,
        Some(gsscale::Error::Invariant(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
