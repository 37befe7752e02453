mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use vifactor::datasets::{
    align_ate, read_dataset, read_tum, write_dataset, write_tum, AlignMode, Trajectory,
};
use vifactor::estimator::{run_vio, KeyframeMarginalizationEvent};
use vifactor::flow::{track_directory, write_pgm};
use vifactor::mapper::{global_optimize, GlobalMap, MapMode};
use vifactor::nfr::write_factors;
use vifactor::sim::{generate, render_view};

use config::Config;

#[derive(Parser)]
#[command(
    name = "vifactor",
    version,
    about = "Visual-inertial odometry and mapping with non-linear factor recovery"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory.
    Sim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the odometry; writes trajectory.txt and events.jsonl.
    Vio {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build and optimize the global map from odometry events; writes
    /// keyframes.txt, landmarks.csv, factors.jsonl and report.jsonl.
    Map {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory of `vio`.
        #[arg(long)]
        vio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// nfr, identity or pure-ba; overrides the config toggles.
        #[arg(long)]
        mode: Option<MapMode>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the RMS absolute trajectory error after rigid alignment.
    Eval {
        /// Estimated trajectory in TUM format.
        #[arg(long)]
        est: PathBuf,
        /// Ground truth: a TUM file or a dataset directory.
        #[arg(long)]
        gt: PathBuf,
        /// Compare without alignment.
        #[arg(long)]
        no_align: bool,
    },
    /// Track features through the PGM images of a directory.
    Track {
        #[arg(long)]
        images: PathBuf,
        /// Output CSV of tracks per frame.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_sim(config: Option<&Path>, out: &Path) -> Result<()> {
    let c = load_config(config)?;
    let ds = generate(&c.scenario)?;
    write_dataset(out, &ds)?;
    if c.images > 0 {
        let dir = out.join("images");
        create_dir(&dir)?;
        let cam = &c.scenario.rig.cams[0];
        for f in ds.frames.iter().take(c.images) {
            let pose = ds.gt_at(f.t).context("frame without ground truth")?.pose() * cam.t_ic;
            let img = render_view(&c.scenario.room, cam, &pose, c.scenario.seed, c.texel);
            write_pgm(&dir.join(format!("cam0_{:06}.pgm", f.id)), &img)?;
        }
    }
    info!("wrote {} frames to {}", ds.frames.len(), out.display());
    Ok(())
}

fn write_events(path: &Path, events: &[KeyframeMarginalizationEvent]) -> Result<()> {
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for ev in events {
        writeln!(w, "{}", ev.to_json())?;
    }
    w.flush()?;
    Ok(())
}

fn read_events(path: &Path) -> Result<Vec<KeyframeMarginalizationEvent>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = KeyframeMarginalizationEvent::from_json(&line)
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        out.push(ev);
    }
    Ok(out)
}

fn cmd_vio(dataset: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let c = load_config(config)?;
    let ds = read_dataset(dataset)?;
    let result = run_vio(&ds, &c.vio)?;
    create_dir(out)?;
    write_tum(&out.join("trajectory.txt"), &result.trajectory)?;
    write_events(&out.join("events.jsonl"), &result.events)?;
    info!(
        "{} frames, {} keyframe events",
        result.trajectory.len(),
        result.events.len()
    );
    Ok(())
}

fn cmd_map(
    dataset: &Path,
    vio: &Path,
    out: &Path,
    mode: Option<MapMode>,
    config: Option<&Path>,
) -> Result<()> {
    let c = load_config(config)?;
    let mut params = c.map;
    if let Some(m) = mode {
        params.mode = m;
    }
    let ds = read_dataset(dataset)?;
    let events = read_events(&vio.join("events.jsonl"))?;
    let mut map = GlobalMap::build(&ds, &events, &c.matches)?;
    let report = global_optimize(&mut map, &params)?;
    create_dir(out)?;
    map.write_trajectory(&out.join("keyframes.txt"))?;
    map.write_landmarks(&out.join("landmarks.csv"))?;
    write_factors(&out.join("factors.jsonl"), &map.factors)?;
    let mut line = serde_json::to_value(&report)?;
    if let Ok(ate) = align_ate(&map.trajectory(), &ds.gt_trajectory(), AlignMode::Se3) {
        line["ate"] = ate.rmse.into();
    }
    std::fs::write(out.join("report.jsonl"), format!("{line}\n"))?;
    info!(
        "{} keyframes, {} landmarks, {} iterations",
        report.keyframes, report.landmarks, report.iterations
    );
    Ok(())
}

fn load_trajectory(path: &Path) -> Result<Trajectory> {
    if path.is_dir() {
        Ok(read_dataset(path)?.gt_trajectory())
    } else {
        Ok(read_tum(path)?)
    }
}

fn cmd_eval(est: &Path, gt: &Path, no_align: bool) -> Result<()> {
    let mode = if no_align {
        AlignMode::None
    } else {
        AlignMode::Se3
    };
    let r = align_ate(&load_trajectory(est)?, &load_trajectory(gt)?, mode)?;
    println!("{:.6}", r.rmse);
    Ok(())
}

fn cmd_track(images: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let c = load_config(config)?;
    let n = track_directory(images, out, c.flow)?;
    if n == 0 {
        bail!("no .pgm images in {}", images.display());
    }
    info!("tracked {n} images");
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("VIFACTOR_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("VIFACTOR_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            bail!("VIFACTOR_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.cmd {
        Cmd::Sim { config, out } => cmd_sim(config.as_deref(), &out),
        Cmd::Vio {
            dataset,
            out,
            config,
        } => cmd_vio(&dataset, &out, config.as_deref()),
        Cmd::Map {
            dataset,
            vio,
            out,
            mode,
            config,
        } => cmd_map(&dataset, &vio, &out, mode, config.as_deref()),
        Cmd::Eval { est, gt, no_align } => cmd_eval(&est, &gt, no_align),
        Cmd::Track {
            images,
            out,
            config,
        } => cmd_track(&images, &out, config.as_deref()),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
