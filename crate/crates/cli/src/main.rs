use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use targetcal::harness::{
    calibrate_scenes, fit_all, generate_scenes, load_scenes, round_robin, save_scenes, with_thread_pool,
    CalibMethod, FitMethod, RoundRobinConfig, Scene, SceneConfig,
};
use targetcal::intrinsic::{
    calibrate_rings, placement_matrix, ring_plane_intersections, IntrinsicConfig, IntrinsicModel, Plane,
    TargetObservation,
};
use targetcal::shapeopt::{optimize_shape, ShapeScoreConfig};
use targetcal::targets::{PolygonTarget, ShapeFile, DEFAULT_EPSILON};

#[derive(Parser)]
#[command(name = "targetcal", version, about = "Target-based LiDAR-camera calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a set of scenes and write one JSON file per scene.
    Simulate {
        /// Scene configuration (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate target vertices in one scene.
    FitVertices {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "gl1")]
        method: FitMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the LiDAR-to-camera extrinsic from all scenes in a directory.
    Calibrate {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "gl1")]
        fit: FitMethod,
        #[arg(long, default_value = "pnp")]
        calib: CalibMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-ring intrinsic corrections.
    Intrinsic {
        #[arg(long, default_value = "bl1")]
        model: IntrinsicModel,
        #[arg(long, num_args = 1.., required = true)]
        scenes: Vec<PathBuf>,
        /// Use the target poses stored in the scenes instead of fitted planes.
        #[arg(long)]
        known_planes: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-ring residual table (CSV).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Search for a target shape with large edge-point sensitivity.
    OptimizeShape {
        /// Score configuration (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        restarts: usize,
        /// Writes the shape, scaled to unit width, as a shape file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Report the rank of the placement matrix for the first four targets of
    /// a scene.
    CheckPlacement {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Round-robin study: train on each scene group, validate on the rest.
    Evaluate {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value = "gl1")]
        fit: FitMethod,
        #[arg(long, default_value = "pnp")]
        calib: CalibMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training groups such as "0,1;2,3"; default is every single scene.
        #[arg(long)]
        training: Option<String>,
        /// Report JSON; printed to stdout when absent.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = with_thread_pool(|| run(cli)).map_err(anyhow::Error::from).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_dir(dir: &Path) -> Result<Vec<Scene>> {
    if !dir.is_dir() {
        bail!("scene directory {} does not exist", dir.display());
    }
    let scenes = load_scenes(dir)?;
    if scenes.is_empty() {
        bail!("no scene files in {}", dir.display());
    }
    Ok(scenes)
}

fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .filter(|g| !g.trim().is_empty())
        .map(|g| {
            g.split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| anyhow!("bad scene id '{s}' in training groups")))
                .collect()
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg: SceneConfig = match config {
                Some(p) => read_json(&p)?,
                None => SceneConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let scenes = generate_scenes(&cfg)?;
            save_scenes(&scenes, &out)?;
            eprintln!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Command::FitVertices { scene, method, seed, out } => {
            let s = Scene::load(&scene)?;
            let fits = fit_all(std::slice::from_ref(&s), method, seed)?;
            emit(&fits, out.as_deref())?;
        }
        Command::Calibrate { scenes, fit, calib, seed, out } => {
            let scenes = load_dir(&scenes)?;
            let cfg = RoundRobinConfig { seed, ..Default::default() };
            emit(&calibrate_scenes(&scenes, fit, calib, &cfg)?, out.as_deref())?;
        }
        Command::Intrinsic { model, scenes, known_planes, seed, out, table } => {
            let mut observations = Vec::new();
            let mut planes = Vec::new();
            for path in &scenes {
                let s = Scene::load(path)?;
                for t in &s.targets {
                    observations.push(TargetObservation {
                        target: t.target()?,
                        scan: t.scan.clone(),
                        init: targetcal::harness::initial_pose(&t.scan)?,
                    });
                    planes.push(Plane::from_pose(&t.pose));
                }
            }
            let mut cfg = IntrinsicConfig::new(model);
            cfg.seed = seed;
            if known_planes {
                cfg.known_planes = Some(planes);
            }
            let report = calibrate_rings(&observations, &cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(p) = table {
                let mut csv = String::from("ring,targets,points,cost_before,cost_after\n");
                for r in &report.rings {
                    csv += &format!("{},{},{},{:.6},{:.6}\n", r.ring, r.targets, r.points, r.cost_before, r.cost_after);
                }
                std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
            }
            emit(&report, out.as_deref())?;
        }
        Command::OptimizeShape { config, seed, restarts, out, epsilon } => {
            let cfg: ShapeScoreConfig = match config {
                Some(p) => read_json(&p)?,
                None => ShapeScoreConfig::default(),
            };
            let result = optimize_shape(&cfg, seed, restarts)?;
            if let Some(p) = out {
                let shape = PolygonTarget::new(result.shape.vertices.clone(), epsilon)?;
                let unit = shape.scaled(1.0 / shape.width())?;
                let text = serde_json::to_string_pretty(&ShapeFile::from(&unit))?;
                std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
            }
            emit(&result, None)?;
        }
        Command::CheckPlacement { scene } => {
            let s = Scene::load(&scene)?;
            if s.targets.len() < 4 {
                bail!("{} has {} targets; the placement check needs 4", scene.display(), s.targets.len());
            }
            let planes: Vec<Plane> = s.targets[..4].iter().map(|t| Plane::from_pose(&t.pose)).collect();
            let normals: Vec<_> = planes.iter().map(|p| p.normal).collect();
            let anchors: Vec<_> = planes.iter().map(|p| p.anchor).collect();
            let report = placement_matrix(&normals, &ring_plane_intersections(&normals, &anchors)?)?;
            emit(&report, None)?;
        }
        Command::Evaluate { scenes, fit, calib, seed, training, json, csv } => {
            let scenes = load_dir(&scenes)?;
            let groups = training.as_deref().map(parse_groups).transpose()?.unwrap_or_default();
            let cfg = RoundRobinConfig { training: groups, seed, ..Default::default() };
            let report = round_robin(&scenes, fit, calib, &cfg)?;
            if let Some(p) = csv {
                std::fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            emit(&report, json.as_deref())?;
        }
    }
    Ok(())
}
