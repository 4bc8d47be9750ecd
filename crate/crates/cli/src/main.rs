//! `georeg`: building-based coarse registration of a LiDAR point cloud to
//! an optical image, as composable stage subcommands.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use georeg::config::PipelineConfig;
use georeg::eval::format_table;
use georeg::io;
use georeg::model::CameraPose;
use georeg::pipeline::{self, MatchesFile, RegionsFile, SegmentsFile};
use georeg::synth::{self, SceneSpec, SceneTruth};
use georeg::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "georeg", version, about = "Coarse LiDAR-to-image registration from building regions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default: current directory).
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` setting, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Building regions from a classified point cloud: regions.json, lidar_mask.png.
    ExtractLidar { cloud: PathBuf },
    /// Building segments from an image: segments.json, image_mask.png.
    SegmentImage { image: PathBuf },
    /// Match region and segment centers: matches.json.
    Match { regions: PathBuf, segments: PathBuf },
    /// Camera projection from the inlier matches: pose.json.
    EstimatePose { matches: PathBuf },
    /// All stages, plus overlay.png and metrics.json.
    Register {
        cloud: PathBuf,
        image: PathBuf,
        /// `u v X Y Z` control points for the shift metrics.
        #[arg(long)]
        control_points: Option<PathBuf>,
    },
    /// Synthetic scene bundle: cloud.ply, image.png (+ .pgw), truth.json,
    /// control_points.txt.
    Synth {
        /// Scene specification JSON; missing fields take their defaults.
        spec: Option<PathBuf>,
        /// Horizontal camera offset applied to the image georeference, meters.
        #[arg(long, default_value_t = 0.0)]
        translation: f64,
        /// Camera attitude perturbation, radians (recorded in the truth only).
        #[arg(long, default_value_t = 0.0)]
        rotation: f64,
        /// Write the cloud as ASCII `.xyz` instead of binary PLY.
        #[arg(long)]
        ascii: bool,
    },
}

#[derive(Serialize)]
struct SynthTruth<'a> {
    #[serde(flatten)]
    truth: &'a SceneTruth,
    perturbed_pose: CameraPose,
    translation: f64,
    rotation: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Degenerate => 4,
        ErrorKind::NonConvergence => 5,
    }
}

fn load_config(common: &Common) -> georeg::Result<(PipelineConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    let out = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_pose(out: &Path, pose: &georeg::pose::PoseEstimate) -> georeg::Result<()> {
    io::write_json(&out.join("pose.json"), pose)?;
    if !pose.converged {
        return Err(Error::NonConvergence(pose.iterations));
    }
    Ok(())
}

fn run(command: Command, common: &Common) -> georeg::Result<()> {
    let (cfg, out) = load_config(common)?;
    match command {
        Command::ExtractLidar { cloud } => {
            let cloud = io::read_cloud(&cloud)?;
            let (regions, mask) = pipeline::extract_lidar(&cloud, &cfg)?;
            io::write_json(&out.join("regions.json"), &regions)?;
            io::write_mask(&out.join("lidar_mask.png"), &mask)?;
            println!("{} building regions", regions.regions.len());
        }
        Command::SegmentImage { image } => {
            let image = io::read_image(&image)?;
            let (segments, mask) = pipeline::segment_image(&image, &cfg)?;
            io::write_json(&out.join("segments.json"), &segments)?;
            io::write_mask(&out.join("image_mask.png"), &mask)?;
            println!("{} building segments ({} before filtering)", segments.segments.len(), segments.raw_segments);
        }
        Command::Match { regions, segments } => {
            let regions: RegionsFile = io::read_json(&regions)?;
            let segments: SegmentsFile = io::read_json(&segments)?;
            let matches = pipeline::match_centers(&regions, &segments, &cfg)?;
            io::write_json(&out.join("matches.json"), &matches)?;
            println!(
                "{} initial pairs, {} after filtering, {} after validation",
                matches.initial_pairs, matches.filtered_inliers, matches.final_inliers
            );
        }
        Command::EstimatePose { matches } => {
            let matches: MatchesFile = io::read_json(&matches)?;
            let pose = pipeline::estimate(&matches, &cfg)?;
            println!("rms reprojection {:.4} px", pose.rms_reprojection);
            write_pose(&out, &pose)?;
        }
        Command::Register {
            cloud,
            image,
            control_points,
        } => {
            let cloud = io::read_cloud(&cloud)?;
            let image = io::read_image(&image)?;
            let control = control_points.as_deref().map(io::read_control_points).transpose()?;
            let reg = pipeline::register(&cloud, &image, control.as_deref(), &cfg)?;
            io::write_json(&out.join("regions.json"), &reg.regions)?;
            io::write_mask(&out.join("lidar_mask.png"), &reg.lidar_mask)?;
            io::write_json(&out.join("segments.json"), &reg.segments)?;
            io::write_mask(&out.join("image_mask.png"), &reg.image_mask)?;
            io::write_json(&out.join("matches.json"), &reg.matches)?;
            io::write_image(&out.join("overlay.png"), &reg.overlay)?;
            io::write_json(&out.join("metrics.json"), &reg.metrics)?;
            print!("{}", format_table(&reg.metrics));
            write_pose(&out, &reg.pose)?;
        }
        Command::Synth {
            spec,
            translation,
            rotation,
            ascii,
        } => {
            let mut spec: SceneSpec = match spec {
                Some(path) => io::read_json(&path).map_err(|e| match e {
                    Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
                    other => other,
                })?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = common.seed {
                spec.seed = seed;
            }
            if !translation.is_finite() || !rotation.is_finite() {
                return Err(Error::Config("perturbation magnitudes must be finite".into()));
            }
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            let mut scene = synth::generate_scene(&spec)?;
            let perturbed = synth::perturb_pose(&scene.truth.pose, translation, rotation, spec.seed.wrapping_add(1000));
            scene.image.geo = synth::georef_from_pose(&perturbed, spec.resolution)?;
            let cloud_path = out.join(if ascii { "cloud.xyz" } else { "cloud.ply" });
            io::write_cloud(&cloud_path, &scene.cloud)?;
            io::write_image(&out.join("image.png"), &scene.image)?;
            io::write_control_points(&out.join("control_points.txt"), &scene.truth.control_points)?;
            let truth = SynthTruth {
                truth: &scene.truth,
                perturbed_pose: perturbed,
                translation,
                rotation,
            };
            io::write_json(&out.join("truth.json"), &truth)?;
            println!(
                "{} buildings, {} trees, {} points, {}x{} image",
                scene.truth.buildings.len(),
                scene.truth.trees.len(),
                scene.cloud.len(),
                scene.image.width,
                scene.image.height
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GEOREG_LOG", "warn")).init();
    let Cli { common, command } = Cli::parse();
    match run(command, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("georeg: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
