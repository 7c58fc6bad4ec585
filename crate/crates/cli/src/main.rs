//! Command-line frontend: `estimate` and `hand` run the pipeline on one
//! depth image, `synth` generates a benchmark dataset, `bench` scores a
//! manifest. Exit codes: 0 success, 2 input error, 3 pipeline error,
//! 4 internal error; failures print one `category: message` line to
//! stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use inhand_core::config::PipelineConfig;
use inhand_core::error::ErrorCategory;
use inhand_core::eval::{
    ablation_run, summary_text, write_ablation_csv, write_recall_curve_csv, write_scene_csv,
    DEFAULT_EPSILON,
};
use inhand_core::hand::t42::t42_hand_model;
use inhand_core::hand::{load_hand_model, HandModel};
use inhand_core::mesh::io::{load_mesh, save_ply_cloud};
use inhand_core::parallel::configure_workers;
use inhand_core::pipeline::{estimate_hand, run_pipeline, PoseEstimate, Variant};
use inhand_core::registration::PoseHypothesis;
use inhand_core::render::{load_depth_pgm16, load_depth_raw, CameraIntrinsics, DepthImage};
use inhand_core::scenes::{generate_dataset, load_manifest, standard_objects, MANIFEST_NAME};
use inhand_core::{Error, Result, RigidTransform};

#[derive(Parser)]
#[command(
    name = "inhand",
    version,
    about = "6D pose estimation for objects held in an articulated robot hand"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the grasped object's 6D pose from one depth image.
    Estimate(EstimateArgs),
    /// Estimate the hand state (wrist pose and joint angles) only.
    Hand(HandArgs),
    /// Generate a synthetic grasp-scene dataset with ground truth.
    Synth(SynthArgs),
    /// Evaluate the pipeline over a dataset manifest.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration TOML; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all available cores. Results never depend
    /// on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct SceneInputArgs {
    /// Depth image: .raw (with its intrinsics sidecar) or 16-bit
    /// millimeter .pgm.
    #[arg(long)]
    depth: PathBuf,
    /// Camera intrinsics TOML; required for .pgm depth, overrides the
    /// sidecar for .raw.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Hand kinematics TOML; the built-in T42 gripper when omitted.
    #[arg(long)]
    hand: Option<PathBuf>,
    /// Wrist pose prior: a text file of 16 row-major matrix values.
    #[arg(long)]
    wrist_prior: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    scene: SceneInputArgs,
    /// Object mesh (.obj or .ply).
    #[arg(long)]
    object: PathBuf,
    /// Also write scene/object clouds (PLY) and the hypothesis list
    /// (CSV) to --out.
    #[arg(long, requires = "out")]
    emit_intermediates: bool,
    /// Directory for pose.txt and any intermediate artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HandArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    scene: SceneInputArgs,
    /// Directory for hand_state.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory for depth images, labels, and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Hand kinematics TOML; the built-in T42 gripper when omitted.
    #[arg(long)]
    hand: Option<PathBuf>,
    /// Identifier recorded for the hand in the manifest.
    #[arg(long, default_value = "t42")]
    hand_id: String,
    /// Comma-separated subset of the benchmark objects.
    #[arg(long, value_delimiter = ',', default_values_t = [
        "cylinder".to_string(), "ellipsoid".to_string(), "cuboid".to_string()
    ])]
    objects: Vec<String>,
    /// Scenes per object-hand combination, overriding the config value.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset manifest (manifest.jsonl) produced by `synth`.
    #[arg(long)]
    manifest: PathBuf,
    /// Hand kinematics TOML; the built-in T42 gripper when omitted.
    #[arg(long)]
    hand: Option<PathBuf>,
    /// Identifier the manifest uses for this hand.
    #[arg(long, default_value = "t42")]
    hand_id: String,
    /// Comma-separated pipeline variants to run: baseline, +HS,
    /// +HS+heuristic, +HS+heuristic+ICP, full.
    #[arg(long, value_delimiter = ',', default_values_t = ["full".to_string()])]
    variants: Vec<String>,
    /// Success threshold on the average-distance error, meters.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Directory for the CSV reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Hand(args) => cmd_hand(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = outcome {
        eprintln!("{}", e.machine_line());
        let code = match e.category() {
            ErrorCategory::Input => 2,
            ErrorCategory::Pipeline => 3,
            ErrorCategory::Internal => 4,
        };
        std::process::exit(code);
    }
}

fn load_config(common: &CommonArgs) -> Result<PipelineConfig> {
    configure_workers(common.workers);
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_hand(path: &Option<PathBuf>) -> Result<HandModel> {
    match path {
        Some(p) => load_hand_model(p),
        None => Ok(t42_hand_model()),
    }
}

fn load_intrinsics_file(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cam: CameraIntrinsics =
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    cam.validate()?;
    Ok(cam)
}

fn load_depth(args: &SceneInputArgs) -> Result<(DepthImage, CameraIntrinsics)> {
    let ext = args
        .depth
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "raw" => {
            let (depth, sidecar_cam) = load_depth_raw(&args.depth)?;
            let cam = match &args.intrinsics {
                Some(p) => load_intrinsics_file(p)?,
                None => sidecar_cam,
            };
            Ok((depth, cam))
        }
        "pgm" => {
            let Some(p) = &args.intrinsics else {
                return Err(Error::InvalidInput(
                    "--intrinsics is required with .pgm depth input".into(),
                ));
            };
            Ok((load_depth_pgm16(&args.depth)?, load_intrinsics_file(p)?))
        }
        other => Err(Error::InvalidInput(format!(
            "unsupported depth format {other:?} (expected .raw or .pgm): {}",
            args.depth.display()
        ))),
    }
}

/// Reads a 4x4 row-major pose from whitespace-separated text.
fn load_pose_file(path: &Path) -> Result<RigidTransform> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::parse(path, format!("bad number {t:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let m: [f64; 16] = values.as_slice().try_into().map_err(|_| {
        Error::parse(
            path,
            format!("expected 16 pose values, got {}", values.len()),
        )
    })?;
    RigidTransform::from_row_major(&m).map_err(|e| Error::parse(path, e.to_string()))
}

fn fmt_pose(t: &RigidTransform) -> String {
    t.to_row_major()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn estimate_report(est: &PoseEstimate) -> String {
    let render = est
        .render_score
        .map(|s| s.to_string())
        .unwrap_or_else(|| "none".into());
    format!(
        "pose: {}\nlcp: {}\nrender_score: {render}\n",
        fmt_pose(&est.pose),
        est.lcp
    )
}

fn write_hypotheses_csv(hyps: &[PoseHypothesis], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    w.write_record(["index", "lcp", "pose_row_major"])
        .map_err(io_err)?;
    for (i, h) in hyps.iter().enumerate() {
        let pose = h
            .transform
            .to_row_major()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([i.to_string(), h.lcp.to_string(), pose])
            .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let (depth, cam) = load_depth(&args.scene)?;
    let hand = load_hand(&args.scene.hand)?;
    let prior = load_pose_file(&args.scene.wrist_prior)?;
    let object = load_mesh(&args.object)?;
    let est = run_pipeline(
        &depth,
        &cam,
        &hand,
        &prior,
        &object,
        &config,
        Variant::Full,
        args.emit_intermediates,
    )?;
    let report = estimate_report(&est);
    print!("{report}");
    log::info!(
        "stage times: hand {:.3}s, hypotheses {:.3}s, cluster+ICP {:.3}s, prune+render {:.3}s, misc {:.3}s",
        est.timings.hand_estimation,
        est.timings.hypothesis_generation,
        est.timings.clustering_icp,
        est.timings.pruning_render,
        est.timings.misc
    );
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_text(&out.join("pose.txt"), &report)?;
        if args.emit_intermediates {
            let inter = est
                .intermediates
                .as_ref()
                .ok_or_else(|| Error::Internal("intermediates were not captured".into()))?;
            save_ply_cloud(&inter.scene_cloud, &out.join("scene_cloud.ply"))?;
            save_ply_cloud(&inter.object_cloud, &out.join("object_cloud.ply"))?;
            write_hypotheses_csv(&inter.hypotheses, &out.join("hypotheses.csv"))?;
        }
    }
    Ok(())
}

fn cmd_hand(args: HandArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let (depth, cam) = load_depth(&args.scene)?;
    let hand = load_hand(&args.scene.hand)?;
    let prior = load_pose_file(&args.scene.wrist_prior)?;
    let est = estimate_hand(&depth, &cam, &hand, &prior, &config)?;
    let mut report = format!(
        "wrist_pose: {}\nwrist_refined: {}\n",
        fmt_pose(&est.state.wrist_pose),
        est.wrist_refined
    );
    for (i, q) in est.state.finger_configs.iter().enumerate() {
        let angles = q
            .angles
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        report.push_str(&format!("joints {i}: {angles}\n"));
    }
    print!("{report}");
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        write_text(&out.join("hand_state.txt"), &report)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.n {
        config.dataset.n_per_combination = n;
    }
    let all = standard_objects();
    let mut objects = Vec::new();
    for id in &args.objects {
        let found = all.iter().find(|(name, _)| name == id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown object {id:?}; available: {}",
                all.iter()
                    .map(|(n, _)| n.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        objects.push(found.clone());
    }
    let hands = vec![(args.hand_id.clone(), load_hand(&args.hand)?)];
    let records = generate_dataset(&objects, &hands, &config.dataset, config.seed, &args.out)?;
    println!(
        "wrote {} scenes to {}",
        records.len(),
        args.out.join(MANIFEST_NAME).display()
    );
    Ok(())
}

/// Filesystem-safe variant tag: "+HS+heuristic+ICP" -> "hs-heuristic-icp".
fn file_label(variant: Variant) -> String {
    variant
        .label()
        .to_ascii_lowercase()
        .trim_start_matches('+')
        .replace('+', "-")
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let config = load_config(&args.common)?;
    let variants: Vec<Variant> = args
        .variants
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let records = load_manifest(&args.manifest)?;
    let data_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let objects = standard_objects();
    let hands = vec![(args.hand_id.clone(), load_hand(&args.hand)?)];
    ensure_dir(&args.out)?;

    let results = ablation_run(
        &records,
        &data_dir,
        &objects,
        &hands,
        &config,
        &variants,
        args.epsilon,
    )?;
    for result in &results {
        let label = file_label(result.variant);
        write_scene_csv(result, &args.out.join(format!("scenes_{label}.csv")))?;
        write_recall_curve_csv(result, &args.out.join(format!("recall_curve_{label}.csv")))?;
        println!("{}", summary_text(result));
    }
    write_ablation_csv(&results, &args.out.join("ablation.csv"))?;
    for result in &results {
        println!("{}\t{}", result.variant, result.recall);
    }
    Ok(())
}
