//! Command-line front end: scenario simulation, map building, localization,
//! completion, foreground augmentation, the full benchmark, and report
//! regeneration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lgfa::completion::{complete, CompletedSet};
use lgfa::foreground::augment;
use lgfa::fusion::build_map;
use lgfa::localization::{localize, LocalizationError};
use lgfa::map_model::io::{self, FrameSet};
use lgfa::map_model::{FrameObjects, Pose2D};
use lgfa::pipeline::{run_bench, BenchOptions, Method, PipelineConfig};
use lgfa::report;
use lgfa::scenario::{generate_gt, perturbations, simulate_frames, ScenarioSpec};

/// Exit code for input and schema errors.
const EXIT_INPUT: u8 = 2;
/// Exit code for numerical failures.
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "lgfa", version, about = "Vector-map fusion, localization and line completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline configuration file (JSON with fusion/localization/completion
    /// sections; missing fields take defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted overrides applied on top of the configuration file, e.g.
    /// `--cfg fusion.assoc_threshold=1.5`. Later flags win.
    #[arg(long = "cfg", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: ground-truth map and frame observations.
    Simulate {
        /// Scenario spec JSON file, or "default".
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out_frames: PathBuf,
        #[arg(long)]
        out_gt: PathBuf,
        /// Dotted overrides for the scenario spec, e.g. `--scn seed=7`.
        #[arg(long = "scn", value_name = "KEY=VALUE")]
        scn: Vec<String>,
    },
    /// Fuse a frame stream into a global vector map.
    BuildMap {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Localize every frame against a map from a perturbed initialization.
    Localize {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Either `tx,ty,phi_deg` (one ego-frame perturbation applied to every
        /// frame's pose reference) or `gnss-protocol` (the 8-perturbation set).
        #[arg(long)]
        init: String,
        /// Noise scale of the gnss-protocol initialization.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Fail (exit 3) when any frame does not converge.
        #[arg(long)]
        strict: bool,
    },
    /// Complete each frame's geometry from the global map under given poses.
    Complete {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// CSV produced by `localize`.
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build augmented frames: completed map plus reprojected ego and objects.
    Augment {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        objects: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full benchmark: simulate, fuse, localize with every method,
    /// complete, and write tables and charts.
    Bench {
        /// Scenario spec JSON file, or "default".
        #[arg(long, default_value = "default")]
        spec: String,
        /// Comma-separated noise scales.
        #[arg(long, default_value = "1,2,3")]
        alpha: String,
        /// Comma-separated methods among gnss, icp, ndt, ours.
        #[arg(long, default_value = "gnss,icp,ndt,ours")]
        methods: String,
        /// Number of scene seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Evaluate every n-th frame.
        #[arg(long, default_value_t = 4)]
        frame_stride: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long = "scn", value_name = "KEY=VALUE")]
        scn: Vec<String>,
        /// Fail on any scene error instead of writing partial results.
        #[arg(long)]
        strict: bool,
    },
    /// Regenerate tables and charts from raw benchmark results.
    Report {
        /// `results_raw.json` file or the directory containing it.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    lgfa::pipeline::init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{}", e.message);
            eprintln!("{{\"error\": {:?}, \"exit_code\": {}}}", e.message, e.code);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
    fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

fn set_path(
    node: &mut serde_json::Value,
    parts: &[&str],
    value: serde_json::Value,
) -> Result<(), String> {
    let obj = node.as_object_mut().ok_or("path hits a non-object")?;
    if parts.len() == 1 {
        obj.insert(parts[0].to_string(), value);
        Ok(())
    } else {
        let child = obj
            .entry(parts[0].to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        set_path(child, &parts[1..], value)
    }
}

/// Applies `key=value` overrides onto a JSON tree, creating objects along
/// dotted paths. Values parse as JSON when possible, else as strings.
fn apply_overrides(
    mut tree: serde_json::Value,
    overrides: &[String],
) -> Result<serde_json::Value, CliError> {
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("override {entry:?} is not KEY=VALUE")))?;
        let value: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let parts: Vec<&str> = path.split('.').collect();
        set_path(&mut tree, &parts, value)
            .map_err(|e| CliError::input(format!("override {path:?}: {e}")))?;
    }
    Ok(tree)
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, CliError> {
    let base = match &args.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<serde_json::Value>(&raw)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
        None => serde_json::to_value(PipelineConfig::default()).unwrap(),
    };
    let tree = apply_overrides(base, &args.overrides)?;
    serde_json::from_value(tree).map_err(|e| CliError::input(format!("configuration: {e}")))
}

fn load_spec(spec: &str, overrides: &[String]) -> Result<ScenarioSpec, CliError> {
    let base = if spec == "default" {
        serde_json::to_value(ScenarioSpec::default()).unwrap()
    } else {
        let raw = std::fs::read_to_string(spec)
            .map_err(|e| CliError::input(format!("{spec}: {e}")))?;
        serde_json::from_str(&raw).map_err(|e| CliError::input(format!("{spec}: {e}")))?
    };
    let tree = apply_overrides(base, overrides)?;
    serde_json::from_value(tree).map_err(|e| CliError::input(format!("scenario spec: {e}")))
}

fn parse_init(init: &str) -> Result<Option<Pose2D>, CliError> {
    if init == "gnss-protocol" {
        return Ok(None);
    }
    let parts: Vec<&str> = init.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::input(format!(
            "--init must be tx,ty,phi_deg or gnss-protocol, got {init:?}"
        )));
    }
    let nums: Result<Vec<f64>, _> = parts.iter().map(|s| s.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|e| CliError::input(format!("--init: {e}")))?;
    Ok(Some(Pose2D::new(nums[0], nums[1], nums[2].to_radians())))
}

/// One row per (frame, perturbation) of the localization CSV.
struct LocalizeRow {
    frame: u64,
    stage1: usize,
    stage2: usize,
    pose: Pose2D,
    trans_err: f64,
    head_err: f64,
}

fn write_localize_csv(path: &Path, rows: &[LocalizeRow]) -> Result<(), CliError> {
    let mut out =
        String::from("frame,stage1_iters,stage2_iters,tx,ty,phi_deg,trans_err_m,head_err_deg\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.frame,
            r.stage1,
            r.stage2,
            r.pose.tx,
            r.pose.ty,
            r.pose.phi.to_degrees(),
            r.trans_err,
            r.head_err
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// First pose per frame from a localize CSV.
fn read_poses_csv(path: &Path) -> Result<std::collections::BTreeMap<u64, Pose2D>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut out = std::collections::BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 6 {
            return Err(CliError::input(format!(
                "{}: row {i} has {} columns, expected at least 6",
                path.display(),
                cols.len()
            )));
        }
        let frame: u64 = cols[0]
            .parse()
            .map_err(|e| CliError::input(format!("{}: row {i}: {e}", path.display())))?;
        let nums: Result<Vec<f64>, _> = cols[3..6].iter().map(|s| s.parse::<f64>()).collect();
        let nums =
            nums.map_err(|e| CliError::input(format!("{}: row {i}: {e}", path.display())))?;
        out.entry(frame).or_insert(Pose2D::new(nums[0], nums[1], nums[2].to_radians()));
    }
    Ok(out)
}

fn completed_to_json(set: &CompletedSet) -> serde_json::Value {
    use lgfa::geom::SemanticClass;
    let mut elements = Vec::new();
    for class in SemanticClass::ALL {
        for c in set.classes.get(class) {
            elements.push(serde_json::json!({
                "class": class.name(),
                "gid": c.source_gid,
                "runs": c.runs.iter().map(|r| serde_json::json!({
                    "src": match r.src {
                        lgfa::completion::SourceTag::Observed => "obs",
                        lgfa::completion::SourceTag::Bridged => "bridge",
                        lgfa::completion::SourceTag::Spliced => "splice",
                    },
                    "pts": r.pts.iter().map(|p| vec![p.x, p.y]).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            }));
        }
    }
    serde_json::Value::Array(elements)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { spec, out_frames, out_gt, scn } => {
            let spec = load_spec(&spec, &scn)?;
            let gt = generate_gt(&spec).map_err(|e| CliError::input(e.to_string()))?;
            let frames = simulate_frames(&gt, &spec).map_err(|e| CliError::input(e.to_string()))?;
            io::write_map(&out_gt, &gt)?;
            io::write_frames(&out_frames, &frames)?;
            log::info!(
                "wrote {} frames and a map with {} elements",
                frames.frames.len(),
                gt.total_elements()
            );
            Ok(())
        }

        Command::BuildMap { frames, out, config } => {
            let cfg = load_config(&config)?;
            let set: FrameSet = io::read_frames(&frames)?;
            let map = build_map(&set.scene, &set.frames, &cfg.fusion)
                .map_err(|e| CliError::numeric(e.to_string()))?;
            io::write_map(&out, &map)?;
            log::info!("fused {} frames into {} elements", set.frames.len(), map.total_elements());
            Ok(())
        }

        Command::Localize { frames, map, init, alpha, out, config, strict } => {
            let cfg = load_config(&config)?;
            let set = io::read_frames(&frames)?;
            let map = io::read_map(&map)?;
            let fixed = parse_init(&init)?;
            let perts: Vec<Pose2D> = match fixed {
                Some(p) => vec![p],
                None => perturbations(alpha)
                    .map_err(|e| CliError::input(e.to_string()))?
                    .poses,
            };
            let mut rows = Vec::new();
            let mut any_diverged = false;
            for frame in &set.frames {
                for pert in &perts {
                    let theta0 = frame.ego_pose_ref.compose(pert);
                    match localize(frame, &map, &theta0, &cfg.localization) {
                        Ok(result) => {
                            let (t, h) = lgfa::evalmetrics::pose_errors(
                                &result.pose,
                                &frame.ego_pose_ref,
                            );
                            if !result.converged {
                                any_diverged = true;
                                log::warn!("frame {}: no convergence", frame.frame_index);
                            }
                            rows.push(LocalizeRow {
                                frame: frame.frame_index,
                                stage1: result.iterations_used[0],
                                stage2: result.iterations_used[1],
                                pose: result.pose,
                                trans_err: t,
                                head_err: h,
                            });
                        }
                        Err(LocalizationError::InsufficientInput(msg)) => {
                            log::warn!("frame {} skipped: {msg}", frame.frame_index);
                        }
                        Err(e) => return Err(CliError::numeric(e.to_string())),
                    }
                }
            }
            if rows.is_empty() {
                return Err(CliError::numeric("every frame was skipped"));
            }
            write_localize_csv(&out, &rows)?;
            if strict && any_diverged {
                return Err(CliError::numeric("non-convergence under --strict"));
            }
            log::info!("localized {} rows", rows.len());
            Ok(())
        }

        Command::Complete { frames, map, poses, out, config } => {
            let cfg = load_config(&config)?;
            let set = io::read_frames(&frames)?;
            let map = io::read_map(&map)?;
            let pose_table = read_poses_csv(&poses)?;
            let mut frames_json = Vec::new();
            for frame in &set.frames {
                let Some(theta) = pose_table.get(&frame.frame_index) else {
                    log::warn!("frame {}: no pose row, skipped", frame.frame_index);
                    continue;
                };
                let completed = complete(&map, frame, theta, &cfg.completion);
                frames_json.push(serde_json::json!({
                    "t": frame.frame_index,
                    "elements": completed_to_json(&completed),
                }));
            }
            write_json(
                &out,
                &serde_json::json!({ "scene": set.scene, "frames": frames_json }),
            )?;
            Ok(())
        }

        Command::Augment { frames, objects, map, poses, out, config } => {
            let cfg = load_config(&config)?;
            let set = io::read_frames(&frames)?;
            let map = io::read_map(&map)?;
            let pose_table = read_poses_csv(&poses)?;
            let objects: Vec<FrameObjects> =
                objects.map(|p| io::read_objects(&p)).transpose()?.unwrap_or_default();
            let mut frames_json = Vec::new();
            for frame in &set.frames {
                let Some(theta) = pose_table.get(&frame.frame_index) else {
                    log::warn!("frame {}: no pose row, skipped", frame.frame_index);
                    continue;
                };
                let completed = complete(&map, frame, theta, &cfg.completion);
                let boxes = objects
                    .iter()
                    .find(|o| o.frame_index == frame.frame_index)
                    .map(|o| o.boxes.clone())
                    .unwrap_or_default();
                let aug = augment(frame.frame_index, &boxes, theta, completed);
                frames_json.push(serde_json::json!({
                    "t": aug.frame_index,
                    "refined_pose": [aug.refined_pose.tx, aug.refined_pose.ty, aug.refined_pose.phi],
                    "ego_in_map": [aug.ego_in_map.tx, aug.ego_in_map.ty, aug.ego_in_map.phi],
                    "objects": aug.objects_in_map.iter().map(|b| serde_json::json!({
                        "cx": b.center.x, "cy": b.center.y, "yaw": b.yaw,
                        "l": b.length, "w": b.width, "label": b.label,
                    })).collect::<Vec<_>>(),
                    "completed": completed_to_json(&aug.completed_map),
                }));
            }
            write_json(
                &out,
                &serde_json::json!({ "scene": set.scene, "frames": frames_json }),
            )?;
            Ok(())
        }

        Command::Bench { spec, alpha, methods, seeds, frame_stride, out, config, scn, strict } => {
            let spec = load_spec(&spec, &scn)?;
            let mut cfg = load_config(&config)?;
            // Without an explicit localization config the benchmark preset
            // applies (gates sized for the synthetic perturbation protocol).
            if config.config.is_none()
                && !config.overrides.iter().any(|o| o.starts_with("localization."))
            {
                cfg.localization = lgfa::localization::LocalizationConfig::synthetic_benchmark();
            }
            let alphas: Result<Vec<f64>, _> =
                alpha.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let alphas = alphas.map_err(|e| CliError::input(format!("--alpha: {e}")))?;
            let methods: Result<Vec<Method>, _> = methods
                .split(',')
                .map(|s| Method::parse(s.trim()).ok_or(format!("unknown method {s:?}")))
                .collect();
            let methods = methods.map_err(CliError::input)?;
            let opts = BenchOptions { spec, alphas, methods, seeds, frame_stride, config: cfg };
            match run_bench(&opts, &out) {
                Ok(raw) => {
                    log::info!("benchmark complete: {} scenes", raw.scenes.len());
                    Ok(())
                }
                Err(e) if strict => Err(CliError::numeric(e.to_string())),
                Err(e) => {
                    log::warn!("partial results written: {e}");
                    Err(CliError::numeric(e.to_string()))
                }
            }
        }

        Command::Report { input, out } => {
            let path = if input.is_dir() { input.join("results_raw.json") } else { input };
            let raw = report::read_raw(&path).map_err(CliError::input)?;
            let agg = report::aggregate(&raw).map_err(|e| CliError::numeric(e.to_string()))?;
            report::write_report(&out, &agg)?;
            Ok(())
        }
    }
}
