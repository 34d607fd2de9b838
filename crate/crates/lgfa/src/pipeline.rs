//! End-to-end benchmark pipeline: simulate, fuse, localize with every
//! method across noise scales and perturbations, complete, and aggregate.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{ndt_align, icp_trimmed, NdtGrid};
use crate::completion::{complete, completion_rate, CompletionConfig};
use crate::evalmetrics::{chamfer_map, pose_errors, scale_error};
use crate::fusion::{build_map, FusionConfig};
use crate::geom::{ClassMap, Point2, SemanticClass};
use crate::localization::{localize_sets, LocalizationConfig, LocalizationError, SampledClassSets};
use crate::map_model::{FrameObservation, GlobalVectorMap};
use crate::report::{CompletionSample, LocSample, RawResults, SceneRaw};
use crate::scenario::{generate_gt, perturbations, simulate_frames, ScenarioSpec};

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Metric(#[from] crate::evalmetrics::MetricError),
    #[error("scene {scene}: {message}")]
    Scene { scene: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Module configurations bundled for the CLI; every field defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fusion: FusionConfig,
    pub localization: LocalizationConfig,
    pub completion: CompletionConfig,
}

impl PipelineConfig {
    /// Configuration used by the synthetic benchmark (see
    /// [`LocalizationConfig::synthetic_benchmark`]).
    pub fn synthetic_benchmark() -> Self {
        Self { localization: LocalizationConfig::synthetic_benchmark(), ..Self::default() }
    }
}

/// Registration method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gnss,
    Icp,
    Ndt,
    Ours,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gnss => "gnss",
            Method::Icp => "icp",
            Method::Ndt => "ndt",
            Method::Ours => "ours",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "gnss" => Some(Method::Gnss),
            "icp" => Some(Method::Icp),
            "ndt" => Some(Method::Ndt),
            "ours" => Some(Method::Ours),
            _ => None,
        }
    }
}

/// Benchmark run options.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub spec: ScenarioSpec,
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    /// Number of seeds; scene `i` runs with `spec.seed + i`.
    pub seeds: u64,
    /// Evaluate every `stride`-th frame (1 = all frames).
    pub frame_stride: usize,
    pub config: PipelineConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            spec: ScenarioSpec::default(),
            alphas: vec![1.0, 2.0, 3.0],
            methods: vec![Method::Gnss, Method::Icp, Method::Ndt, Method::Ours],
            seeds: 1,
            frame_stride: 1,
            config: PipelineConfig::synthetic_benchmark(),
        }
    }
}

/// Baseline inputs: class-blind merged sample sets.
fn merged_points(by_class: &ClassMap<Vec<Point2>>) -> Vec<Point2> {
    SemanticClass::ALL.iter().flat_map(|&c| by_class.get(c).iter().copied()).collect()
}

/// ICP baseline parameters: 20 iterations, 2 m radius, 0.7 trimming.
const ICP_ITERS: usize = 20;
const ICP_RADIUS: f64 = 2.0;
const ICP_TRIM: f64 = 0.7;
/// NDT baseline parameters: 1 m grid, 20 iterations.
const NDT_ITERS: usize = 20;
const NDT_GRID: f64 = 1.0;

/// Everything the bench computes for one scene seed.
pub struct SceneRun {
    pub gt: GlobalVectorMap,
    pub map: GlobalVectorMap,
    pub frames: Vec<FrameObservation>,
    pub raw: SceneRaw,
}

/// Runs one scene end to end. Deterministic in `(spec, options)`.
pub fn run_scene(
    spec: &ScenarioSpec,
    opts: &BenchOptions,
) -> Result<SceneRun, PipelineError> {
    let gt = generate_gt(spec)?;
    let frame_set = simulate_frames(&gt, spec)?;
    let map = build_map(&frame_set.scene, &frame_set.frames, &opts.config.fusion)?;

    let loc_cfg = &opts.config.localization;
    let delta = loc_cfg.resample_step;

    let chamfer_m = chamfer_map(&map, &gt, delta);
    let scale_err_pct = match scale_error(&map, &gt, delta) {
        Ok(est) => est.per_class,
        Err(_) => ClassMap::from_fn(|_| None),
    };

    // Map-side structures shared across frames, perturbations and methods.
    let map_points: Vec<Point2> = {
        let by_class = ClassMap::from_fn(|c| {
            map.polylines(c)
                .iter()
                .flat_map(|p| crate::geom::resample(p, delta))
                .collect::<Vec<_>>()
        });
        merged_points(&by_class)
    };
    let ndt_grid = NdtGrid::build(&map_points, NDT_GRID).ok();

    let eval_frames: Vec<&FrameObservation> =
        frame_set.frames.iter().step_by(opts.frame_stride.max(1)).collect();

    let mut loc: Vec<LocSample> = Vec::new();
    let mut completion: Vec<CompletionSample> = Vec::new();

    for frame in &eval_frames {
        let sets = SampledClassSets::build(frame, &map, loc_cfg);
        if sets.total_frame_points() < loc_cfg.min_points {
            continue; // frame skipped, mirroring the evaluation protocol
        }
        let frame_points = merged_points(&sets.xs);
        let truth = frame.ego_pose_ref;

        for &alpha in &opts.alphas {
            let protocol = perturbations(alpha)?;
            let mut per_method: Vec<(Method, Vec<f64>, Vec<f64>)> =
                opts.methods.iter().map(|&m| (m, Vec::new(), Vec::new())).collect();

            for pert in &protocol.poses {
                let theta0 = truth.compose(pert);
                for (method, trans, head) in per_method.iter_mut() {
                    let estimate = match method {
                        Method::Gnss => theta0,
                        Method::Icp => {
                            icp_trimmed(&frame_points, &map_points, &theta0, ICP_ITERS, ICP_RADIUS, ICP_TRIM)
                                .unwrap_or(theta0)
                        }
                        Method::Ndt => match &ndt_grid {
                            Some(grid) => ndt_align(grid, &frame_points, &theta0, NDT_ITERS),
                            None => theta0,
                        },
                        Method::Ours => match localize_sets(&sets, &theta0, loc_cfg) {
                            Ok(result) => result.pose,
                            Err(LocalizationError::InsufficientInput(_)) => theta0,
                            Err(_) => theta0,
                        },
                    };
                    let (t, h) = pose_errors(&estimate, &truth);
                    trans.push(t);
                    head.push(h);
                }
            }
            for (method, trans, head) in per_method {
                loc.push(LocSample {
                    alpha,
                    method: method.name().to_string(),
                    frame: frame.frame_index,
                    trans_errs_m: trans,
                    head_errs_deg: head,
                });
            }
        }

        // Completion mirror: pose-only uses the raw perturbed pose, the full
        // pipeline localizes from it and completes. One perturbation per
        // frame (cycling through the protocol at the first noise scale).
        let alpha0 = *opts.alphas.first().unwrap_or(&1.0);
        let protocol = perturbations(alpha0)?;
        let pert = &protocol.poses[(frame.frame_index as usize) % protocol.poses.len()];
        let theta0 = truth.compose(pert);

        let pose_only_polys = ClassMap::from_fn(|c| {
            frame
                .polylines
                .get(c)
                .iter()
                .map(|fp| theta0.apply_polyline(&fp.geometry))
                .collect::<Vec<_>>()
        });
        let pose_only_pct = completion_rate(&pose_only_polys, &gt, &opts.config.completion);

        let refined = match localize_sets(&sets, &theta0, loc_cfg) {
            Ok(r) => r.pose,
            Err(_) => theta0,
        };
        let completed = complete(&map, frame, &refined, &opts.config.completion);
        let full_pct =
            completion_rate(&completed.polylines_by_class(), &gt, &opts.config.completion);

        completion.push(CompletionSample {
            frame: frame.frame_index,
            pose_only_pct,
            full_pct,
        });
    }

    let raw = SceneRaw {
        seed: spec.seed,
        scene: frame_set.scene.clone(),
        chamfer_m,
        scale_err_pct,
        loc,
        completion,
    };
    Ok(SceneRun { gt, map, frames: frame_set.frames, raw })
}

/// Runs the full benchmark across seeds (in parallel, output order fixed by
/// seed) and writes the raw results plus every aggregate table and chart.
pub fn run_bench(opts: &BenchOptions, out_dir: &Path) -> Result<RawResults, PipelineError> {
    let specs: Vec<ScenarioSpec> = (0..opts.seeds.max(1))
        .map(|i| ScenarioSpec { seed: opts.spec.seed + i, ..opts.spec.clone() })
        .collect();

    let scenes: Vec<Result<SceneRun, PipelineError>> =
        specs.par_iter().map(|spec| run_scene(spec, opts)).collect();

    let mut raw = RawResults::default();
    let mut first_error: Option<PipelineError> = None;
    for scene in scenes {
        match scene {
            Ok(run) => raw.scenes.push(run.raw),
            Err(e) => {
                log::error!("scene failed: {e}");
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }

    // Partial results are written before reporting a failure.
    crate::report::write_raw(out_dir, &raw)?;
    let agg = crate::report::aggregate(&raw)?;
    crate::report::write_report(out_dir, &agg)?;

    match first_error {
        Some(e) => Err(e),
        None => Ok(raw),
    }
}

/// Caps the rayon pool from `LGFA_THREADS` when set. Call once at startup.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("LGFA_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}
