//! The full estimation pipeline: hand state, object cloud segmentation,
//! hypothesis generation, and selection, with per-stage wall times.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, RigidTransform};
use crate::hand::{compute_sdf, extract_roi, segment_object_cloud, HandModel, HandSdf, HandState};
use crate::mesh::TriangleMesh;
use crate::pso::{estimate_hand_state, HandEstimate};
use crate::registration::{
    build_ppf_hashmap, generate_hypotheses, init_heuristic, PoseHypothesis, SamplingHeuristic,
};
use crate::render::{depth_to_cloud, CameraIntrinsics, DepthImage};
use crate::rng::{derive_seed, stream_rng};
use crate::selection::{
    best_hypothesis, cluster_hypotheses, physics_prune, refine_and_truncate, select_final,
};

/// Seed streams of the pipeline stages, derived from the master seed so
/// that one number reproduces a run.
const STREAM_HAND: u64 = 1;
const STREAM_MODEL_SAMPLING: u64 = 2;
const STREAM_REGISTRATION: u64 = 3;

/// Which stages run. The ladder mirrors the benchmark ablations: each
/// step adds one component on top of the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Registration on the raw workspace crop with uniform base
    /// sampling; winner is the best raw hypothesis by LCP.
    Baseline,
    /// Adds hand state estimation and removes the hand's points from
    /// the registration cloud.
    HandSegmentation,
    /// Adds distance-weighted base sampling.
    Heuristic,
    /// Adds pose clustering and point-to-plane ICP refinement.
    Icp,
    /// Adds physical pruning and render-discrepancy selection.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::HandSegmentation,
        Variant::Heuristic,
        Variant::Icp,
        Variant::Full,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::HandSegmentation => "+HS",
            Variant::Heuristic => "+HS+heuristic",
            Variant::Icp => "+HS+heuristic+ICP",
            Variant::Full => "full",
        }
    }

    /// Hand state is estimated and its points removed before
    /// registration.
    pub fn segments_hand(&self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn uses_heuristic(&self) -> bool {
        matches!(self, Variant::Heuristic | Variant::Icp | Variant::Full)
    }

    pub fn uses_icp(&self) -> bool {
        matches!(self, Variant::Icp | Variant::Full)
    }

    pub fn uses_physics_and_render(&self) -> bool {
        matches!(self, Variant::Full)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.label().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown variant {s:?}; expected one of {}",
                    Variant::ALL.map(|v| v.label()).join(", ")
                ))
            })
    }
}

/// Wall time of each pipeline stage, seconds. Everything not covered by
/// a named stage (backprojection, normals, model sampling, feature
/// hashing, distance fields, segmentation) lands in `misc`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub hand_estimation: f64,
    pub hypothesis_generation: f64,
    pub clustering_icp: f64,
    pub pruning_render: f64,
    pub misc: f64,
    pub total: f64,
}

impl StageTimings {
    pub const STAGE_NAMES: [&'static str; 5] = [
        "hand_estimation",
        "hypothesis_generation",
        "clustering_icp",
        "pruning_render",
        "misc",
    ];

    pub fn stages(&self) -> [f64; 5] {
        [
            self.hand_estimation,
            self.hypothesis_generation,
            self.clustering_icp,
            self.pruning_render,
            self.misc,
        ]
    }

    fn finish(&mut self, total: f64) {
        self.total = total;
        let named = self.hand_estimation
            + self.hypothesis_generation
            + self.clustering_icp
            + self.pruning_render;
        self.misc = (total - named).max(0.0);
    }
}

/// Intermediate products of a run, kept only on request (the hypothesis
/// list can run to six figures).
#[derive(Clone, Debug)]
pub struct Intermediates {
    /// Backprojected scene cloud, all valid pixels.
    pub scene_cloud: OrientedPointCloud,
    /// The cloud registration ran on: workspace-cropped, hand-segmented
    /// (except in the baseline variant), subsampled.
    pub object_cloud: OrientedPointCloud,
    /// Every generated hypothesis, before clustering and pruning.
    pub hypotheses: Vec<PoseHypothesis>,
}

/// Final estimate plus diagnostics.
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    /// Camera-frame object pose.
    pub pose: RigidTransform,
    /// LCP of the winning hypothesis (post-refinement where ICP ran).
    pub lcp: f64,
    /// Render-discrepancy score of the winner; `None` when the render
    /// stage did not run.
    pub render_score: Option<f64>,
    /// Estimated hand state; `None` in the baseline variant.
    pub hand_state: Option<HandState>,
    /// Hypotheses generated by registration.
    pub n_hypotheses: usize,
    /// Hypotheses alive after clustering/refinement (equal to
    /// `n_hypotheses` when ICP is off).
    pub n_refined: usize,
    pub timings: StageTimings,
    pub intermediates: Option<Intermediates>,
}

/// Runs the full pipeline on one depth image.
pub fn estimate_pose(
    depth: &DepthImage,
    cam: &CameraIntrinsics,
    hand_model: &HandModel,
    wrist_prior: &RigidTransform,
    object_mesh: &TriangleMesh,
    config: &PipelineConfig,
) -> Result<PoseEstimate> {
    run_pipeline(
        depth,
        cam,
        hand_model,
        wrist_prior,
        object_mesh,
        config,
        Variant::Full,
        false,
    )
}

/// Runs the pipeline with an explicit stage selection.
///
/// All randomness is drawn from streams of `config.seed`, and every
/// parallel stage collects results in input order, so the estimate is
/// identical across runs and worker counts.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    depth: &DepthImage,
    cam: &CameraIntrinsics,
    hand_model: &HandModel,
    wrist_prior: &RigidTransform,
    object_mesh: &TriangleMesh,
    config: &PipelineConfig,
    variant: Variant,
    keep_intermediates: bool,
) -> Result<PoseEstimate> {
    config.validate()?;
    hand_model.validate()?;
    let t_total = Instant::now();
    let mut timings = StageTimings::default();

    let scene_cloud = depth_to_cloud(depth, cam, config.normal_k)?;

    // Hand state and the cloud registration will run on.
    let mut hand_state = None;
    let mut hand_sdf: Option<HandSdf> = None;
    let p_reg: OrientedPointCloud;
    if variant.segments_hand() {
        let t = Instant::now();
        let mut hand_params = config.hand.clone();
        hand_params.pso.rng_seed = derive_seed(config.seed, STREAM_HAND);
        let est = estimate_hand_state(&scene_cloud, hand_model, wrist_prior, &hand_params)?;
        timings.hand_estimation = t.elapsed().as_secs_f64();
        let sdf = compute_sdf(hand_model, &est.state, &config.sdf)?;
        let object_cloud = segment_object_cloud(&est.roi_cloud, &sdf, config.segmentation_epsilon)?;
        p_reg = object_cloud.stride_subsample(config.max_object_points);
        hand_state = Some(est.state);
        hand_sdf = Some(sdf);
    } else {
        let roi = extract_roi(&scene_cloud, wrist_prior, hand_model)?;
        p_reg = roi.stride_subsample(config.max_object_points);
    }

    let mut rng = stream_rng(config.seed, STREAM_MODEL_SAMPLING);
    let model_samples = object_mesh.sample_surface(config.model_samples, &mut rng)?;
    let ppf = build_ppf_hashmap(&model_samples, config.registration.steps)?;

    let t = Instant::now();
    let mut heuristic = match (&hand_sdf, variant.uses_heuristic()) {
        (Some(sdf), true) => init_heuristic(
            &p_reg,
            |p| sdf.query(p),
            config.registration.lambda,
            config.registration.gamma,
        ),
        _ => SamplingHeuristic::uniform(p_reg.len(), config.registration.gamma),
    };
    let hyps = generate_hypotheses(
        &p_reg,
        &model_samples,
        &ppf,
        &mut heuristic,
        &config.registration,
        derive_seed(config.seed, STREAM_REGISTRATION),
    )?;
    timings.hypothesis_generation = t.elapsed().as_secs_f64();
    let n_hypotheses = hyps.len();

    let intermediates = keep_intermediates.then(|| Intermediates {
        scene_cloud: scene_cloud.clone(),
        object_cloud: p_reg.clone(),
        hypotheses: hyps.clone(),
    });

    let pool = if variant.uses_icp() {
        let t = Instant::now();
        let clusters = cluster_hypotheses(&hyps, &config.selection.cluster);
        let refined =
            refine_and_truncate(&hyps, &clusters, &model_samples, &p_reg, &config.selection)?;
        timings.clustering_icp = t.elapsed().as_secs_f64();
        refined
    } else {
        hyps
    };
    let n_refined = pool.len();

    let winner = if variant.uses_physics_and_render() {
        let t = Instant::now();
        let sdf = hand_sdf.as_ref().expect("full variant estimates the hand");
        let state = hand_state
            .as_ref()
            .expect("full variant estimates the hand");
        let pruned = physics_prune(&pool, &model_samples, sdf, &config.selection.physics);
        let kept = if pruned.is_empty() {
            log::warn!(
                "physical pruning rejected all {} hypotheses; keeping the unpruned set",
                pool.len()
            );
            pool
        } else {
            pruned
        };
        let w = select_final(
            &kept,
            depth,
            hand_model,
            state,
            object_mesh,
            cam,
            &config.selection,
        )?;
        timings.pruning_render = t.elapsed().as_secs_f64();
        w
    } else {
        *best_hypothesis(&pool).ok_or(Error::NoHypotheses)?
    };

    timings.finish(t_total.elapsed().as_secs_f64());
    Ok(PoseEstimate {
        pose: winner.transform,
        lcp: winner.lcp,
        render_score: winner.render_score,
        hand_state,
        n_hypotheses,
        n_refined,
        timings,
        intermediates,
    })
}

/// Standalone hand state estimation from a depth image, for consumers
/// that want the wrist pose and joint angles without the object stage.
pub fn estimate_hand(
    depth: &DepthImage,
    cam: &CameraIntrinsics,
    hand_model: &HandModel,
    wrist_prior: &RigidTransform,
    config: &PipelineConfig,
) -> Result<HandEstimate> {
    config.validate()?;
    let scene_cloud = depth_to_cloud(depth, cam, config.normal_k)?;
    let mut hand_params = config.hand.clone();
    hand_params.pso.rng_seed = derive_seed(config.seed, STREAM_HAND);
    estimate_hand_state(&scene_cloud, hand_model, wrist_prior, &hand_params)
}
