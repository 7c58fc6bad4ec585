//! Hand state estimation: per-finger particle swarm optimization of joint
//! angles against the cropped scene cloud.
//!
//! Fingers are optimized one at a time, nearest to the camera first, and
//! each finished finger becomes a collision obstacle for the remaining
//! ones. A particle is a full joint configuration of one finger; its cost
//! is a large penetration penalty when the posed finger intersects the
//! wrist or an already-posed finger, and otherwise the negative fraction
//! of the finger's surface samples explained by the scene.
//!
//! All random draws happen serially in particle order before the particle
//! evaluations run, and the best particle is picked by (cost, index), so
//! results are bitwise identical for any worker count.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    lcp_score, IcpParams, KdTree, LcpParams, OrientedPoint, OrientedPointCloud, Point3,
    RigidTransform,
};
use crate::hand::{
    extract_roi, forward_kinematics, refine_wrist_pose, FingerChain, FingerConfig, HandModel,
    HandState,
};
use crate::mesh::TriangleMesh;
use crate::parallel::par_map;
use crate::rng::stream_rng;
use crate::sdf::{SdfParams, SignedDistanceField};

/// Swarm size and update coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoParams {
    pub num_particles: usize,
    pub num_iterations: usize,
    pub inertia_weight: f64,
    pub cognitive_weight: f64,
    pub social_weight: f64,
    /// Per-joint velocity cap, as a fraction of that joint's limit range.
    pub velocity_clamp_fraction: f64,
    pub rng_seed: u64,
}

impl Default for PsoParams {
    fn default() -> Self {
        Self {
            num_particles: 15,
            num_iterations: 3,
            inertia_weight: 0.72,
            cognitive_weight: 1.49,
            social_weight: 1.49,
            velocity_clamp_fraction: 0.25,
            rng_seed: 0,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(Error::InvalidInput("pso.num_particles must be > 0".into()));
        }
        if !(self.inertia_weight >= 0.0)
            || !(self.cognitive_weight >= 0.0)
            || !(self.social_weight >= 0.0)
        {
            return Err(Error::InvalidInput(
                "pso weights must be non-negative".into(),
            ));
        }
        if !(self.velocity_clamp_fraction > 0.0 && self.velocity_clamp_fraction <= 1.0) {
            return Err(Error::InvalidInput(
                "pso.velocity_clamp_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Finger cost weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Multiplier on the penetration depth (meters) when the candidate
    /// finger intersects an obstacle.
    pub collision_penalty: f64,
    /// Voxel size of the coarse per-link distance fields used for the
    /// penetration test.
    pub collision_voxel_size: f64,
    pub lcp: LcpParams,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            collision_penalty: 1e6,
            collision_voxel_size: 0.004,
            lcp: LcpParams::default(),
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.collision_penalty > 0.0) {
            return Err(Error::InvalidInput(
                "cost.collision_penalty must be > 0".into(),
            ));
        }
        if !(self.collision_voxel_size > 0.0) {
            return Err(Error::InvalidInput(
                "cost.collision_voxel_size must be > 0".into(),
            ));
        }
        self.lcp.validate()
    }
}

/// Everything hand state estimation needs besides the model and the scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandEstimationParams {
    pub pso: PsoParams,
    pub cost: CostParams,
    pub wrist_icp: IcpParams,
}

impl HandEstimationParams {
    pub fn validate(&self) -> Result<()> {
        self.pso.validate()?;
        self.cost.validate()
    }
}

/// A rigid body the candidate finger must not penetrate: a coarse signed
/// distance field in the body's own frame plus its camera-frame pose.
#[derive(Clone, Debug)]
pub struct LinkObstacle {
    sdf: SignedDistanceField,
    body_from_camera: RigidTransform,
}

impl LinkObstacle {
    /// Builds the obstacle field from the body mesh (in body frame) and
    /// the body's camera-frame pose.
    pub fn from_mesh(
        mesh: &TriangleMesh,
        camera_from_body: &RigidTransform,
        params: &SdfParams,
    ) -> Result<Self> {
        let (lo, hi) = mesh.bounding_box()?;
        let sdf = SignedDistanceField::build(std::slice::from_ref(mesh), lo, hi, params)?;
        Ok(Self {
            sdf,
            body_from_camera: camera_from_body.inverse(),
        })
    }

    /// Signed distance from a camera-frame point to the obstacle surface.
    pub fn query(&self, p_camera: &Point3) -> f64 {
        self.sdf.query(&self.body_from_camera.apply(p_camera))
    }
}

/// How far the posed finger's surface samples reach inside any obstacle.
/// Zero when the finger is collision-free.
pub fn penetration_depth(
    finger: &FingerChain,
    link_poses: &[RigidTransform],
    obstacles: &[LinkObstacle],
) -> f64 {
    let mut depth: f64 = 0.0;
    for (cloud, pose) in finger.link_samples.iter().zip(link_poses) {
        for p in &cloud.points {
            let pc = pose.apply(&p.position);
            for ob in obstacles {
                depth = depth.max(-ob.query(&pc));
            }
        }
    }
    depth
}

/// Cost of one candidate configuration: `collision_penalty * depth` when
/// the finger penetrates an obstacle, otherwise the negated fraction of
/// finger surface samples with a scene neighbor within the inlier radius.
pub fn finger_cost(
    finger: &FingerChain,
    q: &FingerConfig,
    wrist_pose: &RigidTransform,
    obstacles: &[LinkObstacle],
    scene_index: &KdTree,
    params: &CostParams,
) -> Result<f64> {
    let poses = forward_kinematics(finger, q, wrist_pose)?;
    let depth = penetration_depth(finger, &poses, obstacles);
    if depth > 0.0 {
        return Ok(params.collision_penalty * depth);
    }
    let mut points = Vec::with_capacity(finger.link_samples.iter().map(|c| c.len()).sum());
    for (cloud, pose) in finger.link_samples.iter().zip(&poses) {
        for p in &cloud.points {
            points.push(OrientedPoint::new(
                pose.apply(&p.position),
                pose.rotate(&p.normal),
            ));
        }
    }
    let posed = OrientedPointCloud::new(points);
    let lcp = lcp_score(
        &posed,
        scene_index,
        &RigidTransform::identity(),
        &params.lcp,
    )?;
    Ok(-lcp)
}

/// Result of one finger's swarm optimization.
#[derive(Clone, Debug)]
pub struct FingerEstimate {
    pub config: FingerConfig,
    pub cost: f64,
    /// Best cost after initialization and after each iteration; never
    /// increases.
    pub cost_history: Vec<f64>,
}

fn evaluate_swarm(
    positions: &[Vec<f64>],
    finger: &FingerChain,
    wrist_pose: &RigidTransform,
    obstacles: &[LinkObstacle],
    scene_index: &KdTree,
    cost: &CostParams,
) -> Result<Vec<f64>> {
    par_map(positions, |x| {
        finger_cost(
            finger,
            &FingerConfig { angles: x.clone() },
            wrist_pose,
            obstacles,
            scene_index,
            cost,
        )
    })
    .into_iter()
    .collect()
}

/// Index of the lowest cost, earliest index winning ties.
fn argmin(costs: &[f64]) -> usize {
    costs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.total_cmp(b).then(i.cmp(j)))
        .expect("non-empty swarm")
        .0
}

/// Optimizes one finger's joint angles with a particle swarm.
///
/// Particles start uniformly inside the joint limits with zero velocity.
/// Each iteration updates every velocity with inertia plus cognitive and
/// social pulls (fresh uniform weights per dimension), clamps it to the
/// per-joint cap, steps the position, and clamps the position back into
/// the limits.
pub fn estimate_finger<R: Rng>(
    finger: &FingerChain,
    wrist_pose: &RigidTransform,
    obstacles: &[LinkObstacle],
    scene_index: &KdTree,
    params: &PsoParams,
    cost: &CostParams,
    rng: &mut R,
) -> Result<FingerEstimate> {
    params.validate()?;
    cost.validate()?;
    finger.validate()?;
    let dims = finger.num_joints();
    let limits: Vec<(f64, f64)> = finger.joints.iter().map(|j| j.limits).collect();
    let v_max: Vec<f64> = limits
        .iter()
        .map(|(lo, hi)| params.velocity_clamp_fraction * (hi - lo))
        .collect();

    let mut xs: Vec<Vec<f64>> = (0..params.num_particles)
        .map(|_| {
            limits
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        })
        .collect();
    let mut vs = vec![vec![0.0; dims]; params.num_particles];

    let costs = evaluate_swarm(&xs, finger, wrist_pose, obstacles, scene_index, cost)?;
    let mut pbest = xs.clone();
    let mut pbest_cost = costs;
    let mut g = argmin(&pbest_cost);
    let mut gbest = pbest[g].clone();
    let mut gbest_cost = pbest_cost[g];
    let mut history = vec![gbest_cost];

    for _ in 0..params.num_iterations {
        for i in 0..params.num_particles {
            for d in 0..dims {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = params.inertia_weight * vs[i][d]
                    + params.cognitive_weight * r1 * (pbest[i][d] - xs[i][d])
                    + params.social_weight * r2 * (gbest[d] - xs[i][d]);
                vs[i][d] = v.clamp(-v_max[d], v_max[d]);
                xs[i][d] = (xs[i][d] + vs[i][d]).clamp(limits[d].0, limits[d].1);
            }
        }
        let costs = evaluate_swarm(&xs, finger, wrist_pose, obstacles, scene_index, cost)?;
        for i in 0..params.num_particles {
            if costs[i] < pbest_cost[i] {
                pbest_cost[i] = costs[i];
                pbest[i].clone_from(&xs[i]);
            }
        }
        g = argmin(&pbest_cost);
        // Personal bests only improve, so this never increases.
        gbest = pbest[g].clone();
        gbest_cost = pbest_cost[g];
        history.push(gbest_cost);
    }

    Ok(FingerEstimate {
        config: FingerConfig { angles: gbest },
        cost: gbest_cost,
        cost_history: history,
    })
}

/// Result of full hand state estimation.
#[derive(Clone, Debug)]
pub struct HandEstimate {
    pub state: HandState,
    /// Scene points inside the hand workspace box.
    pub roi_cloud: OrientedPointCloud,
    /// False when wrist ICP fell back to the prior.
    pub wrist_refined: bool,
    /// Finger indices in the order they were optimized (ascending
    /// camera-frame depth of the finger base).
    pub finger_order: Vec<usize>,
    /// Per-finger results, indexed like `model.fingers`.
    pub finger_estimates: Vec<FingerEstimate>,
}

/// Estimates the full hand state from a scene cloud and a wrist pose
/// prior: crops the scene to the hand workspace, refines the wrist pose
/// with ICP, then optimizes fingers sequentially, each finished finger
/// joining the obstacle set of the next.
pub fn estimate_hand_state(
    scene: &OrientedPointCloud,
    model: &HandModel,
    wrist_prior: &RigidTransform,
    params: &HandEstimationParams,
) -> Result<HandEstimate> {
    params.validate()?;
    model.validate()?;
    let roi_cloud = extract_roi(scene, wrist_prior, model)?;
    let (wrist_pose, wrist_refined) =
        refine_wrist_pose(&roi_cloud, model, wrist_prior, &params.wrist_icp);
    let scene_index = KdTree::new(roi_cloud.position_vec());

    let sdf_params = SdfParams {
        voxel_size: params.cost.collision_voxel_size,
        ..SdfParams::default()
    };
    let mut obstacles = vec![LinkObstacle::from_mesh(
        &model.wrist_mesh,
        &wrist_pose,
        &sdf_params,
    )?];

    // Optimize near fingers first: their occlusion shadows the far ones,
    // so the far ones should dodge them, not the other way around.
    let base_depth: Vec<f64> = model
        .fingers
        .iter()
        .map(|f| (wrist_pose * f.joints[0].origin).translation.z)
        .collect();
    let mut finger_order: Vec<usize> = (0..model.fingers.len()).collect();
    finger_order.sort_by(|&a, &b| base_depth[a].total_cmp(&base_depth[b]).then(a.cmp(&b)));

    let mut estimates: Vec<Option<FingerEstimate>> = vec![None; model.fingers.len()];
    for &fi in &finger_order {
        let finger = &model.fingers[fi];
        // A fixed per-finger stream keyed by the finger's index, so the
        // optimization order cannot change any finger's draws.
        let mut rng = stream_rng(params.pso.rng_seed, fi as u64);
        let est = estimate_finger(
            finger,
            &wrist_pose,
            &obstacles,
            &scene_index,
            &params.pso,
            &params.cost,
            &mut rng,
        )?;
        let poses = forward_kinematics(finger, &est.config, &wrist_pose)?;
        for (mesh, pose) in finger.link_meshes.iter().zip(&poses) {
            obstacles.push(LinkObstacle::from_mesh(mesh, pose, &sdf_params)?);
        }
        estimates[fi] = Some(est);
    }

    let finger_estimates: Vec<FingerEstimate> = estimates
        .into_iter()
        .map(|e| e.expect("all optimized"))
        .collect();
    let state = HandState {
        wrist_pose,
        finger_configs: finger_estimates.iter().map(|e| e.config.clone()).collect(),
    };
    Ok(HandEstimate {
        state,
        roi_cloud,
        wrist_refined,
        finger_order,
        finger_estimates,
    })
}
