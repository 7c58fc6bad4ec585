//! Ground-truthed synthetic grasp scenes: spherical viewpoint grids,
//! randomized grasp placement with step-wise finger closure, seeded sensor
//! noise, and line-delimited dataset export.
//!
//! The world frame is the hand's wrist frame: the hand sits at the origin
//! and cameras orbit it. Every scene is reproducible from
//! `(master_seed, scene_index)` alone; regeneration is byte-identical.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::hand::{forward_kinematics, posed_meshes, FingerConfig, HandModel, HandState};
use crate::mesh::{box_mesh, cylinder_mesh, ellipsoid_mesh, TriangleMesh};
use crate::parallel::par_map_range;
use crate::render::{
    render_depth_labeled, save_depth_raw, save_pgm8, CameraIntrinsics, DepthImage,
};
use crate::rng::{derive_seed, stream_rng, uniform_rotation};
use crate::sdf::{SdfParams, SignedDistanceField};

/// Rng stream of the per-pixel sensor noise, relative to a scene's seed.
const NOISE_STREAM: u64 = 1;

/// Spherical camera grid around the hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewpointGrid {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// Orbit radii in meters.
    pub radii: Vec<f64>,
}

impl Default for ViewpointGrid {
    fn default() -> Self {
        Self {
            n_azimuth: 18,
            n_elevation: 12,
            radii: vec![0.3, 0.6, 0.9],
        }
    }
}

impl ViewpointGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_azimuth == 0 || self.n_elevation == 0 || self.radii.is_empty() {
            return Err(Error::InvalidInput("empty viewpoint grid".into()));
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidInput(
                "viewpoint radii must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Camera poses (camera-to-world) on spheres around `center`, each looking
/// at `center`. Elevations are placed strictly between the poles, so the
/// fixed world up vector is always usable; a near-pole direction falls
/// back to the x axis.
pub fn sample_viewpoints(center: &Point3, grid: &ViewpointGrid) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(grid.radii.len() * grid.n_elevation * grid.n_azimuth);
    for &radius in &grid.radii {
        for j in 0..grid.n_elevation {
            // Pole-free symmetric latitudes: (j + 1/2) / n of the span.
            let elevation = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (j as f64 + 0.5) / grid.n_elevation as f64;
            for i in 0..grid.n_azimuth {
                let azimuth = std::f64::consts::TAU * i as f64 / grid.n_azimuth as f64;
                let dir = Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
                let eye = center + dir * radius;
                let forward = (center - eye).normalize();
                let up = if forward.z.abs() > 1.0 - 1e-6 {
                    Vector3::x()
                } else {
                    Vector3::z()
                };
                let right = up.cross(&forward).normalize();
                let down = forward.cross(&right);
                let rot = crate::geometry::Matrix3::from_columns(&[right, down, forward]);
                out.push(
                    RigidTransform::from_rotation_matrix(rot, eye.coords)
                        .expect("look-at rotation is orthonormal"),
                );
            }
        }
    }
    out
}

/// Per-pixel depth sensor noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of Gaussian depth noise, meters.
    pub depth_sigma: f64,
    /// Fraction of valid pixels invalidated.
    pub dropout_rate: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            depth_sigma: 0.001,
            dropout_rate: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "depth_sigma must be >= 0, got {}",
                self.depth_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Applies Gaussian depth noise followed by pixel dropout, in row-major
/// pixel order. Invalid pixels consume no random draws, so the stream
/// stays aligned with the deterministic validity pattern.
pub fn apply_noise<R: Rng>(img: &mut DepthImage, noise: &NoiseModel, rng: &mut R) {
    for d in img.depth.iter_mut() {
        if *d == 0.0 {
            continue;
        }
        if noise.depth_sigma > 0.0 {
            // Box-Muller; the (0, 1] draw keeps ln finite.
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            *d += noise.depth_sigma * z;
            if *d <= 0.0 {
                *d = 0.0;
                continue;
            }
        }
        if noise.dropout_rate > 0.0 && rng.random::<f64>() < noise.dropout_rate {
            *d = 0.0;
        }
    }
}

/// Grasp placement and finger-closure parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GraspParams {
    /// Object-center placement box in the wrist frame.
    pub placement_min: Vector3,
    pub placement_max: Vector3,
    /// Joint advance per closing step, radians.
    pub close_step: f64,
    /// Surface distance that counts as contact, meters.
    pub contact_tolerance: f64,
    /// Deepest allowed object-hand penetration, meters.
    pub max_penetration: f64,
    pub max_attempts: usize,
    /// Object signed-distance-field resolution for contact checks.
    pub sdf: SdfParams,
}

impl GraspParams {
    /// Defaults for a hand: the placement box is the bounding box of the
    /// finger links at rest, padded 1 cm on every side.
    pub fn for_hand(hand: &HandModel) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for finger in &hand.fingers {
            let q = FingerConfig::zeros(finger.num_joints());
            let poses = forward_kinematics(finger, &q, &RigidTransform::identity())
                .expect("zero config is within limits");
            for (mesh, pose) in finger.link_meshes.iter().zip(&poses) {
                for v in &mesh.vertices {
                    let p = pose.apply(v);
                    lo = lo.inf(&p.coords);
                    hi = hi.sup(&p.coords);
                }
            }
        }
        let pad = Vector3::repeat(0.01);
        Self {
            placement_min: lo - pad,
            placement_max: hi + pad,
            close_step: 0.5f64.to_radians(),
            contact_tolerance: 0.001,
            max_penetration: 0.001,
            max_attempts: 100,
            sdf: SdfParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|k| !(self.placement_max[k] >= self.placement_min[k])) {
            return Err(Error::InvalidInput("placement box is inverted".into()));
        }
        if !(self.close_step > 0.0)
            || !(self.contact_tolerance > 0.0)
            || !(self.max_penetration > 0.0)
        {
            return Err(Error::InvalidInput(
                "grasp steps and tolerances must be positive".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidInput("max_attempts must be > 0".into()));
        }
        self.sdf.validate()
    }
}

/// A placed object with the finger configuration that holds it.
#[derive(Clone, Debug)]
pub struct Grasp {
    /// Object pose in the wrist frame.
    pub object_pose: RigidTransform,
    pub finger_configs: Vec<FingerConfig>,
    /// Whether each finger ended in contact (as opposed to at its limits).
    pub contacts: Vec<bool>,
}

/// Closes every finger onto the object: all joints of a finger advance
/// together in `close_step` increments until any of its link sample
/// points comes within `contact_tolerance` of the object surface or all
/// joints reach their upper limits. A step that would penetrate deeper
/// than `max_penetration` is rolled back and ends that finger's closure.
/// Returns the finger configurations and a per-finger contact flag.
pub fn close_fingers(
    hand: &HandModel,
    object_sdf: &SignedDistanceField,
    object_pose: &RigidTransform,
    params: &GraspParams,
) -> (Vec<FingerConfig>, Vec<bool>) {
    let object_from_world = object_pose.inverse();
    let mut configs = Vec::with_capacity(hand.fingers.len());
    let mut contacts = Vec::with_capacity(hand.fingers.len());
    for finger in &hand.fingers {
        let mut q = FingerConfig::zeros(finger.num_joints());
        let min_dist = |q: &FingerConfig| -> f64 {
            let poses = forward_kinematics(finger, q, &RigidTransform::identity())
                .expect("closure stays within limits");
            let mut min = f64::INFINITY;
            for (cloud, pose) in finger.link_samples.iter().zip(&poses) {
                for p in &cloud.points {
                    let d = object_sdf.query(&object_from_world.apply(&pose.apply(&p.position)));
                    min = min.min(d);
                }
            }
            min
        };
        let contact = loop {
            let d = min_dist(&q);
            if d.abs() <= params.contact_tolerance || d < 0.0 {
                break true;
            }
            let at_limit = finger
                .joints
                .iter()
                .zip(&q.angles)
                .all(|(j, &a)| a >= j.limits.1);
            if at_limit {
                break false;
            }
            let mut stepped = q.clone();
            for (j, a) in finger.joints.iter().zip(stepped.angles.iter_mut()) {
                *a = (*a + params.close_step).min(j.limits.1);
            }
            if min_dist(&stepped) < -params.max_penetration {
                break min_dist(&q).abs() <= params.contact_tolerance;
            }
            q = stepped;
        };
        configs.push(q);
        contacts.push(contact);
    }
    (configs, contacts)
}

/// Smallest object distance over every hand surface sample (wrist plus
/// all finger links) at the given state.
fn hand_min_distance(
    hand: &HandModel,
    configs: &[FingerConfig],
    object_sdf: &SignedDistanceField,
    object_pose: &RigidTransform,
) -> f64 {
    let object_from_world = object_pose.inverse();
    let mut min = f64::INFINITY;
    for p in &hand.wrist_samples.points {
        min = min.min(object_sdf.query(&object_from_world.apply(&p.position)));
    }
    for (finger, q) in hand.fingers.iter().zip(configs) {
        let poses = forward_kinematics(finger, q, &RigidTransform::identity())
            .expect("configs are within limits");
        for (cloud, pose) in finger.link_samples.iter().zip(&poses) {
            for p in &cloud.points {
                min = min.min(object_sdf.query(&object_from_world.apply(&pose.apply(&p.position))));
            }
        }
    }
    min
}

/// Places the object at a uniformly random pose inside the placement box
/// and closes the fingers onto it. An attempt is discarded when the rest
/// pose already penetrates the hand deeper than `max_penetration`, when
/// no finger ends in contact, or when the closed state violates the
/// penetration bound; after `max_attempts` discards the placement fails.
pub fn generate_grasp<R: Rng>(
    object: &TriangleMesh,
    hand: &HandModel,
    params: &GraspParams,
    rng: &mut R,
) -> Result<Grasp> {
    params.validate()?;
    let (lo, hi) = object.bounding_box()?;
    let object_sdf = SignedDistanceField::build(std::slice::from_ref(object), lo, hi, &params.sdf)?;
    let rest: Vec<FingerConfig> = hand
        .fingers
        .iter()
        .map(|f| FingerConfig::zeros(f.num_joints()))
        .collect();
    for _ in 0..params.max_attempts {
        let mut pos = Vector3::zeros();
        for k in 0..3 {
            pos[k] = rng.random_range(params.placement_min[k]..=params.placement_max[k]);
        }
        let pose = RigidTransform::from_unit_quaternion(uniform_rotation(rng), pos);
        if hand_min_distance(hand, &rest, &object_sdf, &pose) < -params.max_penetration {
            continue;
        }
        let (configs, contacts) = close_fingers(hand, &object_sdf, &pose, params);
        if !contacts.iter().any(|&c| c) {
            continue;
        }
        if hand_min_distance(hand, &configs, &object_sdf, &pose) < -params.max_penetration {
            continue;
        }
        return Ok(Grasp {
            object_pose: pose,
            finger_configs: configs,
            contacts,
        });
    }
    Err(Error::PlacementFailed)
}

/// Everything needed to render one scene.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub object_id: String,
    pub hand_id: String,
    /// Camera-to-world pose.
    pub camera_pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    /// Ground-truth object pose in the world (wrist) frame.
    pub object_pose_world: RigidTransform,
    /// Ground-truth hand state in the world frame.
    pub hand_state_world: HandState,
    pub noise: NoiseModel,
    pub seed: u64,
}

/// Ground truth of a rendered scene, in the camera frame the pipeline
/// works in.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub object_pose_camera: RigidTransform,
    pub hand_state_camera: HandState,
    pub camera_pose_world: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_HAND: u8 = 1;
pub const LABEL_OBJECT: u8 = 2;

/// Renders the scene to a depth image plus a per-pixel segmentation
/// (0 background, 1 hand, 2 object) and returns the camera-frame ground
/// truth. Noise is applied after label assignment, so labels describe the
/// underlying surfaces.
pub fn render_scene(
    spec: &SceneSpec,
    hand_model: &HandModel,
    object_mesh: &TriangleMesh,
) -> Result<(DepthImage, Vec<u8>, GroundTruth)> {
    spec.noise.validate()?;
    let cam_from_world = spec.camera_pose.inverse();
    let hand_state_camera = HandState {
        wrist_pose: cam_from_world * spec.hand_state_world.wrist_pose,
        finger_configs: spec.hand_state_world.finger_configs.clone(),
    };
    let object_pose_camera = cam_from_world * spec.object_pose_world;
    let hand = posed_meshes(hand_model, &hand_state_camera)?;
    let n_hand = hand.len();
    let mut meshes: Vec<(&TriangleMesh, &RigidTransform)> =
        hand.iter().map(|(m, t)| (*m, t)).collect();
    meshes.push((object_mesh, &object_pose_camera));
    let (mut depth, mesh_labels) = render_depth_labeled(&meshes, &spec.intrinsics)?;
    let labels: Vec<u8> = mesh_labels
        .labels
        .iter()
        .map(|&l| {
            if l == 0 {
                LABEL_BACKGROUND
            } else if (l as usize) <= n_hand {
                LABEL_HAND
            } else {
                LABEL_OBJECT
            }
        })
        .collect();
    apply_noise(
        &mut depth,
        &spec.noise,
        &mut stream_rng(spec.seed, NOISE_STREAM),
    );
    Ok((
        depth,
        labels,
        GroundTruth {
            object_pose_camera,
            hand_state_camera,
            camera_pose_world: spec.camera_pose,
            intrinsics: spec.intrinsics,
        },
    ))
}

/// Dataset-level knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub n_per_combination: usize,
    pub intrinsics: CameraIntrinsics,
    pub viewpoints: ViewpointGrid,
    pub noise: NoiseModel,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            n_per_combination: 50,
            intrinsics: CameraIntrinsics {
                width: 320,
                height: 240,
                fx: 307.5,
                fy: 307.5,
                cx: 159.5,
                cy: 119.5,
            },
            viewpoints: ViewpointGrid::default(),
            noise: NoiseModel::default(),
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_combination == 0 {
            return Err(Error::InvalidInput("n_per_combination must be > 0".into()));
        }
        self.intrinsics.validate()?;
        self.viewpoints.validate()?;
        self.noise.validate()
    }
}

/// One manifest line: everything needed to re-run and score a scene.
/// Poses are camera-frame 4x4 row-major matrices; paths are relative to
/// the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub object_id: String,
    pub hand_id: String,
    pub depth_path: String,
    pub label_path: String,
    pub object_pose: [f64; 16],
    pub wrist_pose: [f64; 16],
    pub joint_angles: Vec<Vec<f64>>,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Generates `n_per_combination` scenes for every object-hand pair and
/// writes depth images, segmentations, and a line-delimited manifest into
/// `out_dir`. Scene randomness derives from `(master_seed, scene_index)`
/// only, so regeneration is byte-identical. Returns the records in scene
/// order.
pub fn generate_dataset(
    objects: &[(String, TriangleMesh)],
    hands: &[(String, HandModel)],
    params: &DatasetParams,
    master_seed: u64,
    out_dir: &Path,
) -> Result<Vec<SceneRecord>> {
    params.validate()?;
    if objects.is_empty() || hands.is_empty() {
        return Err(Error::InvalidInput(
            "dataset needs at least one object and one hand".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_scenes = objects.len() * hands.len() * params.n_per_combination;
    let results: Vec<Result<SceneRecord>> = par_map_range(n_scenes, |idx| {
        let combo = idx / params.n_per_combination;
        let (object_id, object_mesh) = &objects[combo / hands.len()];
        let (hand_id, hand_model) = &hands[combo % hands.len()];
        let scene_id = format!("{object_id}_{hand_id}_{idx:05}");
        let mut rng = stream_rng(master_seed, idx as u64);

        let center = Point3::origin() + hand_model.roi_box().0;
        let views = sample_viewpoints(&center, &params.viewpoints);
        let camera_pose = views[rng.random_range(0..views.len())];
        let grasp = generate_grasp(
            object_mesh,
            hand_model,
            &GraspParams::for_hand(hand_model),
            &mut rng,
        )?;
        let spec = SceneSpec {
            object_id: object_id.clone(),
            hand_id: hand_id.clone(),
            camera_pose,
            intrinsics: params.intrinsics,
            object_pose_world: grasp.object_pose,
            hand_state_world: HandState {
                wrist_pose: RigidTransform::identity(),
                finger_configs: grasp.finger_configs.clone(),
            },
            noise: params.noise,
            seed: derive_seed(master_seed, idx as u64),
        };
        let (depth, labels, truth) = render_scene(&spec, hand_model, object_mesh)?;

        let depth_path = format!("{scene_id}_depth.raw");
        let label_path = format!("{scene_id}_labels.pgm");
        save_depth_raw(&depth, &spec.intrinsics, &out_dir.join(&depth_path))?;
        save_pgm8(
            spec.intrinsics.width,
            spec.intrinsics.height,
            &labels,
            &out_dir.join(&label_path),
        )?;
        Ok(SceneRecord {
            scene_id,
            object_id: object_id.clone(),
            hand_id: hand_id.clone(),
            depth_path,
            label_path,
            object_pose: truth.object_pose_camera.to_row_major(),
            wrist_pose: truth.hand_state_camera.wrist_pose.to_row_major(),
            joint_angles: grasp
                .finger_configs
                .iter()
                .map(|q| q.angles.clone())
                .collect(),
            intrinsics: spec.intrinsics,
            seed: spec.seed,
        })
    });
    let mut records = Vec::with_capacity(n_scenes);
    for r in results {
        records.push(r?);
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    let mut file =
        std::fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for record in &records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(records)
}

/// Reads a manifest written by [`generate_dataset`].
pub fn load_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, format!("manifest line {}: {e}", i + 1)))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::parse(path, "manifest has no records"));
    }
    Ok(records)
}

/// The three bundled primitive objects at the benchmark dimensions.
pub fn standard_objects() -> Vec<(String, TriangleMesh)> {
    vec![
        ("cylinder".to_string(), cylinder_mesh(0.035, 0.064, 24)),
        (
            "ellipsoid".to_string(),
            ellipsoid_mesh(Vector3::new(0.015, 0.015, 0.032), 16, 12),
        ),
        (
            "cuboid".to_string(),
            box_mesh(Vector3::new(0.03, 0.03, 0.064)),
        ),
    ]
}
