//! Articulated hand model: kinematic chains, forward kinematics, region of
//! interest extraction, wrist pose refinement, hand distance fields, and
//! hand/object segmentation.
//!
//! Hand models are described by a TOML kinematics file (see
//! [`load_hand_model`]); the bundled two-finger underactuated gripper in
//! [`t42`] is one instance of it.

pub mod t42;

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    lcp_score, point_to_plane_icp, IcpParams, KdTree, LcpParams, OrientedPointCloud, Point3,
    RigidTransform, Vector3,
};
use crate::mesh::{io as mesh_io, TriangleMesh};
use crate::rng::stream_rng;
use crate::sdf::{SdfParams, SignedDistanceField};

/// Fixed seed stream for link surface sampling, so identical model files
/// always produce identical sample clouds.
const SAMPLING_SEED: u64 = 0x7442;

/// ROI margin: the wrist-frame box is grown by 20% of its extent on each
/// side (x1.4 total per axis).
pub const ROI_MARGIN_FACTOR: f64 = 1.4;

/// One revolute joint: rotation about `axis` after a fixed parent-relative
/// origin transform. The link mesh lives in the joint's child frame.
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub axis: Vector3,
    pub origin: RigidTransform,
    /// Allowed angle range in radians, min strictly below max.
    pub limits: (f64, f64),
}

/// An articulated finger: a serial chain of revolute joints, one link mesh
/// and one link sample cloud per joint.
#[derive(Debug, Clone)]
pub struct FingerChain {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub link_meshes: Vec<TriangleMesh>,
    /// Uniform surface samples per link, in the link frame.
    pub link_samples: Vec<OrientedPointCloud>,
}

impl FingerChain {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidInput(format!(
                "finger {:?} has no joints",
                self.name
            )));
        }
        if self.link_meshes.len() != self.joints.len()
            || self.link_samples.len() != self.joints.len()
        {
            return Err(Error::InvalidInput(format!(
                "finger {:?}: links and joints must pair up",
                self.name
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limits.0 < j.limits.1) {
                return Err(Error::InvalidInput(format!(
                    "finger {:?} joint {i}: limits [{}, {}] are not ordered",
                    self.name, j.limits.0, j.limits.1
                )));
            }
            if j.axis.norm() < 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "finger {:?} joint {i}: zero rotation axis",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Joint angles for one finger.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerConfig {
    pub angles: Vec<f64>,
}

impl FingerConfig {
    pub fn zeros(n: usize) -> Self {
        Self {
            angles: vec![0.0; n],
        }
    }
}

/// A hand: wrist body plus articulated fingers, with the wrist-frame box
/// that bounds the graspable workspace (used for ROI extraction).
#[derive(Debug, Clone)]
pub struct HandModel {
    pub name: String,
    pub wrist_mesh: TriangleMesh,
    pub wrist_samples: OrientedPointCloud,
    pub fingers: Vec<FingerChain>,
    /// Center of the workspace box in the wrist frame.
    pub roi_center: Vector3,
    /// Extents of the workspace box (before the margin factor).
    pub roi_dims: Vector3,
}

impl HandModel {
    pub fn validate(&self) -> Result<()> {
        if self.fingers.is_empty() {
            return Err(Error::InvalidInput("hand model has no fingers".into()));
        }
        if self.roi_dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "hand roi_dims must be positive, got {:?}",
                self.roi_dims
            )));
        }
        if self.wrist_mesh.is_empty() {
            return Err(Error::InvalidInput("hand wrist mesh is empty".into()));
        }
        for f in &self.fingers {
            f.validate()?;
        }
        Ok(())
    }

    /// A zero-angle state at the given wrist pose.
    pub fn rest_state(&self, wrist_pose: RigidTransform) -> HandState {
        HandState {
            wrist_pose,
            finger_configs: self
                .fingers
                .iter()
                .map(|f| FingerConfig::zeros(f.num_joints()))
                .collect(),
        }
    }

    /// ROI box (center, half extents) in the wrist frame, margin included.
    pub fn roi_box(&self) -> (Vector3, Vector3) {
        (self.roi_center, self.roi_dims * (ROI_MARGIN_FACTOR / 2.0))
    }
}

/// Full hand state: camera-frame wrist pose plus all finger configs.
#[derive(Debug, Clone, PartialEq)]
pub struct HandState {
    pub wrist_pose: RigidTransform,
    pub finger_configs: Vec<FingerConfig>,
}

/// Forward kinematics: camera-frame pose of every link of `finger`.
///
/// Link `i` sits at `wrist_pose * origin_0 * R(axis_0, q_0) * ... *
/// origin_i * R(axis_i, q_i)`.
pub fn forward_kinematics(
    finger: &FingerChain,
    q: &FingerConfig,
    wrist_pose: &RigidTransform,
) -> Result<Vec<RigidTransform>> {
    if q.angles.len() != finger.joints.len() {
        return Err(Error::InvalidInput(format!(
            "finger {:?} expects {} joint angles, got {}",
            finger.name,
            finger.joints.len(),
            q.angles.len()
        )));
    }
    let mut poses = Vec::with_capacity(finger.joints.len());
    let mut current = *wrist_pose;
    for (i, (joint, &angle)) in finger.joints.iter().zip(&q.angles).enumerate() {
        if angle < joint.limits.0 - 1e-12 || angle > joint.limits.1 + 1e-12 {
            return Err(Error::JointLimitViolation(format!(
                "finger {:?} joint {i}: angle {angle} outside [{}, {}]",
                finger.name, joint.limits.0, joint.limits.1
            )));
        }
        current = current * joint.origin * RigidTransform::from_axis_angle(joint.axis, angle);
        poses.push(current);
    }
    Ok(poses)
}

/// Clamps a configuration into the finger's joint limits.
pub fn clamp_to_limits(finger: &FingerChain, q: &mut FingerConfig) {
    for (joint, angle) in finger.joints.iter().zip(&mut q.angles) {
        *angle = angle.clamp(joint.limits.0, joint.limits.1);
    }
}

/// Returns the scene points inside the hand's wrist-frame workspace box
/// (dims grown by the ROI margin), preserving normals and pixel indices.
pub fn extract_roi(
    scene: &OrientedPointCloud,
    wrist_pose: &RigidTransform,
    model: &HandModel,
) -> Result<OrientedPointCloud> {
    let inv = wrist_pose.inverse();
    let (center, half) = model.roi_box();
    let keep: Vec<usize> = scene
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let w = inv.apply(&p.position);
            (w.x - center.x).abs() <= half.x
                && (w.y - center.y).abs() <= half.y
                && (w.z - center.z).abs() <= half.z
        })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::RoiEmpty);
    }
    Ok(scene.select(&keep))
}

/// ICP-refines the wrist pose against the hand-region cloud.
///
/// Aligns the wrist surface samples to `roi_cloud` starting from `t_init`.
/// When ICP cannot run (degenerate correspondences), the prior is returned
/// unchanged and the flag is false.
pub fn refine_wrist_pose(
    roi_cloud: &OrientedPointCloud,
    model: &HandModel,
    t_init: &RigidTransform,
    params: &IcpParams,
) -> (RigidTransform, bool) {
    let tree = KdTree::new(roi_cloud.position_vec());
    match point_to_plane_icp(&model.wrist_samples, roi_cloud, &tree, t_init, params) {
        Ok(result) => (result.transform, true),
        Err(e) => {
            log::warn!("wrist refinement fell back to the prior: {e}");
            (*t_init, false)
        }
    }
}

/// A hand distance field: camera-frame queries against a wrist-frame grid.
#[derive(Debug, Clone)]
pub struct HandSdf {
    pub field: SignedDistanceField,
    wrist_from_camera: RigidTransform,
}

impl HandSdf {
    /// Signed distance from a camera-frame point to the posed hand surface.
    pub fn query(&self, p_camera: &Point3) -> f64 {
        self.field.query(&self.wrist_from_camera.apply(p_camera))
    }

    /// Signed distance for a point already in the wrist frame.
    pub fn query_wrist_frame(&self, p_wrist: &Point3) -> f64 {
        self.field.query(p_wrist)
    }
}

/// Builds the signed distance field of the whole posed hand (wrist plus
/// every link under forward kinematics), gridded over the ROI box in the
/// wrist frame.
pub fn compute_sdf(model: &HandModel, state: &HandState, params: &SdfParams) -> Result<HandSdf> {
    let mut meshes = Vec::with_capacity(1 + model.fingers.len() * 2);
    meshes.push(model.wrist_mesh.clone());
    let wrist_identity = RigidTransform::identity();
    for (finger, q) in model.fingers.iter().zip(&state.finger_configs) {
        // Link poses relative to the wrist: the grid lives in wrist frame.
        let poses = forward_kinematics(finger, q, &wrist_identity)?;
        for (mesh, pose) in finger.link_meshes.iter().zip(&poses) {
            meshes.push(mesh.transformed(pose));
        }
    }
    let (center, half) = model.roi_box();
    let lo = Point3::new(center.x - half.x, center.y - half.y, center.z - half.z);
    let hi = Point3::new(center.x + half.x, center.y + half.y, center.z + half.z);
    let field = SignedDistanceField::build(&meshes, lo, hi, params)?;
    Ok(HandSdf {
        field,
        wrist_from_camera: state.wrist_pose.inverse(),
    })
}

/// Camera-frame pose of every hand mesh (wrist first, then links in
/// finger order), ready for rendering.
pub fn posed_meshes<'a>(
    model: &'a HandModel,
    state: &HandState,
) -> Result<Vec<(&'a TriangleMesh, RigidTransform)>> {
    let mut out = Vec::with_capacity(1 + model.fingers.len() * 2);
    out.push((&model.wrist_mesh, state.wrist_pose));
    for (finger, q) in model.fingers.iter().zip(&state.finger_configs) {
        let poses = forward_kinematics(finger, q, &state.wrist_pose)?;
        for (mesh, pose) in finger.link_meshes.iter().zip(&poses) {
            out.push((mesh, *pose));
        }
    }
    Ok(out)
}

/// Removes hand-explained points: keeps exactly the points whose signed
/// distance to the hand surface is at least `epsilon`.
pub fn segment_object_cloud(
    roi_cloud: &OrientedPointCloud,
    sdf: &HandSdf,
    epsilon: f64,
) -> Result<OrientedPointCloud> {
    let keep: Vec<usize> = roi_cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| sdf.query(&p.position) >= epsilon)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::NoObjectPoints);
    }
    Ok(roi_cloud.select(&keep))
}

/// LCP of the full posed hand's surface samples against a scene cloud.
/// Used to check that refinement did not make the state worse.
pub fn hand_sample_lcp(
    model: &HandModel,
    state: &HandState,
    scene_index: &KdTree,
    params: &LcpParams,
) -> Result<f64> {
    let mut samples = model.wrist_samples.clone();
    for (finger, q) in model.fingers.iter().zip(&state.finger_configs) {
        let poses = forward_kinematics(finger, q, &RigidTransform::identity())?;
        for (cloud, pose) in finger.link_samples.iter().zip(&poses) {
            for p in &cloud.points {
                samples.points.push(crate::geometry::OrientedPoint::new(
                    pose.apply(&p.position),
                    pose.rotate(&p.normal),
                ));
            }
        }
    }
    lcp_score(&samples, scene_index, &state.wrist_pose, params)
}

// --- kinematics file --------------------------------------------------

#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct HandFile {
    name: String,
    roi_center: [f64; 3],
    roi_dims: [f64; 3],
    #[serde(default = "default_samples_per_link")]
    samples_per_link: usize,
    wrist: WristFile,
    #[serde(rename = "finger")]
    fingers: Vec<FingerFile>,
}

fn default_samples_per_link() -> usize {
    500
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct WristFile {
    mesh: String,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FingerFile {
    name: String,
    #[serde(rename = "joint")]
    joints: Vec<JointFile>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    axis: [f64; 3],
    translation: [f64; 3],
    /// Axis-angle rotation of the joint origin: direction is the axis,
    /// norm is the angle in radians. Zero vector means no rotation.
    rotation_axis_angle: [f64; 3],
    limits: [f64; 2],
    mesh: String,
}

/// Loads a hand model from its TOML kinematics file. Mesh paths are
/// resolved relative to the file's directory; link sample clouds are drawn
/// with a fixed seed so repeated loads are identical.
pub fn load_hand_model(path: &Path) -> Result<HandModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: HandFile = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let wrist_mesh = mesh_io::load_mesh(&dir.join(&file.wrist.mesh))?;
    let wrist_samples =
        wrist_mesh.sample_surface(file.samples_per_link * 2, &mut stream_rng(SAMPLING_SEED, 0))?;

    let mut fingers = Vec::with_capacity(file.fingers.len());
    let mut link_counter: u64 = 1;
    for f in &file.fingers {
        let mut joints = Vec::new();
        let mut link_meshes = Vec::new();
        let mut link_samples = Vec::new();
        for j in &f.joints {
            let rot = Vector3::new(
                j.rotation_axis_angle[0],
                j.rotation_axis_angle[1],
                j.rotation_axis_angle[2],
            );
            let origin_rot = if rot.norm() > 0.0 {
                RigidTransform::from_axis_angle(rot.normalize(), rot.norm()).rotation
            } else {
                RigidTransform::identity().rotation
            };
            joints.push(JointSpec {
                axis: Vector3::new(j.axis[0], j.axis[1], j.axis[2]),
                origin: RigidTransform::new(
                    origin_rot,
                    Vector3::new(j.translation[0], j.translation[1], j.translation[2]),
                ),
                limits: (j.limits[0], j.limits[1]),
            });
            let mesh = mesh_io::load_mesh(&dir.join(&j.mesh))?;
            let samples = mesh.sample_surface(
                file.samples_per_link,
                &mut stream_rng(SAMPLING_SEED, link_counter),
            )?;
            link_counter += 1;
            link_meshes.push(mesh);
            link_samples.push(samples);
        }
        fingers.push(FingerChain {
            name: f.name.clone(),
            joints,
            link_meshes,
            link_samples,
        });
    }

    let model = HandModel {
        name: file.name,
        wrist_mesh,
        wrist_samples,
        fingers,
        roi_center: Vector3::new(file.roi_center[0], file.roi_center[1], file.roi_center[2]),
        roi_dims: Vector3::new(file.roi_dims[0], file.roi_dims[1], file.roi_dims[2]),
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedPoint;
    use crate::mesh::box_mesh;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn test_model() -> HandModel {
        t42::t42_hand_model()
    }

    #[test]
    fn zero_config_reproduces_rest_poses() {
        let model = test_model();
        let finger = &model.fingers[0];
        let wrist = RigidTransform::identity();
        let q = FingerConfig::zeros(finger.num_joints());
        let poses = forward_kinematics(finger, &q, &wrist).unwrap();
        // Rest pose composes the origins only.
        let mut expect = wrist;
        for (joint, pose) in finger.joints.iter().zip(&poses) {
            expect = expect * joint.origin;
            let d = (pose.translation - expect.translation).norm();
            assert!(d < 1e-12, "link offset {d}");
        }
    }

    #[test]
    fn single_joint_rotation_moves_the_distal_frame() {
        // One joint about +y at the origin: a 90 degree bend maps the
        // link's +z direction onto +x.
        let finger = FingerChain {
            name: "j".into(),
            joints: vec![JointSpec {
                axis: Vector3::new(0.0, 1.0, 0.0),
                origin: RigidTransform::identity(),
                limits: (-2.0, 2.0),
            }],
            link_meshes: vec![box_mesh(Vector3::new(0.01, 0.01, 0.05))],
            link_samples: vec![OrientedPointCloud::new(vec![OrientedPoint::new(
                Point3::new(0.0, 0.0, 1.0),
                Vector3::zeros(),
            )])],
        };
        let q = FingerConfig {
            angles: vec![std::f64::consts::FRAC_PI_2],
        };
        let poses = forward_kinematics(&finger, &q, &RigidTransform::identity()).unwrap();
        let tip = poses[0].apply(&Point3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(tip.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(tip.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn forward_kinematics_is_left_equivariant() {
        let model = test_model();
        let finger = &model.fingers[1];
        let q = FingerConfig {
            angles: vec![0.4, 0.9],
        };
        let t = RigidTransform::new(
            RigidTransform::from_axis_angle(Vector3::new(0.3, -1.0, 0.5), 0.8).rotation,
            Vector3::new(0.2, -0.1, 0.7),
        );
        let g = RigidTransform::new(
            RigidTransform::from_axis_angle(Vector3::new(1.0, 0.2, 0.0), -0.6).rotation,
            Vector3::new(-0.3, 0.4, 0.1),
        );
        let lhs = forward_kinematics(finger, &q, &(g * t)).unwrap();
        let rhs: Vec<_> = forward_kinematics(finger, &q, &t)
            .unwrap()
            .into_iter()
            .map(|p| g * p)
            .collect();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a.translation - b.translation).norm() < 1e-12);
            // The geodesic angle of a near-identity relative rotation is
            // dominated by arccos conditioning: trace roundoff of 1e-15
            // already reads as ~5e-8 radians.
            assert!(
                crate::geometry::geodesic_rotation_distance(
                    &a.rotation_matrix(),
                    &b.rotation_matrix()
                ) < 1e-6
            );
        }
    }

    #[test]
    fn out_of_limit_angles_are_rejected() {
        let model = test_model();
        let finger = &model.fingers[0];
        let q = FingerConfig {
            angles: vec![2.5, 0.0],
        };
        let err = forward_kinematics(finger, &q, &RigidTransform::identity()).unwrap_err();
        assert!(
            err.to_string().starts_with("joint limit violation"),
            "{err}"
        );
    }

    #[test]
    fn roi_keeps_exactly_the_in_box_points() {
        let model = test_model();
        let wrist = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.4));
        let (center, half) = model.roi_box();
        let mut rng = stream_rng(5, 0);
        let mut points = Vec::new();
        for _ in 0..500 {
            points.push(OrientedPoint::new(
                Point3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(0.1..0.7),
                ),
                Vector3::new(0.0, 0.0, -1.0),
            ));
        }
        let mut cloud = OrientedPointCloud::new(points);
        cloud.pixels = Some((0..500).map(|i| (i as u32, i as u32 + 1)).collect());
        let roi = extract_roi(&cloud, &wrist, &model).unwrap();
        // Brute-force oracle over the original cloud.
        let inv = wrist.inverse();
        let mut expect = Vec::new();
        for (i, p) in cloud.points.iter().enumerate() {
            let w = inv.apply(&p.position);
            if (w.x - center.x).abs() <= half.x
                && (w.y - center.y).abs() <= half.y
                && (w.z - center.z).abs() <= half.z
            {
                expect.push(i);
            }
        }
        assert!(!expect.is_empty());
        assert_eq!(roi.len(), expect.len());
        let pixels = roi.pixels.as_ref().unwrap();
        for (k, &i) in expect.iter().enumerate() {
            assert_eq!(roi.points[k].position, cloud.points[i].position);
            assert_eq!(pixels[k], (i as u32, i as u32 + 1));
        }
    }

    #[test]
    fn far_away_scene_gives_roi_empty() {
        let model = test_model();
        let cloud = OrientedPointCloud::new(vec![OrientedPoint::new(
            Point3::new(1.0, 1.0, 1.0),
            Vector3::zeros(),
        )]);
        let err = extract_roi(&cloud, &RigidTransform::identity(), &model).unwrap_err();
        assert_eq!(err.to_string(), "ROI empty");
    }

    #[test]
    fn wrist_refinement_recovers_a_small_offset() {
        let model = test_model();
        let true_pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.35));
        // Scene = wrist samples at the true pose.
        let scene = OrientedPointCloud::new(
            model
                .wrist_samples
                .points
                .iter()
                .map(|p| {
                    OrientedPoint::new(true_pose.apply(&p.position), true_pose.rotate(&p.normal))
                })
                .collect(),
        );
        let prior = RigidTransform::from_translation(Vector3::new(0.003, -0.004, 0.352));
        let (refined, ran) = refine_wrist_pose(&scene, &model, &prior, &IcpParams::default());
        assert!(ran);
        let probe: Vec<Point3> = model
            .wrist_samples
            .points
            .iter()
            .map(|p| p.position)
            .collect();
        let adi = crate::geometry::adi_error(&refined, &true_pose, &probe);
        assert!(adi < 1e-3, "adi {adi}");
    }

    #[test]
    fn aligned_prior_stays_put() {
        let model = test_model();
        let pose = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.3));
        let scene = OrientedPointCloud::new(
            model
                .wrist_samples
                .points
                .iter()
                .map(|p| OrientedPoint::new(pose.apply(&p.position), pose.rotate(&p.normal)))
                .collect(),
        );
        let (refined, ran) = refine_wrist_pose(&scene, &model, &pose, &IcpParams::default());
        assert!(ran);
        assert!((refined.translation - pose.translation).norm() < 1e-6);
    }

    #[test]
    fn degenerate_scene_returns_the_prior() {
        let model = test_model();
        // Three far-away points: no correspondences survive gating.
        let scene = OrientedPointCloud::new(
            (0..3)
                .map(|i| {
                    OrientedPoint::new(
                        Point3::new(5.0 + i as f64, 5.0, 5.0),
                        Vector3::new(0.0, 0.0, -1.0),
                    )
                })
                .collect(),
        );
        let prior = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.3));
        let (out, ran) = refine_wrist_pose(&scene, &model, &prior, &IcpParams::default());
        assert!(!ran);
        assert_eq!(out.translation, prior.translation);
    }

    #[test]
    fn hand_sdf_is_negative_inside_palm_and_positive_between_fingers() {
        let model = test_model();
        let wrist = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.4));
        let state = model.rest_state(wrist);
        let sdf = compute_sdf(&model, &state, &SdfParams::default()).unwrap();
        // Palm interior (wrist frame (0, 0, 0.02) = palm center).
        let inside = sdf.query(&wrist.apply(&Point3::new(0.0, 0.0, 0.02)));
        assert!(inside < -0.01, "palm center {inside}");
        // Between the fingers, 3 cm above the palm: open space.
        let open = sdf.query(&wrist.apply(&Point3::new(0.0, 0.0, 0.07)));
        assert!(open > 0.02, "between fingers {open}");
        // On the palm top surface.
        let surf = sdf.query(&wrist.apply(&Point3::new(0.0, 0.0, 0.04)));
        assert!(surf.abs() < 2e-3, "palm surface {surf}");
    }

    #[test]
    fn segmentation_partitions_and_respects_threshold() {
        let model = test_model();
        let wrist = RigidTransform::identity();
        let state = model.rest_state(wrist);
        let sdf = compute_sdf(&model, &state, &SdfParams::default()).unwrap();
        // Mix of hand-surface points and points in free space between the
        // fingers (here at wrist frame = camera frame).
        let mut points = Vec::new();
        let hand_count = 40;
        for p in model.wrist_samples.points.iter().take(hand_count) {
            points.push(*p);
        }
        let free_count = 25;
        for i in 0..free_count {
            points.push(OrientedPoint::new(
                Point3::new(0.0, 0.0, 0.06 + 0.001 * i as f64),
                Vector3::new(0.0, 0.0, -1.0),
            ));
        }
        let cloud = OrientedPointCloud::new(points);
        let object = segment_object_cloud(&cloud, &sdf, 0.003).unwrap();
        // All far points kept, all on-surface points dropped.
        assert_eq!(object.len(), free_count);
        for p in &object.points {
            assert!(sdf.query(&p.position) >= 0.003);
        }
        // Partition: kept + removed = all.
        let removed = cloud.len() - object.len();
        assert_eq!(removed, hand_count);
    }

    #[test]
    fn all_hand_points_is_an_error() {
        let model = test_model();
        let state = model.rest_state(RigidTransform::identity());
        let sdf = compute_sdf(&model, &state, &SdfParams::default()).unwrap();
        let cloud = OrientedPointCloud::new(
            model
                .wrist_samples
                .points
                .iter()
                .take(50)
                .copied()
                .collect(),
        );
        let err = segment_object_cloud(&cloud, &sdf, 0.003).unwrap_err();
        assert_eq!(err.to_string(), "no object points");
    }

    #[test]
    fn sdf_lipschitz_like_bound_holds() {
        let model = test_model();
        let state = model.rest_state(RigidTransform::identity());
        let params = SdfParams::default();
        let sdf = compute_sdf(&model, &state, &params).unwrap();
        let mut rng = stream_rng(9, 0);
        for _ in 0..300 {
            let p = Point3::new(
                rng.random_range(-0.06..0.06),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.02..0.15),
            );
            let step = Vector3::new(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
            let a = sdf.query(&p);
            let b = sdf.query(&(p + step));
            assert!(
                (a - b).abs() <= step.norm() + 2.0 * params.voxel_size,
                "jump {} over step {}",
                (a - b).abs(),
                step.norm()
            );
        }
    }
}
