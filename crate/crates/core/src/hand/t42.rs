//! Procedural model of a two-finger underactuated gripper with box links.
//!
//! The palm sits on the wrist-frame origin with +z pointing out of the
//! palm toward the workspace; both fingers curl inward about y. The same
//! model can be written to disk ([`write_t42_assets`]) and re-read through
//! the generic kinematics loader, producing bitwise identical geometry and
//! sample clouds.

use std::path::{Path, PathBuf};

use super::{FingerChain, HandFile, HandModel, JointSpec, SAMPLING_SEED};
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::mesh::{box_from_corners, io as mesh_io, TriangleMesh};
use crate::rng::stream_rng;

/// Joint travel shared by all four joints, radians.
pub const JOINT_LIMITS: (f64, f64) = (-0.10, 1.60);

const WRIST_SAMPLES: usize = 1000;
const LINK_SAMPLES: usize = 500;

fn palm_mesh() -> TriangleMesh {
    box_from_corners(
        Point3::new(-0.040, -0.018, 0.0),
        Point3::new(0.040, 0.018, 0.040),
    )
}

fn proximal_mesh() -> TriangleMesh {
    box_from_corners(
        Point3::new(-0.007, -0.010, 0.0),
        Point3::new(0.007, 0.010, 0.048),
    )
}

fn distal_mesh() -> TriangleMesh {
    box_from_corners(
        Point3::new(-0.006, -0.009, 0.0),
        Point3::new(0.006, 0.009, 0.040),
    )
}

/// Finger layout: name, palm-frame base x offset, and curl axis sign. The
/// left finger (negative x) rotates about +y so positive angles bend it
/// toward the centerline, and mirrored for the right.
const FINGERS: [(&str, f64, f64); 2] =
    [("finger_left", -0.034, 1.0), ("finger_right", 0.034, -1.0)];

const ROI_CENTER: [f64; 3] = [0.0, 0.0, 0.07];
const ROI_DIMS: [f64; 3] = [0.105, 0.085, 0.17];

/// Builds the gripper model in memory.
pub fn t42_hand_model() -> HandModel {
    let wrist_mesh = palm_mesh();
    let wrist_samples = wrist_mesh
        .sample_surface(WRIST_SAMPLES, &mut stream_rng(SAMPLING_SEED, 0))
        .expect("palm mesh is non-empty");
    let mut fingers = Vec::with_capacity(FINGERS.len());
    let mut link_counter: u64 = 1;
    for (name, base_x, axis_sign) in FINGERS {
        let axis = Vector3::new(0.0, axis_sign, 0.0);
        let joints = vec![
            JointSpec {
                axis,
                origin: RigidTransform::from_translation(Vector3::new(base_x, 0.0, 0.042)),
                limits: JOINT_LIMITS,
            },
            JointSpec {
                axis,
                origin: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.048)),
                limits: JOINT_LIMITS,
            },
        ];
        let link_meshes = vec![proximal_mesh(), distal_mesh()];
        let mut link_samples = Vec::with_capacity(link_meshes.len());
        for mesh in &link_meshes {
            link_samples.push(
                mesh.sample_surface(LINK_SAMPLES, &mut stream_rng(SAMPLING_SEED, link_counter))
                    .expect("link mesh is non-empty"),
            );
            link_counter += 1;
        }
        fingers.push(FingerChain {
            name: name.to_string(),
            joints,
            link_meshes,
            link_samples,
        });
    }
    HandModel {
        name: "t42".to_string(),
        wrist_mesh,
        wrist_samples,
        fingers,
        roi_center: Vector3::new(ROI_CENTER[0], ROI_CENTER[1], ROI_CENTER[2]),
        roi_dims: Vector3::new(ROI_DIMS[0], ROI_DIMS[1], ROI_DIMS[2]),
    }
}

/// Writes the gripper's meshes and kinematics file into `dir` and returns
/// the path of the kinematics file. Loading that file reproduces
/// [`t42_hand_model`] exactly.
pub fn write_t42_assets(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    mesh_io::save_obj(&palm_mesh(), &dir.join("palm.obj"))?;
    mesh_io::save_obj(&proximal_mesh(), &dir.join("proximal.obj"))?;
    mesh_io::save_obj(&distal_mesh(), &dir.join("distal.obj"))?;

    let file = HandFile {
        name: "t42".to_string(),
        roi_center: ROI_CENTER,
        roi_dims: ROI_DIMS,
        samples_per_link: LINK_SAMPLES,
        wrist: super::WristFile {
            mesh: "palm.obj".to_string(),
        },
        fingers: FINGERS
            .iter()
            .map(|&(name, base_x, axis_sign)| super::FingerFile {
                name: name.to_string(),
                joints: vec![
                    super::JointFile {
                        axis: [0.0, axis_sign, 0.0],
                        translation: [base_x, 0.0, 0.042],
                        rotation_axis_angle: [0.0; 3],
                        limits: [JOINT_LIMITS.0, JOINT_LIMITS.1],
                        mesh: "proximal.obj".to_string(),
                    },
                    super::JointFile {
                        axis: [0.0, axis_sign, 0.0],
                        translation: [0.0, 0.0, 0.048],
                        rotation_axis_angle: [0.0; 3],
                        limits: [JOINT_LIMITS.0, JOINT_LIMITS.1],
                        mesh: "distal.obj".to_string(),
                    },
                ],
            })
            .collect(),
    };
    let body = toml::to_string_pretty(&file)
        .map_err(|e| Error::Internal(format!("kinematics serialization: {e}")))?;
    let header = "\
# Two-finger underactuated gripper.
#
# Frames: all joint origins are parent-relative; the first joint of each
# finger is relative to the wrist frame. The wrist frame has +z pointing
# out of the palm toward the workspace and x spanning the finger bases.
# Link meshes live in their joint's child frame. rotation_axis_angle is an
# axis-angle vector (direction = axis, norm = angle in radians); limits
# are radians. Mesh paths are relative to this file.
";
    let toml_path = dir.join("t42.toml");
    std::fs::write(&toml_path, format!("{header}\n{body}"))
        .map_err(|e| Error::io(&toml_path, e))?;
    Ok(toml_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::{forward_kinematics, load_hand_model, FingerConfig};

    #[test]
    fn model_validates() {
        t42_hand_model().validate().unwrap();
    }

    #[test]
    fn written_assets_reload_to_the_same_model() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = write_t42_assets(dir.path()).unwrap();
        let loaded = load_hand_model(&toml_path).unwrap();
        let built = t42_hand_model();

        assert_eq!(loaded.name, built.name);
        assert_eq!(loaded.roi_center, built.roi_center);
        assert_eq!(loaded.roi_dims, built.roi_dims);
        assert_eq!(loaded.fingers.len(), built.fingers.len());
        assert_eq!(loaded.wrist_samples.len(), built.wrist_samples.len());
        // Bitwise identical samples: the meshes round trip exactly through
        // OBJ (shortest round-trip float formatting) and both paths draw
        // from the same seeded stream.
        for (a, b) in loaded
            .wrist_samples
            .points
            .iter()
            .zip(&built.wrist_samples.points)
        {
            assert_eq!(a.position, b.position);
            assert_eq!(a.normal, b.normal);
        }
        for (fl, fb) in loaded.fingers.iter().zip(&built.fingers) {
            assert_eq!(fl.name, fb.name);
            assert_eq!(fl.joints.len(), fb.joints.len());
            for (jl, jb) in fl.joints.iter().zip(&fb.joints) {
                assert_eq!(jl.axis, jb.axis);
                assert_eq!(jl.limits, jb.limits);
                assert_eq!(jl.origin.translation, jb.origin.translation);
            }
            for (sl, sb) in fl.link_samples.iter().zip(&fb.link_samples) {
                assert_eq!(sl.len(), sb.len());
                for (a, b) in sl.points.iter().zip(&sb.points) {
                    assert_eq!(a.position, b.position);
                    assert_eq!(a.normal, b.normal);
                }
            }
        }
    }

    #[test]
    fn fingers_curl_inward() {
        let model = t42_hand_model();
        let wrist = RigidTransform::identity();
        let q = FingerConfig {
            angles: vec![0.4, 0.3],
        };
        for finger in &model.fingers {
            let poses = forward_kinematics(finger, &q, &wrist).unwrap();
            let base_x = poses[0].translation.x;
            // Distal tip, at +z in its link frame. Positive curl must move
            // it toward the centerline.
            let tip = poses[1].apply(&Point3::new(0.0, 0.0, 0.040));
            let toward_center = -base_x.signum();
            assert!(
                (tip.x - base_x) * toward_center > 0.01,
                "{}: tip x {} vs base x {}",
                finger.name,
                tip.x,
                base_x
            );
            assert!(tip.z > 0.042, "{}: tip z {}", finger.name, tip.z);
        }
    }

    #[test]
    fn closed_fingers_nearly_touch_at_the_centerline() {
        let model = t42_hand_model();
        let q = FingerConfig {
            angles: vec![0.3, 0.3],
        };
        let mut tips = Vec::new();
        for finger in &model.fingers {
            let poses = forward_kinematics(finger, &q, &RigidTransform::identity()).unwrap();
            tips.push(poses[1].apply(&Point3::new(0.0, 0.0, 0.040)));
        }
        // Symmetric layout: tips mirror each other in x.
        assert!((tips[0].x + tips[1].x).abs() < 1e-12);
        assert!((tips[0].z - tips[1].z).abs() < 1e-12);
        let gap = (tips[0] - tips[1]).norm();
        assert!(gap < 0.01, "tip gap {gap}");
    }
}
