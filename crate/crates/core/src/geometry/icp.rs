use super::{KdTree, OrientedPointCloud, RigidTransform, Vector3};
use crate::error::{Error, Result};
use nalgebra::{Matrix6, Rotation3, Vector6};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcpParams {
    pub max_iters: u32,
    /// Stop when both the translation update norm (meters) and the rotation
    /// update angle (radians) fall below this.
    pub convergence_eps: f64,
    /// Correspondences farther than this are rejected (meters).
    pub max_correspondence_distance: f64,
    /// Correspondences whose normals disagree by more than this are rejected
    /// (radians).
    pub max_normal_angle: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 30,
            convergence_eps: 1e-6,
            // 3x the default LCP inlier radius.
            max_correspondence_distance: 0.015,
            max_normal_angle: 60f64.to_radians(),
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("icp.max_iters must be > 0".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(Error::InvalidInput(
                "icp.convergence_eps must be > 0".into(),
            ));
        }
        if !(self.max_correspondence_distance > 0.0) {
            return Err(Error::InvalidInput(
                "icp.max_correspondence_distance must be > 0".into(),
            ));
        }
        if !(self.max_normal_angle > 0.0) {
            return Err(Error::InvalidInput(
                "icp.max_normal_angle must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// RMS of the point-to-plane residuals over the final correspondence set.
    pub residual: f64,
    pub iterations: u32,
}

struct Correspondence {
    model_index: usize,
    scene_index: usize,
}

/// Point-to-plane ICP: iteratively minimizes `sum(((T p - q) . n_q)^2)` over
/// nearest-neighbor correspondences, rejecting pairs by distance and normal
/// agreement.
///
/// Within one iteration the Gauss-Newton step is halved until the residual on
/// the fixed correspondence set does not increase, so the per-iteration
/// residual is non-increasing by construction.
pub fn point_to_plane_icp(
    model: &OrientedPointCloud,
    scene: &OrientedPointCloud,
    scene_index: &KdTree,
    t_init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    if model.is_empty() {
        return Err(Error::InvalidInput("empty model cloud".into()));
    }
    if scene.is_empty() {
        return Err(Error::EmptyReferenceCloud);
    }
    let mut t = *t_init;
    let mut residual = 0.0;
    let mut iterations = 0;
    let cos_max = params.max_normal_angle.cos();
    let max_d2 = params.max_correspondence_distance * params.max_correspondence_distance;

    for iter in 0..params.max_iters {
        iterations = iter + 1;
        let mut pairs = Vec::new();
        for (mi, mp) in model.points.iter().enumerate() {
            let p = t.apply(&mp.position);
            let Some((si, d2)) = scene_index.nearest(&p) else {
                continue;
            };
            if d2 > max_d2 {
                continue;
            }
            let sp = &scene.points[si];
            if !sp.has_normal() {
                continue;
            }
            if mp.has_normal() {
                let mn = t.rotate(&mp.normal);
                if mn.dot(&sp.normal) < cos_max {
                    continue;
                }
            }
            pairs.push(Correspondence {
                model_index: mi,
                scene_index: si,
            });
        }
        if pairs.len() < 6 {
            return Err(Error::DegenerateCorrespondences);
        }

        let res_before = rms_residual(model, scene, &t, &pairs);

        // Normal equations for the linearized update x = [w; dt]:
        // row a = [p x n; n], rhs r = -((p - q) . n).
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in &pairs {
            let p = t.apply(&model.points[c.model_index].position);
            let q = scene.points[c.scene_index].position;
            let n = scene.points[c.scene_index].normal;
            let cx = p.coords.cross(&n);
            let a = Vector6::new(cx.x, cx.y, cx.z, n.x, n.y, n.z);
            let r = -(p - q).dot(&n);
            h += a * a.transpose();
            g += a * r;
        }
        // Tiny scale-aware Tikhonov term: keeps rank-deficient correspondence
        // geometry (e.g. a single plane) solvable with the minimum-norm-ish
        // update instead of failing.
        let damping = 1e-10 * h.trace().max(1e-30) / 6.0;
        for i in 0..6 {
            h[(i, i)] += damping;
        }
        let Some(chol) = h.cholesky() else {
            return Err(Error::DegenerateCorrespondences);
        };
        let x = chol.solve(&g);

        // Halve the step until the residual on these correspondences does not
        // increase.
        let mut scale = 1.0;
        let mut stepped = t;
        let mut res_after = f64::INFINITY;
        for _ in 0..16 {
            stepped = apply_update(&t, &x, scale);
            res_after = rms_residual(model, scene, &stepped, &pairs);
            if res_after <= res_before + 1e-15 {
                break;
            }
            scale *= 0.5;
        }
        if res_after > res_before + 1e-15 {
            // No improving step exists; already at a local minimum.
            residual = res_before;
            break;
        }
        t = stepped;
        residual = res_after;

        let dt_norm = scale * x.fixed_rows::<3>(3).norm();
        let dw_norm = scale * x.fixed_rows::<3>(0).norm();
        if dt_norm < params.convergence_eps && dw_norm < params.convergence_eps {
            break;
        }
    }

    Ok(IcpResult {
        transform: t,
        residual,
        iterations,
    })
}

fn apply_update(t: &RigidTransform, x: &Vector6<f64>, scale: f64) -> RigidTransform {
    let w = Vector3::new(x[0], x[1], x[2]) * scale;
    let dt = Vector3::new(x[3], x[4], x[5]) * scale;
    let update = RigidTransform::new(Rotation3::from_scaled_axis(w), dt);
    update * *t
}

fn rms_residual(
    model: &OrientedPointCloud,
    scene: &OrientedPointCloud,
    t: &RigidTransform,
    pairs: &[Correspondence],
) -> f64 {
    let mut sum = 0.0;
    for c in pairs {
        let p = t.apply(&model.points[c.model_index].position);
        let q = scene.points[c.scene_index].position;
        let n = scene.points[c.scene_index].normal;
        let r = (p - q).dot(&n);
        sum += r * r;
    }
    (sum / pairs.len() as f64).sqrt()
}
