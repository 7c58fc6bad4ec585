use super::{KdTree, Matrix3, OrientedPointCloud, Point3, RigidTransform};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Inlier radius for the LCP (largest common pointset) score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcpParams {
    /// Meters. A transformed model point is an inlier when its nearest scene
    /// neighbor is strictly closer than this.
    pub inlier_distance: f64,
}

impl Default for LcpParams {
    fn default() -> Self {
        Self {
            inlier_distance: 0.005,
        }
    }
}

impl LcpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_distance > 0.0) {
            return Err(Error::InvalidInput(
                "lcp.inlier_distance must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of model points whose transformed position has a scene neighbor
/// within the inlier radius. Normalized by model size, so the score is in
/// [0, 1] regardless of scene coverage.
pub fn lcp_score(
    model: &OrientedPointCloud,
    scene_index: &KdTree,
    t: &RigidTransform,
    params: &LcpParams,
) -> Result<f64> {
    if scene_index.is_empty() {
        return Err(Error::EmptyReferenceCloud);
    }
    if model.is_empty() {
        return Err(Error::InvalidInput("empty model cloud".into()));
    }
    let r2 = params.inlier_distance * params.inlier_distance;
    let inliers = model
        .points
        .iter()
        .filter(|p| {
            let q = t.apply(&p.position);
            scene_index.nearest(&q).is_some_and(|(_, d2)| d2 < r2)
        })
        .count();
    Ok(inliers as f64 / model.len() as f64)
}

/// Minimal geodesic distance on SO(3): `arccos((trace(R1' R2) - 1) / 2)`,
/// with the arccos argument clamped to [-1, 1] against floating-point spill.
pub fn geodesic_rotation_distance(r1: &Matrix3, r2: &Matrix3) -> f64 {
    let arg = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
    arg.clamp(-1.0, 1.0).acos()
}

/// Average-distance error between two poses of the same point set:
/// `avg over p1 of min over p2 of |T1 p1 - T2 p2|`. The inner minimum makes
/// the metric indistinguishable for symmetric objects.
pub fn adi_error(t1: &RigidTransform, t2: &RigidTransform, points: &[Point3]) -> f64 {
    assert!(!points.is_empty(), "adi_error over an empty point set");
    let transformed2: Vec<Point3> = points.iter().map(|p| t2.apply(p)).collect();
    let index = KdTree::new(transformed2);
    let sum: f64 = points
        .iter()
        .map(|p| {
            let q = t1.apply(p);
            index.nearest(&q).unwrap().1.sqrt()
        })
        .sum();
    sum / points.len() as f64
}
