//! Geometric primitives: points, oriented clouds, rigid transforms, exact
//! nearest-neighbor search, registration scoring, rotation metrics, normal
//! estimation, and point-to-plane ICP.
//!
//! Conventions: units are meters, the camera frame has +z forward (depth),
//! and all operations are deterministic for identical inputs.

mod icp;
mod kdtree;
mod metrics;
mod normals;

pub use icp::{point_to_plane_icp, IcpParams, IcpResult};
pub use kdtree::KdTree;
pub use metrics::{adi_error, geodesic_rotation_distance, lcp_score, LcpParams};
pub use normals::{estimate_normals, oriented_cloud_from_positions};

use crate::error::{Error, Result};
use nalgebra as na;

pub type Point3 = na::Point3<f64>;
pub type Vector3 = na::Vector3<f64>;
pub type Matrix3 = na::Matrix3<f64>;
pub type Matrix4 = na::Matrix4<f64>;

/// A surface point with an (optional) unit normal.
///
/// A zero normal marks a point whose normal could not be estimated reliably
/// (degenerate neighborhood); such points are skipped wherever a normal is
/// required (PPF pairs, ICP normal gating).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedPoint {
    pub position: Point3,
    pub normal: Vector3,
}

impl OrientedPoint {
    pub fn new(position: Point3, normal: Vector3) -> Self {
        Self { position, normal }
    }

    pub fn has_normal(&self) -> bool {
        self.normal.norm_squared() > 0.25
    }
}

/// Ordered point set, optionally linked back to source depth-image pixels.
#[derive(Clone, Debug, Default)]
pub struct OrientedPointCloud {
    pub points: Vec<OrientedPoint>,
    /// (row, col) of the source pixel per point; entries are unique.
    pub pixels: Option<Vec<(u32, u32)>>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<OrientedPoint>) -> Self {
        Self {
            points,
            pixels: None,
        }
    }

    pub fn from_positions(positions: impl IntoIterator<Item = Point3>) -> Self {
        Self::new(
            positions
                .into_iter()
                .map(|p| OrientedPoint::new(p, Vector3::zeros()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Point3> + '_ {
        self.points.iter().map(|p| p.position)
    }

    pub fn position_vec(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Keeps the points at `indices` (in the given order), carrying pixel
    /// links along.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            pixels: self
                .pixels
                .as_ref()
                .map(|px| indices.iter().map(|&i| px[i]).collect()),
        }
    }

    /// Order-preserving deterministic subsampling to at most `cap` points.
    pub fn stride_subsample(&self, cap: usize) -> Self {
        if cap == 0 || self.len() <= cap {
            return self.clone();
        }
        // Ceil stride so the result never exceeds cap.
        let stride = self.len().div_ceil(cap);
        let indices: Vec<usize> = (0..self.len()).step_by(stride).collect();
        self.select(&indices)
    }
}

/// Transforms positions by `p -> R p + t` and normals by `n -> R n`,
/// preserving order and pixel links.
pub fn transform_cloud(t: &RigidTransform, cloud: &OrientedPointCloud) -> OrientedPointCloud {
    OrientedPointCloud {
        points: cloud
            .points
            .iter()
            .map(|op| OrientedPoint::new(t.apply(&op.position), t.rotate(&op.normal)))
            .collect(),
        pixels: cloud.pixels.clone(),
    }
}

/// SE(3) rigid transform: rotation then translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: na::Rotation3<f64>,
    pub translation: Vector3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: na::Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: na::Rotation3<f64>, translation: Vector3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3) -> Self {
        Self::new(na::Rotation3::identity(), translation)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit), zero
    /// translation. A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vector3, angle: f64) -> Self {
        Self::new(
            na::Rotation3::from_scaled_axis(axis.normalize() * angle),
            Vector3::zeros(),
        )
    }

    pub fn from_rotation_matrix(m: Matrix3, translation: Vector3) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "not a rotation matrix (|R'R - I| = {ortho:.2e}, det = {det:.6})"
            )));
        }
        Ok(Self::new(
            na::Rotation3::from_matrix_unchecked(m),
            translation,
        ))
    }

    pub fn from_unit_quaternion(q: na::UnitQuaternion<f64>, translation: Vector3) -> Self {
        Self::new(q.to_rotation_matrix(), translation)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vector3) -> Vector3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3 {
        *self.rotation.matrix()
    }

    pub fn to_matrix4(&self) -> Matrix4 {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 16-element form, the on-disk pose convention.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(vals: &[f64; 16]) -> Result<Self> {
        let bottom_ok = vals[12] == 0.0 && vals[13] == 0.0 && vals[14] == 0.0 && vals[15] == 1.0;
        if !bottom_ok {
            return Err(Error::InvalidInput(
                "pose matrix bottom row must be 0 0 0 1".into(),
            ));
        }
        let m = Matrix3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        Self::from_rotation_matrix(m, Vector3::new(vals[3], vals[7], vals[11]))
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    /// `(a * b).apply(p) == a.apply(&b.apply(p))`.
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn transform_cloud_identity_is_noop() {
        let cloud = OrientedPointCloud::new(vec![
            OrientedPoint::new(Point3::new(0.1, 0.2, 0.3), Vector3::z()),
            OrientedPoint::new(Point3::new(-0.4, 0.0, 1.0), Vector3::x()),
        ]);
        let out = transform_cloud(&RigidTransform::identity(), &cloud);
        assert_eq!(out.points, cloud.points);
    }

    #[test]
    fn transform_cloud_pure_translation() {
        let cloud = OrientedPointCloud::new(vec![OrientedPoint::new(
            Point3::origin(),
            Vector3::new(0.0, 1.0, 0.0),
        )]);
        let t = RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let out = transform_cloud(&t, &cloud);
        assert_relative_eq!(out.points[0].position, Point3::new(0.1, 0.0, 0.0));
        assert_relative_eq!(out.points[0].normal, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn transform_cloud_rotation_about_z() {
        // pi/2 about z maps (1,0,0) -> (0,1,0), same for the normal.
        let cloud = OrientedPointCloud::new(vec![OrientedPoint::new(
            Point3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        )]);
        let t = RigidTransform::from_axis_angle(Vector3::z(), std::f64::consts::FRAC_PI_2);
        let out = transform_cloud(&t, &cloud);
        assert_relative_eq!(
            out.points[0].position,
            Point3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            out.points[0].normal,
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = RigidTransform::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.7)
            * RigidTransform::from_translation(Vector3::new(0.0, 0.1, 0.0));
        let b = RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, -0.5), -1.2)
            * RigidTransform::from_translation(Vector3::new(0.05, 0.0, -0.3));
        let p = Point3::new(0.2, -0.7, 1.1);
        assert_relative_eq!((a * b).apply(&p), a.apply(&b.apply(&p)), epsilon = 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let t = RigidTransform::from_axis_angle(Vector3::new(0.1, 0.9, -0.4), 2.1)
            * RigidTransform::from_translation(Vector3::new(0.4, -0.2, 0.8));
        let p = Point3::new(-0.3, 0.25, 0.6);
        assert_relative_eq!(t.inverse().apply(&t.apply(&p)), p, epsilon = 1e-12);
        let id = t * t.inverse();
        assert_relative_eq!(id.translation.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            (id.rotation_matrix() - Matrix3::identity()).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn row_major_roundtrip() {
        let t = RigidTransform::from_axis_angle(Vector3::new(-0.2, 0.5, 1.0), 0.9)
            * RigidTransform::from_translation(Vector3::new(0.01, 0.02, 0.03));
        let rm = t.to_row_major();
        let back = RigidTransform::from_row_major(&rm).unwrap();
        assert_relative_eq!(
            (t.rotation_matrix() - back.rotation_matrix()).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(t.translation, back.translation, epsilon = 1e-12);
    }

    #[test]
    fn from_rotation_matrix_rejects_reflection() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0; // reflection, det = -1
        assert!(RigidTransform::from_rotation_matrix(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn stride_subsample_is_order_preserving_and_capped() {
        let cloud =
            OrientedPointCloud::from_positions((0..100).map(|i| Point3::new(i as f64, 0.0, 0.0)));
        let sub = cloud.stride_subsample(30);
        assert!(sub.len() <= 30);
        let xs: Vec<f64> = sub.positions().map(|p| p.x).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(xs, sorted);
        assert_eq!(xs[0], 0.0);
    }

    #[test]
    fn transform_preserves_pairwise_distances() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(11, 0);
        for _ in 0..50 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let t = RigidTransform::from_axis_angle(
                if axis.norm() < 1e-6 {
                    Vector3::x()
                } else {
                    axis
                },
                rng.random_range(-3.0..3.0),
            ) * RigidTransform::from_translation(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let p = Point3::new(rng.random(), rng.random(), rng.random());
            let q = Point3::new(rng.random(), rng.random(), rng.random());
            let before = (p - q).norm();
            let after = (t.apply(&p) - t.apply(&q)).norm();
            assert!((before - after).abs() < 1e-9);
        }
    }
}
