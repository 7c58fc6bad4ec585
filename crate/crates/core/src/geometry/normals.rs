use super::{KdTree, OrientedPoint, OrientedPointCloud, Point3, Vector3};
use crate::error::{Error, Result};
use crate::parallel::par_map;
use nalgebra::Matrix3;

/// Per-point normals from a local plane fit over the k nearest neighbors
/// (including the point itself), oriented toward the camera origin.
///
/// Degenerate neighborhoods (collinear or coincident points, where the plane
/// is not unique) yield a zero normal; callers treat those as invalid.
pub fn estimate_normals(positions: &[Point3], k_neighbors: usize) -> Result<Vec<Vector3>> {
    if k_neighbors < 3 {
        return Err(Error::InvalidInput(
            "normal estimation needs k_neighbors >= 3".into(),
        ));
    }
    if positions.len() < k_neighbors {
        return Err(Error::InvalidInput(format!(
            "normal estimation needs at least k_neighbors = {} points, got {}",
            k_neighbors,
            positions.len()
        )));
    }
    let tree = KdTree::new(positions.to_vec());
    Ok(par_map(positions, |p| fit_normal(&tree, p, k_neighbors)))
}

fn fit_normal(tree: &KdTree, p: &Point3, k: usize) -> Vector3 {
    let neighbors = tree.k_nearest(p, k);
    let mut centroid = Vector3::zeros();
    for &(i, _) in &neighbors {
        centroid += tree.point(i).coords;
    }
    centroid /= neighbors.len() as f64;
    let mut cov = Matrix3::zeros();
    for &(i, _) in &neighbors {
        let d = tree.point(i).coords - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // Ascending sort of eigenvalues; the plane normal is the eigenvector of
    // the smallest one. A rank < 2 neighborhood (two vanishing eigenvalues)
    // has no unique plane.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let lam_min = eig.eigenvalues[order[0]].max(0.0);
    let lam_mid = eig.eigenvalues[order[1]].max(0.0);
    let lam_max = eig.eigenvalues[order[2]].max(0.0);
    if lam_max <= 0.0 || lam_mid <= 1e-9 * lam_max {
        return Vector3::zeros();
    }
    let _ = lam_min;
    let mut n = eig.eigenvectors.column(order[0]).into_owned();
    let norm = n.norm();
    if norm < 1e-12 {
        return Vector3::zeros();
    }
    n /= norm;
    // Orient toward the camera at the origin: n . (-p) >= 0.
    if n.dot(&p.coords) > 0.0 {
        n = -n;
    }
    n
}

/// Convenience wrapper bundling positions and estimated normals into a cloud.
pub fn oriented_cloud_from_positions(
    positions: Vec<Point3>,
    k_neighbors: usize,
) -> Result<OrientedPointCloud> {
    let normals = estimate_normals(&positions, k_neighbors)?;
    Ok(OrientedPointCloud::new(
        positions
            .into_iter()
            .zip(normals)
            .map(|(p, n)| OrientedPoint::new(p, n))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_normals_point_toward_camera() {
        // Plane z = 0.5 viewed from the origin: normals must be (0,0,-1).
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Point3::new(
                    -0.1 + 0.01 * i as f64,
                    -0.1 + 0.01 * j as f64,
                    0.5,
                ));
            }
        }
        let normals = estimate_normals(&pts, 8).unwrap();
        for n in &normals {
            assert!(
                (n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9,
                "n = {n:?}"
            );
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Dense sampling of a sphere ahead of the camera; estimated normals
        // should be within 5 degrees of the (inward-facing) radial direction.
        let center = Point3::new(0.0, 0.0, 1.0);
        let r = 0.1;
        let mut pts = Vec::new();
        for i in 0..60 {
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / 60.0;
            for j in 0..60 {
                let phi = std::f64::consts::TAU * j as f64 / 60.0;
                pts.push(Point3::new(
                    center.x + r * theta.sin() * phi.cos(),
                    center.y + r * theta.sin() * phi.sin(),
                    center.z + r * theta.cos(),
                ));
            }
        }
        let normals = estimate_normals(&pts, 9).unwrap();
        let max_angle_deg = 5.0f64;
        let mut checked = 0;
        for (p, n) in pts.iter().zip(&normals) {
            if n.norm_squared() == 0.0 {
                continue; // pole clusters can degenerate; tolerated
            }
            let radial = (p - center).normalize();
            // Estimated normals are camera-oriented; compare up to sign.
            let cosang = n.dot(&radial).abs().clamp(0.0, 1.0);
            let angle = cosang.acos().to_degrees();
            assert!(angle <= max_angle_deg, "angle {angle} at {p:?}");
            checked += 1;
        }
        assert!(checked > 3000);
    }

    #[test]
    fn collinear_points_get_invalid_flags() {
        let pts: Vec<Point3> = (0..3).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        let normals = estimate_normals(&pts, 3).unwrap();
        for n in &normals {
            assert_eq!(*n, Vector3::zeros());
        }
    }

    #[test]
    fn too_few_points_is_an_input_error() {
        let pts = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        assert!(estimate_normals(&pts, 5).is_err());
    }
}
