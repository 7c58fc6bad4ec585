//! Triangle meshes, procedural primitives, and surface sampling.

pub mod io;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPoint, OrientedPointCloud, Point3, RigidTransform, Vector3};
use rand::Rng;

/// Indexed triangle mesh. Triangles are index triples into `vertices`,
/// counter-clockwise when seen from outside the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Triangles with squared area below this are dropped at construction time.
const DEGENERATE_AREA_SQ: f64 = 1e-24;

impl TriangleMesh {
    /// Builds a mesh, checking index bounds and dropping degenerate
    /// (zero-area) triangles so that downstream face normals are well
    /// defined.
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for t in &triangles {
            for &i in t {
                if i >= n {
                    return Err(Error::InvalidInput(format!(
                        "triangle index {i} out of range for {n} vertices"
                    )));
                }
            }
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = corner_positions(&vertices, t);
                (b - a).cross(&(c - a)).norm_squared() > DEGENERATE_AREA_SQ
            })
            .collect();
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Corner positions of triangle `i`.
    pub fn triangle(&self, i: usize) -> [Point3; 3] {
        corner_positions(&self.vertices, &self.triangles[i])
    }

    /// Unit outward normal of triangle `i`.
    pub fn face_normal(&self, i: usize) -> Vector3 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| self.triangle_area(i))
            .sum()
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> Result<(Point3, Point3)> {
        if self.vertices.is_empty() {
            return Err(Error::InvalidInput("bounding box of empty mesh".into()));
        }
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Ok((lo, hi))
    }

    /// Length of the bounding box diagonal.
    pub fn bounding_diameter(&self) -> Result<f64> {
        let (lo, hi) = self.bounding_box()?;
        Ok((hi - lo).norm())
    }

    /// Returns a copy with every vertex mapped through `transform`.
    pub fn transformed(&self, transform: &RigidTransform) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| transform.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Draws `count` points uniformly over the surface area.
    ///
    /// Each sample carries the face normal of the triangle it landed on.
    /// Sampling is deterministic in (`count`, `rng` state): triangles are
    /// chosen by inverting the cumulative area distribution and positions by
    /// the square-root barycentric warp.
    pub fn sample_surface<R: Rng>(&self, count: usize, rng: &mut R) -> Result<OrientedPointCloud> {
        if self.triangles.is_empty() {
            return Err(Error::InvalidInput("cannot sample an empty mesh".into()));
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for i in 0..self.triangles.len() {
            acc += self.triangle_area(i);
            cdf.push(acc);
        }
        let total = acc;
        if total <= 0.0 {
            return Err(Error::InvalidInput("cannot sample a zero-area mesh".into()));
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let target = rng.random::<f64>() * total;
            let ti = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
            let [a, b, c] = self.triangle(ti);
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let s = r1.sqrt();
            let u = 1.0 - s;
            let v = s * (1.0 - r2);
            let w = s * r2;
            let p = Point3::new(
                u * a.x + v * b.x + w * c.x,
                u * a.y + v * b.y + w * c.y,
                u * a.z + v * b.z + w * c.z,
            );
            points.push(OrientedPoint::new(p, self.face_normal(ti)));
        }
        Ok(OrientedPointCloud::new(points))
    }
}

fn corner_positions(vertices: &[Point3], tri: &[u32; 3]) -> [Point3; 3] {
    [
        vertices[tri[0] as usize],
        vertices[tri[1] as usize],
        vertices[tri[2] as usize],
    ]
}

/// Closest point to `p` on triangle `abc` (Ericson's region test).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Squared distance from `p` to triangle `abc`.
pub fn point_triangle_distance_sq(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm_squared()
}

/// Ray/triangle intersection parameter along `dir` (Moller-Trumbore).
///
/// Returns the smallest positive `t` with `orig + t * dir` on the triangle,
/// or `None` when the ray misses or runs parallel to the plane. Hits are
/// counted regardless of winding.
pub fn ray_triangle_intersection(
    orig: &Point3,
    dir: &Vector3,
    a: &Point3,
    b: &Point3,
    c: &Point3,
) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = orig - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > EPS).then_some(t)
}

/// Axis-aligned box spanning `min..max`, 12 triangles, outward winding.
pub fn box_from_corners(min: Point3, max: Point3) -> TriangleMesh {
    let v = vec![
        Point3::new(min.x, min.y, min.z),
        Point3::new(max.x, min.y, min.z),
        Point3::new(max.x, max.y, min.z),
        Point3::new(min.x, max.y, min.z),
        Point3::new(min.x, min.y, max.z),
        Point3::new(max.x, min.y, max.z),
        Point3::new(max.x, max.y, max.z),
        Point3::new(min.x, max.y, max.z),
    ];
    let t = vec![
        // -z
        [0, 2, 1],
        [0, 3, 2],
        // +z
        [4, 5, 6],
        [4, 6, 7],
        // -y
        [0, 1, 5],
        [0, 5, 4],
        // +y
        [3, 7, 6],
        [3, 6, 2],
        // -x
        [0, 4, 7],
        [0, 7, 3],
        // +x
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriangleMesh::new(v, t).expect("box construction is always valid")
}

/// Axis-aligned box of the given side lengths centered at the origin.
pub fn box_mesh(extents: Vector3) -> TriangleMesh {
    let h = extents * 0.5;
    box_from_corners(Point3::new(-h.x, -h.y, -h.z), Point3::new(h.x, h.y, h.z))
}

/// Closed cylinder along the z axis, centered at the origin.
pub fn cylinder_mesh(diameter: f64, length: f64, segments: usize) -> TriangleMesh {
    assert!(segments >= 3, "cylinder needs at least 3 segments");
    let r = diameter * 0.5;
    let h = length * 0.5;
    let n = segments as u32;
    let mut v = Vec::with_capacity(2 * segments + 2);
    for i in 0..segments {
        let ang = std::f64::consts::TAU * i as f64 / segments as f64;
        v.push(Point3::new(r * ang.cos(), r * ang.sin(), -h));
    }
    for i in 0..segments {
        let ang = std::f64::consts::TAU * i as f64 / segments as f64;
        v.push(Point3::new(r * ang.cos(), r * ang.sin(), h));
    }
    let bottom_center = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, -h));
    let top_center = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, h));

    let mut t = Vec::with_capacity(4 * segments);
    for i in 0..n {
        let j = (i + 1) % n;
        // Side quad, outward normal pointing away from the axis.
        t.push([i, j, n + j]);
        t.push([i, n + j, n + i]);
        // Caps.
        t.push([bottom_center, j, i]);
        t.push([top_center, n + i, n + j]);
    }
    TriangleMesh::new(v, t).expect("cylinder construction is always valid")
}

/// Ellipsoid with the given semi-axes, centered at the origin
/// (latitude/longitude tessellation).
pub fn ellipsoid_mesh(semi_axes: Vector3, slices: usize, stacks: usize) -> TriangleMesh {
    assert!(
        slices >= 3 && stacks >= 2,
        "ellipsoid tessellation too coarse"
    );
    let mut v = Vec::new();
    v.push(Point3::new(0.0, 0.0, semi_axes.z)); // north pole
    for s in 1..stacks {
        let theta = std::f64::consts::PI * s as f64 / stacks as f64;
        for l in 0..slices {
            let phi = std::f64::consts::TAU * l as f64 / slices as f64;
            v.push(Point3::new(
                semi_axes.x * theta.sin() * phi.cos(),
                semi_axes.y * theta.sin() * phi.sin(),
                semi_axes.z * theta.cos(),
            ));
        }
    }
    let south = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, -semi_axes.z));

    let n = slices as u32;
    let ring = |s: u32, l: u32| 1 + (s - 1) * n + (l % n);
    let mut t = Vec::new();
    for l in 0..n {
        t.push([0, ring(1, l), ring(1, l + 1)]);
    }
    for s in 1..(stacks as u32 - 1) {
        for l in 0..n {
            let a = ring(s, l);
            let b = ring(s, l + 1);
            let c = ring(s + 1, l + 1);
            let d = ring(s + 1, l);
            t.push([a, d, c]);
            t.push([a, c, b]);
        }
    }
    for l in 0..n {
        t.push([
            south,
            ring(stacks as u32 - 1, l + 1),
            ring(stacks as u32 - 1, l),
        ]);
    }
    TriangleMesh::new(v, t).expect("ellipsoid construction is always valid")
}

/// Sphere of the given radius centered at the origin.
pub fn sphere_mesh(radius: f64, slices: usize, stacks: usize) -> TriangleMesh {
    ellipsoid_mesh(Vector3::new(radius, radius, radius), slices, stacks)
}
