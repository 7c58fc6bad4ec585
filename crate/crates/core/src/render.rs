//! Deterministic software depth rendering through a pinhole camera.
//!
//! Meshes are rasterized with a z-buffer; depth is interpolated
//! perspective-correctly (linear in 1/z across the screen plane). Pixel
//! (u, v) samples the ray through image coordinates exactly (u, v), which
//! makes rendering and back-projection exact inverses of each other.
//! Back faces are rendered; only depth is produced.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{
    estimate_normals, OrientedPoint, OrientedPointCloud, Point3, RigidTransform,
};
use crate::mesh::TriangleMesh;

/// Valid rendered depth is never closer than this.
pub const NEAR_PLANE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "camera image size must be nonzero".into(),
            ));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!(
                "camera focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::InvalidInput(format!(
                "camera principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Projects a camera-frame point to image coordinates; `None` behind
    /// the near plane.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        if p.z < NEAR_PLANE {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Back-projects pixel coordinates and depth into the camera frame.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Point3 {
        Point3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        )
    }
}

/// Row-major depth image in meters; 0 marks an invalid pixel (no return).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width as usize + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.depth[row * self.width as usize + col] = value;
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn validate(&self, cam: &CameraIntrinsics) -> Result<()> {
        if self.width != cam.width || self.height != cam.height {
            return Err(Error::InvalidInput(format!(
                "depth image {}x{} does not match camera {}x{}",
                self.width, self.height, cam.width, cam.height
            )));
        }
        if self.depth.len() != self.width as usize * self.height as usize {
            return Err(Error::Internal("depth buffer length mismatch".into()));
        }
        if self.depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput(
                "depth image contains negative or non-finite values".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel mesh labels produced alongside a rendered depth image:
/// 0 = background, i + 1 = the i-th mesh in submission order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u16>,
}

impl LabelImage {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width as usize + col]
    }
}

/// Renders posed meshes to a depth image.
pub fn render_depth(
    meshes: &[(&TriangleMesh, &RigidTransform)],
    cam: &CameraIntrinsics,
) -> Result<DepthImage> {
    Ok(render_depth_labeled(meshes, cam)?.0)
}

/// Renders posed meshes to a depth image plus per-pixel mesh labels.
///
/// On an exact depth tie the earlier mesh wins, so output is independent
/// of triangle order within a mesh and deterministic across runs.
pub fn render_depth_labeled(
    meshes: &[(&TriangleMesh, &RigidTransform)],
    cam: &CameraIntrinsics,
) -> Result<(DepthImage, LabelImage)> {
    cam.validate()?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut labels = vec![0u16; w * h];
    for (mi, (mesh, pose)) in meshes.iter().enumerate() {
        for tri in &mesh.triangles {
            let a = pose.apply(&mesh.vertices[tri[0] as usize]);
            let b = pose.apply(&mesh.vertices[tri[1] as usize]);
            let c = pose.apply(&mesh.vertices[tri[2] as usize]);
            for clipped in clip_near(&a, &b, &c) {
                rasterize(&clipped, cam, mi as u16 + 1, &mut depth, &mut labels);
            }
        }
    }
    let depth: Vec<f64> = depth
        .into_iter()
        .map(|d| if d.is_finite() { d } else { 0.0 })
        .collect();
    Ok((
        DepthImage {
            width: cam.width,
            height: cam.height,
            depth,
        },
        LabelImage {
            width: cam.width,
            height: cam.height,
            labels,
        },
    ))
}

/// Clips a camera-frame triangle against the near plane z = NEAR_PLANE.
/// Returns 0, 1, or 2 triangles.
fn clip_near(a: &Point3, b: &Point3, c: &Point3) -> Vec<[Point3; 3]> {
    let verts = [*a, *b, *c];
    let mut poly: Vec<Point3> = Vec::with_capacity(4);
    for i in 0..3 {
        let p = verts[i];
        let q = verts[(i + 1) % 3];
        let pin = p.z >= NEAR_PLANE;
        let qin = q.z >= NEAR_PLANE;
        if pin {
            poly.push(p);
        }
        if pin != qin {
            let t = (NEAR_PLANE - p.z) / (q.z - p.z);
            poly.push(p + (q - p) * t);
        }
    }
    match poly.len() {
        3 => vec![[poly[0], poly[1], poly[2]]],
        4 => vec![[poly[0], poly[1], poly[2]], [poly[0], poly[2], poly[3]]],
        _ => Vec::new(),
    }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

fn rasterize(
    tri: &[Point3; 3],
    cam: &CameraIntrinsics,
    label: u16,
    depth: &mut [f64],
    labels: &mut [u16],
) {
    let w = cam.width as usize;
    let h = cam.height as usize;
    let mut su = [0.0f64; 3];
    let mut sv = [0.0f64; 3];
    let mut inv_z = [0.0f64; 3];
    for k in 0..3 {
        // Clipping guarantees z >= NEAR_PLANE here.
        su[k] = cam.fx * tri[k].x / tri[k].z + cam.cx;
        sv[k] = cam.fy * tri[k].y / tri[k].z + cam.cy;
        inv_z[k] = 1.0 / tri[k].z;
    }
    let area = edge(su[0], sv[0], su[1], sv[1], su[2], sv[2]);
    if area.abs() < 1e-12 {
        return;
    }
    let u0 = su
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
        .ceil()
        .max(0.0) as usize;
    let u1 = su.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)).floor();
    let v0 = sv
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v))
        .ceil()
        .max(0.0) as usize;
    let v1 = sv.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)).floor();
    if u1 < 0.0 || v1 < 0.0 {
        return;
    }
    let u1 = (u1 as usize).min(w - 1);
    let v1 = (v1 as usize).min(h - 1);
    if u0 > u1 || v0 > v1 {
        return;
    }
    let inv_area = 1.0 / area;
    for v in v0..=v1 {
        for u in u0..=u1 {
            let (pu, pv) = (u as f64, v as f64);
            let w0 = edge(su[1], sv[1], su[2], sv[2], pu, pv) * inv_area;
            let w1 = edge(su[2], sv[2], su[0], sv[0], pu, pv) * inv_area;
            let w2 = edge(su[0], sv[0], su[1], sv[1], pu, pv) * inv_area;
            // Inside regardless of winding: normalized coordinates must all
            // be non-negative (their sum is 1 by construction).
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let zi = w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2];
            let z = 1.0 / zi;
            let idx = v * w + u;
            if z < depth[idx] {
                depth[idx] = z;
                labels[idx] = label;
            }
        }
    }
}

/// Back-projects every valid pixel into an oriented camera-frame cloud.
///
/// Pixel indices (row, col) are retained per point and normals are
/// estimated from the `normal_k` nearest neighbors, oriented toward the
/// camera.
pub fn depth_to_cloud(
    img: &DepthImage,
    cam: &CameraIntrinsics,
    normal_k: usize,
) -> Result<OrientedPointCloud> {
    cam.validate()?;
    img.validate(cam)?;
    let mut positions = Vec::new();
    let mut pixels = Vec::new();
    for row in 0..img.height as usize {
        for col in 0..img.width as usize {
            let d = img.at(row, col);
            if d > 0.0 {
                positions.push(cam.backproject(col as f64, row as f64, d));
                pixels.push((row as u32, col as u32));
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyDepthImage);
    }
    let normals = if positions.len() >= normal_k.max(3) {
        estimate_normals(&positions, normal_k)?
    } else {
        vec![crate::geometry::Vector3::zeros(); positions.len()]
    };
    let points = positions
        .into_iter()
        .zip(normals)
        .map(|(p, n)| OrientedPoint::new(p, n))
        .collect();
    let mut cloud = OrientedPointCloud::new(points);
    cloud.pixels = Some(pixels);
    Ok(cloud)
}

// --- file formats -----------------------------------------------------

/// Writes depth as a 16-bit PGM in millimeters. Nonstandard detail: the
/// two sample bytes are little-endian (flagged by a header comment), and
/// depths are capped at 65.535 m. Lossy by 0.5 mm quantization.
pub fn save_depth_pgm16(img: &DepthImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(64 + img.depth.len() * 2);
    bytes.extend_from_slice(
        format!(
            "P5\n# depth in millimeters, 16-bit little-endian samples\n{} {}\n65535\n",
            img.width, img.height
        )
        .as_bytes(),
    );
    for &d in &img.depth {
        let mm = (d * 1000.0).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&mm.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit little-endian millimeter PGM written by
/// [`save_depth_pgm16`].
pub fn load_depth_pgm16(path: &Path) -> Result<DepthImage> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, maxval, body) = parse_pgm_header(&data).map_err(|m| Error::parse(path, m))?;
    if maxval != 65535 {
        return Err(Error::parse(
            path,
            format!("expected 16-bit depth pgm (maxval 65535), got {maxval}"),
        ));
    }
    let n = w as usize * h as usize;
    if body.len() < n * 2 {
        return Err(Error::parse(path, "pgm data truncated"));
    }
    let depth = body[..n * 2]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    Ok(DepthImage {
        width: w,
        height: h,
        depth,
    })
}

/// Writes an 8-bit PGM (used for segmentation labels).
pub fn save_pgm8(width: u32, height: u32, values: &[u8], path: &Path) -> Result<()> {
    if values.len() != width as usize * height as usize {
        return Err(Error::InvalidInput(format!(
            "pgm8 buffer length {} does not match {width}x{height}",
            values.len()
        )));
    }
    let mut bytes = Vec::with_capacity(32 + values.len());
    bytes.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    bytes.extend_from_slice(values);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit PGM.
pub fn load_pgm8(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, maxval, body) = parse_pgm_header(&data).map_err(|m| Error::parse(path, m))?;
    if maxval > 255 {
        return Err(Error::parse(
            path,
            format!("expected 8-bit pgm, got maxval {maxval}"),
        ));
    }
    let n = w as usize * h as usize;
    if body.len() < n {
        return Err(Error::parse(path, "pgm data truncated"));
    }
    Ok((w, h, body[..n].to_vec()))
}

/// Parses a binary PGM (P5) header; returns (width, height, maxval, body).
fn parse_pgm_header(data: &[u8]) -> std::result::Result<(u32, u32, u32, &[u8]), String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<String, String> {
        // Skip whitespace and `#` comments.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("pgm header truncated".into());
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary pgm (P5) file".into());
    }
    let w: u32 = token()?.parse().map_err(|_| "bad pgm width".to_string())?;
    let h: u32 = token()?.parse().map_err(|_| "bad pgm height".to_string())?;
    let maxval: u32 = token()?.parse().map_err(|_| "bad pgm maxval".to_string())?;
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err("pgm header missing sample separator".into());
    }
    pos += 1;
    Ok((w, h, maxval, &data[pos..]))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Writes depth as raw little-endian f32 samples plus a text sidecar
/// (`<path>.txt`) holding the image size and intrinsics. This is the
/// canonical lossless interchange format.
pub fn save_depth_raw(img: &DepthImage, cam: &CameraIntrinsics, path: &Path) -> Result<()> {
    img.validate(cam)?;
    let mut bytes = Vec::with_capacity(img.depth.len() * 4);
    for &d in &img.depth {
        bytes.extend_from_slice(&(d as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let f = fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
    let mut w = std::io::BufWriter::new(f);
    write!(
        w,
        "width {}\nheight {}\nfx {}\nfy {}\ncx {}\ncy {}\n",
        cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy
    )
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(&side, e))
}

/// Reads a raw f32 depth file and its sidecar written by
/// [`save_depth_raw`].
pub fn load_depth_raw(path: &Path) -> Result<(DepthImage, CameraIntrinsics)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if let (Some(k), Some(v)) = (it.next(), it.next()) {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<f64> {
        fields
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(&side, format!("missing or bad field {k:?}")))
    };
    let cam = CameraIntrinsics {
        width: get("width")? as u32,
        height: get("height")? as u32,
        fx: get("fx")?,
        fy: get("fy")?,
        cx: get("cx")?,
        cy: get("cy")?,
    };
    cam.validate()?;
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = cam.width as usize * cam.height as usize;
    if data.len() < n * 4 {
        return Err(Error::parse(path, "raw depth data truncated"));
    }
    let depth: Vec<f64> = data[..n * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let img = DepthImage {
        width: cam.width,
        height: cam.height,
        depth,
    };
    img.validate(&cam)?;
    Ok((img, cam))
}
