//! Mesh and point cloud file IO.
//!
//! Meshes load from Wavefront OBJ (`v`/`f` directives, other lines ignored)
//! and from PLY in both ascii and binary little-endian form. Point clouds
//! load from PLY vertex elements with optional `nx ny nz` normals; points
//! without normals get the zero vector, which downstream code treats as
//! "no normal available".

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPoint, OrientedPointCloud, Point3, Vector3};
use crate::mesh::TriangleMesh;

/// Inner parsing works with plain string messages; the public entry points
/// attach the file path once.
type ParseResult<T> = std::result::Result<T, String>;

/// Loads a mesh, dispatching on the file extension (`.obj` or `.ply`).
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply_mesh(path),
        other => Err(Error::parse(
            path,
            format!("unsupported mesh format {:?}", other.unwrap_or("<none>")),
        )),
    }
}

/// Loads an OBJ mesh. Only `v` and `f` directives are interpreted; faces
/// with more than three corners are fan-triangulated.
pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text).map_err(|msg| Error::parse(path, msg))
}

fn parse_obj(text: &str) -> ParseResult<TriangleMesh> {
    let mut vertices: Vec<Point3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let mut coord = [0.0f64; 3];
                for c in &mut coord {
                    let tok = fields
                        .next()
                        .ok_or_else(|| format!("line {}: vertex needs 3 coordinates", ln + 1))?;
                    *c = tok
                        .parse()
                        .map_err(|_| format!("line {}: bad coordinate {tok:?}", ln + 1))?;
                }
                vertices.push(Point3::new(coord[0], coord[1], coord[2]));
            }
            Some("f") => {
                let mut corners: Vec<u32> = Vec::new();
                for tok in fields {
                    // Face corners may carry texture/normal refs as v/vt/vn.
                    let idx_tok = tok.split('/').next().unwrap_or(tok);
                    let idx: i64 = idx_tok
                        .parse()
                        .map_err(|_| format!("line {}: bad face index {tok:?}", ln + 1))?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        return Err(format!("line {}: face index 0 is not valid", ln + 1));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(format!("line {}: face index {idx} out of range", ln + 1));
                    }
                    corners.push(resolved as u32);
                }
                if corners.len() < 3 {
                    return Err(format!("line {}: face needs at least 3 corners", ln + 1));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| e.to_string())
}

/// Writes a mesh as OBJ.
pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(tok: &str) -> ParseResult<Self> {
        Ok(match tok {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            other => return Err(format!("unknown ply type {other:?}")),
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_binary(self, data: &[u8], off: &mut usize) -> ParseResult<f64> {
        let n = self.size();
        let bytes = data
            .get(*off..*off + n)
            .ok_or_else(|| "ply data truncated".to_string())?;
        *off += n;
        Ok(match self {
            Self::I8 => bytes[0] as i8 as f64,
            Self::U8 => bytes[0] as f64,
            Self::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Self::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as f64,
            Self::I32 => i32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(bytes.try_into().unwrap()),
        })
    }
}

#[derive(Debug, Clone)]
enum PlyProp {
    Scalar(PlyScalar, String),
    List(PlyScalar, PlyScalar, String),
}

impl PlyProp {
    fn name(&self) -> &str {
        match self {
            Self::Scalar(_, n) | Self::List(_, _, n) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProp>,
}

struct PlyFile {
    ascii: bool,
    elements: Vec<PlyElement>,
    /// Payload bytes after the header (ascii text or binary data).
    body: Vec<u8>,
}

fn parse_ply_header(data: Vec<u8>) -> ParseResult<PlyFile> {
    let header_end = data
        .windows(11)
        .position(|w| w == b"end_header\n")
        .map(|p| p + 11)
        .ok_or_else(|| "missing end_header".to_string())?;
    let header =
        std::str::from_utf8(&data[..header_end]).map_err(|_| "header is not utf-8".to_string())?;
    let mut lines = header.lines().map(|l| l.trim_end_matches('\r'));
    if lines.next() != Some("ply") {
        return Err("not a ply file".into());
    }
    let mut ascii = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for line in lines {
        let mut f = line.split_whitespace();
        match f.next() {
            Some("format") => {
                ascii = match f.next() {
                    Some("ascii") => Some(true),
                    Some("binary_little_endian") => Some(false),
                    other => {
                        return Err(format!(
                            "unsupported ply format {:?}",
                            other.unwrap_or("<missing>")
                        ))
                    }
                };
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = f.next().ok_or("element without a name")?;
                let count: usize = f
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or("element without a count")?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or("property before any element")?;
                let first = f.next().ok_or("property without a type")?;
                if first == "list" {
                    let count_ty = PlyScalar::parse(f.next().ok_or("list without count type")?)?;
                    let item_ty = PlyScalar::parse(f.next().ok_or("list without item type")?)?;
                    let name = f.next().ok_or("list without a name")?;
                    el.props
                        .push(PlyProp::List(count_ty, item_ty, name.to_string()));
                } else {
                    let ty = PlyScalar::parse(first)?;
                    let name = f.next().ok_or("property without a name")?;
                    el.props.push(PlyProp::Scalar(ty, name.to_string()));
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(format!("unknown ply header line {other:?}")),
            None => {}
        }
    }
    let ascii = ascii.ok_or("missing format line")?;
    Ok(PlyFile {
        ascii,
        elements,
        body: data[header_end..].to_vec(),
    })
}

/// One parsed element table: scalar rows plus per-row list payloads.
struct ElementData {
    /// `rows[i][j]` is property `j` of row `i`; a list property stores its
    /// length here and its values in `lists`.
    rows: Vec<Vec<f64>>,
    lists: Vec<Vec<Vec<f64>>>,
}

fn read_ply_elements(file: &PlyFile, wanted: &[&str]) -> ParseResult<Vec<Option<ElementData>>> {
    let mut out: Vec<Option<ElementData>> = wanted.iter().map(|_| None).collect();
    let ascii_text;
    let mut ascii_toks = if file.ascii {
        ascii_text = std::str::from_utf8(&file.body)
            .map_err(|_| "ascii ply body is not utf-8".to_string())?;
        Some(ascii_text.split_whitespace())
    } else {
        None
    };
    let mut off = 0usize;
    let mut next_value = |ty: PlyScalar, what: &str| -> ParseResult<f64> {
        match &mut ascii_toks {
            Some(toks) => toks
                .next()
                .ok_or_else(|| format!("ply data truncated at {what}"))?
                .parse::<f64>()
                .map_err(|_| format!("bad ply number in {what}")),
            None => ty.read_binary(&file.body, &mut off),
        }
    };
    for el in &file.elements {
        let slot = wanted.iter().position(|w| *w == el.name);
        let mut data = ElementData {
            rows: Vec::with_capacity(if slot.is_some() { el.count } else { 0 }),
            lists: Vec::new(),
        };
        for _ in 0..el.count {
            let mut row = Vec::with_capacity(el.props.len());
            let mut row_lists = Vec::new();
            for p in &el.props {
                match p {
                    PlyProp::Scalar(ty, name) => row.push(next_value(*ty, name)?),
                    PlyProp::List(cty, ity, name) => {
                        let n = next_value(*cty, name)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(next_value(*ity, name)?);
                        }
                        row.push(n as f64);
                        row_lists.push(items);
                    }
                }
            }
            if slot.is_some() {
                data.rows.push(row);
                data.lists.push(row_lists);
            }
        }
        if let Some(s) = slot {
            out[s] = Some(data);
        }
    }
    Ok(out)
}

fn prop_index(el: &PlyElement, name: &str) -> Option<usize> {
    el.props.iter().position(|p| p.name() == name)
}

fn vertex_xyz_indices(el: &PlyElement) -> ParseResult<(usize, usize, usize)> {
    match (
        prop_index(el, "x"),
        prop_index(el, "y"),
        prop_index(el, "z"),
    ) {
        (Some(x), Some(y), Some(z)) => Ok((x, y, z)),
        _ => Err("vertex element lacks x/y/z".into()),
    }
}

/// Loads a triangle mesh from a PLY file (ascii or binary little-endian).
pub fn load_ply_mesh(path: &Path) -> Result<TriangleMesh> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply_mesh(data).map_err(|msg| Error::parse(path, msg))
}

fn parse_ply_mesh(data: Vec<u8>) -> ParseResult<TriangleMesh> {
    let file = parse_ply_header(data)?;
    let vertex_el = file
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .cloned()
        .ok_or("no vertex element")?;
    let face_el = file
        .elements
        .iter()
        .find(|e| e.name == "face")
        .cloned()
        .ok_or("no face element")?;
    let (xi, yi, zi) = vertex_xyz_indices(&vertex_el)?;
    let list_pos = face_el
        .props
        .iter()
        .position(
            |p| matches!(p, PlyProp::List(_, _, n) if n == "vertex_indices" || n == "vertex_index"),
        )
        .ok_or("face element has no index list")?;
    // Lists land per row in declaration order of the list properties.
    let list_slot = face_el.props[..list_pos]
        .iter()
        .filter(|p| matches!(p, PlyProp::List(..)))
        .count();

    let parsed = read_ply_elements(&file, &["vertex", "face"])?;
    let verts = parsed[0]
        .as_ref()
        .ok_or("vertex element missing from body")?;
    let faces = parsed[1].as_ref().ok_or("face element missing from body")?;

    let vertices: Vec<Point3> = verts
        .rows
        .iter()
        .map(|r| Point3::new(r[xi], r[yi], r[zi]))
        .collect();
    let mut triangles = Vec::new();
    for lists in &faces.lists {
        let corners = &lists[list_slot];
        if corners.len() < 3 {
            return Err("face with fewer than 3 corners".into());
        }
        for k in 1..corners.len() - 1 {
            triangles.push([corners[0] as u32, corners[k] as u32, corners[k + 1] as u32]);
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| e.to_string())
}

/// Loads an oriented point cloud from a PLY vertex element. `nx ny nz`
/// properties are used when present; otherwise normals are zero.
pub fn load_ply_cloud(path: &Path) -> Result<OrientedPointCloud> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply_cloud(data).map_err(|msg| Error::parse(path, msg))
}

fn parse_ply_cloud(data: Vec<u8>) -> ParseResult<OrientedPointCloud> {
    let file = parse_ply_header(data)?;
    let vertex_el = file
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .cloned()
        .ok_or("no vertex element")?;
    let (xi, yi, zi) = vertex_xyz_indices(&vertex_el)?;
    let normal_idx = match (
        prop_index(&vertex_el, "nx"),
        prop_index(&vertex_el, "ny"),
        prop_index(&vertex_el, "nz"),
    ) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let parsed = read_ply_elements(&file, &["vertex"])?;
    let verts = parsed[0]
        .as_ref()
        .ok_or("vertex element missing from body")?;
    let points = verts
        .rows
        .iter()
        .map(|r| {
            let normal = match normal_idx {
                Some((a, b, c)) => Vector3::new(r[a], r[b], r[c]),
                None => Vector3::zeros(),
            };
            OrientedPoint::new(Point3::new(r[xi], r[yi], r[zi]), normal)
        })
        .collect();
    Ok(OrientedPointCloud::new(points))
}

/// Writes an oriented point cloud as ascii PLY with `x y z nx ny nz`.
pub fn save_ply_cloud(cloud: &OrientedPointCloud, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    (|| -> std::io::Result<()> {
        write!(
            w,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double nx\nproperty double ny\nproperty double nz\nend_header\n",
            cloud.len()
        )?;
        for p in &cloud.points {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                p.position.x, p.position.y, p.position.z, p.normal.x, p.normal.y, p.normal.z
            )?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Writes a mesh as ascii PLY.
pub fn save_ply_mesh(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    (|| -> std::io::Result<()> {
        write!(
            w,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            mesh.vertices.len(),
            mesh.triangles.len()
        )?;
        for v in &mesh.vertices {
            writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
        }
        for t in &mesh.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}
