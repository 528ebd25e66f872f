//! Mesh file I/O: OBJ and PLY read/write, STL read.
//!
//! PLY supports ASCII and binary-little-endian, with an optional per-vertex
//! `quality` scalar used to store distance maps. Floats are written with
//! Rust's shortest-round-trip formatting, so an ASCII save/load cycle
//! reproduces coordinates exactly.

use super::{MeshError, TriMesh};
use nalgebra::Point3;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            "stl" => Some(Self::Stl),
            _ => None,
        }
    }
}

/// Loads a mesh, picking the format from the file extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh, MeshError> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| MeshError::UnsupportedFormat(path.display().to_string()))?;
    match format {
        MeshFormat::Obj => load_obj(path),
        MeshFormat::Ply => load_ply(path).map(|(mesh, _)| mesh),
        MeshFormat::Stl => load_stl(path),
    }
}

/// Saves a mesh as OBJ or PLY depending on the extension. STL is read-only.
pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<(), MeshError> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| MeshError::UnsupportedFormat(path.display().to_string()))?;
    match format {
        MeshFormat::Obj => save_obj(path, mesh),
        MeshFormat::Ply => save_ply(path, mesh, None, true),
        MeshFormat::Stl => Err(MeshError::UnsupportedFormat(
            "STL output is not supported (load-only format)".into(),
        )),
    }
}

fn open(path: &Path) -> Result<File, MeshError> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            MeshError::FileNotFound {
                path: path.to_path_buf(),
            }
        } else {
            MeshError::Io(e)
        }
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// OBJ

pub fn load_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let reader = BufReader::new(open(path)?);
    let mut vertices = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad coordinate '{tok}'")))?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut indices = Vec::new();
                for tok in tokens {
                    // Accept v, v/vt, v//vn and v/vt/vn; only the vertex
                    // index is kept.
                    let first = tok.split('/').next().unwrap_or("");
                    let v: i64 = first
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad face index '{tok}'")))?;
                    if v < 1 {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("face index {v} out of range (1-based indices required)"),
                        ));
                    }
                    indices.push((v - 1) as u32);
                }
                if indices.len() < 3 {
                    return Err(parse_err(path, lineno, "face needs at least 3 vertices"));
                }
                // Fan-triangulate polygons.
                for i in 1..indices.len() - 1 {
                    faces.push([indices[0], indices[i], indices[i + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn save_obj(path: &Path, mesh: &TriMesh) -> Result<(), MeshError> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyScalar {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl PlyScalar {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "float" | "float32" => Some(Self::F32),
            "double" | "float64" => Some(Self::F64),
            "uchar" | "uint8" => Some(Self::U8),
            "char" | "int8" => Some(Self::I8),
            "ushort" | "uint16" => Some(Self::U16),
            "short" | "int16" => Some(Self::I16),
            "uint" | "uint32" => Some(Self::U32),
            "int" | "int32" => Some(Self::I32),
            _ => None,
        }
    }

    fn read_binary<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        let mut buf = [0u8; 8];
        Ok(match self {
            Self::F32 => {
                r.read_exact(&mut buf[..4])?;
                f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64
            }
            Self::F64 => {
                r.read_exact(&mut buf[..8])?;
                f64::from_le_bytes(buf)
            }
            Self::U8 => {
                r.read_exact(&mut buf[..1])?;
                buf[0] as f64
            }
            Self::I8 => {
                r.read_exact(&mut buf[..1])?;
                buf[0] as i8 as f64
            }
            Self::U16 => {
                r.read_exact(&mut buf[..2])?;
                u16::from_le_bytes(buf[..2].try_into().unwrap()) as f64
            }
            Self::I16 => {
                r.read_exact(&mut buf[..2])?;
                i16::from_le_bytes(buf[..2].try_into().unwrap()) as f64
            }
            Self::U32 => {
                r.read_exact(&mut buf[..4])?;
                u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64
            }
            Self::I32 => {
                r.read_exact(&mut buf[..4])?;
                i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64
            }
        })
    }
}

#[derive(Debug)]
enum PlyProperty {
    Scalar { name: String, ty: PlyScalar },
    List { count_ty: PlyScalar, item_ty: PlyScalar },
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

fn next_line(
    reader: &mut BufReader<File>,
    lineno: &mut usize,
    path: &Path,
) -> Result<String, MeshError> {
    let mut s = String::new();
    let n = reader.read_line(&mut s)?;
    if n == 0 {
        return Err(parse_err(path, *lineno, "unexpected end of file"));
    }
    *lineno += 1;
    Ok(s.trim_end().to_string())
}

/// Loads a PLY mesh plus the optional per-vertex `quality` property.
pub fn load_ply(path: &Path) -> Result<(TriMesh, Option<Vec<f64>>), MeshError> {
    let mut reader = BufReader::new(open(path)?);
    let mut lineno = 0;

    let magic = next_line(&mut reader, &mut lineno, path)?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, 1, "missing 'ply' magic line"));
    }
    let mut binary = false;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = next_line(&mut reader, &mut lineno, path)?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => match tokens.next() {
                Some("ascii") => binary = false,
                Some("binary_little_endian") => binary = true,
                other => {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("unsupported format '{}'", other.unwrap_or("")),
                    ))
                }
            },
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(path, lineno, "element needs a name"))?;
                let count: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, lineno, "element needs a count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, lineno, "property before any element"))?;
                let ty_tok = tokens
                    .next()
                    .ok_or_else(|| parse_err(path, lineno, "property needs a type"))?;
                if ty_tok == "list" {
                    let count_ty = tokens
                        .next()
                        .and_then(PlyScalar::parse)
                        .ok_or_else(|| parse_err(path, lineno, "bad list count type"))?;
                    let item_ty = tokens
                        .next()
                        .and_then(PlyScalar::parse)
                        .ok_or_else(|| parse_err(path, lineno, "bad list item type"))?;
                    elem.properties.push(PlyProperty::List { count_ty, item_ty });
                } else {
                    let ty = PlyScalar::parse(ty_tok)
                        .ok_or_else(|| parse_err(path, lineno, format!("bad type '{ty_tok}'")))?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "property needs a name"))?;
                    elem.properties.push(PlyProperty::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(path, lineno, format!("unexpected token '{other}'")))
            }
            None => {}
        }
    }

    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut quality: Vec<f64> = Vec::new();
    let mut has_quality = false;
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for elem in &elements {
        let is_vertex = elem.name == "vertex";
        let is_face = elem.name == "face";
        if is_vertex {
            for prop in &elem.properties {
                if let PlyProperty::Scalar { name, .. } = prop {
                    if name == "quality" {
                        has_quality = true;
                    }
                }
            }
        }
        for _ in 0..elem.count {
            if binary {
                let mut x = 0.0;
                let mut y = 0.0;
                let mut z = 0.0;
                let mut q = 0.0;
                for prop in &elem.properties {
                    match prop {
                        PlyProperty::Scalar { name, ty } => {
                            let v = ty.read_binary(&mut reader)?;
                            match name.as_str() {
                                "x" => x = v,
                                "y" => y = v,
                                "z" => z = v,
                                "quality" => q = v,
                                _ => {}
                            }
                        }
                        PlyProperty::List { count_ty, item_ty } => {
                            let n = count_ty.read_binary(&mut reader)? as usize;
                            let mut idx = Vec::with_capacity(n);
                            for _ in 0..n {
                                idx.push(item_ty.read_binary(&mut reader)? as i64);
                            }
                            if is_face {
                                push_face(path, 0, &mut faces, &idx)?;
                            }
                        }
                    }
                }
                if is_vertex {
                    vertices.push(Point3::new(x, y, z));
                    if has_quality {
                        quality.push(q);
                    }
                }
            } else {
                let line = next_line(&mut reader, &mut lineno, path)?;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                let mut pos = 0;
                let mut x = 0.0;
                let mut y = 0.0;
                let mut z = 0.0;
                let mut q = 0.0;
                let take = |pos: &mut usize, tokens: &[&str]| -> Result<f64, MeshError> {
                    let t = tokens
                        .get(*pos)
                        .ok_or_else(|| parse_err(path, lineno, "too few values on line"))?;
                    *pos += 1;
                    t.parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad value '{t}'")))
                };
                for prop in &elem.properties {
                    match prop {
                        PlyProperty::Scalar { name, .. } => {
                            let v = take(&mut pos, &tokens)?;
                            match name.as_str() {
                                "x" => x = v,
                                "y" => y = v,
                                "z" => z = v,
                                "quality" => q = v,
                                _ => {}
                            }
                        }
                        PlyProperty::List { .. } => {
                            let n = take(&mut pos, &tokens)? as usize;
                            let mut idx = Vec::with_capacity(n);
                            for _ in 0..n {
                                idx.push(take(&mut pos, &tokens)? as i64);
                            }
                            if is_face {
                                push_face(path, lineno, &mut faces, &idx)?;
                            }
                        }
                    }
                }
                if is_vertex {
                    vertices.push(Point3::new(x, y, z));
                    if has_quality {
                        quality.push(q);
                    }
                }
            }
        }
    }

    let mesh = TriMesh::new(vertices, faces)?;
    Ok((mesh, has_quality.then_some(quality)))
}

fn push_face(
    path: &Path,
    lineno: usize,
    faces: &mut Vec<[u32; 3]>,
    idx: &[i64],
) -> Result<(), MeshError> {
    if idx.len() < 3 {
        return Err(parse_err(path, lineno, "face needs at least 3 indices"));
    }
    if idx.iter().any(|&v| v < 0) {
        return Err(parse_err(path, lineno, "negative face index"));
    }
    for i in 1..idx.len() - 1 {
        faces.push([idx[0] as u32, idx[i] as u32, idx[i + 1] as u32]);
    }
    Ok(())
}

/// Writes a PLY file, optionally with a per-vertex `quality` scalar.
pub fn save_ply(
    path: &Path,
    mesh: &TriMesh,
    quality: Option<&[f64]>,
    binary: bool,
) -> Result<(), MeshError> {
    if let Some(q) = quality {
        if q.len() != mesh.vertex_count() {
            return Err(MeshError::TopologyMismatch {
                left: mesh.vertex_count(),
                right: q.len(),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    if binary {
        writeln!(w, "format binary_little_endian 1.0")?;
    } else {
        writeln!(w, "format ascii 1.0")?;
    }
    writeln!(w, "element vertex {}", mesh.vertex_count())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if quality.is_some() {
        writeln!(w, "property double quality")?;
    }
    writeln!(w, "element face {}", mesh.face_count())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;

    if binary {
        for (i, v) in mesh.vertices().iter().enumerate() {
            w.write_all(&v.x.to_le_bytes())?;
            w.write_all(&v.y.to_le_bytes())?;
            w.write_all(&v.z.to_le_bytes())?;
            if let Some(q) = quality {
                w.write_all(&q[i].to_le_bytes())?;
            }
        }
        for f in mesh.faces() {
            w.write_all(&[3u8])?;
            for &i in f {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
    } else {
        for (i, v) in mesh.vertices().iter().enumerate() {
            if let Some(q) = quality {
                writeln!(w, "{} {} {} {}", v.x, v.y, v.z, q[i])?;
            } else {
                writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
            }
        }
        for f in mesh.faces() {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// STL (load only)

/// Loads an STL file (ASCII or binary), merging vertices that match exactly.
pub fn load_stl(path: &Path) -> Result<TriMesh, MeshError> {
    let mut file = open(path)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;

    // A well-formed binary STL is exactly 84 + 50·n bytes; anything else that
    // starts with "solid" is treated as ASCII.
    let is_binary = if data.len() >= 84 {
        let n = u32::from_le_bytes(data[80..84].try_into().unwrap()) as usize;
        data.len() == 84 + 50 * n
    } else {
        false
    };
    if is_binary {
        load_stl_binary(path, &data)
    } else {
        load_stl_ascii(path, &data)
    }
}

/// Merges exactly-equal coordinates into shared vertices; scanners and
/// generators emit bit-identical corners for adjacent facets.
struct VertexMerger {
    map: HashMap<[u64; 3], u32>,
    vertices: Vec<Point3<f64>>,
}

impl VertexMerger {
    fn new() -> Self {
        Self {
            map: HashMap::new(),
            vertices: Vec::new(),
        }
    }

    fn insert(&mut self, p: Point3<f64>) -> u32 {
        // Normalise -0.0 so numerically equal coordinates share a key.
        let key = [
            (p.x + 0.0).to_bits(),
            (p.y + 0.0).to_bits(),
            (p.z + 0.0).to_bits(),
        ];
        *self.map.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            (self.vertices.len() - 1) as u32
        })
    }
}

fn load_stl_binary(path: &Path, data: &[u8]) -> Result<TriMesh, MeshError> {
    let n = u32::from_le_bytes(data[80..84].try_into().unwrap()) as usize;
    let mut merger = VertexMerger::new();
    let mut faces = Vec::with_capacity(n);
    for t in 0..n {
        let base = 84 + t * 50 + 12; // skip the normal
        let mut idx = [0u32; 3];
        for (k, slot) in idx.iter_mut().enumerate() {
            let off = base + k * 12;
            let x = f32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as f64;
            let y = f32::from_le_bytes(data[off + 4..off + 8].try_into().unwrap()) as f64;
            let z = f32::from_le_bytes(data[off + 8..off + 12].try_into().unwrap()) as f64;
            *slot = merger.insert(Point3::new(x, y, z));
        }
        if idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2] {
            faces.push(idx);
        } else {
            return Err(parse_err(
                path,
                0,
                format!("facet {t} is degenerate after vertex merging"),
            ));
        }
    }
    TriMesh::new(merger.vertices, faces)
}

fn load_stl_ascii(path: &Path, data: &[u8]) -> Result<TriMesh, MeshError> {
    let text = std::str::from_utf8(data)
        .map_err(|_| parse_err(path, 0, "not valid utf-8 (and not a well-formed binary STL)"))?;
    if !text.trim_start().starts_with("solid") {
        return Err(parse_err(path, 1, "expected 'solid' header"));
    }
    let mut merger = VertexMerger::new();
    let mut faces = Vec::new();
    let mut current: Vec<u32> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("vertex") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "vertex needs 3 coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad coordinate '{tok}'")))?;
                }
                current.push(merger.insert(Point3::new(coords[0], coords[1], coords[2])));
            }
            Some("endfacet") => {
                if current.len() != 3 {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("facet has {} vertices, expected 3", current.len()),
                    ));
                }
                if current[0] == current[1] || current[1] == current[2] || current[0] == current[2]
                {
                    return Err(parse_err(path, lineno, "degenerate facet"));
                }
                faces.push([current[0], current[1], current[2]]);
                current.clear();
            }
            _ => {}
        }
    }
    TriMesh::new(merger.vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_mesh() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.125, -3.5, 7.25),
                Point3::new(1.0, 0.3333333333333333, 0.0),
                Point3::new(-2.75, 1.5, 0.1),
                Point3::new(0.0, 0.0, 4.4),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn obj_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mesh = sample_mesh();
        save_obj(&path, &mesh).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn ply_ascii_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mesh = sample_mesh();
        save_ply(&path, &mesh, None, false).unwrap();
        let (back, q) = load_ply(&path).unwrap();
        assert_eq!(mesh, back);
        assert!(q.is_none());
    }

    #[test]
    fn ply_binary_round_trip_with_quality() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mesh = sample_mesh();
        let quality = vec![0.5, -1.25, 3.75, 0.0];
        save_ply(&path, &mesh, Some(&quality), true).unwrap();
        let (back, q) = load_ply(&path).unwrap();
        assert_eq!(mesh, back);
        assert_eq!(q.unwrap(), quality);
    }

    #[test]
    fn ply_ascii_quality_survives() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ply");
        let mesh = sample_mesh();
        let quality = vec![1.0, 2.5, -0.125, 9.0];
        save_ply(&path, &mesh, Some(&quality), false).unwrap();
        let (_, q) = load_ply(&path).unwrap();
        assert_eq!(q.unwrap(), quality);
    }

    #[test]
    fn obj_accepts_slash_face_forms() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1/1 2/2/2 3//3\nf 1 3 4\n",
        )
        .unwrap();
        let mesh = load_obj(&path).unwrap();
        assert_eq!(mesh.face_count(), 2);
        assert_eq!(mesh.faces()[0], [0, 1, 2]);
    }

    #[test]
    fn obj_quads_are_triangulated() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        let mesh = load_obj(&path).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn missing_file_is_file_not_found() {
        let err = load_mesh(Path::new("/nonexistent/mesh.obj")).unwrap_err();
        assert!(matches!(err, MeshError::FileNotFound { .. }));
    }

    #[test]
    fn bad_extension_is_unsupported() {
        let err = load_mesh(Path::new("/tmp/mesh.xyz")).unwrap_err();
        assert!(matches!(err, MeshError::UnsupportedFormat(_)));
    }

    #[test]
    fn truncated_obj_reports_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0\n").unwrap();
        match load_obj(&path).unwrap_err() {
            MeshError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn stl_ascii_merges_shared_vertices() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stl");
        let text = "solid t\n\
            facet normal 0 0 1\nouter loop\n\
            vertex 0 0 0\nvertex 1 0 0\nvertex 0 1 0\n\
            endloop\nendfacet\n\
            facet normal 0 0 1\nouter loop\n\
            vertex 1 0 0\nvertex 1 1 0\nvertex 0 1 0\n\
            endloop\nendfacet\nendsolid t\n";
        std::fs::write(&path, text).unwrap();
        let mesh = load_stl(&path).unwrap();
        assert_eq!(mesh.vertex_count(), 4);
        assert_eq!(mesh.face_count(), 2);
    }

    #[test]
    fn stl_binary_round_trip_of_cube_corner() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.stl");
        // Two facets sharing an edge, written by hand.
        let tris: [[[f32; 3]; 3]; 2] = [
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
        ];
        let mut bytes = vec![0u8; 80];
        bytes.extend_from_slice(&(tris.len() as u32).to_le_bytes());
        for t in &tris {
            bytes.extend_from_slice(&[0u8; 12]); // normal
            for v in t {
                for c in v {
                    bytes.extend_from_slice(&c.to_le_bytes());
                }
            }
            bytes.extend_from_slice(&[0u8; 2]); // attribute byte count
        }
        std::fs::write(&path, bytes).unwrap();
        let mesh = load_stl(&path).unwrap();
        assert_eq!(mesh.vertex_count(), 4);
        assert_eq!(mesh.face_count(), 2);
    }
}
