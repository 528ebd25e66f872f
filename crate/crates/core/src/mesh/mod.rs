//! Triangle meshes and the geometric queries the pipeline is built on.
//!
//! Coordinates are in millimetres throughout. A [`TriMesh`] validates its
//! topology on construction: face indices must be in range and faces must
//! reference three distinct vertices, so downstream code never has to guard
//! against broken connectivity.

mod bvh;
mod io;
mod queries;

pub use bvh::Bvh;
pub use io::{
    load_mesh, load_obj, load_ply, load_stl, save_mesh, save_obj, save_ply, MeshFormat,
};
pub use queries::{
    closest_point_on_mesh, closest_point_on_triangle, euclidean_vertex_distance,
    surface_to_surface, surface_to_surface_signed, SurfaceHit,
};

use nalgebra::{Point3, Vector3};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("file not found: {path}")]
    FileNotFound { path: PathBuf },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("mesh invariant violated: {0}")]
    Invariant(String),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("vertex count mismatch: {left} vs {right}")]
    TopologyMismatch { left: usize, right: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Indexed triangle mesh with `f64` vertex positions in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Builds a mesh, validating that all coordinates are finite, all face
    /// indices are in range and no face repeats a vertex.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (i, v) in vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(MeshError::Invariant(format!(
                    "vertex {i} has non-finite coordinates"
                )));
            }
        }
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&idx| idx as usize >= n) {
                return Err(MeshError::Invariant(format!(
                    "face {i} references vertex out of range (mesh has {n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::Invariant(format!(
                    "face {i} repeats a vertex index"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Corner positions of face `f`.
    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Applies a rigid transform to every vertex.
    pub fn transform(&mut self, iso: &nalgebra::Isometry3<f64>) {
        for v in &mut self.vertices {
            *v = iso * *v;
        }
    }

    /// Replaces vertex positions while keeping connectivity. Fails when the
    /// count differs or any new coordinate is non-finite.
    pub fn set_vertices(&mut self, vertices: Vec<Point3<f64>>) -> Result<(), MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::TopologyMismatch {
                left: self.vertices.len(),
                right: vertices.len(),
            });
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(MeshError::Invariant(format!(
                    "vertex {i} has non-finite coordinates"
                )));
            }
        }
        self.vertices = vertices;
        Ok(())
    }

    /// Mirrors the mesh across the YZ plane (x → −x), flipping face winding
    /// so outward orientation is preserved. Applying it twice restores the
    /// input exactly.
    pub fn mirror_x(&self) -> TriMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| Point3::new(-v.x, v.y, v.z))
            .collect();
        let faces = self.faces.iter().map(|&[a, b, c]| [a, c, b]).collect();
        TriMesh { vertices, faces }
    }

    /// Area-weighted per-vertex normals (unit length; zero where a vertex has
    /// no incident area).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = *f;
            let pa = self.vertices[a as usize];
            let pb = self.vertices[b as usize];
            let pc = self.vertices[c as usize];
            // Cross product length is twice the face area, so summing the raw
            // cross products area-weights each contribution.
            let n = (pb - pa).cross(&(pc - pa));
            normals[a as usize] += n;
            normals[b as usize] += n;
            normals[c as usize] += n;
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Summed area of the faces incident to each vertex.
    pub fn vertex_incident_area(&self) -> Vec<f64> {
        let mut area = vec![0.0; self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = *f;
            let pa = self.vertices[a as usize];
            let pb = self.vertices[b as usize];
            let pc = self.vertices[c as usize];
            let tri_area = 0.5 * (pb - pa).cross(&(pc - pa)).norm();
            area[a as usize] += tri_area;
            area[b as usize] += tri_area;
            area[c as usize] += tri_area;
        }
        area
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.vertices.first()?;
        let mut min = first;
        let mut max = first;
        for v in &self.vertices[1..] {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        Some((min, max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_mesh() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_face() {
        let err = TriMesh::new(vec![Point3::origin()], vec![[0, 0, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::Invariant(_)));
    }

    #[test]
    fn rejects_degenerate_face() {
        let verts = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        let err = TriMesh::new(verts, vec![[0, 1, 0]]).unwrap_err();
        assert!(matches!(err, MeshError::Invariant(_)));
    }

    #[test]
    fn rejects_non_finite_vertex() {
        let err = TriMesh::new(vec![Point3::new(f64::NAN, 0.0, 0.0)], vec![]).unwrap_err();
        assert!(matches!(err, MeshError::Invariant(_)));
    }

    #[test]
    fn mirror_is_an_involution() {
        let m = quad_mesh();
        let twice = m.mirror_x().mirror_x();
        assert_eq!(m, twice);
    }

    #[test]
    fn mirror_flips_winding() {
        let m = quad_mesh();
        let mirrored = m.mirror_x();
        assert_eq!(mirrored.faces()[0], [0, 2, 1]);
        // Face normal still points along +z after mirroring.
        let [a, b, c] = mirrored.triangle(0);
        let n = (b - a).cross(&(c - a));
        assert!(n.z > 0.0);
    }

    #[test]
    fn normals_of_flat_quad_point_up() {
        let m = quad_mesh();
        for n in m.vertex_normals() {
            assert!((n - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        }
    }
}
