//! Closest-point queries and surface distance metrics.

use super::{Bvh, MeshError, TriMesh};
use nalgebra::Point3;

/// Result of a closest-point query against a mesh surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// Closest point on the surface.
    pub point: Point3<f64>,
    /// Euclidean distance from the query to `point`, in mm.
    pub distance: f64,
    /// Index of the face containing `point`.
    pub face: usize,
}

/// Closest point to `p` on triangle `(a, b, c)`, handling all vertex, edge
/// and interior regions (Ericson, *Real-Time Collision Detection*).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
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
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Closest point on `mesh` to `p` by exhaustive scan over all faces.
///
/// The BVH query must always agree with this; it exists as the reference
/// implementation and for small meshes where building a BVH is not worth it.
pub fn closest_point_on_mesh(mesh: &TriMesh, p: &Point3<f64>) -> Result<SurfaceHit, MeshError> {
    if mesh.face_count() == 0 {
        return Err(MeshError::EmptyMesh);
    }
    let mut best = SurfaceHit {
        point: *p,
        distance: f64::INFINITY,
        face: 0,
    };
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.triangle(f);
        let q = closest_point_on_triangle(p, &a, &b, &c);
        let d = (p - q).norm();
        if d < best.distance {
            best = SurfaceHit {
                point: q,
                distance: d,
                face: f,
            };
        }
    }
    Ok(best)
}

/// Per-vertex distances from each vertex of `source` to the surface of
/// `target` (unsigned, mm).
pub fn surface_to_surface(source: &TriMesh, target: &TriMesh) -> Result<Vec<f64>, MeshError> {
    let bvh = Bvh::build(target)?;
    Ok(source
        .vertices()
        .iter()
        .map(|v| bvh.closest_point(v).distance)
        .collect())
}

/// Signed variant of [`surface_to_surface`]: positive where the source vertex
/// lies on the outward side of the closest target face, negative inside.
pub fn surface_to_surface_signed(
    source: &TriMesh,
    target: &TriMesh,
) -> Result<Vec<f64>, MeshError> {
    let bvh = Bvh::build(target)?;
    Ok(source
        .vertices()
        .iter()
        .map(|v| {
            let hit = bvh.closest_point(v);
            let [a, b, c] = target.triangle(hit.face);
            let n = (b - a).cross(&(c - a));
            let side = (v - hit.point).dot(&n);
            if side < 0.0 {
                -hit.distance
            } else {
                hit.distance
            }
        })
        .collect())
}

/// Vertex-wise Euclidean distances between two meshes in correspondence,
/// plus their mean. Fails when the vertex counts differ.
pub fn euclidean_vertex_distance(
    a: &[Point3<f64>],
    b: &[Point3<f64>],
) -> Result<(Vec<f64>, f64), MeshError> {
    if a.len() != b.len() {
        return Err(MeshError::TopologyMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MeshError::Invariant("no vertices to compare".into()));
    }
    let dists: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q).norm()).collect();
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    Ok((dists, mean))
}
