//! Bounding-volume hierarchy for closest-point queries.
//!
//! Axis-aligned boxes, median split on the longest centroid axis. Queries are
//! branch-and-bound and always return the same distance as an exhaustive scan
//! over all faces; the tree only prunes triangles that provably cannot win.

use super::queries::{closest_point_on_triangle, SurfaceHit};
use super::{MeshError, TriMesh};
use nalgebra::Point3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    /// Squared distance from `p` to the box (zero inside).
    fn distance_sq(&self, p: &Point3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = p[k];
            if v < self.min[k] {
                d += (self.min[k] - v) * (self.min[k] - v);
            } else if v > self.max[k] {
                d += (v - self.max[k]) * (v - self.max[k]);
            }
        }
        d
    }
}

#[derive(Debug)]
struct Node {
    aabb: Aabb,
    /// Child node indices for internal nodes.
    children: Option<(u32, u32)>,
    /// Range into `order` for leaves.
    start: u32,
    count: u32,
}

/// BVH over the faces of a mesh. Holds its own copy of the triangle corners
/// so queries touch contiguous memory.
#[derive(Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    triangles: Vec<[Point3<f64>; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Self, MeshError> {
        if mesh.face_count() == 0 {
            return Err(MeshError::EmptyMesh);
        }
        let triangles: Vec<[Point3<f64>; 3]> =
            (0..mesh.face_count()).map(|f| mesh.triangle(f)).collect();
        let centroids: Vec<Point3<f64>> = triangles
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: Vec::new(),
            triangles,
        };
        bvh.split(&mut order, 0, &centroids);
        bvh.order = order;
        Ok(bvh)
    }

    /// Builds the subtree over `order[start..]`, returning its node index.
    fn split(&mut self, order: &mut [u32], start: usize, centroids: &[Point3<f64>]) -> u32 {
        let mut aabb = Aabb::empty();
        for &t in order.iter() {
            for corner in &self.triangles[t as usize] {
                aabb.grow(corner);
            }
        }
        let node_idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            aabb,
            children: None,
            start: start as u32,
            count: order.len() as u32,
        });
        if order.len() <= LEAF_SIZE {
            return node_idx;
        }

        let mut cmin = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut cmax = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &t in order.iter() {
            let c = centroids[t as usize];
            for k in 0..3 {
                cmin[k] = cmin[k].min(c[k]);
                cmax[k] = cmax[k].max(c[k]);
            }
        }
        let extents = cmax - cmin;
        let axis = if extents.x >= extents.y && extents.x >= extents.z {
            0
        } else if extents.y >= extents.z {
            1
        } else {
            2
        };
        // Ties broken by face index keeps builds deterministic.
        order.sort_unstable_by(|&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let mid = order.len() / 2;
        let (left, right) = order.split_at_mut(mid);
        let l = self.split(left, start, centroids);
        let r = self.split(right, start + mid, centroids);
        self.nodes[node_idx as usize].children = Some((l, r));
        node_idx
    }

    /// Closest point on the mesh surface to `p`. Exact: matches the
    /// exhaustive per-face scan.
    pub fn closest_point(&self, p: &Point3<f64>) -> SurfaceHit {
        let mut best = SurfaceHit {
            point: *p,
            distance: f64::INFINITY,
            face: 0,
        };
        let mut best_sq = f64::INFINITY;
        let mut stack = vec![0u32];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx as usize];
            if node.aabb.distance_sq(p) > best_sq {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    // Visit the nearer child first for tighter early bounds.
                    let dl = self.nodes[l as usize].aabb.distance_sq(p);
                    let dr = self.nodes[r as usize].aabb.distance_sq(p);
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    let start = node.start as usize;
                    let end = start + node.count as usize;
                    for &t in &self.order[start..end] {
                        let [a, b, c] = self.triangles[t as usize];
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d_sq = (p - q).norm_squared();
                        if d_sq < best_sq {
                            best_sq = d_sq;
                            best = SurfaceHit {
                                point: q,
                                distance: d_sq.sqrt(),
                                face: t as usize,
                            };
                        }
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::closest_point_on_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Random triangle soup within a box.
    fn random_mesh(rng: &mut ChaCha12Rng, faces: usize) -> TriMesh {
        let mut vertices = Vec::new();
        let mut face_list = Vec::new();
        for f in 0..faces {
            for _ in 0..3 {
                vertices.push(Point3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ));
            }
            let base = (f * 3) as u32;
            face_list.push([base, base + 1, base + 2]);
        }
        TriMesh::new(vertices, face_list).unwrap()
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mesh = random_mesh(&mut rng, 200);
        let bvh = Bvh::build(&mesh).unwrap();
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
            );
            let fast = bvh.closest_point(&p);
            let slow = closest_point_on_mesh(&mesh, &p).unwrap();
            assert!(
                (fast.distance - slow.distance).abs() < 1e-9,
                "bvh {} vs scan {}",
                fast.distance,
                slow.distance
            );
        }
    }

    #[test]
    fn single_face_mesh() {
        let mesh = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh).unwrap();
        let hit = bvh.closest_point(&Point3::new(0.25, 0.25, 1.0));
        assert!((hit.distance - 1.0).abs() < 1e-12);
        assert_eq!(hit.face, 0);
    }

    #[test]
    fn empty_mesh_rejected() {
        let m = TriMesh::new(vec![Point3::origin()], vec![]).unwrap();
        assert!(matches!(Bvh::build(&m), Err(MeshError::EmptyMesh)));
    }
}
