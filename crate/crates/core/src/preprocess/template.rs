//! The shared socket/limb template: a cylindrical grid of 48 angular segments
//! by 70 rings plus a distal apex vertex (3361 vertices, 6672 faces), open at
//! the proximal trimline.
//!
//! Ring `r` lies at height `z = −length·r/70`; the apex sits on the centreline
//! at `z = −length`, so the grid spans exactly `length` millimetres. Segment
//! `s` sits at angle `2πs/48`, with segment 36 (the −y direction) facing
//! anteriorly.

use super::LandmarkPair;
use crate::mesh::TriMesh;
use nalgebra::Point3;
use std::sync::OnceLock;

pub const TEMPLATE_SEGMENTS: usize = 48;
pub const TEMPLATE_RINGS: usize = 70;
pub const TEMPLATE_VERTEX_COUNT: usize = TEMPLATE_SEGMENTS * TEMPLATE_RINGS + 1;
pub const TEMPLATE_FACE_COUNT: usize = 2 * TEMPLATE_SEGMENTS * (TEMPLATE_RINGS - 1) + TEMPLATE_SEGMENTS;
/// Index of the distal apex vertex.
pub const APEX_INDEX: usize = TEMPLATE_VERTEX_COUNT - 1;

/// Grid segment facing anteriorly (angle 3π/2, the −y direction).
pub const ANTERIOR_SEGMENT: usize = 36;
/// Ring holding the mid-patella landmark, just below the proximal rim.
pub const MID_PATELLA_RING: usize = 7;
/// Height of the tibia-end landmark above the apex, along the centreline (mm).
pub const TIBIA_END_OFFSET: f64 = 25.0;

/// Vertex index of grid position (ring, segment).
pub fn grid_index(ring: usize, segment: usize) -> usize {
    ring * TEMPLATE_SEGMENTS + segment % TEMPLATE_SEGMENTS
}

/// The fixed face list shared by every mesh on the template grid. Quads
/// between consecutive rings are split into two triangles; the last ring fans
/// into the apex. Winding is outward.
pub fn template_faces() -> &'static [[u32; 3]] {
    static FACES: OnceLock<Vec<[u32; 3]>> = OnceLock::new();
    FACES.get_or_init(|| {
        let mut faces = Vec::with_capacity(TEMPLATE_FACE_COUNT);
        for r in 0..TEMPLATE_RINGS - 1 {
            for s in 0..TEMPLATE_SEGMENTS {
                let a = grid_index(r, s) as u32;
                let b = grid_index(r, s + 1) as u32;
                let c = grid_index(r + 1, s + 1) as u32;
                let d = grid_index(r + 1, s) as u32;
                faces.push([a, d, c]);
                faces.push([a, c, b]);
            }
        }
        for s in 0..TEMPLATE_SEGMENTS {
            let a = grid_index(TEMPLATE_RINGS - 1, s) as u32;
            let b = grid_index(TEMPLATE_RINGS - 1, s + 1) as u32;
            faces.push([a, APEX_INDEX as u32, b]);
        }
        debug_assert_eq!(faces.len(), TEMPLATE_FACE_COUNT);
        faces
    })
}

/// Vertex adjacency (edge neighbours) of the template grid, used by the
/// registration smoother.
pub fn template_adjacency() -> &'static [Vec<u32>] {
    static ADJ: OnceLock<Vec<Vec<u32>>> = OnceLock::new();
    ADJ.get_or_init(|| {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); TEMPLATE_VERTEX_COUNT];
        let mut add = |a: u32, b: u32| {
            if !adj[a as usize].contains(&b) {
                adj[a as usize].push(b);
            }
        };
        for f in template_faces() {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                add(a, b);
                add(b, a);
            }
        }
        for n in &mut adj {
            n.sort_unstable();
        }
        adj
    })
}

/// Parametric stump surface on the template grid. `t ∈ [0, 1]` runs from the
/// proximal rim to the apex; `theta` is the angle around the centreline.
#[derive(Debug, Clone, PartialEq)]
pub struct StumpShape {
    /// Proximal rim to distal end, mm.
    pub length: f64,
    /// Circumference at the proximal rim, mm.
    pub proximal_circumference: f64,
    /// Fraction of the rim radius lost by the distal end.
    pub taper: f64,
    /// Amplitude of the anterior tibial-crest ridge, mm.
    pub ridge_height: f64,
    /// Posterior bow of the centreline, mm.
    pub bow: f64,
}

impl StumpShape {
    /// Population-average shape.
    pub fn mean() -> Self {
        Self {
            length: 209.0,
            proximal_circumference: 349.0,
            taper: 0.28,
            ridge_height: 4.0,
            bow: 4.0,
        }
    }

    /// Rim radius implied by the proximal circumference.
    pub fn rim_radius(&self) -> f64 {
        self.proximal_circumference / (2.0 * std::f64::consts::PI)
    }

    /// Surface radius at parameter `t` and angle `theta`.
    pub fn radius(&self, t: f64, theta: f64) -> f64 {
        let base = self.rim_radius() * (1.0 - self.taper * t);
        base * distal_dome(t) + self.ridge_height * ridge_profile(t, theta)
    }

    /// Centreline offset `(cx, cy)` at parameter `t`.
    pub fn center(&self, t: f64) -> (f64, f64) {
        (0.0, self.bow * (std::f64::consts::PI * t).sin())
    }

    /// Builds the grid vertices and true landmarks for this shape.
    pub fn build(&self) -> (Vec<Point3<f64>>, LandmarkPair) {
        self.build_with_extra(|_, _| 0.0)
    }

    /// Builds the grid with an additional radius term (used by the synthetic
    /// generator to layer seeded shape noise on top of the parametric form).
    pub fn build_with_extra(
        &self,
        extra_radius: impl Fn(f64, f64) -> f64,
    ) -> (Vec<Point3<f64>>, LandmarkPair) {
        let mut vertices = Vec::with_capacity(TEMPLATE_VERTEX_COUNT);
        for r in 0..TEMPLATE_RINGS {
            let t = r as f64 / TEMPLATE_RINGS as f64;
            let (cx, cy) = self.center(t);
            let z = -self.length * t;
            for s in 0..TEMPLATE_SEGMENTS {
                let theta = 2.0 * std::f64::consts::PI * s as f64 / TEMPLATE_SEGMENTS as f64;
                let radius = (self.radius(t, theta) + extra_radius(t, theta)).max(1.0);
                vertices.push(Point3::new(
                    cx + radius * theta.cos(),
                    cy + radius * theta.sin(),
                    z,
                ));
            }
        }
        let (cx, cy) = self.center(1.0);
        vertices.push(Point3::new(cx, cy, -self.length));

        let mid_patella = vertices[grid_index(MID_PATELLA_RING, ANTERIOR_SEGMENT)];
        let t_end = (self.length - TIBIA_END_OFFSET) / self.length;
        let (ex, ey) = self.center(t_end);
        let tibia_end = Point3::new(ex, ey, -(self.length - TIBIA_END_OFFSET));
        (vertices, LandmarkPair { mid_patella, tibia_end })
    }

    /// Builds the full mesh (grid vertices plus the shared face list).
    pub fn build_mesh(&self) -> (TriMesh, LandmarkPair) {
        let (vertices, lm) = self.build();
        let mesh = TriMesh::new(vertices, template_faces().to_vec())
            .expect("template grid construction is always valid");
        (mesh, lm)
    }
}

/// Radial multiplier closing the distal end: 1 along the shaft, easing toward
/// a blunt rounded cap past t = 0.75.
fn distal_dome(t: f64) -> f64 {
    if t <= 0.75 {
        1.0
    } else {
        let u = (t - 0.75) / 0.25;
        (std::f64::consts::FRAC_PI_2 * u * 0.78).cos()
    }
}

/// Angular/axial envelope of the anterior tibial-crest ridge.
fn ridge_profile(t: f64, theta: f64) -> f64 {
    let anterior =
        2.0 * std::f64::consts::PI * ANTERIOR_SEGMENT as f64 / TEMPLATE_SEGMENTS as f64;
    let mut delta = theta - anterior;
    while delta > std::f64::consts::PI {
        delta -= 2.0 * std::f64::consts::PI;
    }
    while delta < -std::f64::consts::PI {
        delta += 2.0 * std::f64::consts::PI;
    }
    let angular = (-0.5 * (delta / 0.35).powi(2)).exp();
    let u = ((t - 0.05) / 0.85).clamp(0.0, 1.0);
    angular * (std::f64::consts::PI * u).sin()
}
