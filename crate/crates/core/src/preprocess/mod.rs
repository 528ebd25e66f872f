//! Scan pre-processing: left/right normalisation, landmark-based
//! reorientation into a canonical pose, and template registration that puts
//! every stump and socket into vertex-wise correspondence on the shared grid.

mod manifest;
mod registration;
mod template;

pub use manifest::{Manifest, ManifestEntry, ManifestLandmarks};
pub use registration::{fit_template, Registration, RegistrationConfig, RegistrationError};
pub use template::{
    grid_index, template_adjacency, template_faces, StumpShape, ANTERIOR_SEGMENT, APEX_INDEX,
    MID_PATELLA_RING, TEMPLATE_FACE_COUNT, TEMPLATE_RINGS, TEMPLATE_SEGMENTS,
    TEMPLATE_VERTEX_COUNT, TIBIA_END_OFFSET,
};

use crate::mesh::{MeshError, TriMesh};
use nalgebra::{Isometry3, Point3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

/// Half-width of the cross-section band used to resolve the roll angle (mm).
pub const DEFAULT_COM_BAND: f64 = 5.0;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid landmarks: {0}")]
    BadLandmarks(String),
    #[error("no vertices within {band} mm of section z = {z}")]
    EmptySlice { z: f64, band: f64 },
    #[error("expected {expected} vertices on the template grid, got {got}")]
    WrongVertexCount { expected: usize, got: usize },
    #[error("mesh connectivity does not match the template grid")]
    WrongTopology,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The two anatomical landmarks every scan is annotated with, in the scan's
/// own frame (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPair {
    pub mid_patella: Point3<f64>,
    pub tibia_end: Point3<f64>,
}

impl LandmarkPair {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let all = [self.mid_patella, self.tibia_end];
        if all
            .iter()
            .any(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(PreprocessError::BadLandmarks(
                "non-finite coordinates".into(),
            ));
        }
        if (self.tibia_end - self.mid_patella).norm() < 1e-6 {
            return Err(PreprocessError::BadLandmarks(
                "mid-patella and tibia-end coincide".into(),
            ));
        }
        Ok(())
    }

    pub fn transform(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            mid_patella: iso * self.mid_patella,
            tibia_end: iso * self.tibia_end,
        }
    }

    pub fn mirror_x(&self) -> Self {
        let flip = |p: Point3<f64>| Point3::new(-p.x, p.y, p.z);
        Self {
            mid_patella: flip(self.mid_patella),
            tibia_end: flip(self.tibia_end),
        }
    }
}

/// Which limb a scan comes from. Right limbs are mirrored to the canonical
/// left side before any other processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

/// One training sample as it comes off disk: residual-limb scan, the socket
/// that was manufactured for it, landmarks (already rater-averaged) and side.
#[derive(Debug, Clone)]
pub struct ScanPair {
    pub stump: TriMesh,
    pub socket: TriMesh,
    pub landmarks: LandmarkPair,
    pub side: Side,
}

impl ScanPair {
    /// Mirrors everything across the YZ plane, turning a right limb into its
    /// left-side equivalent.
    pub fn mirrored(&self) -> Self {
        Self {
            stump: self.stump.mirror_x(),
            socket: self.socket.mirror_x(),
            landmarks: self.landmarks.mirror_x(),
            side: match self.side {
                Side::Left => Side::Right,
                Side::Right => Side::Left,
            },
        }
    }
}

/// Area-weighted centre of mass `(x, y)` of the vertices within `half_band`
/// mm of the plane `z = z0`. Each vertex is weighted by a third of its
/// summed incident face area.
pub fn cross_section_com(
    mesh: &TriMesh,
    z0: f64,
    half_band: f64,
) -> Result<(f64, f64), PreprocessError> {
    let areas = mesh.vertex_incident_area();
    let mut wx = 0.0;
    let mut wy = 0.0;
    let mut wsum = 0.0;
    for (v, &a) in mesh.vertices().iter().zip(&areas) {
        if (v.z - z0).abs() <= half_band {
            let w = a / 3.0;
            wx += w * v.x;
            wy += w * v.y;
            wsum += w;
        }
    }
    if wsum <= 0.0 {
        return Err(PreprocessError::EmptySlice {
            z: z0,
            band: half_band,
        });
    }
    Ok((wx / wsum, wy / wsum))
}

/// Rigid transform that brings a scan into the canonical pose:
///
/// 1. the mid-patella landmark moves to the origin,
/// 2. the mid-patella → tibia-end direction aligns with −z,
/// 3. the limb rolls about z until the centre of mass of the cross-section
///    at z = 0 lies on the +y half-axis.
pub fn reorientation_transform(
    mesh: &TriMesh,
    landmarks: &LandmarkPair,
    com_band: f64,
) -> Result<Isometry3<f64>, PreprocessError> {
    landmarks.validate()?;
    let axis = landmarks.tibia_end - landmarks.mid_patella;
    let down = -Vector3::z();
    let align = Rotation3::rotation_between(&axis, &down).unwrap_or_else(|| {
        // Antiparallel case: any half-turn perpendicular to the axis works.
        let perp = if axis.x.abs() < 0.9 * axis.norm() {
            axis.cross(&Vector3::x())
        } else {
            axis.cross(&Vector3::y())
        };
        Rotation3::from_axis_angle(&Unit::new_normalize(perp), std::f64::consts::PI)
    });

    let mut staged = mesh.clone();
    let stage = Isometry3::from_parts(
        Translation3::from(align * (-landmarks.mid_patella.coords)),
        UnitQuaternion::from_rotation_matrix(&align),
    );
    staged.transform(&stage);
    let (cx, cy) = cross_section_com(&staged, 0.0, com_band)?;
    let roll = cx.atan2(cy);
    let rotation = Rotation3::from_axis_angle(&Unit::new_unchecked(Vector3::z()), roll) * align;
    let translation = rotation * (-landmarks.mid_patella.coords);
    Ok(Isometry3::from_parts(
        Translation3::from(translation),
        UnitQuaternion::from_rotation_matrix(&rotation),
    ))
}

/// Reorients a scan pair into the canonical pose. The transform is computed
/// from the stump and applied to the stump, the socket and the landmarks.
pub fn reorient(
    pair: &ScanPair,
    com_band: f64,
) -> Result<(ScanPair, Isometry3<f64>), PreprocessError> {
    let iso = reorientation_transform(&pair.stump, &pair.landmarks, com_band)?;
    let mut out = pair.clone();
    out.stump.transform(&iso);
    out.socket.transform(&iso);
    out.landmarks = out.landmarks.transform(&iso);
    Ok((out, iso))
}

/// A mesh in vertex-wise correspondence with the template grid: 3361
/// vertices, connectivity given by [`template_faces`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondedMesh {
    vertices: Vec<Point3<f64>>,
}

impl CorrespondedMesh {
    pub fn from_vertices(vertices: Vec<Point3<f64>>) -> Result<Self, PreprocessError> {
        if vertices.len() != TEMPLATE_VERTEX_COUNT {
            return Err(PreprocessError::WrongVertexCount {
                expected: TEMPLATE_VERTEX_COUNT,
                got: vertices.len(),
            });
        }
        if vertices
            .iter()
            .any(|v| !v.coords.iter().all(|c| c.is_finite()))
        {
            return Err(PreprocessError::NonFinite("corresponded vertices".into()));
        }
        Ok(Self { vertices })
    }

    /// Accepts a mesh only if it already lives on the template grid.
    pub fn from_mesh(mesh: &TriMesh) -> Result<Self, PreprocessError> {
        if mesh.vertex_count() != TEMPLATE_VERTEX_COUNT {
            return Err(PreprocessError::WrongVertexCount {
                expected: TEMPLATE_VERTEX_COUNT,
                got: mesh.vertex_count(),
            });
        }
        if mesh.faces() != template_faces() {
            return Err(PreprocessError::WrongTopology);
        }
        Self::from_vertices(mesh.vertices().to_vec())
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn to_mesh(&self) -> TriMesh {
        TriMesh::new(self.vertices.clone(), template_faces().to_vec())
            .expect("corresponded vertices are validated on construction")
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| iso * *v).collect(),
        }
    }

    /// Row vector `[x0, y0, z0, x1, …]` of length 3·3361 = 10083.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * TEMPLATE_VERTEX_COUNT);
        for v in &self.vertices {
            out.extend_from_slice(&[v.x, v.y, v.z]);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, PreprocessError> {
        if flat.len() != 3 * TEMPLATE_VERTEX_COUNT {
            return Err(PreprocessError::WrongVertexCount {
                expected: TEMPLATE_VERTEX_COUNT,
                got: flat.len() / 3,
            });
        }
        let vertices = flat
            .chunks_exact(3)
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect();
        Self::from_vertices(vertices)
    }
}

/// Per-vertex displacement field turning a corresponded scan into the
/// matching socket: the "adaptations" a prosthetist applies.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationField {
    displacements: Vec<Vector3<f64>>,
}

impl AdaptationField {
    pub fn from_displacements(displacements: Vec<Vector3<f64>>) -> Result<Self, PreprocessError> {
        if displacements.len() != TEMPLATE_VERTEX_COUNT {
            return Err(PreprocessError::WrongVertexCount {
                expected: TEMPLATE_VERTEX_COUNT,
                got: displacements.len(),
            });
        }
        if displacements
            .iter()
            .any(|d| !d.iter().all(|c| c.is_finite()))
        {
            return Err(PreprocessError::NonFinite("adaptation field".into()));
        }
        Ok(Self { displacements })
    }

    pub fn displacements(&self) -> &[Vector3<f64>] {
        &self.displacements
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * TEMPLATE_VERTEX_COUNT);
        for d in &self.displacements {
            out.extend_from_slice(&[d.x, d.y, d.z]);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, PreprocessError> {
        if flat.len() != 3 * TEMPLATE_VERTEX_COUNT {
            return Err(PreprocessError::WrongVertexCount {
                expected: TEMPLATE_VERTEX_COUNT,
                got: flat.len() / 3,
            });
        }
        let displacements = flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Self::from_displacements(displacements)
    }
}

/// Vertex-wise difference socket − scan.
pub fn compute_adaptations(scan: &CorrespondedMesh, socket: &CorrespondedMesh) -> AdaptationField {
    AdaptationField {
        displacements: scan
            .vertices
            .iter()
            .zip(&socket.vertices)
            .map(|(s, k)| k - s)
            .collect(),
    }
}

/// Applies a displacement field to a corresponded scan, yielding the
/// predicted (or reconstructed) socket.
pub fn apply_adaptations(
    scan: &CorrespondedMesh,
    field: &AdaptationField,
) -> Result<CorrespondedMesh, PreprocessError> {
    CorrespondedMesh::from_vertices(
        scan.vertices
            .iter()
            .zip(&field.displacements)
            .map(|(s, d)| s + d)
            .collect(),
    )
}

/// Gaussian landmark-placement noise used to simulate annotation variability
/// between raters (mm, per axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkNoise {
    pub sigma_mid_patella: f64,
    pub sigma_tibia_end: f64,
    pub count: usize,
}

impl Default for LandmarkNoise {
    fn default() -> Self {
        Self {
            sigma_mid_patella: 3.0,
            sigma_tibia_end: 4.0,
            count: 25,
        }
    }
}

/// Draws `noise.count` perturbed copies of the landmarks. Deterministic for a
/// given seed; `count = 0` yields an empty vector.
pub fn sample_landmark_variants(
    landmarks: &LandmarkPair,
    noise: &LandmarkNoise,
    seed: u64,
) -> Result<Vec<LandmarkPair>, PreprocessError> {
    if noise.sigma_mid_patella < 0.0 || noise.sigma_tibia_end < 0.0 {
        return Err(PreprocessError::BadLandmarks(
            "negative landmark noise sigma".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mid = Normal::new(0.0, noise.sigma_mid_patella)
        .map_err(|e| PreprocessError::BadLandmarks(e.to_string()))?;
    let end = Normal::new(0.0, noise.sigma_tibia_end)
        .map_err(|e| PreprocessError::BadLandmarks(e.to_string()))?;
    let mut out = Vec::with_capacity(noise.count);
    for _ in 0..noise.count {
        let mut lm = *landmarks;
        for k in 0..3 {
            lm.mid_patella[k] += mid.sample(&mut rng);
        }
        for k in 0..3 {
            lm.tibia_end[k] += end.sample(&mut rng);
        }
        out.push(lm);
    }
    Ok(out)
}

/// The canonical template: the population-mean stump shape, reoriented into
/// the canonical pose by its own landmarks. Every registration starts here.
pub fn canonical_template() -> &'static CorrespondedMesh {
    static TEMPLATE: OnceLock<CorrespondedMesh> = OnceLock::new();
    TEMPLATE.get_or_init(|| {
        let (mut mesh, lm) = StumpShape::mean().build_mesh();
        let iso = reorientation_transform(&mesh, &lm, DEFAULT_COM_BAND)
            .expect("mean stump shape always reorients");
        mesh.transform(&iso);
        CorrespondedMesh::from_mesh(&mesh).expect("template grid is corresponded by construction")
    })
}

/// Pre-processing parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Half-width of the roll-resolving cross-section band (mm).
    pub com_band: f64,
    pub registration: RegistrationConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            com_band: DEFAULT_COM_BAND,
            registration: RegistrationConfig::default(),
        }
    }
}

/// A fully pre-processed training sample.
#[derive(Debug, Clone)]
pub struct PreprocessedPair {
    pub scan: CorrespondedMesh,
    pub socket: CorrespondedMesh,
    /// Transform that took the (mirrored-to-left) input into canonical pose.
    pub reorientation: Isometry3<f64>,
    /// Median surface distance of the fitted scan to its target (mm).
    pub scan_residual: f64,
    /// Median surface distance of the fitted socket to its target (mm).
    pub socket_residual: f64,
}

/// Runs the full pre-processing chain on one sample: mirror right limbs to
/// the left, reorient by landmarks, register the canonical template to the
/// stump, then register the fitted stump to the socket so both end up on the
/// same grid with matching vertex indices.
pub fn preprocess_pair(
    pair: &ScanPair,
    cfg: &PreprocessConfig,
) -> Result<PreprocessedPair, PreprocessError> {
    let working = match pair.side {
        Side::Left => pair.clone(),
        Side::Right => pair.mirrored(),
    };
    let (oriented, iso) = reorient(&working, cfg.com_band)?;
    let scan_reg = fit_template(canonical_template(), &oriented.stump, &cfg.registration)?;
    let socket_reg = fit_template(&scan_reg.mesh, &oriented.socket, &cfg.registration)?;
    Ok(PreprocessedPair {
        scan: scan_reg.mesh,
        socket: socket_reg.mesh,
        reorientation: iso,
        scan_residual: scan_reg.median_residual,
        socket_residual: socket_reg.median_residual,
    })
}
