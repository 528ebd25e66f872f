//! Dataset manifest: the JSON index that ties stump/socket mesh files,
//! landmark annotations and limb side together.
//!
//! ```json
//! {
//!   "samples": [
//!     {
//!       "id": "s0001",
//!       "stump_path": "s0001_stump.ply",
//!       "socket_path": "s0001_socket.ply",
//!       "side": "L",
//!       "landmarks": [
//!         { "mid_patella": [x, y, z], "tibia_end": [x, y, z] }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Mesh paths are resolved relative to the manifest's directory. Each sample
//! carries one to three landmark annotations (one per rater); consumers work
//! with their per-axis average.

use super::{LandmarkPair, PreprocessError, ScanPair, Side};
use crate::mesh::load_mesh;
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestLandmarks {
    pub mid_patella: [f64; 3],
    pub tibia_end: [f64; 3],
}

impl From<LandmarkPair> for ManifestLandmarks {
    fn from(lm: LandmarkPair) -> Self {
        Self {
            mid_patella: lm.mid_patella.coords.into(),
            tibia_end: lm.tibia_end.coords.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub stump_path: String,
    pub socket_path: String,
    pub side: Side,
    pub landmarks: Vec<ManifestLandmarks>,
}

impl ManifestEntry {
    /// Per-axis average of the rater annotations.
    pub fn averaged_landmarks(&self) -> LandmarkPair {
        let n = self.landmarks.len() as f64;
        let mut mid = [0.0; 3];
        let mut end = [0.0; 3];
        for lm in &self.landmarks {
            for k in 0..3 {
                mid[k] += lm.mid_patella[k] / n;
                end[k] += lm.tibia_end[k] / n;
            }
        }
        LandmarkPair {
            mid_patella: Point3::from(mid),
            tibia_end: Point3::from(end),
        }
    }

    /// Loads the meshes referenced by this entry, resolving paths relative to
    /// `base_dir` (the manifest's directory).
    pub fn load_pair(&self, base_dir: &Path) -> Result<ScanPair, PreprocessError> {
        let stump = load_mesh(&base_dir.join(&self.stump_path))?;
        let socket = load_mesh(&base_dir.join(&self.socket_path))?;
        let landmarks = self.averaged_landmarks();
        landmarks.validate()?;
        Ok(ScanPair {
            stump,
            socket,
            landmarks,
            side: self.side,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PreprocessError::Manifest(format!("manifest not found: {}", path.display()))
            } else {
                PreprocessError::Io(e)
            }
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), PreprocessError> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.samples.is_empty() {
            return Err(PreprocessError::Manifest("no samples".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if s.id.is_empty() {
                return Err(PreprocessError::Manifest("sample with empty id".into()));
            }
            if !seen.insert(&s.id) {
                return Err(PreprocessError::Manifest(format!(
                    "duplicate sample id '{}'",
                    s.id
                )));
            }
            if s.stump_path.is_empty() || s.socket_path.is_empty() {
                return Err(PreprocessError::Manifest(format!(
                    "sample '{}' has an empty mesh path",
                    s.id
                )));
            }
            if s.landmarks.is_empty() || s.landmarks.len() > 3 {
                return Err(PreprocessError::Manifest(format!(
                    "sample '{}' has {} landmark annotations (expected 1–3)",
                    s.id,
                    s.landmarks.len()
                )));
            }
        }
        Ok(())
    }
}
