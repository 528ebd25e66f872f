//! Non-rigid registration of the template grid onto a target surface.
//!
//! Each iteration pulls every template vertex toward its closest point on the
//! target, then smooths the displacement field by solving a screened-Laplacian
//! system with Gauss–Seidel sweeps. The smoothing weight decays geometrically
//! over the iterations, so early steps move the template as a near-rigid
//! whole while late steps recover local detail. A fit whose median residual
//! exceeds the tolerance is rejected as diverged.

use super::template::template_adjacency;
use super::CorrespondedMesh;
use crate::eval::median;
use crate::mesh::{Bvh, MeshError, TriMesh};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error(
        "registration diverged: median residual {median_residual:.3} mm exceeds tolerance {tolerance:.3} mm"
    )]
    Diverged {
        median_residual: f64,
        tolerance: f64,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Closest-point / smoothing rounds.
    pub iterations: usize,
    /// Smoothing weight at the first iteration (rigid-ish).
    pub smoothing_start: f64,
    /// Smoothing weight at the last iteration (detail-preserving).
    pub smoothing_end: f64,
    /// Gauss–Seidel sweeps per iteration.
    pub smoothing_sweeps: usize,
    /// Maximum acceptable median surface residual (mm).
    pub tolerance: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            smoothing_start: 10.0,
            smoothing_end: 0.1,
            smoothing_sweeps: 8,
            tolerance: 0.5,
        }
    }
}

/// A successful template fit.
#[derive(Debug, Clone)]
pub struct Registration {
    /// Template vertices after deformation, in correspondence with the grid.
    pub mesh: CorrespondedMesh,
    /// Median distance from the fitted vertices to the target surface (mm).
    pub median_residual: f64,
}

/// Deforms `template` onto `target` and returns the corresponded result.
///
/// The template must already be roughly aligned with the target (both in the
/// canonical pose); registration only recovers non-rigid shape differences.
pub fn fit_template(
    template: &CorrespondedMesh,
    target: &TriMesh,
    cfg: &RegistrationConfig,
) -> Result<Registration, RegistrationError> {
    let bvh = Bvh::build(target)?;
    let adjacency = template_adjacency();
    let n = template.vertices().len();
    let mut vertices = template.vertices().to_vec();
    let mut pull = vec![Vector3::zeros(); n];
    let mut disp = vec![Vector3::zeros(); n];

    let steps = cfg.iterations.max(1);
    for it in 0..steps {
        let f = if steps > 1 {
            it as f64 / (steps - 1) as f64
        } else {
            1.0
        };
        let lambda = cfg.smoothing_start * (cfg.smoothing_end / cfg.smoothing_start).powf(f);

        for (i, v) in vertices.iter().enumerate() {
            pull[i] = bvh.closest_point(v).point - v;
        }
        // Solve (I + λ·L)·d = pull for the displacement field d, where L is
        // the combinatorial graph Laplacian of the grid.
        disp.copy_from_slice(&pull);
        for _ in 0..cfg.smoothing_sweeps {
            for i in 0..n {
                let neighbors = &adjacency[i];
                let mut sum = Vector3::zeros();
                for &j in neighbors {
                    sum += disp[j as usize];
                }
                disp[i] = (pull[i] + lambda * sum) / (1.0 + lambda * neighbors.len() as f64);
            }
        }
        for (v, d) in vertices.iter_mut().zip(&disp) {
            *v += *d;
        }
    }

    let residuals: Vec<f64> = vertices
        .iter()
        .map(|v| bvh.closest_point(v).distance)
        .collect();
    let median_residual = median(&residuals);
    if !median_residual.is_finite() || median_residual > cfg.tolerance {
        return Err(RegistrationError::Diverged {
            median_residual,
            tolerance: cfg.tolerance,
        });
    }
    let mesh = CorrespondedMesh::from_vertices(vertices).map_err(|_| {
        RegistrationError::Diverged {
            median_residual: f64::INFINITY,
            tolerance: cfg.tolerance,
        }
    })?;
    Ok(Registration {
        mesh,
        median_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::canonical_template;
    use nalgebra::Point3;

    #[test]
    fn recovers_a_scaled_copy() {
        let template = canonical_template();
        let mut target = template.to_mesh();
        let scaled: Vec<Point3<f64>> = target
            .vertices()
            .iter()
            .map(|v| Point3::from(v.coords * 1.1))
            .collect();
        target.set_vertices(scaled).unwrap();

        let reg = fit_template(template, &target, &RegistrationConfig::default()).unwrap();
        assert!(
            reg.median_residual < 0.05,
            "median residual {} mm",
            reg.median_residual
        );
        // Closest-point pulls are surface-normal, so the tangential part of a
        // scaling (sliding along the shaft) is only partially recovered; the
        // drift just has to stay bounded. Normal-direction deformations — the
        // case that matters for socket fitting — are covered separately below.
        let drift: Vec<f64> = reg
            .mesh
            .vertices()
            .iter()
            .zip(target.vertices())
            .map(|(v, t)| (v - t).norm())
            .collect();
        let med = median(&drift);
        let worst = drift.iter().cloned().fold(0.0, f64::max);
        assert!(med < 12.0, "median correspondence drift {med} mm");
        assert!(worst < 30.0, "worst correspondence drift {worst} mm");
    }

    #[test]
    fn chained_fit_recovers_normal_deformation() {
        // Second registration stage: the fitted scan is deformed onto the
        // socket. Socket rectifications are local, near-normal displacements,
        // which closest-point matching recovers with little sliding — this is
        // what keeps scan and socket vertices in correspondence.
        let scan = canonical_template();
        let scan_mesh = scan.to_mesh();
        let normals = scan_mesh.vertex_normals();
        let target_verts: Vec<Point3<f64>> = scan_mesh
            .vertices()
            .iter()
            .zip(&normals)
            .map(|(v, n)| {
                // Smooth inward press around a mid-shaft anterior spot.
                let weight = (-((v.z + 80.0) / 25.0).powi(2) - ((v.x) / 25.0).powi(2)).exp();
                let amount = if v.y < 0.0 { -3.0 * weight } else { 0.0 };
                v + n * amount
            })
            .collect();
        let mut target = scan_mesh.clone();
        target.set_vertices(target_verts.clone()).unwrap();

        let reg = fit_template(scan, &target, &RegistrationConfig::default()).unwrap();
        assert!(reg.median_residual < 0.05);
        let drift: Vec<f64> = reg
            .mesh
            .vertices()
            .iter()
            .zip(&target_verts)
            .map(|(v, t)| (v - t).norm())
            .collect();
        let med = median(&drift);
        assert!(med < 0.5, "median correspondence drift {med} mm");
    }

    #[test]
    fn identity_fit_is_tight() {
        let template = canonical_template();
        let target = template.to_mesh();
        let reg = fit_template(template, &target, &RegistrationConfig::default()).unwrap();
        assert!(reg.median_residual < 1e-6);
        for (v, t) in reg.mesh.vertices().iter().zip(target.vertices()) {
            assert!((v - t).norm() < 1e-3);
        }
    }

    #[test]
    fn residual_above_tolerance_diverges() {
        let template = canonical_template();
        let mut target = template.to_mesh();
        let scaled: Vec<Point3<f64>> = target
            .vertices()
            .iter()
            .map(|v| Point3::from(v.coords * 1.1))
            .collect();
        target.set_vertices(scaled).unwrap();
        // A non-trivial deformation can never hit a zero tolerance.
        let cfg = RegistrationConfig {
            tolerance: 1e-12,
            ..Default::default()
        };
        match fit_template(template, &target, &cfg) {
            Err(RegistrationError::Diverged {
                median_residual,
                tolerance,
            }) => {
                assert!(median_residual > tolerance);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_target_is_a_mesh_error() {
        let template = canonical_template();
        let empty = TriMesh::new(vec![Point3::origin()], vec![]).unwrap();
        assert!(matches!(
            fit_template(template, &empty, &RegistrationConfig::default()),
            Err(RegistrationError::Mesh(MeshError::EmptyMesh))
        ));
    }
}
