//! Surface-based evaluation of predicted sockets: per-sample distance
//! metrics, report aggregation and distance-map export.

use crate::mesh::{save_ply, surface_to_surface_signed, MeshError, TriMesh};
use crate::preprocess::CorrespondedMesh;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no records to aggregate")]
    Empty,
}

/// Median by linear interpolation; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    quartiles(values).median
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quartiles by linear interpolation at rank `(n−1)·q` over the sorted
/// values, e.g. `{1,2,3,4,5} → (2, 3, 4)`. NaN for an empty slice.
pub fn quartiles(values: &[f64]) -> Quartiles {
    if values.is_empty() {
        return Quartiles {
            q1: f64::NAN,
            median: f64::NAN,
            q3: f64::NAN,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let at = |q: f64| -> f64 {
        let pos = (sorted.len() - 1) as f64 * q;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
    }
}

/// Per-vertex scalar field over a mesh, typically surface distances in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMap {
    pub values: Vec<f64>,
    /// Whether values carry a sign (positive outside the reference surface).
    pub signed: bool,
}

/// Metrics for one predicted socket against its ground truth.
#[derive(Debug, Clone)]
pub struct SampleEvaluation {
    /// Signed per-vertex distances from the prediction to the truth surface.
    pub map: DistanceMap,
    pub median_mm: f64,
    pub q1_mm: f64,
    pub q3_mm: f64,
    /// Vertex-wise mean Euclidean distance; present when the truth shares the
    /// template topology.
    pub mean_euclidean_mm: Option<f64>,
}

/// Evaluates a predicted socket against the true socket surface.
///
/// Surface-to-surface metrics never assume correspondence; the Euclidean
/// metric is added when the truth has the same vertex count.
pub fn evaluate_prediction(
    prediction: &CorrespondedMesh,
    truth: &TriMesh,
) -> Result<SampleEvaluation, EvalError> {
    let pred_mesh = prediction.to_mesh();
    let signed = surface_to_surface_signed(&pred_mesh, truth)?;
    let unsigned: Vec<f64> = signed.iter().map(|d| d.abs()).collect();
    let q = quartiles(&unsigned);
    let mean_euclidean_mm = if truth.vertex_count() == pred_mesh.vertex_count() {
        let (_, mean) =
            crate::mesh::euclidean_vertex_distance(pred_mesh.vertices(), truth.vertices())?;
        Some(mean)
    } else {
        None
    };
    Ok(SampleEvaluation {
        map: DistanceMap {
            values: signed,
            signed: true,
        },
        median_mm: q.median,
        q1_mm: q.q1,
        q3_mm: q.q3,
        mean_euclidean_mm,
    })
}

/// One evaluated sample inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Cross-validation fold this sample was held out in.
    pub fold: usize,
    pub median_mm: f64,
    pub q1_mm: f64,
    pub q3_mm: f64,
    pub mean_euclidean_mm: Option<f64>,
}

/// Distribution summary over a set of samples. The headline numbers are the
/// median and interquartile range of the per-sample medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub median_mm: f64,
    pub q1_mm: f64,
    pub q3_mm: f64,
    pub mean_of_medians_mm: f64,
    /// Mean of the per-sample Euclidean means, when all samples carry one.
    pub mean_euclidean_mm: Option<f64>,
}

/// Aggregates per-sample records; `Err(Empty)` for no records.
pub fn aggregate(records: &[SampleRecord]) -> Result<Aggregates, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let medians: Vec<f64> = records.iter().map(|r| r.median_mm).collect();
    let q = quartiles(&medians);
    let mean_of_medians = medians.iter().sum::<f64>() / medians.len() as f64;
    let euclid: Vec<f64> = records
        .iter()
        .filter_map(|r| r.mean_euclidean_mm)
        .collect();
    let mean_euclidean_mm = if euclid.len() == records.len() {
        Some(euclid.iter().sum::<f64>() / euclid.len() as f64)
    } else {
        None
    };
    Ok(Aggregates {
        n: records.len(),
        median_mm: q.median,
        q1_mm: q.q1,
        q3_mm: q.q3,
        mean_of_medians_mm: mean_of_medians,
        mean_euclidean_mm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub aggregates: Aggregates,
}

/// Full evaluation report: every sample, per-fold summaries, overall numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<SampleRecord>,
    pub folds: Vec<FoldSummary>,
    pub overall: Aggregates,
}

/// Builds a report from per-sample records, grouping fold summaries by the
/// records' fold indices.
pub fn build_report(records: Vec<SampleRecord>) -> Result<EvalReport, EvalError> {
    let overall = aggregate(&records)?;
    let mut fold_ids: Vec<usize> = records.iter().map(|r| r.fold).collect();
    fold_ids.sort_unstable();
    fold_ids.dedup();
    let mut folds = Vec::with_capacity(fold_ids.len());
    for fold in fold_ids {
        let subset: Vec<SampleRecord> = records
            .iter()
            .filter(|r| r.fold == fold)
            .cloned()
            .collect();
        folds.push(FoldSummary {
            fold,
            aggregates: aggregate(&subset)?,
        });
    }
    Ok(EvalReport {
        records,
        folds,
        overall,
    })
}

/// Indices of the best, middle and worst records by per-sample median
/// distance (original indices into `medians`).
pub fn triptych_indices(medians: &[f64]) -> Option<(usize, usize, usize)> {
    if medians.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..medians.len()).collect();
    order.sort_unstable_by(|&a, &b| medians[a].total_cmp(&medians[b]).then(a.cmp(&b)));
    let best = order[0];
    let mid = order[(order.len() - 1) / 2];
    let worst = order[order.len() - 1];
    Some((best, mid, worst))
}

/// Writes a distance map as a binary PLY with a per-vertex `quality`
/// property, plus a sidecar CSV (`vertex,distance_mm`) next to it.
pub fn export_distance_map(
    path: &Path,
    mesh: &TriMesh,
    map: &DistanceMap,
) -> Result<PathBuf, EvalError> {
    save_ply(path, mesh, Some(&map.values), true)?;
    let csv_path = path.with_extension("csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "vertex,distance_mm")?;
    for (i, v) in map.values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::load_ply;
    use crate::preprocess::canonical_template;
    use nalgebra::Point3;
    use tempfile::tempdir;

    #[test]
    fn quartiles_of_one_to_five() {
        let q = quartiles(&[5.0, 3.0, 1.0, 4.0, 2.0]);
        assert_eq!(q.q1, 2.0);
        assert_eq!(q.median, 3.0);
        assert_eq!(q.q3, 4.0);
    }

    #[test]
    fn quartiles_interpolate() {
        let q = quartiles(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(q.q1, 1.75);
        assert_eq!(q.median, 2.5);
        assert_eq!(q.q3, 3.25);
    }

    #[test]
    fn quartiles_of_singleton_and_empty() {
        let q = quartiles(&[7.0]);
        assert_eq!((q.q1, q.median, q.q3), (7.0, 7.0, 7.0));
        assert!(quartiles(&[]).median.is_nan());
    }

    #[test]
    fn evaluate_against_self_is_zero() {
        let template = canonical_template();
        let eval = evaluate_prediction(template, &template.to_mesh()).unwrap();
        assert!(eval.median_mm < 1e-9);
        assert_eq!(eval.mean_euclidean_mm.map(|v| v < 1e-9), Some(true));
        assert_eq!(eval.map.values.len(), 3361);
    }

    #[test]
    fn evaluate_offset_copy() {
        let template = canonical_template();
        let moved = CorrespondedMesh::from_vertices(
            template
                .vertices()
                .iter()
                .map(|v| Point3::new(v.x, v.y, v.z + 2.0))
                .collect(),
        )
        .unwrap();
        let eval = evaluate_prediction(&moved, &template.to_mesh()).unwrap();
        // Surface distance along the shaft is below the 2 mm offset (sliding
        // along the surface), but the Euclidean metric sees the full shift.
        assert!(eval.median_mm <= 2.0 + 1e-9);
        assert!(eval.median_mm > 0.1);
        let euclid = eval.mean_euclidean_mm.unwrap();
        assert!((euclid - 2.0).abs() < 1e-9);
    }

    #[test]
    fn aggregate_and_report() {
        let rec = |id: &str, fold: usize, m: f64| SampleRecord {
            id: id.into(),
            fold,
            median_mm: m,
            q1_mm: m - 0.5,
            q3_mm: m + 0.5,
            mean_euclidean_mm: Some(m + 1.0),
        };
        let records = vec![
            rec("a", 0, 1.0),
            rec("b", 0, 2.0),
            rec("c", 1, 3.0),
            rec("d", 1, 4.0),
            rec("e", 1, 5.0),
        ];
        let report = build_report(records).unwrap();
        assert_eq!(report.overall.n, 5);
        assert_eq!(report.overall.median_mm, 3.0);
        assert_eq!(report.overall.q1_mm, 2.0);
        assert_eq!(report.overall.q3_mm, 4.0);
        assert_eq!(report.overall.mean_of_medians_mm, 3.0);
        assert_eq!(report.overall.mean_euclidean_mm, Some(4.0));
        assert_eq!(report.folds.len(), 2);
        assert_eq!(report.folds[0].aggregates.n, 2);
        assert_eq!(report.folds[1].aggregates.n, 3);
    }

    #[test]
    fn aggregate_of_nothing_fails() {
        assert!(matches!(aggregate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn triptych_picks_extremes_and_middle() {
        let medians = [4.0, 1.0, 3.0, 2.0, 5.0];
        let (best, mid, worst) = triptych_indices(&medians).unwrap();
        assert_eq!(best, 1);
        assert_eq!(mid, 2);
        assert_eq!(worst, 4);
    }

    #[test]
    fn distance_map_round_trips_through_ply() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.ply");
        let template = canonical_template();
        let mesh = template.to_mesh();
        let map = DistanceMap {
            values: (0..mesh.vertex_count()).map(|i| i as f64 * 0.01 - 5.0).collect(),
            signed: true,
        };
        let csv = export_distance_map(&path, &mesh, &map).unwrap();
        let (back, quality) = load_ply(&path).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        let q = quality.unwrap();
        for (a, b) in q.iter().zip(&map.values) {
            assert!((a - b).abs() < 1e-6);
        }
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("vertex,distance_mm\n0,-5\n"));
    }

    #[test]
    fn report_json_is_stable() {
        let records = vec![SampleRecord {
            id: "s1".into(),
            fold: 0,
            median_mm: 1.5,
            q1_mm: 1.0,
            q3_mm: 2.0,
            mean_euclidean_mm: None,
        }];
        let report = build_report(records).unwrap();
        let a = serde_json::to_string_pretty(&report).unwrap();
        let b = serde_json::to_string_pretty(&report).unwrap();
        assert_eq!(a, b);
        let back: EvalReport = serde_json::from_str(&a).unwrap();
        assert_eq!(back, report);
    }
}
