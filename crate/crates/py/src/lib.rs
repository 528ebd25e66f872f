//! Python bindings: meshes, pre-processing, PCA, the random-forest regressor
//! and the synthetic-corpus / experiment drivers, mirroring the Rust API.
//!
//! All geometry is in millimetres. Points are `[x, y, z]` lists, matrices are
//! lists of rows.

use std::path::PathBuf;

use nalgebra::{DMatrix, Point3, Vector3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use socketfit_core::eval::evaluate_prediction;
use socketfit_core::experiment as exp;
use socketfit_core::mesh::{
    closest_point_on_mesh, load_mesh, save_mesh, surface_to_surface as s2s, TriMesh,
};
use socketfit_core::models::{
    ball_query as ball_query_rs, farthest_point_sampling, smooth_l1 as smooth_l1_rs, train_forest,
    Forest as ForestRs, ForestConfig, MaxFeatures,
};
use socketfit_core::pca::{PcaKind, PcaModel};
use socketfit_core::preprocess::{
    apply_adaptations as apply_adaptations_rs, canonical_template,
    compute_adaptations as compute_adaptations_rs, fit_template as fit_template_rs,
    preprocess_pair, CorrespondedMesh, LandmarkPair, PreprocessConfig, RegistrationConfig,
    ScanPair, Side,
};
use socketfit_core::synth::{generate_dataset, SynthConfig};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_points(coords: Vec<[f64; 3]>) -> Vec<Point3<f64>> {
    coords
        .into_iter()
        .map(|[x, y, z]| Point3::new(x, y, z))
        .collect()
}

fn from_points(points: &[Point3<f64>]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn to_matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} must not be empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!(
            "{what} rows must be non-empty and equally long"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn parse_side(side: &str) -> PyResult<Side> {
    match side {
        "L" | "l" | "left" => Ok(Side::Left),
        "R" | "r" | "right" => Ok(Side::Right),
        other => Err(PyValueError::new_err(format!(
            "side must be 'L' or 'R', got {other:?}"
        ))),
    }
}

fn corresponded(mesh: &Mesh, what: &str) -> PyResult<CorrespondedMesh> {
    CorrespondedMesh::from_mesh(&mesh.inner)
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

/// A triangle mesh: vertices in millimetres plus triangular faces.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Mesh {
    inner: TriMesh,
}

#[pymethods]
impl Mesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> PyResult<Self> {
        TriMesh::new(to_points(vertices), faces)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    /// Loads an OBJ, PLY or STL file (format by extension).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_mesh(&path).map(|inner| Self { inner }).map_err(io_err)
    }

    /// Saves as OBJ or PLY (format by extension).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_mesh(&path, &self.inner).map_err(io_err)
    }

    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        from_points(self.inner.vertices())
    }

    #[getter]
    fn faces(&self) -> Vec<[u32; 3]> {
        self.inner.faces().to_vec()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.inner.vertex_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.inner.face_count()
    }

    /// The mesh mirrored across the YZ plane.
    fn mirror_x(&self) -> Self {
        Self {
            inner: self.inner.mirror_x(),
        }
    }

    /// Axis-aligned bounds as `(min, max)`, or `None` for an empty mesh.
    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        self.inner
            .bounds()
            .map(|(lo, hi)| ([lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]))
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh({} vertices, {} faces)",
            self.inner.vertex_count(),
            self.inner.face_count()
        )
    }
}

/// The canonical socket/limb template grid (3361 vertices, 6672 faces).
#[pyfunction]
fn template() -> Mesh {
    Mesh {
        inner: canonical_template().to_mesh(),
    }
}

/// Closest surface point to `p`: returns `(point, distance_mm)`.
#[pyfunction]
fn closest_point(mesh: &Mesh, p: [f64; 3]) -> PyResult<([f64; 3], f64)> {
    let hit = closest_point_on_mesh(&mesh.inner, &Point3::new(p[0], p[1], p[2]))
        .map_err(value_err)?;
    Ok(([hit.point.x, hit.point.y, hit.point.z], hit.distance))
}

/// Distance from every `source` vertex to the `target` surface (mm).
#[pyfunction]
fn surface_to_surface(source: &Mesh, target: &Mesh) -> PyResult<Vec<f64>> {
    s2s(&source.inner, &target.inner).map_err(value_err)
}

/// Deforms the canonical template onto `target` (already in canonical pose);
/// returns the corresponded mesh and its median residual (mm).
#[pyfunction]
#[pyo3(signature = (target, iterations = 30, tolerance = 0.5))]
fn fit_template(target: &Mesh, iterations: usize, tolerance: f64) -> PyResult<(Mesh, f64)> {
    let cfg = RegistrationConfig {
        iterations,
        tolerance,
        ..RegistrationConfig::default()
    };
    let fit = fit_template_rs(canonical_template(), &target.inner, &cfg).map_err(value_err)?;
    Ok((
        Mesh {
            inner: fit.mesh.to_mesh(),
        },
        fit.median_residual,
    ))
}

/// A stump/socket pair brought into canonical pose and template
/// correspondence.
#[pyclass]
struct Preprocessed {
    /// Corresponded stump scan (3361 vertices).
    #[pyo3(get)]
    scan: Mesh,
    /// Corresponded socket (3361 vertices).
    #[pyo3(get)]
    socket: Mesh,
    /// Median registration residual of the scan fit (mm).
    #[pyo3(get)]
    scan_residual: f64,
    /// Median registration residual of the socket fit (mm).
    #[pyo3(get)]
    socket_residual: f64,
}

/// Mirrors right limbs to the left, reorients by the landmarks and registers
/// the template to both surfaces.
#[pyfunction]
#[pyo3(signature = (stump, socket, mid_patella, tibia_end, side = "L"))]
fn preprocess(
    stump: &Mesh,
    socket: &Mesh,
    mid_patella: [f64; 3],
    tibia_end: [f64; 3],
    side: &str,
) -> PyResult<Preprocessed> {
    let pair = ScanPair {
        stump: stump.inner.clone(),
        socket: socket.inner.clone(),
        landmarks: LandmarkPair {
            mid_patella: Point3::new(mid_patella[0], mid_patella[1], mid_patella[2]),
            tibia_end: Point3::new(tibia_end[0], tibia_end[1], tibia_end[2]),
        },
        side: parse_side(side)?,
    };
    let done = preprocess_pair(&pair, &PreprocessConfig::default()).map_err(value_err)?;
    Ok(Preprocessed {
        scan: Mesh {
            inner: done.scan.to_mesh(),
        },
        socket: Mesh {
            inner: done.socket.to_mesh(),
        },
        scan_residual: done.scan_residual,
        socket_residual: done.socket_residual,
    })
}

/// Per-vertex displacements socket − scan for two corresponded meshes.
#[pyfunction]
fn compute_adaptations(scan: &Mesh, socket: &Mesh) -> PyResult<Vec<[f64; 3]>> {
    let scan = corresponded(scan, "scan")?;
    let socket = corresponded(socket, "socket")?;
    let field = compute_adaptations_rs(&scan, &socket);
    Ok(field
        .displacements()
        .iter()
        .map(|d| [d.x, d.y, d.z])
        .collect())
}

/// Applies a displacement field to a corresponded scan, giving the socket.
#[pyfunction]
fn apply_adaptations(scan: &Mesh, displacements: Vec<[f64; 3]>) -> PyResult<Mesh> {
    let scan = corresponded(scan, "scan")?;
    let field = socketfit_core::preprocess::AdaptationField::from_displacements(
        displacements
            .into_iter()
            .map(|[x, y, z]| Vector3::new(x, y, z))
            .collect(),
    )
    .map_err(value_err)?;
    let socket = apply_adaptations_rs(&scan, &field).map_err(value_err)?;
    Ok(Mesh {
        inner: socket.to_mesh(),
    })
}

/// Surface-based error of a corresponded prediction against a ground-truth
/// mesh: dict with `median_mm`, `q1_mm`, `q3_mm` and (for equal vertex
/// counts) `mean_euclidean_mm`.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    prediction: &Mesh,
    truth: &Mesh,
) -> PyResult<Bound<'py, PyDict>> {
    let pred = corresponded(prediction, "prediction")?;
    let eval = evaluate_prediction(&pred, &truth.inner).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("median_mm", eval.median_mm)?;
    out.set_item("q1_mm", eval.q1_mm)?;
    out.set_item("q3_mm", eval.q3_mm)?;
    out.set_item("mean_euclidean_mm", eval.mean_euclidean_mm)?;
    Ok(out)
}

/// Greedy farthest-point sampling; returns `k` indices starting at `start`.
#[pyfunction]
#[pyo3(signature = (points, k, start = 0))]
fn fps(points: Vec<[f64; 3]>, k: usize, start: usize) -> PyResult<Vec<u32>> {
    let points = to_points(points);
    if points.is_empty() || k == 0 || k > points.len() || start >= points.len() {
        return Err(PyValueError::new_err(
            "need 1 <= k <= len(points) and start < len(points)",
        ));
    }
    Ok(farthest_point_sampling(&points, k, start))
}

/// Fixed-size neighbourhoods of `radius` mm around each center index; groups
/// are padded to exactly `cap` members.
#[pyfunction]
fn ball_query(points: Vec<[f64; 3]>, centers: Vec<u32>, radius: f64, cap: usize) -> PyResult<Vec<u32>> {
    let points = to_points(points);
    if cap == 0 || centers.iter().any(|&c| c as usize >= points.len()) {
        return Err(PyValueError::new_err(
            "cap must be positive and centers must index into points",
        ));
    }
    Ok(ball_query_rs(&points, &centers, radius, cap))
}

/// Mean smooth-L1 loss between two equally shaped matrices.
#[pyfunction]
#[pyo3(signature = (prediction, truth, beta = 1.0))]
fn smooth_l1(prediction: Vec<Vec<f64>>, truth: Vec<Vec<f64>>, beta: f64) -> PyResult<f64> {
    let p = to_matrix(prediction, "prediction")?;
    let t = to_matrix(truth, "truth")?;
    if p.shape() != t.shape() {
        return Err(PyValueError::new_err("shapes differ"));
    }
    if beta <= 0.0 {
        return Err(PyValueError::new_err("beta must be positive"));
    }
    Ok(smooth_l1_rs(&p, &t, beta))
}

/// A PCA compression model for flattened shape vectors.
#[pyclass]
struct Pca {
    inner: PcaModel,
}

#[pymethods]
impl Pca {
    /// Fits a basis on `rows`, keeping the smallest number of components
    /// whose cumulative explained variance reaches `threshold`.
    #[staticmethod]
    #[pyo3(signature = (rows, threshold = 0.95, kind = "scan"))]
    fn fit(rows: Vec<Vec<f64>>, threshold: f64, kind: &str) -> PyResult<Self> {
        let kind = match kind {
            "scan" => PcaKind::Scan,
            "socket" => PcaKind::Socket,
            "adaptation" => PcaKind::Adaptation,
            other => {
                return Err(PyValueError::new_err(format!(
                    "kind must be scan|socket|adaptation, got {other:?}"
                )))
            }
        };
        let data = to_matrix(rows, "rows")?;
        PcaModel::fit(&data, threshold, kind)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn explained_ratio(&self) -> f64 {
        self.inner.explained_ratio()
    }

    /// Projects a shape vector onto the component basis.
    fn transform(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.transform(&x).map_err(value_err)
    }

    /// Reconstructs a shape vector from component coefficients.
    fn inverse(&self, coeffs: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.inverse(&coeffs).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        PcaModel::load(&path).map(|inner| Self { inner }).map_err(io_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Pca({} components over {} dims, {:.1}% explained)",
            self.inner.n_components(),
            self.inner.dim(),
            100.0 * self.inner.explained_ratio()
        )
    }
}

/// A multi-output random-forest regressor.
#[pyclass]
struct Forest {
    inner: ForestRs,
}

#[pymethods]
impl Forest {
    #[staticmethod]
    #[pyo3(signature = (
        features, targets, n_trees = 100, max_depth = 64, min_samples_split = 2,
        min_samples_leaf = 1, max_features = "sqrt", bootstrap = true, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        features: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        n_trees: usize,
        max_depth: usize,
        min_samples_split: usize,
        min_samples_leaf: usize,
        max_features: &str,
        bootstrap: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let max_features = match max_features {
            "sqrt" => MaxFeatures::Sqrt,
            "log2" => MaxFeatures::Log2,
            "all" => MaxFeatures::All,
            other => {
                return Err(PyValueError::new_err(format!(
                    "max_features must be sqrt|log2|all, got {other:?}"
                )))
            }
        };
        let config = ForestConfig {
            n_trees,
            max_depth,
            min_samples_split,
            min_samples_leaf,
            max_features,
            bootstrap,
            seed,
        };
        let x = to_matrix(features, "features")?;
        let y = to_matrix(targets, "targets")?;
        train_forest(&x, &y, &config)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    /// Predicts the targets for one feature row.
    fn predict(&self, row: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_one(&row).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(io_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ForestRs::load(&path).map(|inner| Self { inner }).map_err(io_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Forest({} features -> {} outputs)",
            self.inner.n_features(),
            self.inner.out_dim()
        )
    }
}

/// Writes a synthetic stump/socket corpus (meshes, rectification fields,
/// manifest) and returns the number of generated samples.
#[pyfunction]
#[pyo3(signature = (out_dir, n_samples = 118, seed = 0))]
fn synth_corpus(out_dir: PathBuf, n_samples: usize, seed: u64) -> PyResult<usize> {
    let config = SynthConfig {
        n_samples,
        seed,
        ..SynthConfig::default()
    };
    let manifest = generate_dataset(&config, &out_dir).map_err(value_err)?;
    Ok(manifest.samples.len())
}

/// Pre-processes a raw corpus directory into template correspondence;
/// returns `(kept_ids, failed_ids)`.
#[pyfunction]
fn preprocess_corpus(data_dir: PathBuf, out_dir: PathBuf) -> PyResult<(Vec<String>, Vec<String>)> {
    let outcome = exp::preprocess_corpus(&data_dir, &out_dir, &PreprocessConfig::default())
        .map_err(value_err)?;
    Ok((
        outcome.index.samples.iter().map(|s| s.id.clone()).collect(),
        outcome.failures.iter().map(|f| f.id.clone()).collect(),
    ))
}

/// Runs a cross-validated experiment on a pre-processed corpus. `config` is
/// a JSON object (same schema as the CLI accepts); artifacts are written to
/// `out_dir` and the evaluation report is returned as a JSON string.
#[pyfunction]
#[pyo3(signature = (corpus_dir, out_dir, config = None))]
fn run_experiment(corpus_dir: PathBuf, out_dir: PathBuf, config: Option<&str>) -> PyResult<String> {
    let config: exp::ExperimentConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => exp::ExperimentConfig::default(),
    };
    let corpus = exp::Corpus::load(&corpus_dir).map_err(value_err)?;
    let run = exp::run_experiment(&corpus, &config, &out_dir).map_err(value_err)?;
    serde_json::to_string_pretty(&run.report).map_err(value_err)
}

#[pymodule]
fn socketfit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<Preprocessed>()?;
    m.add_class::<Pca>()?;
    m.add_class::<Forest>()?;
    m.add_function(wrap_pyfunction!(template, m)?)?;
    m.add_function(wrap_pyfunction!(closest_point, m)?)?;
    m.add_function(wrap_pyfunction!(surface_to_surface, m)?)?;
    m.add_function(wrap_pyfunction!(fit_template, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(compute_adaptations, m)?)?;
    m.add_function(wrap_pyfunction!(apply_adaptations, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fps, m)?)?;
    m.add_function(wrap_pyfunction!(ball_query, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_l1, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
