//! Experiment harness: corpus pre-processing and persistence, seeded k-fold
//! cross-validation of the regressors, and the on-disk report layout.
//!
//! Everything here is bitwise deterministic in `(config, corpus)`: fold
//! assignment, per-fold training seeds, prediction and aggregation all derive
//! from the master seed, and reruns reproduce `report.json` byte for byte.

use crate::eval::{
    build_report, evaluate_prediction, EvalError, EvalReport, SampleRecord,
};
use crate::eval::DistanceMap;
use crate::mesh::{load_mesh, save_mesh, MeshError};
use crate::models::{
    ffnn_preset, forest_preset, pointset_compact_preset, pointset_preset, predict_socket,
    train_ffnn, train_forest, train_pointset, EpochLoss, Method, ModelError, OutputMode, PcaPair,
    PredictionTarget, Representation, TrainConfig, TrainedModel,
};
use crate::models::ForestConfig;
use crate::pca::{PcaError, PcaKind, PcaModel};
use crate::preprocess::{
    compute_adaptations, preprocess_pair, CorrespondedMesh, Manifest, PreprocessConfig,
    PreprocessError, Side,
};
use nalgebra::{DMatrix, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("dataset of {n} samples cannot be split into {k} folds")]
    DatasetTooSmall { n: usize, k: usize },
    #[error("prediction for sample {id} produced non-finite metrics")]
    NonFiniteMetrics { id: String },
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Pre-processed corpus on disk
// ---------------------------------------------------------------------------

/// Index entry for one pre-processed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndexEntry {
    pub id: String,
    pub scan_path: String,
    pub socket_path: String,
    pub side: Side,
    /// Median template-fit residual on the scan, mm.
    pub scan_residual: f64,
    /// Median template-fit residual on the socket, mm.
    pub socket_residual: f64,
}

/// `index.json` of a pre-processed corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub samples: Vec<CorpusIndexEntry>,
}

/// A sample that could not be pre-processed and was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessFailure {
    pub id: String,
    pub error: String,
}

/// Result of pre-processing a raw corpus: the index of everything that went
/// through, plus the samples that were skipped.
#[derive(Debug, Clone)]
pub struct PreprocessOutcome {
    pub index: CorpusIndex,
    pub failures: Vec<PreprocessFailure>,
}

/// Runs the pre-processing chain over every sample of a raw corpus and
/// writes the corresponded meshes, adaptation fields, residual log and index
/// under `out_dir`. Per-sample failures are recorded and skipped.
pub fn preprocess_corpus(
    data_dir: &Path,
    out_dir: &Path,
    cfg: &PreprocessConfig,
) -> Result<PreprocessOutcome, ExperimentError> {
    let manifest = Manifest::load(&data_dir.join("manifest.json"))?;
    manifest.validate()?;
    fs::create_dir_all(out_dir.join("corresponded"))?;
    fs::create_dir_all(out_dir.join("fields"))?;

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut residuals = String::from("id,scan_residual_mm,socket_residual_mm\n");

    for entry in &manifest.samples {
        let processed = entry
            .load_pair(data_dir)
            .and_then(|pair| preprocess_pair(&pair, cfg));
        let done = match processed {
            Ok(done) => done,
            Err(err) => {
                failures.push(PreprocessFailure {
                    id: entry.id.clone(),
                    error: err.to_string(),
                });
                continue;
            }
        };

        let scan_rel = format!("corresponded/{}_scan.ply", entry.id);
        let socket_rel = format!("corresponded/{}_socket.ply", entry.id);
        save_mesh(&out_dir.join(&scan_rel), &done.scan.to_mesh())?;
        save_mesh(&out_dir.join(&socket_rel), &done.socket.to_mesh())?;

        let field = compute_adaptations(&done.scan, &done.socket);
        let mut csv = String::from("vertex,dx,dy,dz\n");
        for (i, d) in field.displacements().iter().enumerate() {
            writeln!(csv, "{i},{},{},{}", d.x, d.y, d.z).expect("writing to string");
        }
        fs::write(
            out_dir.join(format!("fields/{}_adaptations.csv", entry.id)),
            csv,
        )?;

        writeln!(
            residuals,
            "{},{},{}",
            entry.id, done.scan_residual, done.socket_residual
        )
        .expect("writing to string");
        entries.push(CorpusIndexEntry {
            id: entry.id.clone(),
            scan_path: scan_rel,
            socket_path: socket_rel,
            side: entry.side,
            scan_residual: done.scan_residual,
            socket_residual: done.socket_residual,
        });
    }

    fs::write(out_dir.join("residuals.csv"), residuals)?;
    let mut failure_csv = String::from("id,error\n");
    for f in &failures {
        writeln!(failure_csv, "{},{}", f.id, f.error.replace(',', ";")).expect("writing to string");
    }
    fs::write(out_dir.join("failures.csv"), failure_csv)?;

    let index = CorpusIndex { samples: entries };
    fs::write(
        out_dir.join("index.json"),
        serde_json::to_string_pretty(&index)? + "\n",
    )?;
    Ok(PreprocessOutcome { index, failures })
}

/// One pre-processed sample in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub id: String,
    pub scan: CorrespondedMesh,
    pub socket: CorrespondedMesh,
}

/// A pre-processed corpus: every sample on the template grid, in canonical
/// pose, scans and sockets in vertex-wise correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<CorpusSample>,
}

impl Corpus {
    /// Loads a corpus written by [`preprocess_corpus`].
    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(dir.join("index.json"))?;
        let index: CorpusIndex = serde_json::from_str(&text)?;
        let mut samples = Vec::with_capacity(index.samples.len());
        for entry in &index.samples {
            let scan = CorrespondedMesh::from_mesh(&load_mesh(&dir.join(&entry.scan_path))?)?;
            let socket = CorrespondedMesh::from_mesh(&load_mesh(&dir.join(&entry.socket_path))?)?;
            samples.push(CorpusSample {
                id: entry.id.clone(),
                scan,
                socket,
            });
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Full description of one cross-validated experiment. Hyperparameters
/// default to the published values for the chosen `(target, representation)`
/// cell; the `Option` fields override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub target: PredictionTarget,
    pub representation: Representation,
    pub folds: usize,
    pub seed: u64,
    /// Explained-variance threshold for the reduced representation.
    pub pca_threshold: f64,
    pub batch_size: usize,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub forest: Option<ForestConfig>,
    /// Use the reduced point budget for the point-set network.
    pub compact_pointset: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Forest,
            target: PredictionTarget::Adaptations,
            representation: Representation::Raw,
            folds: 5,
            seed: 0,
            pca_threshold: 0.95,
            batch_size: 8,
            epochs: None,
            learning_rate: None,
            forest: None,
            compact_pointset: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.folds < 2 {
            return Err(ExperimentError::BadConfig(
                "cross-validation needs at least 2 folds".into(),
            ));
        }
        if self.method == Method::PointSet && self.representation == Representation::Reduced {
            return Err(ExperimentError::BadConfig(
                "the point-set network consumes point clouds directly and has no reduced form"
                    .into(),
            ));
        }
        if !(self.pca_threshold > 0.0 && self.pca_threshold <= 1.0) {
            return Err(ExperimentError::BadConfig(format!(
                "pca_threshold must be in (0, 1], got {}",
                self.pca_threshold
            )));
        }
        if self.batch_size == 0 {
            return Err(ExperimentError::BadConfig("batch_size must be positive".into()));
        }
        if self.epochs == Some(0) {
            return Err(ExperimentError::BadConfig("epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn mode(&self) -> OutputMode {
        OutputMode {
            target: self.target,
            representation: self.representation,
        }
    }

    fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        let mut tc = TrainConfig {
            epochs,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        };
        if let Some(lr) = self.learning_rate {
            tc.adam.learning_rate = lr;
        }
        tc
    }
}

// ---------------------------------------------------------------------------
// Fold assignment
// ---------------------------------------------------------------------------

/// Assigns each of `n` samples to one of `k` folds by a seeded shuffle.
/// Folds are near-equal: the first `n % k` folds get one extra sample.
pub fn fold_assignments(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, ExperimentError> {
    if k < 2 {
        return Err(ExperimentError::BadConfig(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    if n < k {
        return Err(ExperimentError::DatasetTooSmall { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut assignment = vec![0usize; n];
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &sample in &order[cursor..cursor + size] {
            assignment[sample] = fold;
        }
        cursor += size;
    }
    Ok(assignment)
}

/// Derives the training seed for one fold from the master seed.
fn fold_seed(master: u64, fold: usize) -> u64 {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    rng.set_stream(fold as u64 + 1);
    rng.random::<u64>()
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Everything produced while training and evaluating one fold.
#[derive(Debug, Clone)]
pub struct FoldArtifacts {
    pub fold: usize,
    pub model: TrainedModel,
    pub pca: Option<PcaPair>,
    /// Per-epoch losses; empty for the forest.
    pub losses: Vec<EpochLoss>,
    pub records: Vec<SampleRecord>,
    /// Per-record signed distance maps, aligned with `records`.
    pub maps: Vec<DistanceMap>,
    /// Per-record predicted sockets, aligned with `records`.
    pub predictions: Vec<CorrespondedMesh>,
}

/// A completed experiment: the effective config, the aggregated report and
/// the per-fold artifacts.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub assignment: Vec<usize>,
    pub report: EvalReport,
    pub folds: Vec<FoldArtifacts>,
}

fn flatten_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, d, |r, c| rows[r][c])
}

fn target_field(sample: &CorpusSample, target: PredictionTarget) -> Vec<f64> {
    match target {
        PredictionTarget::Adaptations => {
            compute_adaptations(&sample.scan, &sample.socket).flatten()
        }
        PredictionTarget::SocketShape => sample.socket.flatten(),
    }
}

struct FoldData {
    train: Vec<usize>,
    test: Vec<usize>,
    scan_rows: DMatrix<f64>,
    target_rows: DMatrix<f64>,
    test_scan_rows: DMatrix<f64>,
    test_target_rows: DMatrix<f64>,
}

fn split_fold(corpus: &Corpus, assignment: &[usize], fold: usize, target: PredictionTarget) -> FoldData {
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..corpus.len()).partition(|&i| assignment[i] != fold);
    let gather = |ids: &[usize]| -> (DMatrix<f64>, DMatrix<f64>) {
        let scans: Vec<Vec<f64>> = ids.iter().map(|&i| corpus.samples[i].scan.flatten()).collect();
        let targets: Vec<Vec<f64>> = ids
            .iter()
            .map(|&i| target_field(&corpus.samples[i], target))
            .collect();
        (flatten_rows(&scans), flatten_rows(&targets))
    };
    let (scan_rows, target_rows) = gather(&train);
    let (test_scan_rows, test_target_rows) = gather(&test);
    FoldData {
        train,
        test,
        scan_rows,
        target_rows,
        test_scan_rows,
        test_target_rows,
    }
}

fn fit_fold_pca(
    config: &ExperimentConfig,
    data: &FoldData,
) -> Result<Option<PcaPair>, ExperimentError> {
    if config.representation != Representation::Reduced {
        return Ok(None);
    }
    let target_kind = match config.target {
        PredictionTarget::Adaptations => PcaKind::Adaptation,
        PredictionTarget::SocketShape => PcaKind::Socket,
    };
    let scan = PcaModel::fit(&data.scan_rows, config.pca_threshold, PcaKind::Scan)?;
    let target = PcaModel::fit(&data.target_rows, config.pca_threshold, target_kind)?;
    Ok(Some(PcaPair { scan, target }))
}

fn train_fold_model(
    config: &ExperimentConfig,
    corpus: &Corpus,
    data: &FoldData,
    pca: Option<&PcaPair>,
    seed: u64,
) -> Result<(TrainedModel, Vec<EpochLoss>), ExperimentError> {
    let (inputs, targets, test_inputs, test_targets) = match pca {
        Some(pair) => (
            pair.scan.transform_rows(&data.scan_rows)?,
            pair.target.transform_rows(&data.target_rows)?,
            pair.scan.transform_rows(&data.test_scan_rows)?,
            pair.target.transform_rows(&data.test_target_rows)?,
        ),
        None => (
            data.scan_rows.clone(),
            data.target_rows.clone(),
            data.test_scan_rows.clone(),
            data.test_target_rows.clone(),
        ),
    };

    match config.method {
        Method::Forest => {
            let mut fc = config
                .forest
                .unwrap_or_else(|| forest_preset(config.target, config.representation));
            fc.seed = seed;
            let forest = train_forest(&inputs, &targets, &fc)?;
            Ok((TrainedModel::Forest(forest), Vec::new()))
        }
        Method::Ffnn => {
            let preset = ffnn_preset(config.target, config.representation);
            let tc = config.train_config(config.epochs.unwrap_or(preset.epochs), seed);
            let (model, losses) = train_ffnn(
                &inputs,
                &targets,
                &preset.hidden,
                &tc,
                Some((&test_inputs, &test_targets)),
            )?;
            Ok((TrainedModel::Ffnn(model), losses))
        }
        Method::PointSet => {
            let preset = if config.compact_pointset {
                pointset_compact_preset(config.target)
            } else {
                pointset_preset(config.target)
            };
            let clouds: Vec<Vec<Point3<f64>>> = data
                .train
                .iter()
                .map(|&i| corpus.samples[i].scan.vertices().to_vec())
                .collect();
            let test_clouds: Vec<Vec<Point3<f64>>> = data
                .test
                .iter()
                .map(|&i| corpus.samples[i].scan.vertices().to_vec())
                .collect();
            let tc = config.train_config(config.epochs.unwrap_or(preset.epochs), seed);
            let (model, losses) = train_pointset(
                &clouds,
                &targets,
                &preset.spec,
                &tc,
                Some((&test_clouds, &test_targets)),
            )?;
            Ok((TrainedModel::PointSet(model), losses))
        }
    }
}

fn evaluate_fold(
    config: &ExperimentConfig,
    corpus: &Corpus,
    test: &[usize],
    fold: usize,
    model: &TrainedModel,
    pca: Option<&PcaPair>,
) -> Result<(Vec<SampleRecord>, Vec<DistanceMap>, Vec<CorrespondedMesh>), ExperimentError> {
    let mut records = Vec::with_capacity(test.len());
    let mut maps = Vec::with_capacity(test.len());
    let mut predictions = Vec::with_capacity(test.len());
    for &i in test {
        let sample = &corpus.samples[i];
        let prediction = predict_socket(model, &sample.scan, config.mode(), pca)?;
        let truth = sample.socket.to_mesh();
        let eval = evaluate_prediction(&prediction, &truth)?;
        let finite = eval.median_mm.is_finite()
            && eval.q1_mm.is_finite()
            && eval.q3_mm.is_finite()
            && eval.mean_euclidean_mm.is_none_or(f64::is_finite);
        if !finite {
            return Err(ExperimentError::NonFiniteMetrics {
                id: sample.id.clone(),
            });
        }
        records.push(SampleRecord {
            id: sample.id.clone(),
            fold,
            median_mm: eval.median_mm,
            q1_mm: eval.q1_mm,
            q3_mm: eval.q3_mm,
            mean_euclidean_mm: eval.mean_euclidean_mm,
        });
        maps.push(eval.map);
        predictions.push(prediction);
    }
    Ok((records, maps, predictions))
}

/// Runs seeded k-fold cross-validation of `config` over the corpus: per fold,
/// fits the reduction (if any) and the model on the training folds only, then
/// evaluates every held-out sample against its true socket surface.
pub fn cross_validate(
    corpus: &Corpus,
    config: &ExperimentConfig,
) -> Result<ExperimentRun, ExperimentError> {
    config.validate()?;
    let assignment = fold_assignments(corpus.len(), config.folds, config.seed)?;

    let mut folds = Vec::with_capacity(config.folds);
    let mut all_records = Vec::with_capacity(corpus.len());
    for fold in 0..config.folds {
        let data = split_fold(corpus, &assignment, fold, config.target);
        let pca = fit_fold_pca(config, &data)?;
        let seed = fold_seed(config.seed, fold);
        let (model, losses) = train_fold_model(config, corpus, &data, pca.as_ref(), seed)?;
        let (records, maps, predictions) =
            evaluate_fold(config, corpus, &data.test, fold, &model, pca.as_ref())?;
        all_records.extend(records.iter().cloned());
        folds.push(FoldArtifacts {
            fold,
            model,
            pca,
            losses,
            records,
            maps,
            predictions,
        });
    }

    let report = build_report(all_records)?;
    Ok(ExperimentRun {
        config: config.clone(),
        assignment,
        report,
        folds,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// `report.json`: the effective config next to everything it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: ExperimentConfig,
    pub report: EvalReport,
}

fn loss_csv(losses: &[EpochLoss]) -> String {
    let mut csv = String::from("epoch,train_loss,test_loss\n");
    for l in losses {
        match l.test_loss {
            Some(t) => writeln!(csv, "{},{},{}", l.epoch, l.train_loss, t),
            None => writeln!(csv, "{},{},", l.epoch, l.train_loss),
        }
        .expect("writing to string");
    }
    csv
}

fn samples_csv(records: &[SampleRecord]) -> String {
    let mut csv = String::from("id,fold,median_mm,q1_mm,q3_mm,mean_euclidean_mm\n");
    for r in records {
        let euclid = r
            .mean_euclidean_mm
            .map_or(String::new(), |v| v.to_string());
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.id, r.fold, r.median_mm, r.q1_mm, r.q3_mm, euclid
        )
        .expect("writing to string");
    }
    csv
}

/// Runs the experiment and writes the standard artifact layout under
/// `out_dir`: `config.json`, per-fold model/PCA/loss files, `samples.csv`
/// and `report.json`.
pub fn run_experiment(
    corpus: &Corpus,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentRun, ExperimentError> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(config)? + "\n",
    )?;

    let run = cross_validate(corpus, config)?;
    for artifacts in &run.folds {
        let k = artifacts.fold;
        artifacts.model.save(&out_dir.join(format!("fold{k}.model")))?;
        if let Some(pair) = &artifacts.pca {
            pair.scan.save(&out_dir.join(format!("fold{k}_scan.pca")))?;
            pair.target
                .save(&out_dir.join(format!("fold{k}_target.pca")))?;
        }
        if !artifacts.losses.is_empty() {
            fs::write(
                out_dir.join(format!("fold{k}_loss.csv")),
                loss_csv(&artifacts.losses),
            )?;
        }
    }

    fs::write(out_dir.join("samples.csv"), samples_csv(&run.report.records))?;
    let file = ReportFile {
        config: run.config.clone(),
        report: run.report.clone(),
    };
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&file)? + "\n",
    )?;
    Ok(run)
}

/// A persisted experiment loaded back from disk.
#[derive(Debug, Clone)]
pub struct SavedExperiment {
    pub config: ExperimentConfig,
    pub report: EvalReport,
    pub models: Vec<TrainedModel>,
    pub pcas: Vec<Option<PcaPair>>,
}

/// Loads the models and report written by [`run_experiment`].
pub fn load_experiment(dir: &Path) -> Result<SavedExperiment, ExperimentError> {
    let text = fs::read_to_string(dir.join("report.json"))?;
    let file: ReportFile = serde_json::from_str(&text)?;
    let mut models = Vec::with_capacity(file.config.folds);
    let mut pcas = Vec::with_capacity(file.config.folds);
    for k in 0..file.config.folds {
        models.push(TrainedModel::load(&dir.join(format!("fold{k}.model")))?);
        if file.config.representation == Representation::Reduced {
            pcas.push(Some(PcaPair {
                scan: PcaModel::load(&dir.join(format!("fold{k}_scan.pca")))?,
                target: PcaModel::load(&dir.join(format!("fold{k}_target.pca")))?,
            }));
        } else {
            pcas.push(None);
        }
    }
    Ok(SavedExperiment {
        config: file.config,
        report: file.report,
        models,
        pcas,
    })
}

/// Re-evaluates a persisted experiment's held-out folds against the corpus.
/// With the corpus it was trained on, the rebuilt report equals the stored
/// one bitwise.
pub fn evaluate_experiment(
    saved: &SavedExperiment,
    corpus: &Corpus,
) -> Result<ExperimentRun, ExperimentError> {
    saved.config.validate()?;
    if saved.models.len() != saved.config.folds {
        return Err(ExperimentError::BadConfig(format!(
            "expected {} fold models, found {}",
            saved.config.folds,
            saved.models.len()
        )));
    }
    let assignment = fold_assignments(corpus.len(), saved.config.folds, saved.config.seed)?;
    let mut folds = Vec::with_capacity(saved.config.folds);
    let mut all_records = Vec::with_capacity(corpus.len());
    for fold in 0..saved.config.folds {
        let test: Vec<usize> = (0..corpus.len()).filter(|&i| assignment[i] == fold).collect();
        let (records, maps, predictions) = evaluate_fold(
            &saved.config,
            corpus,
            &test,
            fold,
            &saved.models[fold],
            saved.pcas[fold].as_ref(),
        )?;
        all_records.extend(records.iter().cloned());
        folds.push(FoldArtifacts {
            fold,
            model: saved.models[fold].clone(),
            pca: saved.pcas[fold].clone(),
            losses: Vec::new(),
            records,
            maps,
            predictions,
        });
    }
    let report = build_report(all_records)?;
    Ok(ExperimentRun {
        config: saved.config.clone(),
        assignment,
        report,
        folds,
    })
}

/// One row of the cross-experiment comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub method: Method,
    pub target: PredictionTarget,
    pub representation: Representation,
    pub n: usize,
    pub median_mm: f64,
    pub q1_mm: f64,
    pub q3_mm: f64,
    pub mean_of_medians_mm: f64,
    pub mean_euclidean_mm: Option<f64>,
}

/// Collects every `report.json` directly under the given experiment
/// directories into comparison rows, sorted by name.
pub fn comparison_table(dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let mut rows = Vec::new();
    for dir in dirs {
        let text = fs::read_to_string(dir.join("report.json"))?;
        let file: ReportFile = serde_json::from_str(&text)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push(ComparisonRow {
            name,
            method: file.config.method,
            target: file.config.target,
            representation: file.config.representation,
            n: file.report.overall.n,
            median_mm: file.report.overall.median_mm,
            q1_mm: file.report.overall.q1_mm,
            q3_mm: file.report.overall.q3_mm,
            mean_of_medians_mm: file.report.overall.mean_of_medians_mm,
            mean_euclidean_mm: file.report.overall.mean_euclidean_mm,
        });
    }
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(rows)
}

/// Renders comparison rows as CSV.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut csv = String::from(
        "name,method,target,representation,n,median_mm,q1_mm,q3_mm,mean_of_medians_mm,mean_euclidean_mm\n",
    );
    for r in rows {
        let euclid = r.mean_euclidean_mm.map_or(String::new(), |v| v.to_string());
        writeln!(
            csv,
            "{},{:?},{:?},{:?},{},{},{},{},{},{}",
            r.name,
            r.method,
            r.target,
            r.representation,
            r.n,
            r.median_mm,
            r.q1_mm,
            r.q3_mm,
            r.mean_of_medians_mm,
            euclid
        )
        .expect("writing to string");
    }
    csv
}
