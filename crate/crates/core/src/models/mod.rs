//! Regression models that predict a socket from a corresponded stump scan:
//! a random forest, a feedforward network and a hierarchical point-set
//! network. Each supports two prediction targets — the adaptation field
//! (displacements added to the scan) or the socket shape directly — and the
//! dense models additionally accept PCA-reduced inputs and outputs.

pub mod adam;
pub mod ffnn;
pub mod forest;
pub mod loss;
pub mod nn;
pub mod pointset;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use ffnn::{ffnn_preset, train_ffnn, FfnnModel, FfnnPreset, TrainConfig};
pub use forest::{forest_preset, train_forest, Forest, ForestConfig, MaxFeatures};
pub use loss::{smooth_l1, smooth_l1_grad};
pub use nn::{LayerSpec, Mlp, Regularization};
pub use pointset::{
    ball_query, farthest_point_sampling, max_pool_backward, max_pool_groups,
    pointset_compact_preset, pointset_preset, train_pointset, GroupingPlan, PointSetModel,
    PointSetPreset, PointSetSpec, StageSpec,
};

use crate::io_bin::{self, PayloadKind};
use crate::pca::{PcaError, PcaKind, PcaModel};
use crate::preprocess::{apply_adaptations, AdaptationField, CorrespondedMesh, PreprocessError};
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("model cannot serve the requested mode: {0}")]
    ModeMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What quantity a model regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionTarget {
    /// The vertex displacement field socket − scan.
    Adaptations,
    /// The socket shape itself.
    SocketShape,
}

/// Whether a model works on flattened vertices or PCA coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Raw,
    Reduced,
}

/// Which regression algorithm to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Forest,
    Ffnn,
    PointSet,
}

/// A complete output mode: target plus representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputMode {
    pub target: PredictionTarget,
    pub representation: Representation,
}

/// Loss trace of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// The PCA bases used by reduced-representation modes: one fitted on scans
/// (model inputs) and one fitted on the target quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaPair {
    pub scan: PcaModel,
    pub target: PcaModel,
}

impl PcaPair {
    /// Checks that the pair matches the requested prediction target.
    pub fn validate(&self, target: PredictionTarget) -> Result<(), ModelError> {
        if self.scan.kind() != PcaKind::Scan {
            return Err(ModelError::ModeMismatch(format!(
                "input basis was fitted on {:?} data, expected Scan",
                self.scan.kind()
            )));
        }
        let wanted = match target {
            PredictionTarget::Adaptations => PcaKind::Adaptation,
            PredictionTarget::SocketShape => PcaKind::Socket,
        };
        if self.target.kind() != wanted {
            return Err(ModelError::ModeMismatch(format!(
                "output basis was fitted on {:?} data, expected {wanted:?}",
                self.target.kind()
            )));
        }
        Ok(())
    }
}

/// Any trained regressor, self-describing on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Forest(Forest),
    Ffnn(FfnnModel),
    PointSet(PointSetModel),
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            Self::Forest(_) => Method::Forest,
            Self::Ffnn(_) => Method::Ffnn,
            Self::PointSet(_) => Method::PointSet,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        match self {
            Self::Forest(m) => {
                io_bin::write_header(&mut w, PayloadKind::Forest)?;
                m.write_payload(&mut w)?;
            }
            Self::Ffnn(m) => {
                io_bin::write_header(&mut w, PayloadKind::Ffnn)?;
                m.write_payload(&mut w)?;
            }
            Self::PointSet(m) => {
                io_bin::write_header(&mut w, PayloadKind::PointSet)?;
                m.write_payload(&mut w)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let model = match io_bin::read_any_header(&mut r)? {
            PayloadKind::Forest => Self::Forest(Forest::read_payload(&mut r)?),
            PayloadKind::Ffnn => Self::Ffnn(FfnnModel::read_payload(&mut r)?),
            PayloadKind::PointSet => Self::PointSet(PointSetModel::read_payload(&mut r)?),
            PayloadKind::Pca => {
                return Err(ModelError::ModeMismatch(
                    "file holds a PCA basis, not a regressor".into(),
                ))
            }
        };
        Ok(model)
    }
}

fn cloud_of(scan: &CorrespondedMesh) -> Vec<Point3<f64>> {
    scan.vertices().to_vec()
}

/// Runs one prediction end to end: encodes the corresponded scan in the
/// requested representation, applies the model, decodes the output field
/// and turns it into the predicted socket.
pub fn predict_socket(
    model: &TrainedModel,
    scan: &CorrespondedMesh,
    mode: OutputMode,
    pca: Option<&PcaPair>,
) -> Result<CorrespondedMesh, ModelError> {
    let flat = scan.flatten();
    if mode.representation == Representation::Reduced {
        let pair = pca.ok_or_else(|| {
            ModelError::ModeMismatch("reduced representation needs a PCA pair".into())
        })?;
        pair.validate(mode.target)?;
    }

    let raw_field = match model {
        TrainedModel::PointSet(net) => {
            if mode.representation != Representation::Raw {
                return Err(ModelError::ModeMismatch(
                    "the point-set network only supports the raw representation".into(),
                ));
            }
            net.predict(&cloud_of(scan))?
        }
        TrainedModel::Forest(forest) => {
            let input = encode_input(&flat, mode.representation, pca)?;
            let coeffs = forest.predict_one(&input)?;
            decode_output(coeffs, mode, pca)?
        }
        TrainedModel::Ffnn(net) => {
            let input = encode_input(&flat, mode.representation, pca)?;
            let coeffs = net.predict_one(&input)?;
            decode_output(coeffs, mode, pca)?
        }
    };

    match mode.target {
        PredictionTarget::Adaptations => {
            let field = AdaptationField::from_flat(&raw_field)?;
            Ok(apply_adaptations(scan, &field)?)
        }
        PredictionTarget::SocketShape => Ok(CorrespondedMesh::from_flat(&raw_field)?),
    }
}

fn encode_input(
    flat: &[f64],
    representation: Representation,
    pca: Option<&PcaPair>,
) -> Result<Vec<f64>, ModelError> {
    match representation {
        Representation::Raw => Ok(flat.to_vec()),
        Representation::Reduced => {
            let pair = pca.expect("validated by caller");
            Ok(pair.scan.transform(flat)?)
        }
    }
}

fn decode_output(
    prediction: Vec<f64>,
    mode: OutputMode,
    pca: Option<&PcaPair>,
) -> Result<Vec<f64>, ModelError> {
    match mode.representation {
        Representation::Raw => Ok(prediction),
        Representation::Reduced => {
            let pair = pca.expect("validated by caller");
            Ok(pair.target.inverse(&prediction)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pca::PcaKind;
    use crate::preprocess::{canonical_template, compute_adaptations};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn jittered_template(seed: u64, amplitude: f64) -> CorrespondedMesh {
        let base = canonical_template();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let vertices = base
            .vertices()
            .iter()
            .map(|p| {
                Point3::new(
                    p.x + rng.random_range(-amplitude..amplitude),
                    p.y + rng.random_range(-amplitude..amplitude),
                    p.z + rng.random_range(-amplitude..amplitude),
                )
            })
            .collect();
        CorrespondedMesh::from_vertices(vertices).unwrap()
    }

    fn small_training_set(n: usize) -> (DMatrix<f64>, DMatrix<f64>, Vec<CorrespondedMesh>) {
        let mut scans = Vec::new();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let scan = jittered_template(i as u64, 0.5);
            let socket = jittered_template(i as u64 + 1000, 0.5);
            let field = compute_adaptations(&scan, &socket);
            inputs.push(scan.flatten());
            targets.push(field.flatten());
            scans.push(scan);
        }
        let d = inputs[0].len();
        let x = DMatrix::from_fn(n, d, |i, j| inputs[i][j]);
        let t = DMatrix::from_fn(n, d, |i, j| targets[i][j]);
        (x, t, scans)
    }

    #[test]
    fn trained_model_file_dispatches_by_kind() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64);
        let t = DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64);
        let config = ForestConfig {
            n_trees: 2,
            ..Default::default()
        };
        let forest = train_forest(&x, &t, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sfbm");
        TrainedModel::Forest(forest.clone()).save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(loaded.method(), Method::Forest);
        match loaded {
            TrainedModel::Forest(f) => assert_eq!(f, forest),
            other => panic!("wrong variant: {:?}", other.method()),
        }
    }

    #[test]
    fn pca_file_is_not_a_regressor() {
        let data = DMatrix::from_fn(5, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let pca = PcaModel::fit(&data, 0.99, PcaKind::Scan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.sfbm");
        pca.save(&path).unwrap();
        assert!(matches!(
            TrainedModel::load(&path),
            Err(ModelError::ModeMismatch(_))
        ));
    }

    #[test]
    fn raw_forest_predicts_adaptations_end_to_end() {
        let (x, t, scans) = small_training_set(6);
        let config = ForestConfig {
            n_trees: 3,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let forest = train_forest(&x, &t, &config).unwrap();
        let model = TrainedModel::Forest(forest);
        let mode = OutputMode {
            target: PredictionTarget::Adaptations,
            representation: Representation::Raw,
        };
        let predicted = predict_socket(&model, &scans[0], mode, None).unwrap();
        assert_eq!(predicted.vertices().len(), scans[0].vertices().len());
        // The prediction is scan + field, so it must differ from the scan.
        let moved = predicted
            .vertices()
            .iter()
            .zip(scans[0].vertices())
            .any(|(a, b)| (a - b).norm() > 1e-9);
        assert!(moved);
    }

    #[test]
    fn reduced_mode_requires_matching_pca_pair() {
        let (x, t, scans) = small_training_set(6);
        let scan_pca = PcaModel::fit(&x, 0.95, PcaKind::Scan).unwrap();
        let field_pca = PcaModel::fit(&t, 0.95, PcaKind::Adaptation).unwrap();
        let xr = scan_pca.transform_rows(&x).unwrap();
        let tr = field_pca.transform_rows(&t).unwrap();
        let config = ForestConfig {
            n_trees: 3,
            ..Default::default()
        };
        let forest = train_forest(&xr, &tr, &config).unwrap();
        let model = TrainedModel::Forest(forest);
        let mode = OutputMode {
            target: PredictionTarget::Adaptations,
            representation: Representation::Reduced,
        };
        assert!(matches!(
            predict_socket(&model, &scans[0], mode, None),
            Err(ModelError::ModeMismatch(_))
        ));
        let wrong_pair = PcaPair {
            scan: scan_pca.clone(),
            target: scan_pca.clone(),
        };
        assert!(matches!(
            predict_socket(&model, &scans[0], mode, Some(&wrong_pair)),
            Err(ModelError::ModeMismatch(_))
        ));
        let pair = PcaPair {
            scan: scan_pca,
            target: field_pca,
        };
        let predicted = predict_socket(&model, &scans[0], mode, Some(&pair)).unwrap();
        assert_eq!(predicted.vertices().len(), scans[0].vertices().len());
    }

    #[test]
    fn pointset_rejects_reduced_mode() {
        let preset = pointset_compact_preset(PredictionTarget::Adaptations);
        let mut spec = preset.spec;
        spec.stage1.centers = 64;
        spec.stage1.mlp = vec![8];
        spec.stage2.centers = 8;
        spec.stage2.mlp = vec![8];
        spec.global_mlp = vec![8];
        spec.head = vec![8];
        let (_, t, scans) = small_training_set(3);
        let clouds: Vec<Vec<Point3<f64>>> =
            scans.iter().map(|s| s.vertices().to_vec()).collect();
        let config = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let (net, _) = train_pointset(&clouds, &t, &spec, &config, None).unwrap();
        let model = TrainedModel::PointSet(net);
        let mode = OutputMode {
            target: PredictionTarget::Adaptations,
            representation: Representation::Reduced,
        };
        let x = DMatrix::from_fn(3, 6, |i, j| (i + j) as f64);
        let scan_pca = PcaModel::fit(&x, 0.95, PcaKind::Scan).unwrap();
        let pair = PcaPair {
            scan: scan_pca.clone(),
            target: PcaModel::fit(&x, 0.95, PcaKind::Adaptation).unwrap(),
        };
        assert!(matches!(
            predict_socket(&model, &scans[0], mode, Some(&pair)),
            Err(ModelError::ModeMismatch(_))
        ));
    }

    #[test]
    fn socket_shape_mode_returns_the_raw_prediction() {
        let (x, _, scans) = small_training_set(5);
        // Targets are the sockets themselves here.
        let sockets: Vec<Vec<f64>> = (0..5)
            .map(|i| jittered_template(i as u64 + 500, 0.5).flatten())
            .collect();
        let t = DMatrix::from_fn(5, x.ncols(), |i, j| sockets[i][j]);
        let config = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_features: MaxFeatures::Sqrt,
            ..Default::default()
        };
        let forest = train_forest(&x, &t, &config).unwrap();
        let model = TrainedModel::Forest(forest.clone());
        let mode = OutputMode {
            target: PredictionTarget::SocketShape,
            representation: Representation::Raw,
        };
        let predicted = predict_socket(&model, &scans[0], mode, None).unwrap();
        let direct = forest.predict_one(&scans[0].flatten()).unwrap();
        for (v, chunk) in predicted.vertices().iter().zip(direct.chunks_exact(3)) {
            assert!((v.x - chunk[0]).abs() < 1e-12);
            assert!((v.y - chunk[1]).abs() < 1e-12);
            assert!((v.z - chunk[2]).abs() < 1e-12);
        }
    }
}
