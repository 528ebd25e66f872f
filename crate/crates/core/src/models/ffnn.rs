//! Fully connected regression networks mapping a flattened stump shape (or
//! its compressed coefficients) to the predicted socket output.
//!
//! Inputs and targets are mean-centered before training; the stored means
//! are reapplied at prediction time. Hidden layers are batch-normalised and
//! the last hidden layer adds dropout.

use super::adam::{AdamConfig, AdamState};
use super::loss::{smooth_l1, smooth_l1_grad};
use super::nn::{LayerSpec, Mlp, Regularization};
use super::{EpochLoss, ModelError, PredictionTarget, Representation};
use crate::io_bin::{self, PayloadKind};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Hidden-layer widths and epoch budget for one output mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfnnPreset {
    pub hidden: Vec<usize>,
    pub epochs: usize,
}

/// Default architecture for each prediction target and input representation.
pub fn ffnn_preset(target: PredictionTarget, representation: Representation) -> FfnnPreset {
    match (target, representation) {
        (PredictionTarget::Adaptations, Representation::Raw) => FfnnPreset {
            hidden: vec![64, 128, 256, 512],
            epochs: 50,
        },
        (PredictionTarget::Adaptations, Representation::Reduced) => FfnnPreset {
            hidden: vec![32, 32],
            epochs: 75,
        },
        (PredictionTarget::SocketShape, Representation::Raw) => FfnnPreset {
            hidden: vec![32, 512, 512, 1048],
            epochs: 175,
        },
        (PredictionTarget::SocketShape, Representation::Reduced) => FfnnPreset {
            hidden: vec![64, 128, 256, 512],
            epochs: 150,
        },
    }
}

/// Shared optimisation settings for network training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub loss_beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            adam: AdamConfig::default(),
            dropout_rate: 0.25,
            bn_momentum: 0.25,
            loss_beta: 1.0,
            seed: 0,
        }
    }
}

/// A trained feedforward model together with the centering means.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnnModel {
    pub mlp: Mlp,
    pub input_mean: DVector<f64>,
    pub target_mean: DVector<f64>,
}

impl FfnnModel {
    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// Predicts a batch (rows are samples).
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
        if inputs.ncols() != self.in_dim() {
            return Err(ModelError::Dimension {
                expected: self.in_dim(),
                got: inputs.ncols(),
            });
        }
        let mut centered = inputs.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.input_mean.transpose();
        }
        let mut y = self.mlp.forward_eval(&centered);
        for mut row in y.row_iter_mut() {
            row += self.target_mean.transpose();
        }
        Ok(y)
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        let x = DMatrix::from_row_slice(1, input.len(), input);
        Ok(self.predict(&x)?.row(0).iter().copied().collect())
    }

    pub fn write_payload<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        io_bin::write_f64_slice(w, self.input_mean.as_slice())?;
        io_bin::write_f64_slice(w, self.target_mean.as_slice())?;
        self.mlp.write(w)
    }

    pub fn read_payload<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let input_mean = DVector::from_vec(io_bin::read_f64_vec(r)?);
        let target_mean = DVector::from_vec(io_bin::read_f64_vec(r)?);
        let mlp = Mlp::read(r)?;
        Ok(Self {
            mlp,
            input_mean,
            target_mean,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        io_bin::write_header(&mut w, PayloadKind::Ffnn)?;
        self.write_payload(&mut w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        io_bin::read_header(&mut r, PayloadKind::Ffnn)?;
        Ok(Self::read_payload(&mut r)?)
    }
}

/// Builds the layer stack for the given hidden widths: every hidden layer is
/// batch-normalised, the last hidden layer also applies dropout, and the
/// output layer is plain linear.
pub(crate) fn layer_specs(in_dim: usize, hidden: &[usize], out_dim: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = in_dim;
    for (i, &width) in hidden.iter().enumerate() {
        let reg = if i + 1 == hidden.len() {
            Regularization::BatchNormDropout
        } else {
            Regularization::BatchNorm
        };
        specs.push(LayerSpec::hidden(prev, width, reg));
        prev = width;
    }
    specs.push(LayerSpec::output(prev, out_dim));
    specs
}

/// Gathers the given rows of `data` into a new matrix.
pub(crate) fn gather_rows(data: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), data.ncols(), |i, j| data[(rows[i], j)])
}

pub(crate) fn column_means(data: &DMatrix<f64>) -> DVector<f64> {
    let n = data.nrows() as f64;
    DVector::from_fn(data.ncols(), |j, _| data.column(j).sum() / n)
}

pub(crate) fn center_rows(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = data.clone();
    let mean_row = mean.transpose();
    for mut row in out.row_iter_mut() {
        row -= &mean_row;
    }
    out
}

/// Trains a feedforward network on `inputs → targets` (one sample per row).
/// When a held-out `test` pair is supplied its loss is logged per epoch.
pub fn train_ffnn(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    hidden: &[usize],
    config: &TrainConfig,
    test: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<(FfnnModel, Vec<EpochLoss>), ModelError> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if targets.nrows() != n {
        return Err(ModelError::Dimension {
            expected: n,
            got: targets.nrows(),
        });
    }
    if hidden.is_empty() {
        return Err(ModelError::BadConfig(
            "at least one hidden layer is required".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(ModelError::BadConfig("batch size must be positive".into()));
    }
    if let Some((tx, tt)) = test {
        if tx.ncols() != inputs.ncols() || tt.ncols() != targets.ncols() || tx.nrows() != tt.nrows()
        {
            return Err(ModelError::Dimension {
                expected: inputs.ncols(),
                got: tx.ncols(),
            });
        }
    }

    let input_mean = column_means(inputs);
    let target_mean = column_means(targets);
    let x = center_rows(inputs, &input_mean);
    let t = center_rows(targets, &target_mean);
    let test_centered =
        test.map(|(tx, tt)| (center_rows(tx, &input_mean), center_rows(tt, &target_mean)));

    let specs = layer_specs(inputs.ncols(), hidden, targets.ncols());
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::new(&specs, config.dropout_rate, config.bn_momentum, &mut rng);
    let mut adam = AdamState::new(&mlp.tensor_sizes());

    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let bx = gather_rows(&x, chunk);
            let bt = gather_rows(&t, chunk);
            let (y, caches) = mlp.forward_train(&bx, &mut rng);
            let loss = smooth_l1(&y, &bt, config.loss_beta);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let d_out = smooth_l1_grad(&y, &bt, config.loss_beta);
            let (grads, _) = mlp.backward(&caches, d_out);
            adam.begin_step();
            mlp.apply_grads(&mut adam, &config.adam, &grads, 0);
        }
        let test_loss = test_centered.as_ref().map(|(tx, tt)| {
            let y = mlp.forward_eval(tx);
            smooth_l1(&y, tt, config.loss_beta)
        });
        log.push(EpochLoss {
            epoch,
            train_loss: epoch_loss / n as f64,
            test_loss,
        });
    }

    Ok((
        FfnnModel {
            mlp,
            input_mean,
            target_mean,
        },
        log,
    ))
}
