//! Dense-network building blocks with explicit backward passes: linear
//! layers, batch normalisation, ReLU and inverted dropout, composed into a
//! multi-layer perceptron that trains with Adam on smooth-L1 loss.
//!
//! Batches are row-major (`n×features` matrices). All randomness (weight
//! init, dropout masks) comes from a caller-supplied ChaCha stream.

use super::adam::{AdamConfig, AdamState};
use crate::io_bin;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Post-linear treatment of a hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularization {
    /// Plain linear (used for output layers).
    None,
    /// Batch normalisation.
    BatchNorm,
    /// Batch normalisation followed by dropout.
    BatchNormDropout,
}

impl Regularization {
    fn code(self) -> u8 {
        match self {
            Self::None => 0,
            Self::BatchNorm => 1,
            Self::BatchNormDropout => 2,
        }
    }

    fn from_code(code: u8) -> std::io::Result<Self> {
        match code {
            0 => Ok(Self::None),
            1 => Ok(Self::BatchNorm),
            2 => Ok(Self::BatchNormDropout),
            other => Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unknown regularization code {other}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub reg: Regularization,
    pub relu: bool,
}

impl LayerSpec {
    pub fn hidden(in_dim: usize, out_dim: usize, reg: Regularization) -> Self {
        Self {
            in_dim,
            out_dim,
            reg,
            relu: true,
        }
    }

    pub fn output(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            reg: Regularization::None,
            relu: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out×in.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        // U(−1/√in, 1/√in) for weights and bias.
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = DMatrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-bound..bound));
        let bias = DVector::from_fn(out_dim, |_, _| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.weight.transpose();
        let bias_row = self.bias.transpose();
        for mut row in y.row_iter_mut() {
            row += &bias_row;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub momentum: f64,
    pub eps: f64,
}

struct BnCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
}

impl BatchNorm {
    fn new(dim: usize, momentum: f64) -> Self {
        Self {
            gamma: DVector::from_element(dim, 1.0),
            beta: DVector::zeros(dim),
            running_mean: DVector::zeros(dim),
            running_var: DVector::from_element(dim, 1.0),
            momentum,
            eps: 1e-5,
        }
    }

    /// Normalises with batch statistics and updates the running estimates
    /// (`running ← (1−momentum)·running + momentum·batch`; the running
    /// variance uses the unbiased batch variance).
    fn forward_train(&mut self, x: &DMatrix<f64>) -> (DMatrix<f64>, BnCache) {
        let n = x.nrows() as f64;
        let dim = x.ncols();
        let mut mean = DVector::zeros(dim);
        let mut var = DVector::zeros(dim);
        for j in 0..dim {
            let col = x.column(j);
            let mu = col.sum() / n;
            let mut ss = 0.0;
            for &v in col.iter() {
                ss += (v - mu) * (v - mu);
            }
            mean[j] = mu;
            var[j] = ss / n;
        }
        let inv_std = var.map(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = x.clone();
        for j in 0..dim {
            let m = mean[j];
            let s = inv_std[j];
            for v in xhat.column_mut(j).iter_mut() {
                *v = (*v - m) * s;
            }
        }
        let mut y = xhat.clone();
        for j in 0..dim {
            let g = self.gamma[j];
            let b = self.beta[j];
            for v in y.column_mut(j).iter_mut() {
                *v = *v * g + b;
            }
        }
        let unbiased = if x.nrows() > 1 {
            n / (n - 1.0)
        } else {
            1.0
        };
        for j in 0..dim {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbiased;
        }
        (y, BnCache { xhat, inv_std })
    }

    fn forward_eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        for j in 0..x.ncols() {
            let m = self.running_mean[j];
            let s = 1.0 / (self.running_var[j] + self.eps).sqrt();
            let g = self.gamma[j];
            let b = self.beta[j];
            for v in y.column_mut(j).iter_mut() {
                *v = (*v - m) * s * g + b;
            }
        }
        y
    }

    fn backward(
        &self,
        cache: &BnCache,
        dy: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = dy.nrows() as f64;
        let dim = dy.ncols();
        let mut dx = DMatrix::zeros(dy.nrows(), dim);
        let mut dgamma = DVector::zeros(dim);
        let mut dbeta = DVector::zeros(dim);
        for j in 0..dim {
            let g = self.gamma[j];
            let s = cache.inv_std[j];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for i in 0..dy.nrows() {
                let d = dy[(i, j)];
                let xh = cache.xhat[(i, j)];
                dgamma[j] += d * xh;
                dbeta[j] += d;
                let dxhat = d * g;
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xh;
            }
            for i in 0..dy.nrows() {
                let dxhat = dy[(i, j)] * g;
                dx[(i, j)] =
                    s / n * (n * dxhat - sum_dxhat - cache.xhat[(i, j)] * sum_dxhat_xhat);
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// One dense block: linear, optional batch norm, optional ReLU, optional
/// dropout (train-time only).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
}

pub struct LayerCache {
    x_in: DMatrix<f64>,
    bn: Option<BnCache>,
    relu_mask: Option<DMatrix<f64>>,
    dropout_mask: Option<DMatrix<f64>>,
}

/// Parameter gradients of one layer, in the same shapes as the parameters.
pub struct LayerGrads {
    pub dw: DMatrix<f64>,
    pub db: DVector<f64>,
    pub dgamma: Option<DVector<f64>>,
    pub dbeta: Option<DVector<f64>>,
}

impl DenseLayer {
    fn new(spec: LayerSpec, bn_momentum: f64, rng: &mut ChaCha12Rng) -> Self {
        let linear = Linear::init(spec.in_dim, spec.out_dim, rng);
        let bn = match spec.reg {
            Regularization::None => None,
            _ => Some(BatchNorm::new(spec.out_dim, bn_momentum)),
        };
        Self { spec, linear, bn }
    }

    fn forward_train(
        &mut self,
        x: &DMatrix<f64>,
        dropout_rate: f64,
        rng: &mut ChaCha12Rng,
    ) -> (DMatrix<f64>, LayerCache) {
        let x_in = x.clone();
        let mut z = self.linear.forward(x);
        let bn_cache = self.bn.as_mut().map(|bn| {
            let (y, cache) = bn.forward_train(&z);
            z = y;
            cache
        });
        let relu_mask = self.spec.relu.then(|| {
            let mask = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            z.component_mul_assign(&mask);
            mask
        });
        let dropout_mask = (self.spec.reg == Regularization::BatchNormDropout
            && dropout_rate > 0.0)
            .then(|| {
                let keep = 1.0 - dropout_rate;
                let mask = DMatrix::from_fn(z.nrows(), z.ncols(), |_, _| {
                    if rng.random::<f64>() < dropout_rate {
                        0.0
                    } else {
                        1.0 / keep
                    }
                });
                z.component_mul_assign(&mask);
                mask
            });
        (
            z,
            LayerCache {
                x_in,
                bn: bn_cache,
                relu_mask,
                dropout_mask,
            },
        )
    }

    fn forward_eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.linear.forward(x);
        if let Some(bn) = &self.bn {
            z = bn.forward_eval(&z);
        }
        if self.spec.relu {
            z.apply(|v| *v = v.max(0.0));
        }
        z
    }

    fn backward(&self, cache: &LayerCache, mut dy: DMatrix<f64>) -> (DMatrix<f64>, LayerGrads) {
        if let Some(mask) = &cache.dropout_mask {
            dy.component_mul_assign(mask);
        }
        if let Some(mask) = &cache.relu_mask {
            dy.component_mul_assign(mask);
        }
        let (mut dgamma, mut dbeta) = (None, None);
        if let (Some(bn), Some(bn_cache)) = (&self.bn, &cache.bn) {
            let (dz, dg, db) = bn.backward(bn_cache, &dy);
            dy = dz;
            dgamma = Some(dg);
            dbeta = Some(db);
        }
        let dx = &dy * &self.linear.weight;
        let dw = dy.transpose() * &cache.x_in;
        let db = dy.row_sum().transpose();
        (
            dx,
            LayerGrads {
                dw,
                db,
                dgamma,
                dbeta,
            },
        )
    }
}

/// A feedforward network: a stack of dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub dropout_rate: f64,
}

impl Mlp {
    /// Builds and initialises a network. Layer dimensions must chain.
    pub fn new(
        specs: &[LayerSpec],
        dropout_rate: f64,
        bn_momentum: f64,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        for pair in specs.windows(2) {
            assert_eq!(
                pair[0].out_dim, pair[1].in_dim,
                "layer dimensions must chain"
            );
        }
        let layers = specs
            .iter()
            .map(|&spec| DenseLayer::new(spec, bn_momentum, rng))
            .collect();
        Self {
            layers,
            dropout_rate,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_dim)
    }

    pub fn forward_train(
        &mut self,
        x: &DMatrix<f64>,
        rng: &mut ChaCha12Rng,
    ) -> (DMatrix<f64>, Vec<LayerCache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let rate = self.dropout_rate;
        for layer in &mut self.layers {
            let (next, cache) = layer.forward_train(&h, rate, rng);
            caches.push(cache);
            h = next;
        }
        (h, caches)
    }

    pub fn forward_eval(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward_eval(&h);
        }
        h
    }

    /// Backpropagates `d_out` through the stack, returning per-layer
    /// gradients (same order as layers) and the gradient at the input.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        d_out: DMatrix<f64>,
    ) -> (Vec<LayerGrads>, DMatrix<f64>) {
        assert_eq!(caches.len(), self.layers.len());
        let mut grads: Vec<Option<LayerGrads>> = (0..self.layers.len()).map(|_| None).collect();
        let mut dy = d_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, g) = layer.backward(&caches[i], dy);
            grads[i] = Some(g);
            dy = dx;
        }
        (grads.into_iter().map(Option::unwrap).collect(), dy)
    }

    /// Sizes of the parameter tensors in update order (per layer: weight,
    /// bias, then gamma and beta when batch-normalised).
    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for layer in &self.layers {
            sizes.push(layer.linear.weight.len());
            sizes.push(layer.linear.bias.len());
            if layer.bn.is_some() {
                sizes.push(layer.spec.out_dim);
                sizes.push(layer.spec.out_dim);
            }
        }
        sizes
    }

    /// Applies one Adam update from `grads`. `base` is the index of this
    /// network's first tensor inside `state` (several networks may share an
    /// optimiser); returns the index after the last tensor.
    pub fn apply_grads(
        &mut self,
        state: &mut AdamState,
        cfg: &AdamConfig,
        grads: &[LayerGrads],
        base: usize,
    ) -> usize {
        let mut idx = base;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            state.update(idx, cfg, layer.linear.weight.as_mut_slice(), g.dw.as_slice());
            idx += 1;
            state.update(idx, cfg, layer.linear.bias.as_mut_slice(), g.db.as_slice());
            idx += 1;
            if let Some(bn) = &mut layer.bn {
                state.update(
                    idx,
                    cfg,
                    bn.gamma.as_mut_slice(),
                    g.dgamma.as_ref().expect("bn layer has gamma grad").as_slice(),
                );
                idx += 1;
                state.update(
                    idx,
                    cfg,
                    bn.beta.as_mut_slice(),
                    g.dbeta.as_ref().expect("bn layer has beta grad").as_slice(),
                );
                idx += 1;
            }
        }
        idx
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        io_bin::write_f64(w, self.dropout_rate)?;
        io_bin::write_u32(w, self.layers.len() as u32)?;
        for layer in &self.layers {
            io_bin::write_u64(w, layer.spec.in_dim as u64)?;
            io_bin::write_u64(w, layer.spec.out_dim as u64)?;
            io_bin::write_u8(w, layer.spec.reg.code())?;
            io_bin::write_u8(w, layer.spec.relu as u8)?;
            io_bin::write_f64_slice(w, layer.linear.weight.as_slice())?;
            io_bin::write_f64_slice(w, layer.linear.bias.as_slice())?;
            if let Some(bn) = &layer.bn {
                io_bin::write_f64(w, bn.momentum)?;
                io_bin::write_f64(w, bn.eps)?;
                io_bin::write_f64_slice(w, bn.gamma.as_slice())?;
                io_bin::write_f64_slice(w, bn.beta.as_slice())?;
                io_bin::write_f64_slice(w, bn.running_mean.as_slice())?;
                io_bin::write_f64_slice(w, bn.running_var.as_slice())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
        let dropout_rate = io_bin::read_f64(r)?;
        let n_layers = io_bin::read_u32(r)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = io_bin::read_u64(r)? as usize;
            let out_dim = io_bin::read_u64(r)? as usize;
            let reg = Regularization::from_code(io_bin::read_u8(r)?)?;
            let relu = io_bin::read_u8(r)? != 0;
            let spec = LayerSpec {
                in_dim,
                out_dim,
                reg,
                relu,
            };
            let weight_data = io_bin::read_f64_vec(r)?;
            if weight_data.len() != in_dim * out_dim {
                return Err(bad("weight tensor size mismatch"));
            }
            let weight = DMatrix::from_column_slice(out_dim, in_dim, &weight_data);
            let bias_data = io_bin::read_f64_vec(r)?;
            if bias_data.len() != out_dim {
                return Err(bad("bias tensor size mismatch"));
            }
            let bias = DVector::from_vec(bias_data);
            let bn = if reg == Regularization::None {
                None
            } else {
                let momentum = io_bin::read_f64(r)?;
                let eps = io_bin::read_f64(r)?;
                let gamma = DVector::from_vec(io_bin::read_f64_vec(r)?);
                let beta = DVector::from_vec(io_bin::read_f64_vec(r)?);
                let running_mean = DVector::from_vec(io_bin::read_f64_vec(r)?);
                let running_var = DVector::from_vec(io_bin::read_f64_vec(r)?);
                if [&gamma, &beta, &running_mean, &running_var]
                    .iter()
                    .any(|v| v.len() != out_dim)
                {
                    return Err(bad("batch-norm tensor size mismatch"));
                }
                Some(BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    momentum,
                    eps,
                })
            };
            layers.push(DenseLayer {
                spec,
                linear: Linear { weight, bias },
                bn,
            });
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::loss::{smooth_l1, smooth_l1_grad};
    use rand::SeedableRng;

    fn small_net(rng: &mut ChaCha12Rng) -> Mlp {
        Mlp::new(
            &[
                LayerSpec::hidden(4, 6, Regularization::BatchNorm),
                LayerSpec::hidden(6, 5, Regularization::BatchNorm),
                LayerSpec::output(5, 3),
            ],
            0.0,
            0.25,
            rng,
        )
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut net = small_net(&mut rng);
        let x = DMatrix::from_fn(5, 4, |i, j| ((i * 4 + j) as f64 * 0.7).sin());
        let t = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.3).cos());
        let beta = 1.0;

        let (y, caches) = net.forward_train(&x, &mut rng);
        let d_out = smooth_l1_grad(&y, &t, beta);
        let (grads, _) = net.backward(&caches, d_out);

        let eps = 1e-6;
        // Check a sample of weight entries in every layer plus BN params.
        for li in 0..net.layers.len() {
            for &(r, c) in &[(0usize, 0usize), (1, 2)] {
                if r >= net.layers[li].linear.weight.nrows()
                    || c >= net.layers[li].linear.weight.ncols()
                {
                    continue;
                }
                let probe = |delta: f64, net: &mut Mlp| {
                    net.layers[li].linear.weight[(r, c)] += delta;
                    let mut rng2 = ChaCha12Rng::seed_from_u64(0);
                    let (y2, _) = net.forward_train(&x, &mut rng2);
                    net.layers[li].linear.weight[(r, c)] -= delta;
                    smooth_l1(&y2, &t, beta)
                };
                let plus = probe(eps, &mut net);
                let minus = probe(-eps, &mut net);
                let numeric = (plus - minus) / (2.0 * eps);
                let analytic = grads[li].dw[(r, c)];
                assert!(
                    (analytic - numeric).abs() < 1e-7,
                    "layer {li} w[{r},{c}]: analytic {analytic} vs numeric {numeric}"
                );
            }
            if let Some(dgamma) = &grads[li].dgamma {
                let probe = |delta: f64, net: &mut Mlp| {
                    net.layers[li].bn.as_mut().unwrap().gamma[0] += delta;
                    let mut rng2 = ChaCha12Rng::seed_from_u64(0);
                    let (y2, _) = net.forward_train(&x, &mut rng2);
                    net.layers[li].bn.as_mut().unwrap().gamma[0] -= delta;
                    smooth_l1(&y2, &t, beta)
                };
                let numeric = (probe(eps, &mut net) - probe(-eps, &mut net)) / (2.0 * eps);
                assert!(
                    (dgamma[0] - numeric).abs() < 1e-7,
                    "layer {li} gamma: analytic {} vs numeric {numeric}",
                    dgamma[0]
                );
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut net = small_net(&mut rng);
        let x = DMatrix::from_fn(4, 4, |i, j| ((i + 2 * j) as f64 * 0.5).sin());
        let t = DMatrix::from_fn(4, 3, |i, j| ((i + j) as f64 * 0.4).cos());
        let (y, caches) = net.forward_train(&x, &mut rng);
        let (_, dx) = net.backward(&caches, smooth_l1_grad(&y, &t, 1.0));
        let eps = 1e-6;
        for &(r, c) in &[(0usize, 0usize), (2, 3), (3, 1)] {
            let mut probe = |delta: f64| {
                let mut x2 = x.clone();
                x2[(r, c)] += delta;
                let mut rng2 = ChaCha12Rng::seed_from_u64(0);
                let (y2, _) = net.forward_train(&x2, &mut rng2);
                smooth_l1(&y2, &t, 1.0)
            };
            let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
            assert!(
                (dx[(r, c)] - numeric).abs() < 1e-7,
                "dx[{r},{c}]: analytic {} vs numeric {numeric}",
                dx[(r, c)]
            );
        }
    }

    #[test]
    fn batchnorm_train_output_is_normalised() {
        let mut bn = BatchNorm::new(2, 0.25);
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let (y, _) = bn.forward_train(&x);
        for j in 0..2 {
            let mean: f64 = y.column(j).sum() / 4.0;
            let var: f64 = y.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        // Running stats moved a quarter of the way from (0, 1).
        assert!((bn.running_mean[0] - 0.25 * 2.5).abs() < 1e-12);
        let unbiased = x.column(0).iter().map(|v| (v - 2.5) * (v - 2.5)).sum::<f64>() / 3.0;
        assert!((bn.running_var[0] - (0.75 + 0.25 * unbiased)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats_and_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let mut net = Mlp::new(
            &[
                LayerSpec::hidden(3, 8, Regularization::BatchNormDropout),
                LayerSpec::output(8, 2),
            ],
            0.25,
            0.25,
            &mut rng,
        );
        let x = DMatrix::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 0.3);
        // A few training passes to move running stats.
        for _ in 0..5 {
            let _ = net.forward_train(&x, &mut rng);
        }
        let a = net.forward_eval(&x);
        let b = net.forward_eval(&x);
        assert_eq!(a, b);
        // Dropout must not fire in eval: outputs of a single row batch agree
        // with the full-batch rows.
        let single = net.forward_eval(&x.rows(0, 1).into_owned());
        for j in 0..2 {
            assert!((single[(0, j)] - a[(0, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_scales_expectation() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let rate = 0.25;
        let keep = 1.0 - rate;
        let mut kept = 0usize;
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            if rng.random::<f64>() < rate {
                sum += 0.0;
            } else {
                kept += 1;
                sum += 1.0 / keep;
            }
        }
        assert!((kept as f64 / n as f64 - keep).abs() < 0.01);
        assert!((sum / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn training_reduces_loss_on_a_toy_problem() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut net = Mlp::new(
            &[
                LayerSpec::hidden(2, 16, Regularization::BatchNorm),
                LayerSpec::output(16, 1),
            ],
            0.0,
            0.25,
            &mut rng,
        );
        let x = DMatrix::from_fn(32, 2, |i, j| ((i * 2 + j) as f64 * 0.37).sin());
        let t = DMatrix::from_fn(32, 1, |i, _| {
            let a = ((i * 2) as f64 * 0.37).sin();
            let b = ((i * 2 + 1) as f64 * 0.37).sin();
            a * b + 0.5 * a
        });
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut state = AdamState::new(&net.tensor_sizes());
        let (y0, _) = net.forward_train(&x, &mut rng);
        let loss0 = smooth_l1(&y0, &t, 1.0);
        for _ in 0..300 {
            let (y, caches) = net.forward_train(&x, &mut rng);
            let d = smooth_l1_grad(&y, &t, 1.0);
            let (grads, _) = net.backward(&caches, d);
            state.begin_step();
            net.apply_grads(&mut state, &cfg, &grads, 0);
        }
        let y1 = net.forward_eval(&x);
        let loss1 = smooth_l1(&y1, &t, 1.0);
        assert!(
            loss1 < loss0 * 0.2,
            "loss did not drop enough: {loss0} → {loss1}"
        );
    }

    #[test]
    fn persistence_round_trip_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        let mut net = Mlp::new(
            &[
                LayerSpec::hidden(3, 4, Regularization::BatchNormDropout),
                LayerSpec::output(4, 2),
            ],
            0.25,
            0.25,
            &mut rng,
        );
        let x = DMatrix::from_fn(5, 3, |i, j| (i as f64 + j as f64) * 0.1);
        let _ = net.forward_train(&x, &mut rng);
        let mut buf = Vec::new();
        net.write(&mut buf).unwrap();
        let back = Mlp::read(&mut buf.as_slice()).unwrap();
        assert_eq!(net, back);
    }
}
