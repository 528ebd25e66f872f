//! Hierarchical point-set regression network.
//!
//! The encoder abstracts the input cloud twice — farthest-point-sampled
//! centers, fixed-size radius neighbourhoods, a shared per-point MLP and a
//! channel-wise max pool — then pools a global feature vector that a dense
//! head maps to the flattened output field. Neighbourhood geometry is
//! deterministic, so the grouping plan for a cloud is computed once and
//! reused across epochs.
//!
//! Gradients flow through point features only; relative coordinates enter
//! each stage as constants.

use super::adam::AdamState;
use super::ffnn::{center_rows, column_means, gather_rows, TrainConfig};
use super::loss::{smooth_l1, smooth_l1_grad};
use super::nn::{LayerCache, LayerGrads, LayerSpec, Mlp, Regularization};
use super::{EpochLoss, ModelError, PredictionTarget};
use crate::io_bin::{self, PayloadKind};
use nalgebra::{DMatrix, DVector, Point3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// One set-abstraction stage: how many centers to sample, the grouping
/// radius (mm), the neighbourhood capacity and the shared MLP widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub centers: usize,
    pub radius: f64,
    pub cap: usize,
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetSpec {
    pub stage1: StageSpec,
    pub stage2: StageSpec,
    pub global_mlp: Vec<usize>,
    pub head: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetPreset {
    pub spec: PointSetSpec,
    pub epochs: usize,
}

/// Full-size architecture for each prediction target.
pub fn pointset_preset(target: PredictionTarget) -> PointSetPreset {
    let (head, epochs) = match target {
        PredictionTarget::Adaptations => (vec![64, 32], 65),
        PredictionTarget::SocketShape => (vec![2048, 64], 70),
    };
    PointSetPreset {
        spec: PointSetSpec {
            stage1: StageSpec {
                centers: 512,
                radius: 20.0,
                cap: 32,
                mlp: vec![64, 64, 128],
            },
            stage2: StageSpec {
                centers: 128,
                radius: 40.0,
                cap: 64,
                mlp: vec![128, 128, 256],
            },
            global_mlp: vec![256, 512, 1024],
            head,
        },
        epochs,
    }
}

/// Down-scaled architecture with the same structure, for small corpora and
/// constrained runtimes.
pub fn pointset_compact_preset(target: PredictionTarget) -> PointSetPreset {
    let (head, epochs) = match target {
        PredictionTarget::Adaptations => (vec![64, 32], 65),
        PredictionTarget::SocketShape => (vec![2048, 64], 70),
    };
    PointSetPreset {
        spec: PointSetSpec {
            stage1: StageSpec {
                centers: 128,
                radius: 25.0,
                cap: 16,
                mlp: vec![16, 16, 32],
            },
            stage2: StageSpec {
                centers: 32,
                radius: 50.0,
                cap: 16,
                mlp: vec![32, 32, 64],
            },
            global_mlp: vec![64, 128, 1024],
            head,
        },
        epochs,
    }
}

/// Greedy farthest-point sampling: repeatedly picks the point with the
/// largest distance to the already-chosen set (ties go to the lowest index).
pub fn farthest_point_sampling(points: &[Point3<f64>], k: usize, start: usize) -> Vec<u32> {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    assert!(start < points.len(), "start index out of range");
    let mut chosen = Vec::with_capacity(k);
    chosen.push(start as u32);
    let mut best: Vec<f64> = points
        .iter()
        .map(|p| (p - points[start]).norm_squared())
        .collect();
    while chosen.len() < k {
        let mut arg = 0usize;
        let mut max_d = -1.0;
        for (i, &d) in best.iter().enumerate() {
            if d > max_d {
                max_d = d;
                arg = i;
            }
        }
        chosen.push(arg as u32);
        for (i, d) in best.iter_mut().enumerate() {
            let nd = (points[i] - points[arg]).norm_squared();
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen
}

/// For each center, collects up to `cap` point indices within `radius`
/// (ascending index order) and pads by repeating the first member, so every
/// group has exactly `cap` entries. Returns the flattened groups.
pub fn ball_query(points: &[Point3<f64>], centers: &[u32], radius: f64, cap: usize) -> Vec<u32> {
    assert!(cap >= 1, "cap must be positive");
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(centers.len() * cap);
    for &c in centers {
        let cp = points[c as usize];
        let group_start = out.len();
        for (j, p) in points.iter().enumerate() {
            if out.len() - group_start == cap {
                break;
            }
            if (p - cp).norm_squared() <= r2 {
                out.push(j as u32);
            }
        }
        if out.len() == group_start {
            out.push(c);
        }
        let first = out[group_start];
        while out.len() - group_start < cap {
            out.push(first);
        }
    }
    out
}

/// Deterministic grouping of one cloud under a given architecture: sampled
/// centers and padded neighbourhoods for both abstraction stages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingPlan {
    /// Indices into the cloud.
    centers1: Vec<u32>,
    /// c1·cap1 member indices into the cloud.
    groups1: Vec<u32>,
    /// Indices into `centers1`.
    centers2: Vec<u32>,
    /// c2·cap2 member indices into `centers1`.
    groups2: Vec<u32>,
}

impl GroupingPlan {
    pub fn new(cloud: &[Point3<f64>], spec: &PointSetSpec) -> Result<Self, ModelError> {
        if cloud.len() < spec.stage1.centers {
            return Err(ModelError::BadConfig(format!(
                "cloud has {} points but stage 1 samples {} centers",
                cloud.len(),
                spec.stage1.centers
            )));
        }
        let centers1 = farthest_point_sampling(cloud, spec.stage1.centers, 0);
        let groups1 = ball_query(cloud, &centers1, spec.stage1.radius, spec.stage1.cap);
        let p1: Vec<Point3<f64>> = centers1.iter().map(|&i| cloud[i as usize]).collect();
        let centers2 = farthest_point_sampling(&p1, spec.stage2.centers, 0);
        let groups2 = ball_query(&p1, &centers2, spec.stage2.radius, spec.stage2.cap);
        Ok(Self {
            centers1,
            groups1,
            centers2,
            groups2,
        })
    }
}

/// Max-pools consecutive row groups of size `group_size`, returning the
/// pooled matrix and the winning in-group offset per (group, channel).
pub fn max_pool_groups(h: &DMatrix<f64>, group_size: usize) -> (DMatrix<f64>, Vec<u32>) {
    let n_groups = h.nrows() / group_size;
    let ch = h.ncols();
    let mut pooled = DMatrix::zeros(n_groups, ch);
    let mut argmax = vec![0u32; n_groups * ch];
    for g in 0..n_groups {
        for c in 0..ch {
            let mut best = h[(g * group_size, c)];
            let mut arg = 0u32;
            for k in 1..group_size {
                let v = h[(g * group_size + k, c)];
                if v > best {
                    best = v;
                    arg = k as u32;
                }
            }
            pooled[(g, c)] = best;
            argmax[g * ch + c] = arg;
        }
    }
    (pooled, argmax)
}

/// Routes pooled gradients back to the winning rows recorded in `argmax`.
pub fn max_pool_backward(d_pooled: &DMatrix<f64>, argmax: &[u32], group_size: usize) -> DMatrix<f64> {
    let n_groups = d_pooled.nrows();
    let ch = d_pooled.ncols();
    let mut d_rows = DMatrix::zeros(n_groups * group_size, ch);
    for g in 0..n_groups {
        for c in 0..ch {
            let k = argmax[g * ch + c] as usize;
            d_rows[(g * group_size + k, c)] = d_pooled[(g, c)];
        }
    }
    d_rows
}

type Sample<'a> = (&'a [Point3<f64>], &'a GroupingPlan);

fn stage1_rows(samples: &[Sample], spec: &PointSetSpec) -> DMatrix<f64> {
    let (c1, k1) = (spec.stage1.centers, spec.stage1.cap);
    let mut x = DMatrix::zeros(samples.len() * c1 * k1, 3);
    for (b, (cloud, plan)) in samples.iter().enumerate() {
        for i in 0..c1 {
            let cp = cloud[plan.centers1[i] as usize];
            for k in 0..k1 {
                let member = cloud[plan.groups1[i * k1 + k] as usize];
                let d = member - cp;
                let r = (b * c1 + i) * k1 + k;
                x[(r, 0)] = d.x;
                x[(r, 1)] = d.y;
                x[(r, 2)] = d.z;
            }
        }
    }
    x
}

fn stage2_rows(samples: &[Sample], spec: &PointSetSpec, f1: &DMatrix<f64>) -> DMatrix<f64> {
    let c1 = spec.stage1.centers;
    let (c2, k2) = (spec.stage2.centers, spec.stage2.cap);
    let ch1 = f1.ncols();
    let mut x = DMatrix::zeros(samples.len() * c2 * k2, 3 + ch1);
    for (b, (cloud, plan)) in samples.iter().enumerate() {
        for i in 0..c2 {
            let center = cloud[plan.centers1[plan.centers2[i] as usize] as usize];
            for k in 0..k2 {
                let j = plan.groups2[i * k2 + k] as usize;
                let member = cloud[plan.centers1[j] as usize];
                let d = member - center;
                let r = (b * c2 + i) * k2 + k;
                x[(r, 0)] = d.x;
                x[(r, 1)] = d.y;
                x[(r, 2)] = d.z;
                for c in 0..ch1 {
                    x[(r, 3 + c)] = f1[(b * c1 + j, c)];
                }
            }
        }
    }
    x
}

fn global_rows(samples: &[Sample], spec: &PointSetSpec, f2: &DMatrix<f64>) -> DMatrix<f64> {
    let c2 = spec.stage2.centers;
    let ch2 = f2.ncols();
    let mut x = DMatrix::zeros(samples.len() * c2, 3 + ch2);
    for (b, (cloud, plan)) in samples.iter().enumerate() {
        let positions: Vec<Point3<f64>> = plan
            .centers2
            .iter()
            .map(|&i| cloud[plan.centers1[i as usize] as usize])
            .collect();
        let mut centroid = nalgebra::Vector3::zeros();
        for p in &positions {
            centroid += p.coords;
        }
        centroid /= positions.len() as f64;
        for (i, p) in positions.iter().enumerate() {
            let r = b * c2 + i;
            let d = p.coords - centroid;
            x[(r, 0)] = d.x;
            x[(r, 1)] = d.y;
            x[(r, 2)] = d.z;
            for c in 0..ch2 {
                x[(r, 3 + c)] = f2[(r, c)];
            }
        }
    }
    x
}

/// Trained point-set model: the three encoder MLPs, the dense head and the
/// stored target mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetModel {
    pub spec: PointSetSpec,
    pub stage1: Mlp,
    pub stage2: Mlp,
    pub global: Mlp,
    pub head: Mlp,
    pub target_mean: DVector<f64>,
}

struct ForwardCaches {
    s1: Vec<LayerCache>,
    argmax1: Vec<u32>,
    s2: Vec<LayerCache>,
    argmax2: Vec<u32>,
    global: Vec<LayerCache>,
    argmax3: Vec<u32>,
    head: Vec<LayerCache>,
}

struct Grads {
    s1: Vec<LayerGrads>,
    s2: Vec<LayerGrads>,
    global: Vec<LayerGrads>,
    head: Vec<LayerGrads>,
}

fn stage_layer_specs(in_ch: usize, widths: &[usize]) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(widths.len());
    let mut prev = in_ch;
    for &w in widths {
        specs.push(LayerSpec::hidden(prev, w, Regularization::BatchNorm));
        prev = w;
    }
    specs
}

fn head_layer_specs(in_ch: usize, hidden: &[usize], out_dim: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = in_ch;
    for &w in hidden {
        specs.push(LayerSpec::hidden(prev, w, Regularization::BatchNormDropout));
        prev = w;
    }
    specs.push(LayerSpec::output(prev, out_dim));
    specs
}

impl PointSetModel {
    fn init(
        spec: &PointSetSpec,
        out_dim: usize,
        config: &TrainConfig,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, ModelError> {
        if spec.stage1.mlp.is_empty() || spec.stage2.mlp.is_empty() || spec.global_mlp.is_empty() {
            return Err(ModelError::BadConfig(
                "every encoder stage needs at least one layer".into(),
            ));
        }
        if spec.stage2.centers > spec.stage1.centers {
            return Err(ModelError::BadConfig(
                "stage 2 cannot sample more centers than stage 1 provides".into(),
            ));
        }
        if spec.stage1.radius <= 0.0 || spec.stage2.radius <= 0.0 {
            return Err(ModelError::BadConfig("radii must be positive".into()));
        }
        if spec.stage1.cap == 0 || spec.stage2.cap == 0 {
            return Err(ModelError::BadConfig("caps must be positive".into()));
        }
        let ch1 = *spec.stage1.mlp.last().unwrap();
        let ch2 = *spec.stage2.mlp.last().unwrap();
        let chg = *spec.global_mlp.last().unwrap();
        let stage1 = Mlp::new(
            &stage_layer_specs(3, &spec.stage1.mlp),
            config.dropout_rate,
            config.bn_momentum,
            rng,
        );
        let stage2 = Mlp::new(
            &stage_layer_specs(3 + ch1, &spec.stage2.mlp),
            config.dropout_rate,
            config.bn_momentum,
            rng,
        );
        let global = Mlp::new(
            &stage_layer_specs(3 + ch2, &spec.global_mlp),
            config.dropout_rate,
            config.bn_momentum,
            rng,
        );
        let head = Mlp::new(
            &head_layer_specs(chg, &spec.head, out_dim),
            config.dropout_rate,
            config.bn_momentum,
            rng,
        );
        Ok(Self {
            spec: spec.clone(),
            stage1,
            stage2,
            global,
            head,
            target_mean: DVector::zeros(out_dim),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    fn forward_train_batch(
        &mut self,
        samples: &[Sample],
        rng: &mut ChaCha12Rng,
    ) -> (DMatrix<f64>, ForwardCaches) {
        let x1 = stage1_rows(samples, &self.spec);
        let (h1, s1) = self.stage1.forward_train(&x1, rng);
        let (f1, argmax1) = max_pool_groups(&h1, self.spec.stage1.cap);
        let x2 = stage2_rows(samples, &self.spec, &f1);
        let (h2, s2) = self.stage2.forward_train(&x2, rng);
        let (f2, argmax2) = max_pool_groups(&h2, self.spec.stage2.cap);
        let x3 = global_rows(samples, &self.spec, &f2);
        let (h3, global) = self.global.forward_train(&x3, rng);
        let (g, argmax3) = max_pool_groups(&h3, self.spec.stage2.centers);
        let (out, head) = self.head.forward_train(&g, rng);
        (
            out,
            ForwardCaches {
                s1,
                argmax1,
                s2,
                argmax2,
                global,
                argmax3,
                head,
            },
        )
    }

    fn forward_eval_batch(&self, samples: &[Sample]) -> DMatrix<f64> {
        let x1 = stage1_rows(samples, &self.spec);
        let (f1, _) = max_pool_groups(&self.stage1.forward_eval(&x1), self.spec.stage1.cap);
        let x2 = stage2_rows(samples, &self.spec, &f1);
        let (f2, _) = max_pool_groups(&self.stage2.forward_eval(&x2), self.spec.stage2.cap);
        let x3 = global_rows(samples, &self.spec, &f2);
        let (g, _) = max_pool_groups(&self.global.forward_eval(&x3), self.spec.stage2.centers);
        self.head.forward_eval(&g)
    }

    fn backward_batch(
        &self,
        samples: &[Sample],
        caches: &ForwardCaches,
        d_out: DMatrix<f64>,
    ) -> Grads {
        let c1 = self.spec.stage1.centers;
        let (c2, k2) = (self.spec.stage2.centers, self.spec.stage2.cap);
        let ch1 = *self.spec.stage1.mlp.last().unwrap();

        let (head_grads, d_g) = self.head.backward(&caches.head, d_out);
        let d_h3 = max_pool_backward(&d_g, &caches.argmax3, c2);
        let (global_grads, d_x3) = self.global.backward(&caches.global, d_h3);
        let d_f2 = d_x3.columns(3, d_x3.ncols() - 3).into_owned();
        let d_h2 = max_pool_backward(&d_f2, &caches.argmax2, k2);
        let (s2_grads, d_x2) = self.stage2.backward(&caches.s2, d_h2);

        // Scatter feature gradients back onto the stage-1 centers they were
        // gathered from (padded repeats accumulate).
        let mut d_f1 = DMatrix::zeros(samples.len() * c1, ch1);
        for (b, (_, plan)) in samples.iter().enumerate() {
            for i in 0..c2 {
                for k in 0..k2 {
                    let j = plan.groups2[i * k2 + k] as usize;
                    let r = (b * c2 + i) * k2 + k;
                    for c in 0..ch1 {
                        d_f1[(b * c1 + j, c)] += d_x2[(r, 3 + c)];
                    }
                }
            }
        }
        let d_h1 = max_pool_backward(&d_f1, &caches.argmax1, self.spec.stage1.cap);
        let (s1_grads, _) = self.stage1.backward(&caches.s1, d_h1);

        Grads {
            s1: s1_grads,
            s2: s2_grads,
            global: global_grads,
            head: head_grads,
        }
    }

    fn tensor_sizes(&self) -> Vec<usize> {
        let mut sizes = self.stage1.tensor_sizes();
        sizes.extend(self.stage2.tensor_sizes());
        sizes.extend(self.global.tensor_sizes());
        sizes.extend(self.head.tensor_sizes());
        sizes
    }

    fn apply_grads(
        &mut self,
        adam: &mut AdamState,
        config: &TrainConfig,
        grads: &Grads,
    ) {
        adam.begin_step();
        let mut base = 0;
        base = self.stage1.apply_grads(adam, &config.adam, &grads.s1, base);
        base = self.stage2.apply_grads(adam, &config.adam, &grads.s2, base);
        base = self.global.apply_grads(adam, &config.adam, &grads.global, base);
        self.head.apply_grads(adam, &config.adam, &grads.head, base);
    }

    /// Predicts the output field for one cloud.
    pub fn predict(&self, cloud: &[Point3<f64>]) -> Result<Vec<f64>, ModelError> {
        let plan = GroupingPlan::new(cloud, &self.spec)?;
        let y = self.forward_eval_batch(&[(cloud, &plan)]);
        Ok((0..self.out_dim())
            .map(|j| y[(0, j)] + self.target_mean[j])
            .collect())
    }

    pub fn write_payload<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let spec_json = serde_json::to_string(&self.spec)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        io_bin::write_string(w, &spec_json)?;
        io_bin::write_f64_slice(w, self.target_mean.as_slice())?;
        self.stage1.write(w)?;
        self.stage2.write(w)?;
        self.global.write(w)?;
        self.head.write(w)
    }

    pub fn read_payload<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let spec_json = io_bin::read_string(r)?;
        let spec: PointSetSpec = serde_json::from_str(&spec_json)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let target_mean = DVector::from_vec(io_bin::read_f64_vec(r)?);
        let stage1 = Mlp::read(r)?;
        let stage2 = Mlp::read(r)?;
        let global = Mlp::read(r)?;
        let head = Mlp::read(r)?;
        Ok(Self {
            spec,
            stage1,
            stage2,
            global,
            head,
            target_mean,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        io_bin::write_header(&mut w, PayloadKind::PointSet)?;
        self.write_payload(&mut w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        io_bin::read_header(&mut r, PayloadKind::PointSet)?;
        Ok(Self::read_payload(&mut r)?)
    }
}

/// Trains a point-set network on `clouds → targets` (one target row per
/// cloud). Grouping plans are computed once per cloud up front.
pub fn train_pointset(
    clouds: &[Vec<Point3<f64>>],
    targets: &DMatrix<f64>,
    spec: &PointSetSpec,
    config: &TrainConfig,
    test: Option<(&[Vec<Point3<f64>>], &DMatrix<f64>)>,
) -> Result<(PointSetModel, Vec<EpochLoss>), ModelError> {
    let n = clouds.len();
    if n == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if targets.nrows() != n {
        return Err(ModelError::Dimension {
            expected: n,
            got: targets.nrows(),
        });
    }
    if config.batch_size == 0 {
        return Err(ModelError::BadConfig("batch size must be positive".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut model = PointSetModel::init(spec, targets.ncols(), config, &mut rng)?;
    model.target_mean = column_means(targets);
    let t = center_rows(targets, &model.target_mean);

    let plans: Vec<GroupingPlan> = clouds
        .iter()
        .map(|c| GroupingPlan::new(c, spec))
        .collect::<Result<_, _>>()?;
    let test_setup = match test {
        Some((tc, tt)) => {
            if tt.nrows() != tc.len() || tt.ncols() != targets.ncols() {
                return Err(ModelError::Dimension {
                    expected: targets.ncols(),
                    got: tt.ncols(),
                });
            }
            let test_plans: Vec<GroupingPlan> = tc
                .iter()
                .map(|c| GroupingPlan::new(c, spec))
                .collect::<Result<_, _>>()?;
            Some((tc, center_rows(tt, &model.target_mean), test_plans))
        }
        None => None,
    };

    let mut adam = AdamState::new(&model.tensor_sizes());
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<Sample> = chunk
                .iter()
                .map(|&i| (clouds[i].as_slice(), &plans[i]))
                .collect();
            let bt = gather_rows(&t, chunk);
            let (y, caches) = model.forward_train_batch(&samples, &mut rng);
            let loss = smooth_l1(&y, &bt, config.loss_beta);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let d_out = smooth_l1_grad(&y, &bt, config.loss_beta);
            let grads = model.backward_batch(&samples, &caches, d_out);
            model.apply_grads(&mut adam, config, &grads);
        }
        let test_loss = test_setup.as_ref().map(|(tc, tt, tp)| {
            let samples: Vec<Sample> = tc
                .iter()
                .zip(tp.iter())
                .map(|(c, p)| (c.as_slice(), p))
                .collect();
            let y = model.forward_eval_batch(&samples);
            smooth_l1(&y, tt, config.loss_beta)
        });
        log.push(EpochLoss {
            epoch,
            train_loss: epoch_loss / n as f64,
            test_loss,
        });
    }

    Ok((model, log))
}
