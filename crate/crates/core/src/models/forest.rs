//! Random-forest regression with multi-output CART trees.
//!
//! Split quality is the standard variance-reduction criterion evaluated
//! jointly over all outputs. Because the target vectors are long (a
//! flattened mesh), each tree works off a precomputed Gram matrix of target
//! inner products: the left/right sums of squared norms needed to score a
//! split then update incrementally from Gram entries instead of touching
//! the target vectors themselves.
//!
//! Leaves store training-sample indices; predictions average the stored
//! target columns, so the forest keeps one shared copy of the training
//! targets instead of per-leaf means.

use super::{ModelError, PredictionTarget, Representation};
use crate::io_bin::{self, PayloadKind};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Number of feature candidates examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        let k = match self {
            Self::Sqrt => (n_features as f64).sqrt().floor() as usize,
            Self::Log2 => (n_features as f64).log2().floor() as usize,
            Self::All => n_features,
        };
        k.clamp(1, n_features.max(1))
    }

    fn code(self) -> u8 {
        match self {
            Self::Sqrt => 0,
            Self::Log2 => 1,
            Self::All => 2,
        }
    }

    fn from_code(code: u8) -> std::io::Result<Self> {
        match code {
            0 => Ok(Self::Sqrt),
            1 => Ok(Self::Log2),
            2 => Ok(Self::All),
            other => Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unknown max-features code {other}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 64,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Tuned forest hyperparameters for each prediction target and input
/// representation.
pub fn forest_preset(target: PredictionTarget, representation: Representation) -> ForestConfig {
    let (n_trees, max_depth, min_samples_split, min_samples_leaf, max_features) =
        match (target, representation) {
            (PredictionTarget::Adaptations, Representation::Raw) => {
                (1154, 162, 6, 3, MaxFeatures::Sqrt)
            }
            (PredictionTarget::Adaptations, Representation::Reduced) => {
                (1297, 179, 5, 1, MaxFeatures::Sqrt)
            }
            (PredictionTarget::SocketShape, Representation::Raw) => {
                (920, 181, 5, 1, MaxFeatures::Log2)
            }
            (PredictionTarget::SocketShape, Representation::Reduced) => {
                (320, 158, 6, 5, MaxFeatures::Sqrt)
            }
        };
    ForestConfig {
        n_trees,
        max_depth,
        min_samples_split,
        min_samples_leaf,
        max_features,
        bootstrap: true,
        seed: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        len: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    /// Training-sample indices of all leaves, flattened.
    samples: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    n_features: usize,
    /// One column per training sample (out_dim × n_train).
    targets: DMatrix<f64>,
    trees: Vec<Tree>,
}

struct TreeBuilder<'a> {
    features: &'a DMatrix<f64>,
    gram: &'a DMatrix<f64>,
    config: &'a ForestConfig,
    rng: ChaCha12Rng,
}

impl TreeBuilder<'_> {
    fn build(&mut self, tree: &mut Tree, samples: Vec<u32>, depth: usize) -> u32 {
        let node_idx = tree.nodes.len() as u32;
        tree.nodes.push(Node::Leaf { start: 0, len: 0 });
        let ns = samples.len();
        let splittable = depth < self.config.max_depth
            && ns >= self.config.min_samples_split
            && ns >= 2 * self.config.min_samples_leaf
            && !self.is_pure(&samples);
        if splittable {
            if let Some((feature, threshold)) = self.best_split(&samples) {
                let mut left = Vec::new();
                let mut right = Vec::new();
                for &s in &samples {
                    if self.features[(s as usize, feature)] <= threshold {
                        left.push(s);
                    } else {
                        right.push(s);
                    }
                }
                let left_idx = self.build(tree, left, depth + 1);
                let right_idx = self.build(tree, right, depth + 1);
                tree.nodes[node_idx as usize] = Node::Split {
                    feature: feature as u32,
                    threshold,
                    left: left_idx,
                    right: right_idx,
                };
                return node_idx;
            }
        }
        let start = tree.samples.len() as u32;
        tree.samples.extend_from_slice(&samples);
        tree.nodes[node_idx as usize] = Node::Leaf {
            start,
            len: ns as u32,
        };
        node_idx
    }

    /// Total squared error of the node is zero (identical targets).
    fn is_pure(&self, samples: &[u32]) -> bool {
        let ns = samples.len() as f64;
        let mut diag = 0.0;
        let mut total = 0.0;
        for &ri in samples {
            diag += self.gram[(ri as usize, ri as usize)];
            for &rj in samples {
                total += self.gram[(ri as usize, rj as usize)];
            }
        }
        let sse = diag - total / ns;
        sse <= 1e-12 * diag.max(1.0)
    }

    /// Finds the (feature, threshold) pair maximising the variance-reduction
    /// proxy `‖s_L‖²/n_L + ‖s_R‖²/n_R` over the sampled feature subset.
    fn best_split(&mut self, samples: &[u32]) -> Option<(usize, f64)> {
        let ns = samples.len();
        let n_features = self.features.ncols();
        // row_sum[i] = Σ_j ⟨y_i, y_j⟩ over the node, for the b-term updates.
        let mut row_sum = vec![0.0; ns];
        for (i, &ri) in samples.iter().enumerate() {
            let mut s = 0.0;
            for &rj in samples {
                s += self.gram[(ri as usize, rj as usize)];
            }
            row_sum[i] = s;
        }
        let c_tot: f64 = row_sum.iter().sum();
        let k = self.config.max_features.count(n_features);
        let candidates = self.sample_features(n_features, k);
        let msl = self.config.min_samples_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = Vec::with_capacity(ns);
        let mut left_rows: Vec<usize> = Vec::with_capacity(ns);
        for &f in &candidates {
            order.clear();
            order.extend(0..ns);
            order.sort_by(|&a, &b| {
                let va = self.features[(samples[a] as usize, f)];
                let vb = self.features[(samples[b] as usize, f)];
                va.total_cmp(&vb).then(samples[a].cmp(&samples[b]))
            });
            let value_at = |p: usize| self.features[(samples[order[p]] as usize, f)];
            if value_at(0) == value_at(ns - 1) {
                continue;
            }
            let mut a = 0.0; // ‖s_left‖²
            let mut b = 0.0; // ⟨s_total, s_left⟩
            left_rows.clear();
            for cut in 1..ns {
                let p = order[cut - 1];
                let r = samples[p] as usize;
                let mut grown = self.gram[(r, r)];
                for &lr in &left_rows {
                    grown += 2.0 * self.gram[(r, lr)];
                }
                a += grown;
                b += row_sum[p];
                left_rows.push(r);
                if cut < msl || ns - cut < msl {
                    continue;
                }
                let (lo, hi) = (value_at(cut - 1), value_at(cut));
                if lo == hi {
                    continue;
                }
                let n_l = cut as f64;
                let n_r = (ns - cut) as f64;
                let proxy = a / n_l + (c_tot - 2.0 * b + a) / n_r;
                if best.is_none_or(|(bp, _, _)| proxy > bp) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((proxy, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    /// Draws `k` distinct feature indices (partial Fisher–Yates).
    fn sample_features(&mut self, n_features: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n_features).collect();
        for i in 0..k {
            let j = self.rng.random_range(i..n_features);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn out_dim(&self) -> usize {
        self.targets.nrows()
    }

    /// Sizes of every leaf across all trees (diagnostics).
    pub fn leaf_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Leaf { len, .. } = node {
                    sizes.push(*len as usize);
                }
            }
        }
        sizes
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        if input.len() != self.n_features {
            return Err(ModelError::Dimension {
                expected: self.n_features,
                got: input.len(),
            });
        }
        let mut acc = vec![0.0; self.out_dim()];
        let tree_weight = 1.0 / self.trees.len() as f64;
        for tree in &self.trees {
            let mut node = 0usize;
            loop {
                match tree.nodes[node] {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        node = if input[feature as usize] <= threshold {
                            left as usize
                        } else {
                            right as usize
                        };
                    }
                    Node::Leaf { start, len } => {
                        let w = tree_weight / len as f64;
                        for &s in &tree.samples[start as usize..(start + len) as usize] {
                            let col = self.targets.column(s as usize);
                            for (dst, v) in acc.iter_mut().zip(col.iter()) {
                                *dst += w * v;
                            }
                        }
                        break;
                    }
                }
            }
        }
        Ok(acc)
    }

    /// Predicts a batch (one sample per row of `inputs`).
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
        let mut out = DMatrix::zeros(inputs.nrows(), self.out_dim());
        for i in 0..inputs.nrows() {
            let row: Vec<f64> = inputs.row(i).iter().copied().collect();
            let pred = self.predict_one(&row)?;
            for (j, v) in pred.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    pub fn write_payload<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        io_bin::write_u64(w, self.config.n_trees as u64)?;
        io_bin::write_u64(w, self.config.max_depth as u64)?;
        io_bin::write_u64(w, self.config.min_samples_split as u64)?;
        io_bin::write_u64(w, self.config.min_samples_leaf as u64)?;
        io_bin::write_u8(w, self.config.max_features.code())?;
        io_bin::write_u8(w, self.config.bootstrap as u8)?;
        io_bin::write_u64(w, self.config.seed)?;
        io_bin::write_u64(w, self.n_features as u64)?;
        io_bin::write_u64(w, self.targets.nrows() as u64)?;
        io_bin::write_u64(w, self.targets.ncols() as u64)?;
        io_bin::write_f64_slice(w, self.targets.as_slice())?;
        io_bin::write_u64(w, self.trees.len() as u64)?;
        for tree in &self.trees {
            io_bin::write_u64(w, tree.nodes.len() as u64)?;
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        io_bin::write_u8(w, 0)?;
                        io_bin::write_u32(w, *feature)?;
                        io_bin::write_f64(w, *threshold)?;
                        io_bin::write_u32(w, *left)?;
                        io_bin::write_u32(w, *right)?;
                    }
                    Node::Leaf { start, len } => {
                        io_bin::write_u8(w, 1)?;
                        io_bin::write_u32(w, *start)?;
                        io_bin::write_u32(w, *len)?;
                    }
                }
            }
            io_bin::write_u32_slice(w, &tree.samples)?;
        }
        Ok(())
    }

    pub fn read_payload<R: Read>(r: &mut R) -> std::io::Result<Self> {
        let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
        let config = ForestConfig {
            n_trees: io_bin::read_u64(r)? as usize,
            max_depth: io_bin::read_u64(r)? as usize,
            min_samples_split: io_bin::read_u64(r)? as usize,
            min_samples_leaf: io_bin::read_u64(r)? as usize,
            max_features: MaxFeatures::from_code(io_bin::read_u8(r)?)?,
            bootstrap: io_bin::read_u8(r)? != 0,
            seed: io_bin::read_u64(r)?,
        };
        let n_features = io_bin::read_u64(r)? as usize;
        let rows = io_bin::read_u64(r)? as usize;
        let cols = io_bin::read_u64(r)? as usize;
        let data = io_bin::read_f64_vec(r)?;
        if data.len() != rows * cols {
            return Err(bad("target matrix size mismatch"));
        }
        let targets = DMatrix::from_column_slice(rows, cols, &data);
        let n_trees = io_bin::read_u64(r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = io_bin::read_u64(r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let node = match io_bin::read_u8(r)? {
                    0 => Node::Split {
                        feature: io_bin::read_u32(r)?,
                        threshold: io_bin::read_f64(r)?,
                        left: io_bin::read_u32(r)?,
                        right: io_bin::read_u32(r)?,
                    },
                    1 => Node::Leaf {
                        start: io_bin::read_u32(r)?,
                        len: io_bin::read_u32(r)?,
                    },
                    other => return Err(bad(&format!("unknown node tag {other}"))),
                };
                nodes.push(node);
            }
            let samples = io_bin::read_u32_vec(r)?;
            trees.push(Tree { nodes, samples });
        }
        Ok(Self {
            config,
            n_features,
            targets,
            trees,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        io_bin::write_header(&mut w, PayloadKind::Forest)?;
        self.write_payload(&mut w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        io_bin::read_header(&mut r, PayloadKind::Forest)?;
        Ok(Self::read_payload(&mut r)?)
    }
}

/// Trains a forest on `features → targets` (one sample per row). Each tree
/// draws its bootstrap sample and feature subsets from an independent stream
/// of the forest seed.
pub fn train_forest(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    config: &ForestConfig,
) -> Result<Forest, ModelError> {
    let n = features.nrows();
    if n == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if targets.nrows() != n {
        return Err(ModelError::Dimension {
            expected: n,
            got: targets.nrows(),
        });
    }
    if config.n_trees == 0 {
        return Err(ModelError::BadConfig("n_trees must be positive".into()));
    }
    if config.min_samples_leaf == 0 || config.min_samples_split < 2 {
        return Err(ModelError::BadConfig(
            "min_samples_leaf must be ≥ 1 and min_samples_split ≥ 2".into(),
        ));
    }
    if config.max_depth == 0 {
        return Err(ModelError::BadConfig("max_depth must be positive".into()));
    }

    let gram = targets * targets.transpose();
    let mut trees = Vec::with_capacity(config.n_trees);
    for tree_idx in 0..config.n_trees {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(tree_idx as u64 + 1);
        let samples: Vec<u32> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut builder = TreeBuilder {
            features,
            gram: &gram,
            config,
            rng,
        };
        let mut tree = Tree {
            nodes: Vec::new(),
            samples: Vec::new(),
        };
        builder.build(&mut tree, samples, 0);
        trees.push(tree);
    }

    Ok(Forest {
        config: *config,
        n_features: features.ncols(),
        targets: targets.transpose(),
        trees,
    })
}
