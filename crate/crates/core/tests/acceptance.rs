//! End-to-end acceptance checks, one test per shipping criterion.
//!
//! Each test prints a single `criterion NN … PASS` line on success (visible
//! with `--nocapture`); a failed criterion shows up as the test's own FAILED
//! line. Criteria 7–10 share one synthetic 118-pair corpus and re-use trained
//! cross-validation reports, so the heavy configurations are each trained
//! exactly once per test run.

use std::fs;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use socketfit_core::eval::EvalReport;
use socketfit_core::experiment::{
    cross_validate, preprocess_corpus, run_experiment, Corpus, ExperimentConfig,
};
use socketfit_core::mesh::{
    closest_point_on_mesh, closest_point_on_triangle, surface_to_surface, TriMesh,
};
use socketfit_core::models::{
    ball_query, farthest_point_sampling, max_pool_backward, max_pool_groups, smooth_l1,
    smooth_l1_grad, train_forest, ForestConfig, LayerSpec, MaxFeatures, Method, Mlp,
    PredictionTarget, Regularization, Representation,
};
use socketfit_core::pca::{PcaKind, PcaModel};
use socketfit_core::preprocess::{
    canonical_template, fit_template, reorient, LandmarkPair, PreprocessConfig,
    RegistrationConfig, ScanPair,
};
use socketfit_core::synth::{generate_dataset, generate_sample, SynthConfig};

/// Geometry oracles must agree with brute force to this absolute bound (mm).
const TOL_GEOM_MM: f64 = 1e-9;
/// Reorientation must recover the canonical pose to this bound (mm).
const TOL_REORIENT_MM: f64 = 1e-6;
/// Reoriented landmarks must satisfy the pose contract to this bound (mm).
const TOL_LANDMARK_MM: f64 = 1e-9;
/// PCA bases and spectra must match the dense oracle to this bound.
const TOL_PCA: f64 = 1e-9;
/// Reconstruction MSE must match the discarded variance to this relative bound.
const TOL_PCA_MSE_REL: f64 = 1e-6;
/// Analytic gradients must match central differences to this relative bound.
const TOL_GRAD_REL: f64 = 1e-4;
/// Tree predictions must match the exhaustive CART oracle to this bound.
const TOL_TREE: f64 = 1e-9;
/// Template fitting must reach this median residual (mm) …
const FIT_RESIDUAL_MM: f64 = 0.5;
/// … within this budget.
const FIT_BUDGET: Duration = Duration::from_secs(60);
/// The geometry oracle suite must finish within this budget.
const GEOM_BUDGET: Duration = Duration::from_secs(60);
/// Accuracy floor for forest/adaptations/raw on the synthetic corpus (mm).
const FLOOR_MEDIAN_MM: f64 = 2.0;
/// Reduced and raw feedforward medians must agree to this bound (mm).
const PARITY_MM: f64 = 0.5;

const CORPUS_SAMPLES: usize = 118;
const CORPUS_SEED: u64 = 7;

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

static CORPUS: OnceLock<Corpus> = OnceLock::new();

/// Synthesises the 118-pair corpus once and pre-processes it into vertex-wise
/// correspondence; every sample must survive pre-processing.
fn corpus() -> &'static Corpus {
    CORPUS.get_or_init(|| {
        let raw = tempfile::tempdir().expect("create corpus dir");
        let pre = tempfile::tempdir().expect("create preprocess dir");
        let config = SynthConfig {
            n_samples: CORPUS_SAMPLES,
            seed: CORPUS_SEED,
            ..SynthConfig::default()
        };
        generate_dataset(&config, raw.path()).expect("generate corpus");
        let outcome = preprocess_corpus(raw.path(), pre.path(), &PreprocessConfig::default())
            .expect("preprocess corpus");
        assert!(
            outcome.failures.is_empty(),
            "pre-processing dropped samples: {:?}",
            outcome.failures
        );
        let corpus = Corpus::load(pre.path()).expect("load corpus");
        assert_eq!(corpus.len(), CORPUS_SAMPLES);
        corpus
    })
}

fn experiment(method: Method, target: PredictionTarget, representation: Representation) -> ExperimentConfig {
    ExperimentConfig {
        method,
        target,
        representation,
        compact_pointset: method == Method::PointSet,
        ..ExperimentConfig::default()
    }
}

fn report(lock: &'static OnceLock<EvalReport>, config: ExperimentConfig) -> &'static EvalReport {
    lock.get_or_init(|| {
        cross_validate(corpus(), &config)
            .expect("cross-validation")
            .report
    })
}

static FOREST_ADAPT: OnceLock<EvalReport> = OnceLock::new();
static FOREST_SOCKET: OnceLock<EvalReport> = OnceLock::new();
static FFNN_ADAPT_REDUCED: OnceLock<EvalReport> = OnceLock::new();
static FFNN_SOCKET_REDUCED: OnceLock<EvalReport> = OnceLock::new();
static FFNN_ADAPT_RAW: OnceLock<EvalReport> = OnceLock::new();
static POINTSET_ADAPT: OnceLock<EvalReport> = OnceLock::new();
static POINTSET_SOCKET: OnceLock<EvalReport> = OnceLock::new();

fn forest_adapt() -> &'static EvalReport {
    report(
        &FOREST_ADAPT,
        experiment(Method::Forest, PredictionTarget::Adaptations, Representation::Raw),
    )
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

fn assert_rel(analytic: f64, numeric: f64, what: &str) {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    assert!(
        (analytic - numeric).abs() <= TOL_GRAD_REL * denom,
        "{what}: analytic {analytic} vs numeric {numeric}"
    );
}

fn random_point(rng: &mut ChaCha12Rng, half: f64) -> Point3<f64> {
    Point3::new(
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    )
}

/// A small random triangle soup: `nv` vertices in a ±10 mm cube, `nf` faces
/// with distinct corner indices.
fn random_soup(rng: &mut ChaCha12Rng, nv: usize, nf: usize) -> TriMesh {
    let vertices: Vec<Point3<f64>> = (0..nv).map(|_| random_point(rng, 10.0)).collect();
    let mut faces = Vec::with_capacity(nf);
    while faces.len() < nf {
        let a = rng.random_range(0..nv) as u32;
        let b = rng.random_range(0..nv) as u32;
        let c = rng.random_range(0..nv) as u32;
        if a != b && b != c && a != c {
            faces.push([a, b, c]);
        }
    }
    TriMesh::new(vertices, faces).expect("random soup is a valid mesh")
}

fn brute_distance(mesh: &TriMesh, p: &Point3<f64>) -> f64 {
    (0..mesh.face_count())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_rigid_motion(rng: &mut ChaCha12Rng) -> Isometry3<f64> {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 {
            break v / n;
        }
    };
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let translation = Translation3::new(
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
    );
    Isometry3::from_parts(translation, UnitQuaternion::from_scaled_axis(axis * angle))
}

fn moved(pair: &ScanPair, iso: &Isometry3<f64>) -> ScanPair {
    let mut out = pair.clone();
    out.stump.transform(iso);
    out.socket.transform(iso);
    out.landmarks = out.landmarks.transform(iso);
    out
}

fn max_vertex_deviation(a: &TriMesh, b: &TriMesh) -> f64 {
    a.vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

fn mean_landmarks(raters: &[LandmarkPair]) -> LandmarkPair {
    let n = raters.len() as f64;
    let mut mid = Vector3::zeros();
    let mut end = Vector3::zeros();
    for r in raters {
        mid += r.mid_patella.coords;
        end += r.tibia_end.coords;
    }
    LandmarkPair {
        mid_patella: Point3::from(mid / n),
        tibia_end: Point3::from(end / n),
    }
}

// ---------------------------------------------------------------------------
// 1. Geometry oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_geometry_oracles_match_brute_force() {
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(101);

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (nv, nf) = (rng.random_range(6..16), rng.random_range(6..16));
        let mesh = random_soup(&mut rng, nv, nf);
        let p = random_point(&mut rng, 14.0);
        let hit = closest_point_on_mesh(&mesh, &p).expect("closest point");
        let brute = brute_distance(&mesh, &p);
        worst = worst.max((hit.distance - brute).abs());
        worst = worst.max(((hit.point - p).norm() - hit.distance).abs());
    }
    assert!(worst <= TOL_GEOM_MM, "closest point drift {worst}");

    for _ in 0..100 {
        let (nv_s, nf_s) = (rng.random_range(6..20), rng.random_range(6..16));
        let source = random_soup(&mut rng, nv_s, nf_s);
        let (nv_t, nf_t) = (rng.random_range(6..20), rng.random_range(6..16));
        let target = random_soup(&mut rng, nv_t, nf_t);
        let distances = surface_to_surface(&source, &target).expect("surface distances");
        assert_eq!(distances.len(), source.vertex_count());
        for (v, d) in source.vertices().iter().zip(&distances) {
            let brute = brute_distance(&target, v);
            worst = worst.max((d - brute).abs());
        }
    }
    assert!(worst <= TOL_GEOM_MM, "surface-to-surface drift {worst}");

    for _ in 0..100 {
        let n = rng.random_range(5..40);
        let points: Vec<Point3<f64>> = (0..n).map(|_| random_point(&mut rng, 5.0)).collect();
        let centers: Vec<u32> = (0..rng.random_range(1..6))
            .map(|_| rng.random_range(0..n) as u32)
            .collect();
        let radius = rng.random_range(0.5..5.0);
        let cap = rng.random_range(1..6);
        let got = ball_query(&points, &centers, radius, cap);
        let r2 = radius * radius;
        let mut want = Vec::new();
        for &c in &centers {
            let members: Vec<u32> = (0..n)
                .filter(|&j| (points[j] - points[c as usize]).norm_squared() <= r2)
                .map(|j| j as u32)
                .take(cap)
                .collect();
            let members = if members.is_empty() { vec![c] } else { members };
            let first = members[0];
            let mut padded = members;
            padded.resize(cap, first);
            want.extend(padded);
        }
        assert_eq!(got, want, "ball query differs from brute force");
    }

    for _ in 0..100 {
        let n = rng.random_range(3..60);
        let points: Vec<Point3<f64>> = (0..n).map(|_| random_point(&mut rng, 8.0)).collect();
        let k = rng.random_range(1..=n);
        let start = rng.random_range(0..n);
        let got = farthest_point_sampling(&points, k, start);
        let mut want = vec![start as u32];
        while want.len() < k {
            let mut arg = 0usize;
            let mut best = -1.0;
            for (i, p) in points.iter().enumerate() {
                let d = want
                    .iter()
                    .map(|&c| (p - points[c as usize]).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                if d > best {
                    best = d;
                    arg = i;
                }
            }
            want.push(arg as u32);
        }
        assert_eq!(got, want, "farthest-point sampling differs from brute force");
    }

    let elapsed = started.elapsed();
    assert!(elapsed < GEOM_BUDGET, "oracle suite took {elapsed:?}");
    println!(
        "criterion 01 geometry oracles: PASS (max drift {worst:.2e} mm, {:.1} s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 2. Reorientation invariance
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_reorientation_recovers_canonical_pose() {
    let sample = generate_sample(&SynthConfig::default(), 0).expect("synthetic sample");
    let mut pair = ScanPair {
        stump: sample.stump,
        socket: sample.socket,
        landmarks: mean_landmarks(&sample.annotations),
        side: sample.side,
    };
    if pair.side == socketfit_core::preprocess::Side::Right {
        pair = pair.mirrored();
    }
    let band = PreprocessConfig::default().com_band;
    let (reference, _) = reorient(&pair, band).expect("reference reorientation");

    let landmark_error = |p: &ScanPair| -> f64 {
        let lm = &p.landmarks;
        lm.mid_patella.coords.norm().max(lm.tibia_end.x.hypot(lm.tibia_end.y))
    };
    assert!(landmark_error(&reference) <= TOL_LANDMARK_MM);

    let mut rng = ChaCha12Rng::seed_from_u64(202);
    let mut worst_pose = 0.0f64;
    let mut worst_landmark = 0.0f64;
    let mut worst_idem = 0.0f64;
    for _ in 0..50 {
        let iso = random_rigid_motion(&mut rng);
        let (recovered, _) = reorient(&moved(&pair, &iso), band).expect("reorientation");
        worst_pose = worst_pose
            .max(max_vertex_deviation(&recovered.stump, &reference.stump))
            .max(max_vertex_deviation(&recovered.socket, &reference.socket));
        worst_landmark = worst_landmark.max(landmark_error(&recovered));

        let (again, _) = reorient(&recovered, band).expect("idempotent reorientation");
        worst_idem = worst_idem
            .max(max_vertex_deviation(&again.stump, &recovered.stump))
            .max(max_vertex_deviation(&again.socket, &recovered.socket));
    }
    assert!(worst_pose <= TOL_REORIENT_MM, "pose drift {worst_pose}");
    assert!(worst_landmark <= TOL_LANDMARK_MM, "landmark drift {worst_landmark}");
    assert!(worst_idem <= TOL_REORIENT_MM, "not idempotent: {worst_idem}");
    println!(
        "criterion 02 reorientation: PASS (pose drift {worst_pose:.2e} mm, landmarks {worst_landmark:.2e} mm)"
    );
}

// ---------------------------------------------------------------------------
// 3. PCA against a dense eigendecomposition oracle
// ---------------------------------------------------------------------------

/// Eigenvalues (descending, 1/n convention) and matching unit eigenvectors of
/// the dense covariance matrix.
fn dense_pca_oracle(data: &DMatrix<f64>) -> (Vec<f64>, Vec<Vector3OrN>) {
    let n = data.nrows();
    let mean = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..data.ncols()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    (values, vectors)
}

type Vector3OrN = nalgebra::DVector<f64>;

#[test]
fn criterion_03_pca_matches_dense_eigendecomposition() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    for (n, d) in [(5usize, 4usize), (50, 30)] {
        let data = DMatrix::from_fn(n, d, |_, j| {
            rng.random_range(-1.0..1.0) * 0.85f64.powi(j as i32)
        });
        let model = PcaModel::fit(&data, 0.95, PcaKind::Scan).expect("fit PCA");
        let (values, vectors) = dense_pca_oracle(&data);
        let k = model.n_components();
        assert!(k >= 1 && k < d, "unexpected component count {k}");

        for (i, lambda) in model.eigenvalues().iter().enumerate() {
            assert!(
                (lambda - values[i]).abs() <= TOL_PCA,
                "eigenvalue {i}: {lambda} vs oracle {}",
                values[i]
            );
        }
        for i in 0..k {
            let row = model.components().row(i);
            let same: f64 = row
                .iter()
                .zip(vectors[i].iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let flipped: f64 = row
                .iter()
                .zip(vectors[i].iter())
                .map(|(a, b)| (a + b).abs())
                .fold(0.0, f64::max);
            assert!(
                same.min(flipped) <= TOL_PCA,
                "component {i} differs from oracle by {}",
                same.min(flipped)
            );
        }

        let discarded: f64 = values[k..].iter().sum();
        let mse = model.reconstruction_mse(&data).expect("reconstruction MSE");
        assert!(
            (mse - discarded).abs() <= TOL_PCA_MSE_REL * discarded,
            "{n}×{d}: reconstruction MSE {mse} vs discarded variance {discarded}"
        );
    }

    // Rank-2 signal plus faint isotropic noise: the 95 % rule must keep
    // exactly the two signal directions.
    let (n, d) = (40usize, 20usize);
    let mut u = nalgebra::DVector::zeros(d);
    let mut v = nalgebra::DVector::zeros(d);
    u[0] = 1.0;
    v[1] = 1.0;
    let data = DMatrix::from_fn(n, d, |i, j| {
        let a = 5.0 * ((i as f64 + 1.0) * 0.37).sin();
        let b = 3.0 * ((i as f64 + 1.0) * 1.13).cos();
        a * u[j] + b * v[j] + 0.02 * ((i * d + j) as f64 * 0.71).sin()
    });
    let (values, _) = dense_pca_oracle(&data);
    let total: f64 = values.iter().sum();
    assert!(values[0] / total < 0.95);
    assert!((values[0] + values[1]) / total >= 0.95);
    let model = PcaModel::fit(&data, 0.95, PcaKind::Scan).expect("fit rank-2 PCA");
    assert_eq!(model.n_components(), 2, "95 % rule must pick the minimal k");
    println!("criterion 03 pca: PASS (oracle match on 5×4 and 50×30, minimal k = 2)");
}

// ---------------------------------------------------------------------------
// 4. Gradients against central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_gradients_match_central_differences() {
    let eps = 1e-6;
    let beta = 1.0;
    let mut rng = ChaCha12Rng::seed_from_u64(404);

    // Smooth-L1 itself, with every entry clear of the quadratic/linear kink.
    let t = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(4, 3, |i, j| {
        let mut gap: f64 = rng.random_range(-2.0..2.0);
        while (gap.abs() - beta).abs() < 1e-2 || gap.abs() < 0.1 {
            gap = rng.random_range(-2.0..2.0);
        }
        t[(i, j)] + gap
    });
    let grad = smooth_l1_grad(&y, &t, beta);
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            let mut plus = y.clone();
            plus[(i, j)] += eps;
            let mut minus = y.clone();
            minus[(i, j)] -= eps;
            let numeric = (smooth_l1(&plus, &t, beta) - smooth_l1(&minus, &t, beta)) / (2.0 * eps);
            assert_rel(grad[(i, j)], numeric, &format!("smooth-l1 d y[{i},{j}]"));
        }
    }

    // Full feedforward network: every weight, bias and batch-norm parameter,
    // plus the gradient with respect to the inputs.
    let mut net = Mlp::new(
        &[
            LayerSpec::hidden(4, 6, Regularization::BatchNorm),
            LayerSpec::hidden(6, 5, Regularization::BatchNorm),
            LayerSpec::output(5, 3),
        ],
        0.0,
        0.25,
        &mut rng,
    );
    let x = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
    let targets = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
    let loss_of = |net: &mut Mlp, x: &DMatrix<f64>| -> f64 {
        let mut r = ChaCha12Rng::seed_from_u64(0);
        let (y, _) = net.forward_train(x, &mut r);
        smooth_l1(&y, &targets, beta)
    };
    let (y0, caches) = {
        let mut r = ChaCha12Rng::seed_from_u64(0);
        net.forward_train(&x, &mut r)
    };
    let (grads, dx) = net.backward(&caches, smooth_l1_grad(&y0, &targets, beta));

    for li in 0..net.layers.len() {
        let (rows, cols) = net.layers[li].linear.weight.shape();
        for r in 0..rows {
            for c in 0..cols {
                net.layers[li].linear.weight[(r, c)] += eps;
                let plus = loss_of(&mut net, &x);
                net.layers[li].linear.weight[(r, c)] -= 2.0 * eps;
                let minus = loss_of(&mut net, &x);
                net.layers[li].linear.weight[(r, c)] += eps;
                assert_rel(
                    grads[li].dw[(r, c)],
                    (plus - minus) / (2.0 * eps),
                    &format!("layer {li} w[{r},{c}]"),
                );
            }
        }
        for r in 0..rows {
            net.layers[li].linear.bias[r] += eps;
            let plus = loss_of(&mut net, &x);
            net.layers[li].linear.bias[r] -= 2.0 * eps;
            let minus = loss_of(&mut net, &x);
            net.layers[li].linear.bias[r] += eps;
            assert_rel(
                grads[li].db[r],
                (plus - minus) / (2.0 * eps),
                &format!("layer {li} b[{r}]"),
            );
        }
        if net.layers[li].bn.is_some() {
            let dim = net.layers[li].bn.as_ref().unwrap().gamma.len();
            for r in 0..dim {
                net.layers[li].bn.as_mut().unwrap().gamma[r] += eps;
                let plus = loss_of(&mut net, &x);
                net.layers[li].bn.as_mut().unwrap().gamma[r] -= 2.0 * eps;
                let minus = loss_of(&mut net, &x);
                net.layers[li].bn.as_mut().unwrap().gamma[r] += eps;
                assert_rel(
                    grads[li].dgamma.as_ref().unwrap()[r],
                    (plus - minus) / (2.0 * eps),
                    &format!("layer {li} gamma[{r}]"),
                );

                net.layers[li].bn.as_mut().unwrap().beta[r] += eps;
                let plus = loss_of(&mut net, &x);
                net.layers[li].bn.as_mut().unwrap().beta[r] -= 2.0 * eps;
                let minus = loss_of(&mut net, &x);
                net.layers[li].bn.as_mut().unwrap().beta[r] += eps;
                assert_rel(
                    grads[li].dbeta.as_ref().unwrap()[r],
                    (plus - minus) / (2.0 * eps),
                    &format!("layer {li} betaBN[{r}]"),
                );
            }
        }
    }
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut plus = x.clone();
            plus[(i, j)] += eps;
            let mut minus = x.clone();
            minus[(i, j)] -= eps;
            let numeric = (loss_of(&mut net, &plus) - loss_of(&mut net, &minus)) / (2.0 * eps);
            assert_rel(dx[(i, j)], numeric, &format!("ffnn d x[{i},{j}]"));
        }
    }

    // Point-set stage: shared per-point network followed by max-pooling over
    // fixed-size groups, differentiated end to end.
    let group = 4usize;
    let mut stage = Mlp::new(
        &[
            LayerSpec::hidden(3, 8, Regularization::BatchNorm),
            LayerSpec::output(8, 6),
        ],
        0.0,
        0.25,
        &mut rng,
    );
    let points = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
    let pooled_targets = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-1.0..1.0));
    let stage_loss = |mlp: &mut Mlp, pts: &DMatrix<f64>| -> f64 {
        let mut r = ChaCha12Rng::seed_from_u64(0);
        let (h, _) = mlp.forward_train(pts, &mut r);
        let (pooled, _) = max_pool_groups(&h, group);
        smooth_l1(&pooled, &pooled_targets, beta)
    };

    let (h0, stage_caches) = {
        let mut r = ChaCha12Rng::seed_from_u64(0);
        stage.forward_train(&points, &mut r)
    };
    let (pooled0, argmax) = max_pool_groups(&h0, group);
    // Pooling winners must be clear of ties so ±eps probes keep the argmax.
    for g in 0..pooled0.nrows() {
        for c in 0..pooled0.ncols() {
            let mut in_group: Vec<f64> = (0..group).map(|k| h0[(g * group + k, c)]).collect();
            in_group.sort_by(f64::total_cmp);
            assert!(in_group[group - 1] - in_group[group - 2] > 1e-3);
        }
    }
    let d_pooled = smooth_l1_grad(&pooled0, &pooled_targets, beta);
    let d_rows = max_pool_backward(&d_pooled, &argmax, group);
    let (stage_grads, d_points) = stage.backward(&stage_caches, d_rows);

    for li in 0..stage.layers.len() {
        let (rows, cols) = stage.layers[li].linear.weight.shape();
        for r in 0..rows {
            for c in 0..cols {
                stage.layers[li].linear.weight[(r, c)] += eps;
                let plus = stage_loss(&mut stage, &points);
                stage.layers[li].linear.weight[(r, c)] -= 2.0 * eps;
                let minus = stage_loss(&mut stage, &points);
                stage.layers[li].linear.weight[(r, c)] += eps;
                assert_rel(
                    stage_grads[li].dw[(r, c)],
                    (plus - minus) / (2.0 * eps),
                    &format!("stage layer {li} w[{r},{c}]"),
                );
            }
        }
    }
    for i in 0..points.nrows() {
        for j in 0..points.ncols() {
            let mut plus = points.clone();
            plus[(i, j)] += eps;
            let mut minus = points.clone();
            minus[(i, j)] -= eps;
            let numeric =
                (stage_loss(&mut stage, &plus) - stage_loss(&mut stage, &minus)) / (2.0 * eps);
            assert_rel(d_points[(i, j)], numeric, &format!("stage d p[{i},{j}]"));
        }
    }
    println!("criterion 04 gradients: PASS (smooth-l1, feedforward, point-set stage)");
}

// ---------------------------------------------------------------------------
// 5. Single tree against exhaustive CART
// ---------------------------------------------------------------------------

fn oracle_mean(y: &DMatrix<f64>, rows: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; y.ncols()];
    for &r in rows {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += y[(r, c)];
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f64;
    }
    mean
}

fn oracle_sse(y: &DMatrix<f64>, rows: &[usize]) -> f64 {
    let mean = oracle_mean(y, rows);
    rows.iter()
        .map(|&r| {
            (0..y.ncols())
                .map(|c| (y[(r, c)] - mean[c]).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Best split over every feature and every cut position, minimising the sum
/// of child squared errors.
fn oracle_split(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rows: &[usize],
) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    for f in 0..x.ncols() {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
        for cut in 1..sorted.len() {
            if x[(sorted[cut - 1], f)] == x[(sorted[cut], f)] {
                continue;
            }
            let (left, right) = sorted.split_at(cut);
            let sse = oracle_sse(y, left) + oracle_sse(y, right);
            if best.as_ref().is_none_or(|(b, _, _)| sse < *b) {
                best = Some((sse, left.to_vec(), right.to_vec()));
            }
        }
    }
    best.map(|(_, l, r)| (l, r))
}

fn oracle_cart(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rows: &[usize],
    depth: usize,
    limit: usize,
    out: &mut DMatrix<f64>,
) {
    let split = if depth < limit && rows.len() >= 2 {
        oracle_split(x, y, rows)
    } else {
        None
    };
    match split {
        Some((left, right)) => {
            oracle_cart(x, y, &left, depth + 1, limit, out);
            oracle_cart(x, y, &right, depth + 1, limit, out);
        }
        None => {
            let mean = oracle_mean(y, rows);
            for &r in rows {
                for (c, m) in mean.iter().enumerate() {
                    out[(r, c)] = *m;
                }
            }
        }
    }
}

#[test]
fn criterion_05_single_tree_matches_exhaustive_cart() {
    let mut rng = ChaCha12Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for instance in 0..25u64 {
        let x = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let config = ForestConfig {
            n_trees: 1,
            max_depth: 2,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            bootstrap: false,
            seed: instance,
        };
        let forest = train_forest(&x, &y, &config).expect("train depth-2 tree");
        let got = forest.predict(&x).expect("predict");
        let rows: Vec<usize> = (0..20).collect();
        let mut want = DMatrix::zeros(20, 2);
        oracle_cart(&x, &y, &rows, 0, 2, &mut want);
        worst = worst.max((got - want).abs().max());
    }
    assert!(worst <= TOL_TREE, "depth-2 tree drifts from CART by {worst}");

    let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0));
    let config = ForestConfig {
        n_trees: 1,
        max_depth: 64,
        min_samples_split: 2,
        min_samples_leaf: 1,
        max_features: MaxFeatures::All,
        bootstrap: false,
        seed: 0,
    };
    let forest = train_forest(&x, &y, &config).expect("train memorising tree");
    let got = forest.predict(&x).expect("predict");
    let memo = (got - y).abs().max();
    assert!(memo <= 1e-12, "memorisation error {memo}");
    println!("criterion 05 forest oracle: PASS (CART drift {worst:.2e}, memorisation {memo:.2e})");
}

// ---------------------------------------------------------------------------
// 6. Template fitting budget
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_template_fit_meets_residual_and_time_budget() {
    let template = canonical_template();
    let scaled: Vec<Point3<f64>> = template
        .vertices()
        .iter()
        .map(|p| Point3::from(p.coords * 1.1))
        .collect();
    let target = TriMesh::new(scaled, template.to_mesh().faces().to_vec()).expect("scaled target");

    let started = Instant::now();
    let fit = fit_template(template, &target, &RegistrationConfig::default()).expect("fit");
    let elapsed = started.elapsed();

    assert!(
        fit.median_residual < FIT_RESIDUAL_MM,
        "median residual {} mm",
        fit.median_residual
    );
    assert!(elapsed < FIT_BUDGET, "fit took {elapsed:?}");
    let mesh = fit.mesh.to_mesh();
    assert_eq!(mesh.vertex_count(), 3361);
    assert_eq!(mesh.face_count(), 6672);
    println!(
        "criterion 06 template fit: PASS (median {:.3} mm in {:.1} s, 3361/6672)",
        fit.median_residual,
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 7–10. End-to-end behaviour on the shared synthetic corpus
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_adaptations_beat_direct_socket_prediction() {
    let cases = [
        (
            "forest",
            report(
                &FOREST_ADAPT,
                experiment(Method::Forest, PredictionTarget::Adaptations, Representation::Raw),
            ),
            report(
                &FOREST_SOCKET,
                experiment(Method::Forest, PredictionTarget::SocketShape, Representation::Raw),
            ),
        ),
        (
            "ffnn",
            report(
                &FFNN_ADAPT_REDUCED,
                experiment(Method::Ffnn, PredictionTarget::Adaptations, Representation::Reduced),
            ),
            report(
                &FFNN_SOCKET_REDUCED,
                experiment(Method::Ffnn, PredictionTarget::SocketShape, Representation::Reduced),
            ),
        ),
        (
            "pointset",
            report(
                &POINTSET_ADAPT,
                experiment(Method::PointSet, PredictionTarget::Adaptations, Representation::Raw),
            ),
            report(
                &POINTSET_SOCKET,
                experiment(Method::PointSet, PredictionTarget::SocketShape, Representation::Raw),
            ),
        ),
    ];
    for (name, adaptations, socket) in cases {
        assert!(
            adaptations.overall.median_mm < socket.overall.median_mm,
            "{name}: adaptations median {} mm is not below socket median {} mm",
            adaptations.overall.median_mm,
            socket.overall.median_mm
        );
        println!(
            "criterion 07 ordering ({name}): PASS (adaptations {:.3} mm < socket {:.3} mm)",
            adaptations.overall.median_mm, socket.overall.median_mm
        );
    }
}

#[test]
fn criterion_08_forest_adaptations_raw_meets_accuracy_floor() {
    let report = forest_adapt();
    assert!(
        report.overall.median_mm <= FLOOR_MEDIAN_MM,
        "overall median {} mm exceeds {FLOOR_MEDIAN_MM} mm",
        report.overall.median_mm
    );
    println!(
        "criterion 08 accuracy floor: PASS (forest/adaptations/raw median {:.3} mm ≤ {FLOOR_MEDIAN_MM} mm)",
        report.overall.median_mm
    );
}

#[test]
fn criterion_09_identical_config_and_seed_reproduce_reports_bitwise() {
    let config = experiment(Method::Ffnn, PredictionTarget::Adaptations, Representation::Reduced);
    let first = tempfile::tempdir().expect("first run dir");
    let second = tempfile::tempdir().expect("second run dir");
    run_experiment(corpus(), &config, first.path()).expect("first run");
    run_experiment(corpus(), &config, second.path()).expect("second run");
    let a = fs::read(first.path().join("report.json")).expect("first report");
    let b = fs::read(second.path().join("report.json")).expect("second report");
    assert!(a == b, "reports differ between identical runs");
    println!(
        "criterion 09 determinism: PASS (report.json bitwise identical, {} bytes)",
        a.len()
    );
}

#[test]
fn criterion_10_reduced_representation_stays_close_to_raw() {
    let reduced = report(
        &FFNN_ADAPT_REDUCED,
        experiment(Method::Ffnn, PredictionTarget::Adaptations, Representation::Reduced),
    );
    let raw = report(
        &FFNN_ADAPT_RAW,
        experiment(Method::Ffnn, PredictionTarget::Adaptations, Representation::Raw),
    );
    let gap = (reduced.overall.median_mm - raw.overall.median_mm).abs();
    assert!(
        gap <= PARITY_MM,
        "reduced median {} mm vs raw {} mm (gap {gap} mm)",
        reduced.overall.median_mm,
        raw.overall.median_mm
    );
    println!(
        "criterion 10 reduced parity: PASS (reduced {:.3} mm vs raw {:.3} mm, gap {gap:.3} mm)",
        reduced.overall.median_mm, raw.overall.median_mm
    );
}
