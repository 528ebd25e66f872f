//! Synthetic stump/socket corpus generator.
//!
//! Stumps are drawn from a parametric population on the template grid with
//! seeded low-frequency surface noise layered on top. Sockets follow from a
//! fixed set of rectification rules — localised presses and reliefs plus a
//! global volume scale — whose amplitudes are coupled to the stump geometry,
//! so the mapping is learnable. The rule seed jitters only where the bumps
//! sit, never how strong they are.
//!
//! Every sample is a pure function of `(config, index)`; regenerating a
//! corpus reproduces it byte for byte.

use crate::mesh::{save_ply, MeshError, TriMesh};
use crate::preprocess::{
    sample_landmark_variants, LandmarkNoise, LandmarkPair, Manifest, ManifestEntry,
    PreprocessError, Side, StumpShape, ANTERIOR_SEGMENT, APEX_INDEX, TEMPLATE_RINGS,
    TEMPLATE_SEGMENTS, TEMPLATE_VERTEX_COUNT,
};
use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Population statistics the stump shapes are drawn from (means and standard
/// deviations; lengths in mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Population {
    pub length_mean: f64,
    pub length_sd: f64,
    pub circumference_mean: f64,
    pub circumference_sd: f64,
    pub taper_mean: f64,
    pub taper_sd: f64,
    pub ridge_mean: f64,
    pub ridge_sd: f64,
    pub bow_mean: f64,
    pub bow_sd: f64,
    /// Amplitude of the low-frequency per-stump surface noise, mm.
    pub surface_noise: f64,
}

impl Default for Population {
    fn default() -> Self {
        Self {
            length_mean: 209.0,
            length_sd: 28.0,
            circumference_mean: 349.0,
            circumference_sd: 39.0,
            taper_mean: 0.28,
            taper_sd: 0.04,
            ridge_mean: 4.0,
            ridge_sd: 1.0,
            bow_mean: 4.0,
            bow_sd: 1.5,
            surface_noise: 1.5,
        }
    }
}

/// The rectifications a socket applies to the stump it was made for.
/// Presses push the wall into the limb (load-bearing areas), reliefs pull it
/// away (pressure-sensitive areas); the volume scale shrinks every
/// cross-section radially.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectificationRules {
    /// Inward press over the patellar tendon, mm.
    pub patellar_press: f64,
    /// Outward relief along the anterior tibial crest, mm.
    pub crest_relief: f64,
    /// Outward relief cupping the distal end, mm.
    pub distal_relief: f64,
    /// Inward press into the posterior calf bulk, mm.
    pub calf_press: f64,
    /// Global radial scale; 1.0 leaves cross-sections unchanged.
    pub volume_scale: f64,
}

impl RectificationRules {
    /// No rectification at all: the socket equals the stump.
    pub fn none() -> Self {
        Self {
            patellar_press: 0.0,
            crest_relief: 0.0,
            distal_relief: 0.0,
            calf_press: 0.0,
            volume_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub population: Population,
    /// Standard deviation of the amplitude noise added on top of the
    /// geometry-coupled rule policy, mm.
    pub rule_noise: f64,
    /// Per-axis rater noise on the mid-patella landmark, mm.
    pub annotation_sigma_mid_patella: f64,
    /// Per-axis rater noise on the tibia-end landmark, mm.
    pub annotation_sigma_tibia_end: f64,
    /// Annotations per sample (1–3).
    pub raters: usize,
    /// Upper bound of the random scanner pose rotation, radians.
    pub max_rotation: f64,
    /// Per-axis bound of the random scanner pose translation, mm.
    pub max_translation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 118,
            seed: 0,
            population: Population::default(),
            rule_noise: 0.2,
            annotation_sigma_mid_patella: 3.44,
            annotation_sigma_tibia_end: 4.75,
            raters: 3,
            max_rotation: 0.5,
            max_translation: 40.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_samples == 0 {
            return Err(SynthError::BadConfig("n_samples must be positive".into()));
        }
        if self.raters == 0 || self.raters > 3 {
            return Err(SynthError::BadConfig(format!(
                "raters must be 1–3, got {}",
                self.raters
            )));
        }
        let sds = [
            self.population.length_sd,
            self.population.circumference_sd,
            self.population.taper_sd,
            self.population.ridge_sd,
            self.population.bow_sd,
            self.population.surface_noise,
            self.rule_noise,
            self.annotation_sigma_mid_patella,
            self.annotation_sigma_tibia_end,
            self.max_rotation,
            self.max_translation,
        ];
        if sds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(SynthError::BadConfig(
                "noise magnitudes must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One generated case, in the frame it gets written to disk in (mirrored for
/// right limbs, then rigidly moved).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub stump: TriMesh,
    pub socket: TriMesh,
    pub true_landmarks: LandmarkPair,
    pub annotations: Vec<LandmarkPair>,
    pub side: Side,
    pub shape: StumpShape,
    pub rules: RectificationRules,
}

/// Low-order Fourier field over (t, θ) that vanishes at the rim and apex.
struct SurfaceNoise {
    /// (amplitude, angular order, phase, axial order) per term.
    terms: Vec<(f64, f64, f64, f64)>,
}

impl SurfaceNoise {
    fn sample(amplitude: f64, rng: &mut ChaCha12Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
        let mut terms = Vec::new();
        for m in 1..=3u32 {
            for k in 1..=2u32 {
                let a = amplitude * normal.sample(rng) / (m + k) as f64;
                let phase = rng.random_range(0.0..2.0 * PI);
                terms.push((a, m as f64, phase, k as f64));
            }
        }
        Self { terms }
    }

    fn eval(&self, t: f64, theta: f64) -> f64 {
        self.terms
            .iter()
            .map(|&(a, m, phase, k)| a * (m * theta + phase).cos() * (PI * t * k).sin())
            .sum()
    }
}

fn sample_shape(population: &Population, rng: &mut ChaCha12Rng) -> StumpShape {
    let mut draw = |mean: f64, sd: f64| {
        let normal = Normal::new(mean, sd).expect("validated parameters");
        normal.sample(rng)
    };
    StumpShape {
        length: draw(population.length_mean, population.length_sd).max(120.0),
        proximal_circumference: draw(
            population.circumference_mean,
            population.circumference_sd,
        )
        .max(220.0),
        taper: draw(population.taper_mean, population.taper_sd).clamp(0.1, 0.45),
        ridge_height: draw(population.ridge_mean, population.ridge_sd).max(0.0),
        bow: draw(population.bow_mean, population.bow_sd),
    }
}

/// The deterministic prosthetist policy: rule amplitudes follow the stump
/// geometry, plus a small independent disturbance.
pub fn rule_policy(
    shape: &StumpShape,
    population: &Population,
    rule_noise: f64,
    rng: &mut ChaCha12Rng,
) -> RectificationRules {
    let z = |v: f64, mean: f64, sd: f64| ((v - mean) / sd).clamp(-2.5, 2.5);
    let zl = z(shape.length, population.length_mean, population.length_sd);
    let zc = z(
        shape.proximal_circumference,
        population.circumference_mean,
        population.circumference_sd,
    );
    let zr = z(shape.ridge_height, population.ridge_mean, population.ridge_sd);
    let noise = Normal::new(0.0, rule_noise).expect("validated parameters");
    let mut n = || noise.sample(rng);
    RectificationRules {
        patellar_press: (3.0 + 0.8 * zr + n()).max(0.0),
        crest_relief: (2.0 + 0.6 * zr + 0.75 * n()).max(0.0),
        distal_relief: (2.5 + 0.5 * zl + n()).max(0.0),
        calf_press: (2.0 + 0.7 * zc + n()).max(0.0),
        volume_scale: (0.97 - 0.01 * zc + 0.005 * n()).clamp(0.93, 1.0),
    }
}

/// Where each bump sits and how wide it is. Jittered per sample so the
/// rectifications are not glued to fixed grid vertices.
struct BumpLayout {
    patella_t: f64,
    patella_sigma_t: f64,
    patella_sigma_theta: f64,
    crest_sigma_theta: f64,
    crest_lo: f64,
    crest_hi: f64,
    distal_onset: f64,
    calf_theta: f64,
    calf_sigma_theta: f64,
    calf_t: f64,
    calf_sigma_t: f64,
}

impl BumpLayout {
    fn sample(rng: &mut ChaCha12Rng) -> Self {
        let mut around = |center: f64, spread: f64| rng.random_range(-spread..spread) + center;
        let patella_t = around(0.12, 0.02);
        let patella_sigma_t = 0.05 * around(1.0, 0.1);
        let patella_sigma_theta = 0.45 * around(1.0, 0.1);
        let crest_sigma_theta = 0.30 * around(1.0, 0.1);
        let crest_lo = around(0.15, 0.02);
        let crest_hi = around(0.70, 0.03);
        let distal_onset = around(0.80, 0.02);
        let calf_theta = around(PI / 2.0, 0.05);
        let calf_sigma_theta = 0.70 * around(1.0, 0.1);
        let calf_t = around(0.35, 0.03);
        let calf_sigma_t = 0.12 * around(1.0, 0.1);
        Self {
            patella_t,
            patella_sigma_t,
            patella_sigma_theta,
            crest_sigma_theta,
            crest_lo,
            crest_hi,
            distal_onset,
            calf_theta,
            calf_sigma_theta,
            calf_t,
            calf_sigma_t,
        }
    }
}

fn gauss(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

fn gauss_wrap(delta_theta: f64, sigma: f64) -> f64 {
    let mut d = delta_theta;
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    gauss(d / sigma)
}

/// Smooth axial window: 0 at `lo` and `hi`, peaking between.
fn window(t: f64, lo: f64, hi: f64) -> f64 {
    if t <= lo || t >= hi {
        0.0
    } else {
        (PI * (t - lo) / (hi - lo)).sin()
    }
}

/// Smoothstep ramp from 0 at `onset` to 1 at t = 1.
fn ramp(t: f64, onset: f64) -> f64 {
    let u = ((t - onset) / (1.0 - onset)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn radial_delta(rules: &RectificationRules, layout: &BumpLayout, t: f64, theta: f64) -> f64 {
    let theta_ant = 2.0 * PI * ANTERIOR_SEGMENT as f64 / TEMPLATE_SEGMENTS as f64;
    let mut d = 0.0;
    d -= rules.patellar_press
        * gauss_wrap(theta - theta_ant, layout.patella_sigma_theta)
        * gauss((t - layout.patella_t) / layout.patella_sigma_t);
    d += rules.crest_relief
        * gauss_wrap(theta - theta_ant, layout.crest_sigma_theta)
        * window(t, layout.crest_lo, layout.crest_hi);
    d += rules.distal_relief * ramp(t, layout.distal_onset);
    d -= rules.calf_press
        * gauss_wrap(theta - layout.calf_theta, layout.calf_sigma_theta)
        * gauss((t - layout.calf_t) / layout.calf_sigma_t);
    d
}

/// Derives the socket wall from a stump on the template grid: every vertex
/// moves radially (relative to the shape's centreline) by the volume scale
/// plus the localised rule displacements; the apex additionally drops by the
/// distal relief. The rng only positions the bumps — amplitudes come
/// verbatim from `rules`.
pub fn generate_socket(
    stump_vertices: &[Point3<f64>],
    shape: &StumpShape,
    rules: &RectificationRules,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Point3<f64>>, SynthError> {
    if stump_vertices.len() != TEMPLATE_VERTEX_COUNT {
        return Err(SynthError::BadConfig(format!(
            "expected {TEMPLATE_VERTEX_COUNT} grid vertices, got {}",
            stump_vertices.len()
        )));
    }
    let layout = BumpLayout::sample(rng);
    let mut out = Vec::with_capacity(stump_vertices.len());
    for (idx, v) in stump_vertices.iter().enumerate() {
        if idx == APEX_INDEX {
            let drop = rules.distal_relief * ramp(1.0, layout.distal_onset);
            out.push(Point3::new(v.x, v.y, v.z - drop));
            continue;
        }
        let ring = idx / TEMPLATE_SEGMENTS;
        let t = ring as f64 / TEMPLATE_RINGS as f64;
        let (cx, cy) = shape.center(t);
        let rho = Vector2::new(v.x - cx, v.y - cy);
        let r = rho.norm();
        let u = rho / r;
        let theta = u.y.atan2(u.x);
        let delta = radial_delta(rules, &layout, t, theta);
        let new_r = (rules.volume_scale * r + delta).max(0.5);
        out.push(Point3::new(cx + new_r * u.x, cy + new_r * u.y, v.z));
    }
    Ok(out)
}

fn random_pose(config: &SynthConfig, rng: &mut ChaCha12Rng) -> Isometry3<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let mut axis = Vector3::new(
        normal.sample(rng),
        normal.sample(rng),
        normal.sample(rng),
    );
    if axis.norm() < 1e-9 {
        axis = Vector3::z();
    }
    let angle = rng.random_range(0.0..=config.max_rotation);
    let t = config.max_translation;
    let translation = Vector3::new(
        rng.random_range(-t..=t),
        rng.random_range(-t..=t),
        rng.random_range(-t..=t),
    );
    Isometry3::from_parts(
        Translation3::from(translation),
        UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle),
    )
}

/// Generates sample `index` of the corpus. Pure in `(config, index)`: the
/// per-sample rng is an independent stream of the corpus seed.
pub fn generate_sample(config: &SynthConfig, index: usize) -> Result<SyntheticSample, SynthError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);

    let shape = sample_shape(&config.population, &mut rng);
    let noise = SurfaceNoise::sample(config.population.surface_noise, &mut rng);
    let (stump_vertices, true_landmarks) = shape.build_with_extra(|t, th| noise.eval(t, th));
    let rules = rule_policy(&shape, &config.population, config.rule_noise, &mut rng);
    let socket_vertices = generate_socket(&stump_vertices, &shape, &rules, &mut rng)?;

    let faces = crate::preprocess::template_faces().to_vec();
    let mut stump = TriMesh::new(stump_vertices, faces.clone())?;
    let mut socket = TriMesh::new(socket_vertices, faces)?;
    let mut landmarks = true_landmarks;

    let side = if index % 2 == 0 { Side::Left } else { Side::Right };
    if side == Side::Right {
        stump = stump.mirror_x();
        socket = socket.mirror_x();
        landmarks = landmarks.mirror_x();
    }

    let pose = random_pose(config, &mut rng);
    stump.transform(&pose);
    socket.transform(&pose);
    landmarks = landmarks.transform(&pose);

    let annotation_seed = rng.random::<u64>();
    let annotations = sample_landmark_variants(
        &landmarks,
        &LandmarkNoise {
            sigma_mid_patella: config.annotation_sigma_mid_patella,
            sigma_tibia_end: config.annotation_sigma_tibia_end,
            count: config.raters,
        },
        annotation_seed,
    )?;

    Ok(SyntheticSample {
        id: format!("s{:04}", index + 1),
        stump,
        socket,
        true_landmarks: landmarks,
        annotations,
        side,
        shape,
        rules,
    })
}

/// Generates the whole corpus under `out_dir`: binary PLY meshes, per-sample
/// truth displacement CSVs, the dataset manifest and the generation config.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path) -> Result<Manifest, SynthError> {
    config.validate()?;
    fs::create_dir_all(out_dir.join("meshes"))?;
    fs::create_dir_all(out_dir.join("fields"))?;

    let mut samples = Vec::with_capacity(config.n_samples);
    for index in 0..config.n_samples {
        let sample = generate_sample(config, index)?;
        let stump_rel = format!("meshes/{}_stump.ply", sample.id);
        let socket_rel = format!("meshes/{}_socket.ply", sample.id);
        save_ply(&out_dir.join(&stump_rel), &sample.stump, None, true)?;
        save_ply(&out_dir.join(&socket_rel), &sample.socket, None, true)?;

        let mut csv = String::from("vertex,dx,dy,dz\n");
        for (i, (s, k)) in sample
            .stump
            .vertices()
            .iter()
            .zip(sample.socket.vertices())
            .enumerate()
        {
            let d = k - s;
            writeln!(csv, "{i},{},{},{}", d.x, d.y, d.z).expect("writing to string");
        }
        fs::write(out_dir.join(format!("fields/{}_field.csv", sample.id)), csv)?;

        samples.push(ManifestEntry {
            id: sample.id.clone(),
            stump_path: stump_rel,
            socket_path: socket_rel,
            side: sample.side,
            landmarks: sample.annotations.iter().map(|&lm| lm.into()).collect(),
        });
    }

    let manifest = Manifest { samples };
    manifest.save(&out_dir.join("manifest.json"))?;
    fs::write(
        out_dir.join("generation.json"),
        serde_json::to_string_pretty(config)? + "\n",
    )?;
    Ok(manifest)
}
