//! Synthetic scenes and (matching × algorithm) benchmark grids.
//!
//! Seeds: every random stream derives from one master seed through
//! [`derive_seed`], keyed by what it feeds (scene attempt, method name hash,
//! trial), never by scheduling order. A localize call uses the trial seed
//! with the query index as ChaCha stream.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::association::{AssociationError, EmbeddingStore};
use crate::consensus::{ConsensusConfig, ConsensusError};
use crate::geometry::{dual_conic_to_ellipse, project_dual_quadric, BBox, Camera, Ellipsoid, PoseWC};
use crate::io::{translation_error, Scene, Trajectory, TrajectoryEntry};
use crate::model::{DetectionSet, Landmark, ObjectMap, Observation, Query};
use crate::pipeline::{localize_query, CandidateOptions, Method};

const MAX_SCENE_ATTEMPTS: u64 = 100;
const MIN_OBSERVATIONS: usize = 4;
/// Box area (px²) at which area-scaled embedding noise equals sigma.
const NOISE_REFERENCE_AREA: f64 = 64.0 * 64.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no feasible scene after {MAX_SCENE_ATTEMPTS} attempts: some query sees fewer than {MIN_OBSERVATIONS} landmarks")]
    InfeasibleScene,
    #[error("success rate of an empty error list")]
    EmptyInput,
    #[error("{method}: {source}")]
    Localization {
        method: String,
        #[source]
        source: ConsensusError,
    },
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    ModelIo(#[from] crate::io::ModelIoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `master` for a key path: `mix(mix(master) ^ k0)` and so on.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix(master), |acc, &k| mix(acc ^ k))
}

/// 64-bit FNV-1a, used to key seeds by method name.
pub fn name_key(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

// ---------------------------------------------------------------------------
// scene generation

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_landmarks: usize,
    pub n_classes: u32,
    pub n_queries: usize,
    /// Room side length in meters.
    pub room_extent: f64,
    pub embed_dim: usize,
    pub embed_noise_sigma: f64,
    /// Standard deviation of per-edge box noise in pixels.
    pub detector_noise_px: f64,
    /// Probability that a visible landmark is not detected.
    pub dropout_rate: f64,
    /// Mean number of spurious detections per query.
    pub clutter_rate: f64,
    /// Scale embedding noise by `sqrt(64² / box area)`, at least 1.
    pub area_scaled_noise: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 50,
            n_classes: 10,
            n_queries: 8,
            room_extent: 4.0,
            embed_dim: 32,
            embed_noise_sigma: 0.1,
            detector_noise_px: 1.0,
            dropout_rate: 0.0,
            clutter_rate: 0.0,
            area_scaled_noise: false,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.n_landmarks < MIN_OBSERVATIONS {
            return bad("n_landmarks must be at least 4");
        }
        if self.n_classes == 0 || self.n_queries == 0 || self.embed_dim == 0 {
            return bad("n_classes, n_queries and embed_dim must be positive");
        }
        if !(self.room_extent.is_finite() && self.room_extent > 0.0) {
            return bad("room_extent must be positive");
        }
        if !(self.embed_noise_sigma.is_finite() && self.embed_noise_sigma >= 0.0) {
            return bad("embed_noise_sigma must be non-negative");
        }
        if !(self.detector_noise_px.is_finite() && self.detector_noise_px >= 0.0) {
            return bad("detector_noise_px must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.clutter_rate.is_finite() && self.clutter_rate >= 0.0) {
            return bad("clutter_rate must be non-negative");
        }
        Ok(())
    }
}

/// A generated scene plus the hidden truth behind each observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene,
    /// `truth[q][j]`: landmark index seen by observation `j` of query `q`,
    /// `None` for clutter.
    pub truth: Vec<Vec<Option<usize>>>,
}

/// Camera used for synthetic scenes: 640×480, f = 525 px.
pub fn synthetic_camera() -> Camera {
    Camera::new(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn to_f32_unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Camera on a ring of radius `room_extent` looking at the room center.
fn ring_pose(i: usize, n: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> PoseWC {
    let theta = TAU * i as f64 / n as f64;
    let height = rng.random_range(-0.1..0.1) * cfg.room_extent;
    let position = Vector3::new(cfg.room_extent * theta.cos(), cfg.room_extent * theta.sin(), height);
    let forward = (-position).normalize();
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
    PoseWC::from_camera_to_world(UnitQuaternion::from_rotation_matrix(&r), position)
}

/// Tight box of the landmark's projection if it lies fully inside the image.
fn visible_box(lm: &Landmark, pose: &PoseWC, cam: &Camera) -> Option<BBox> {
    if pose.transform_point(lm.ellipsoid.center()).z <= 0.0 {
        return None;
    }
    let ellipse = project_dual_quadric(&lm.quadric, pose, cam)
        .and_then(|c| dual_conic_to_ellipse(&c))
        .ok()?;
    let b = BBox::around_ellipse(&ellipse);
    let inside = b.xmin >= 0.0 && b.ymin >= 0.0 && b.xmax <= cam.width as f64 && b.ymax <= cam.height as f64;
    inside.then_some(b)
}

fn perturb_box(b: &BBox, sigma: f64, cam: &Camera, rng: &mut ChaCha8Rng) -> BBox {
    let mut e = [b.xmin, b.ymin, b.xmax, b.ymax];
    if sigma > 0.0 {
        for v in &mut e {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (mut x0, mut x1) = (e[0].min(e[2]).clamp(0.0, w), e[0].max(e[2]).clamp(0.0, w));
    let (mut y0, mut y1) = (e[1].min(e[3]).clamp(0.0, h), e[1].max(e[3]).clamp(0.0, h));
    if x1 - x0 < 1.0 {
        let c = b.center().x;
        (x0, x1) = (c - 0.5, c + 0.5);
    }
    if y1 - y0 < 1.0 {
        let c = b.center().y;
        (y0, y1) = (c - 0.5, c + 0.5);
    }
    BBox::new(x0, y0, x1, y1).expect("non-degenerate box")
}

fn random_box(cam: &Camera, rng: &mut ChaCha8Rng) -> BBox {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let bw = rng.random_range(20.0..150.0f64).min(w);
    let bh = rng.random_range(20.0..150.0f64).min(h);
    let x0 = rng.random_range(0.0..=w - bw);
    let y0 = rng.random_range(0.0..=h - bh);
    BBox::new(x0, y0, x0 + bw, y0 + bh).expect("non-degenerate box")
}

/// Query id / trajectory timestamp of query `i`.
pub fn query_timestamp(i: usize) -> String {
    format!("{:.6}", i as f64)
}

/// Generates a scene; retries with a fresh sub-seed while any query sees
/// fewer than four landmarks.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SyntheticScene, BenchError> {
    cfg.validate()?;
    (0..MAX_SCENE_ATTEMPTS)
        .find_map(|attempt| try_generate(cfg, derive_seed(cfg.seed, &[attempt])))
        .ok_or(BenchError::InfeasibleScene)
}

fn try_generate(cfg: &SynthConfig, seed: u64) -> Option<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = synthetic_camera();
    let l = cfg.room_extent;

    let mut landmarks = Vec::with_capacity(cfg.n_landmarks);
    let mut text = Vec::with_capacity(cfg.n_landmarks);
    for i in 0..cfg.n_landmarks {
        let center = Vector3::new(
            rng.random_range(-l / 2.0..=l / 2.0),
            rng.random_range(-l / 2.0..=l / 2.0),
            rng.random_range(-l / 4.0..=l / 4.0),
        );
        let radii = Vector3::from_fn(|_, _| rng.random_range(0.05..=0.5));
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(0.0..TAU));
        let ellipsoid = Ellipsoid::new(center, radii, *yaw.quaternion()).expect("valid ellipsoid");
        let class_id = rng.random_range(0..cfg.n_classes);
        landmarks.push(Landmark::new(
            i as u64,
            ellipsoid,
            class_id,
            format!("class{class_id}"),
            format!("object {i} of class {class_id}"),
            i,
        ));
        text.push(gaussian_unit(&mut rng, cfg.embed_dim));
    }

    let clutter = (cfg.clutter_rate > 0.0).then(|| Poisson::new(cfg.clutter_rate).expect("positive rate"));
    let mut queries = Vec::with_capacity(cfg.n_queries);
    let mut image_rows: Vec<Vec<f32>> = Vec::new();
    let mut truth = Vec::with_capacity(cfg.n_queries);
    let mut trajectory = Trajectory::default();
    for qi in 0..cfg.n_queries {
        let pose = ring_pose(qi, cfg.n_queries, cfg, &mut rng);
        let mut obs: Vec<(Option<usize>, BBox, u32, f64, Vec<f32>)> = Vec::new();
        for (li, lm) in landmarks.iter().enumerate() {
            let Some(tight) = visible_box(lm, &pose, &cam) else { continue };
            if rng.random_bool(cfg.dropout_rate) {
                continue;
            }
            let bbox = perturb_box(&tight, cfg.detector_noise_px, &cam, &mut rng);
            let mut sigma = cfg.embed_noise_sigma;
            if cfg.area_scaled_noise {
                sigma *= (NOISE_REFERENCE_AREA / bbox.area()).sqrt().max(1.0);
            }
            let emb: Vec<f64> = text[li]
                .iter()
                .map(|t| t + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let confidence = rng.random_range(0.5..=1.0);
            obs.push((Some(li), bbox, lm.class_id, confidence, to_f32_unit(&emb)));
        }
        if obs.len() < MIN_OBSERVATIONS {
            return None;
        }
        let n_clutter = clutter.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_clutter {
            let bbox = random_box(&cam, &mut rng);
            let class_id = rng.random_range(0..cfg.n_classes);
            let confidence = rng.random_range(0.1..=1.0);
            let emb = gaussian_unit(&mut rng, cfg.embed_dim);
            obs.push((None, bbox, class_id, confidence, to_f32_unit(&emb)));
        }
        obs.shuffle(&mut rng);

        let mut observations = Vec::with_capacity(obs.len());
        let mut seen = Vec::with_capacity(obs.len());
        for (lm, bbox, class_id, confidence, emb) in obs {
            observations.push(Observation {
                bbox,
                class_id,
                confidence,
                embedding_ref: image_rows.len(),
            });
            image_rows.push(emb);
            seen.push(lm);
        }
        let timestamp = query_timestamp(qi);
        queries.push(Query {
            query_id: timestamp.clone(),
            image_size: (cam.width, cam.height),
            observations,
        });
        truth.push(seen);
        let inv = pose.inverse();
        trajectory.entries.push(TrajectoryEntry {
            timestamp,
            position: pose.camera_center(),
            orientation: *inv.rotation(),
        });
    }

    let text_rows: Vec<Vec<f32>> = text.iter().map(|t| to_f32_unit(t)).collect();
    let map = ObjectMap {
        name: format!("synthetic-{}", cfg.seed),
        scene_scale_hint: cfg.room_extent,
        landmarks,
        embeddings: EmbeddingStore::from_rows(cfg.embed_dim, &text_rows).expect("unit rows"),
    };
    let detections = DetectionSet {
        queries,
        embeddings: EmbeddingStore::from_rows(cfg.embed_dim, &image_rows).expect("unit rows"),
    };
    Some(SyntheticScene {
        scene: Scene {
            map,
            detections,
            camera: cam,
            groundtruth: trajectory,
        },
        truth,
    })
}

// ---------------------------------------------------------------------------
// grid runs

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub trials: usize,
    pub seed: u64,
    pub candidates: CandidateOptions,
    /// Seed and stream fields are overwritten per localize call.
    pub consensus: ConsensusConfig,
    /// Success threshold on translation error, meters.
    pub success_threshold: f64,
    /// Thresholds of the success-vs-threshold sweep, meters.
    pub sweep: Vec<f64>,
}

impl GridConfig {
    /// Defaults for a scene of the given size: 5 trials, success below
    /// `0.1 × scale`, sweep 0.05..=1.5 m in 0.05 m steps.
    pub fn for_scale(scale: f64) -> Self {
        Self {
            trials: 5,
            seed: 42,
            candidates: CandidateOptions::default(),
            consensus: ConsensusConfig::default(),
            success_threshold: 0.1 * scale,
            sweep: default_sweep(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::InvalidConfig("trials must be at least 1".into()));
        }
        if !(self.success_threshold > 0.0) || self.sweep.iter().any(|&t| !(t > 0.0)) {
            return Err(BenchError::InvalidConfig("thresholds must be positive".into()));
        }
        self.consensus
            .validate()
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))
    }
}

pub fn default_sweep() -> Vec<f64> {
    (1..=30).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    NoSolution,
    InsufficientCandidates,
    SamplingStalled,
}

impl RowStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::NoSolution => "no_solution",
            RowStatus::InsufficientCandidates => "insufficient_candidates",
            RowStatus::SamplingStalled => "sampling_stalled",
        }
    }
}

/// One localize call.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub method: String,
    pub trial: usize,
    pub query_id: String,
    pub status: RowStatus,
    /// +∞ when no pose was returned.
    pub translation_error: f64,
    /// Degrees; +∞ when no pose was returned.
    pub rotation_error_deg: f64,
    pub score: f64,
    pub best_found_at: Option<usize>,
    pub iterations_run: usize,
    pub hypotheses: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub queries: usize,
    pub success_rate_mean: f64,
    pub success_rate_std: f64,
    /// Mean over trials of the per-trial mean finite error; NaN if no trial
    /// produced a pose.
    pub translation_error_mean: f64,
    pub translation_error_std: f64,
    /// Mean over trials of the per-trial mean per-query wall time.
    pub wall_time_mean: f64,
    pub wall_time_std: f64,
    /// Mean over trials of the per-trial mean best_found_at.
    pub best_found_at_mean: f64,
    pub best_found_at_std: f64,
    /// `(threshold, mean, std)` over trials.
    pub sweep: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub iterations: usize,
    pub success_threshold: f64,
    pub sweep: Vec<f64>,
    pub summaries: Vec<MethodSummary>,
    pub rows: Vec<RawRow>,
}

/// Fraction of errors strictly below `threshold`.
pub fn success_rate(errors: &[f64], threshold: f64) -> Result<f64, BenchError> {
    if errors.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    if !(threshold > 0.0) {
        return Err(BenchError::InvalidConfig("threshold must be positive".into()));
    }
    Ok(errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mean_or_nan(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    mean_std(&v).0
}

/// Recomputes one method's summary from its raw rows.
pub fn summarize(method: &str, rows: &[RawRow], success_threshold: f64, sweep: &[f64]) -> MethodSummary {
    let rows: Vec<&RawRow> = rows.iter().filter(|r| r.method == method).collect();
    let mut trials: Vec<usize> = rows.iter().map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();
    let per_trial: Vec<Vec<&RawRow>> = trials
        .iter()
        .map(|&t| rows.iter().copied().filter(|r| r.trial == t).collect())
        .collect();
    let rate = |thr: f64| -> Vec<f64> {
        per_trial
            .iter()
            .map(|tr| {
                let errors: Vec<f64> = tr.iter().map(|r| r.translation_error).collect();
                success_rate(&errors, thr).unwrap_or(f64::NAN)
            })
            .collect()
    };
    let (success_rate_mean, success_rate_std) = mean_std(&rate(success_threshold));
    let finite_err: Vec<f64> = per_trial
        .iter()
        .map(|tr| mean_or_nan(tr.iter().map(|r| r.translation_error).filter(|e| e.is_finite())))
        .filter(|v| !v.is_nan())
        .collect();
    let (translation_error_mean, translation_error_std) = mean_std(&finite_err);
    let times: Vec<f64> = per_trial
        .iter()
        .map(|tr| mean_or_nan(tr.iter().map(|r| r.wall_time_s)))
        .collect();
    let (wall_time_mean, wall_time_std) = mean_std(&times);
    let best: Vec<f64> = per_trial
        .iter()
        .map(|tr| mean_or_nan(tr.iter().filter_map(|r| r.best_found_at).map(|b| b as f64)))
        .filter(|v| !v.is_nan())
        .collect();
    let (best_found_at_mean, best_found_at_std) = mean_std(&best);
    let sweep = sweep
        .iter()
        .map(|&t| {
            let (m, s) = mean_std(&rate(t));
            (t, m, s)
        })
        .collect();
    MethodSummary {
        method: method.to_string(),
        trials: per_trial.len(),
        queries: per_trial.first().map_or(0, Vec::len),
        success_rate_mean,
        success_rate_std,
        translation_error_mean,
        translation_error_std,
        wall_time_mean,
        wall_time_std,
        best_found_at_mean,
        best_found_at_std,
        sweep,
    }
}

/// Runs every method over every trial and query. Invalid methods are
/// rejected before anything runs. Jobs execute in parallel; results are
/// ordered by (method, trial, query) and independent of scheduling.
pub fn run_grid(scene: &Scene, methods: &[Method], cfg: &GridConfig) -> Result<ExperimentReport, BenchError> {
    cfg.validate()?;
    for m in methods {
        m.validate()?;
    }
    let map_store = scene.map.landmark_store();
    let queries = &scene.detections.queries;
    let gts = queries
        .iter()
        .map(|q| scene.groundtruth.lookup(&q.query_id))
        .collect::<Result<Vec<_>, _>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..cfg.trials).flat_map(move |t| (0..queries.len()).map(move |q| (m, t, q))))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(mi, trial, qi)| {
            let method = methods[mi];
            let name = method.name();
            let consensus = ConsensusConfig {
                seed: derive_seed(cfg.seed, &[name_key(&name), trial as u64]),
                stream: qi as u64,
                ..cfg.consensus.clone()
            };
            let start = Instant::now();
            let outcome = localize_query(
                &scene.map,
                &map_store,
                &queries[qi],
                &scene.detections.embeddings,
                method,
                &cfg.candidates,
                &consensus,
                &scene.camera,
            );
            let wall_time_s = start.elapsed().as_secs_f64();
            let gt = &gts[qi];
            let mut row = RawRow {
                method: name.clone(),
                trial,
                query_id: queries[qi].query_id.clone(),
                status: RowStatus::Ok,
                translation_error: f64::INFINITY,
                rotation_error_deg: f64::INFINITY,
                score: 0.0,
                best_found_at: None,
                iterations_run: 0,
                hypotheses: 0,
                wall_time_s,
            };
            match outcome {
                Ok(r) => {
                    row.translation_error = translation_error(&r.pose, gt);
                    row.rotation_error_deg = r.pose.rotation_angle_to(&gt.pose_wc()).to_degrees();
                    row.score = r.score;
                    row.best_found_at = Some(r.best_found_at);
                    row.iterations_run = r.iterations_run;
                    row.hypotheses = r.hypotheses;
                }
                Err(ConsensusError::NoSolution) => row.status = RowStatus::NoSolution,
                Err(ConsensusError::InsufficientCandidates) => row.status = RowStatus::InsufficientCandidates,
                Err(ConsensusError::SamplingStalled) => row.status = RowStatus::SamplingStalled,
                Err(source) => return Err(BenchError::Localization { method: name, source }),
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let summaries = methods
        .iter()
        .map(|m| summarize(&m.name(), &rows, cfg.success_threshold, &cfg.sweep))
        .collect();
    Ok(ExperimentReport {
        iterations: cfg.consensus.iterations,
        success_threshold: cfg.success_threshold,
        sweep: cfg.sweep.clone(),
        summaries,
        rows,
    })
}

// ---------------------------------------------------------------------------
// CSV emission

/// `%.9g`-style formatting: 9 significant digits, trailing zeros removed,
/// exponent form outside `[1e-4, 1e9)`.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub const TABLE_HEADER: &str = "method,trials,queries,success_rate_mean,success_rate_std,translation_error_mean,translation_error_std,best_found_at_mean,best_found_at_std,wall_time_s_mean,wall_time_s_std";
pub const SWEEP_HEADER: &str = "method,threshold,success_rate_mean,success_rate_std";
pub const ITERS_HEADER: &str = "method,iterations,best_found_at_mean,best_found_at_std";
pub const ROWS_HEADER: &str = "method,trial,query_id,status,translation_error,rotation_error_deg,score,best_found_at,iterations_run,hypotheses,wall_time_s";

/// Wall-time columns; the only non-reproducible fields.
pub const WALL_TIME_COLUMNS: [&str; 3] = ["wall_time_s_mean", "wall_time_s_std", "wall_time_s"];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Contents of the four report files, keyed by file name.
pub fn render_report(report: &ExperimentReport) -> Vec<(&'static str, String)> {
    let g = format_g9;
    let mut table = format!("{TABLE_HEADER}\n");
    let mut sweep = format!("{SWEEP_HEADER}\n");
    let mut iters = format!("{ITERS_HEADER}\n");
    for s in &report.summaries {
        let m = csv_field(&s.method);
        let _ = writeln!(
            table,
            "{m},{},{},{},{},{},{},{},{},{},{}",
            s.trials,
            s.queries,
            g(s.success_rate_mean),
            g(s.success_rate_std),
            g(s.translation_error_mean),
            g(s.translation_error_std),
            g(s.best_found_at_mean),
            g(s.best_found_at_std),
            g(s.wall_time_mean),
            g(s.wall_time_std)
        );
        for &(t, mean, std) in &s.sweep {
            let _ = writeln!(sweep, "{m},{},{},{}", g(t), g(mean), g(std));
        }
        let _ = writeln!(
            iters,
            "{m},{},{},{}",
            report.iterations,
            g(s.best_found_at_mean),
            g(s.best_found_at_std)
        );
    }
    let mut rows = format!("{ROWS_HEADER}\n");
    for r in &report.rows {
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.method),
            r.trial,
            csv_field(&r.query_id),
            r.status.name(),
            g(r.translation_error),
            g(r.rotation_error_deg),
            g(r.score),
            r.best_found_at.map_or(String::new(), |b| b.to_string()),
            r.iterations_run,
            r.hypotheses,
            g(r.wall_time_s)
        );
    }
    vec![
        ("table.csv", table),
        ("success_vs_threshold.csv", sweep),
        ("iters_to_best.csv", iters),
        ("rows.csv", rows),
    ]
}

/// Writes `table.csv`, `success_vs_threshold.csv`, `iters_to_best.csv` and
/// `rows.csv` into `dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, BenchError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BenchError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for (name, text) in render_report(report) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Drops the named columns from CSV text (no quoted commas expected).
pub fn strip_columns(csv: &str, drop: &[&str]) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else { return String::new() };
    let keep: Vec<bool> = header.split(',').map(|h| !drop.contains(&h)).collect();
    let filter = |line: &str| {
        line.split(',')
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(f, _)| f)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = filter(header);
    out.push('\n');
    for line in lines {
        out.push_str(&filter(line));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{knn_landmarks, Matching};
    use crate::consensus::SamplerKind;

    #[test]
    fn g9_formatting() {
        assert_eq!(format_g9(0.0), "0");
        assert_eq!(format_g9(1.0), "1");
        assert_eq!(format_g9(0.1), "0.1");
        assert_eq!(format_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_g9(2.0 / 3.0), "0.666666667");
        assert_eq!(format_g9(123456789.0), "123456789");
        assert_eq!(format_g9(1234567891.0), "1.23456789e+09");
        assert_eq!(format_g9(0.00001234), "1.234e-05");
        assert_eq!(format_g9(0.0001234), "0.0001234");
        assert_eq!(format_g9(-2.5), "-2.5");
        assert_eq!(format_g9(f64::INFINITY), "inf");
        assert_eq!(format_g9(f64::NAN), "nan");
        assert_eq!(format_g9(99999999.95), "100000000");
    }

    #[test]
    fn success_rate_examples() {
        assert!((success_rate(&[0.05, 0.2, f64::INFINITY], 0.1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(success_rate(&[0.01, 0.02], 0.1).unwrap(), 1.0);
        assert!(matches!(success_rate(&[], 0.1), Err(BenchError::EmptyInput)));
        let errors = [0.3, 0.01, f64::INFINITY, 0.7, 0.2, 0.05];
        let curve: Vec<f64> = default_sweep().iter().map(|&t| success_rate(&errors, t).unwrap()).collect();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn seeds_are_keyed() {
        assert_eq!(derive_seed(42, &[1, 2]), derive_seed(42, &[1, 2]));
        assert_ne!(derive_seed(42, &[1, 2]), derive_seed(42, &[2, 1]));
        assert_ne!(derive_seed(42, &[0]), derive_seed(43, &[0]));
        assert_eq!(name_key(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(name_key("a"), 0xaf63_dc4c_8601_ec8c);
    }

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_landmarks: 30,
            n_queries: 8,
            ..Default::default()
        }
    }

    #[test]
    fn ring_of_eight_sees_at_least_four() {
        let s = generate_scene(&small_cfg()).unwrap();
        assert_eq!(s.scene.detections.queries.len(), 8);
        for q in &s.scene.detections.queries {
            assert!(q.observations.len() >= 4);
        }
        // visibility count oracle: re-project every landmark at the groundtruth pose
        let cam = synthetic_camera();
        for (q, truth) in s.scene.detections.queries.iter().zip(&s.truth) {
            let pose = s.scene.groundtruth.lookup(&q.query_id).unwrap().pose_wc();
            let visible = s
                .scene
                .map
                .landmarks
                .iter()
                .filter(|l| visible_box(l, &pose, &cam).is_some())
                .count();
            assert_eq!(truth.len(), visible);
        }
    }

    #[test]
    fn zero_noise_gives_perfect_rank_one() {
        let cfg = SynthConfig {
            embed_noise_sigma: 0.0,
            detector_noise_px: 0.0,
            ..Default::default()
        };
        let s = generate_scene(&cfg).unwrap();
        let map_store = s.scene.map.landmark_store();
        for (q, truth) in s.scene.detections.queries.iter().zip(&s.truth) {
            let store = q.observation_store(&s.scene.detections.embeddings);
            for (j, t) in truth.iter().enumerate() {
                let nn = knn_landmarks(&map_store, store.row(j), 1).unwrap();
                assert_eq!(Some(nn[0].0), *t);
            }
        }
    }

    #[test]
    fn default_noise_rank_one_accuracy() {
        let s = generate_scene(&SynthConfig::default()).unwrap();
        let map_store = s.scene.map.landmark_store();
        let (mut hit, mut total) = (0, 0);
        for (q, truth) in s.scene.detections.queries.iter().zip(&s.truth) {
            let store = q.observation_store(&s.scene.detections.embeddings);
            for (j, t) in truth.iter().enumerate() {
                total += 1;
                if Some(knn_landmarks(&map_store, store.row(j), 1).unwrap()[0].0) == *t {
                    hit += 1;
                }
            }
        }
        let acc = hit as f64 / total as f64;
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            clutter_rate: 2.0,
            dropout_rate: 0.2,
            ..Default::default()
        };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = SynthConfig { seed: 7, ..cfg.clone() };
        assert_ne!(generate_scene(&cfg).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn clutter_is_marked() {
        let cfg = SynthConfig {
            clutter_rate: 3.0,
            ..Default::default()
        };
        let s = generate_scene(&cfg).unwrap();
        let clutter: usize = s.truth.iter().map(|t| t.iter().filter(|x| x.is_none()).count()).sum();
        assert!(clutter > 0);
    }

    #[test]
    fn infeasible_scene() {
        let cfg = SynthConfig {
            n_landmarks: 4,
            dropout_rate: 0.9,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(BenchError::InfeasibleScene)));
    }

    #[test]
    fn invalid_synth_configs() {
        for cfg in [
            SynthConfig { n_landmarks: 3, ..Default::default() },
            SynthConfig { dropout_rate: 1.0, ..Default::default() },
            SynthConfig { embed_noise_sigma: -1.0, ..Default::default() },
            SynthConfig { room_extent: 0.0, ..Default::default() },
        ] {
            assert!(matches!(generate_scene(&cfg), Err(BenchError::InvalidConfig(_))));
        }
    }

    #[test]
    fn class_prosac_rejected_before_running() {
        let s = generate_scene(&small_cfg()).unwrap();
        let methods = [
            Method::new(Matching::Clip, SamplerKind::Ransac),
            Method::new(Matching::Class, SamplerKind::Prosac),
        ];
        let err = run_grid(&s.scene, &methods, &GridConfig::for_scale(4.0)).unwrap_err();
        assert!(matches!(err, BenchError::Association(AssociationError::UnscoredCandidate)));
    }

    fn row(method: &str, trial: usize, q: &str, err: f64, best: Option<usize>, time: f64) -> RawRow {
        RawRow {
            method: method.into(),
            trial,
            query_id: q.into(),
            status: if err.is_finite() { RowStatus::Ok } else { RowStatus::NoSolution },
            translation_error: err,
            rotation_error_deg: if err.is_finite() { 1.5 } else { f64::INFINITY },
            score: if err.is_finite() { 2.0 } else { 0.0 },
            best_found_at: best,
            iterations_run: 500,
            hypotheses: 480,
            wall_time_s: time,
        }
    }

    fn fixture_report() -> ExperimentReport {
        let rows = vec![
            row("clip_ransac", 0, "0.000000", 0.05, Some(10), 0.5),
            row("clip_ransac", 0, "1.000000", f64::INFINITY, None, 0.25),
            row("clip_ransac", 1, "0.000000", 0.2, Some(30), 0.5),
            row("clip_ransac", 1, "1.000000", 0.1, Some(20), 0.75),
        ];
        let sweep = vec![0.1, 0.5];
        ExperimentReport {
            iterations: 500,
            success_threshold: 0.4,
            summaries: vec![summarize("clip_ransac", &rows, 0.4, &sweep)],
            sweep,
            rows,
        }
    }

    #[test]
    fn golden_report() {
        let files = render_report(&fixture_report());
        let get = |n: &str| files.iter().find(|(f, _)| *f == n).unwrap().1.clone();
        assert_eq!(
            get("table.csv"),
            format!("{TABLE_HEADER}\nclip_ransac,2,2,0.75,0.25,0.1,0.05,17.5,7.5,0.5,0.125\n")
        );
        assert_eq!(
            get("success_vs_threshold.csv"),
            format!("{SWEEP_HEADER}\nclip_ransac,0.1,0.25,0.25\nclip_ransac,0.5,0.75,0.25\n")
        );
        assert_eq!(get("iters_to_best.csv"), format!("{ITERS_HEADER}\nclip_ransac,500,17.5,7.5\n"));
        assert_eq!(
            get("rows.csv").lines().nth(2).unwrap(),
            "clip_ransac,0,1.000000,no_solution,inf,inf,0,,500,480,0.25"
        );
    }

    #[test]
    fn empty_grid_is_header_only() {
        let report = ExperimentReport {
            iterations: 500,
            success_threshold: 0.4,
            sweep: default_sweep(),
            summaries: vec![],
            rows: vec![],
        };
        for (_, text) in render_report(&report) {
            assert_eq!(text.lines().count(), 1);
        }
    }

    #[test]
    fn strip_wall_time() {
        let csv = "a,wall_time_s,b\n1,2,3\n";
        assert_eq!(strip_columns(csv, &WALL_TIME_COLUMNS), "a,b\n1,3\n");
    }

    #[test]
    fn single_cell_matches_direct_localize() {
        let s = generate_scene(&small_cfg()).unwrap();
        let method = Method::new(Matching::Hybrid, SamplerKind::BProsac);
        let mut cfg = GridConfig::for_scale(4.0);
        cfg.trials = 1;
        cfg.consensus.iterations = 100;
        let report = run_grid(&s.scene, &[method], &cfg).unwrap();
        let q = &s.scene.detections.queries[3];
        let direct = localize_query(
            &s.scene.map,
            &s.scene.map.landmark_store(),
            q,
            &s.scene.detections.embeddings,
            method,
            &cfg.candidates,
            &ConsensusConfig {
                seed: derive_seed(cfg.seed, &[name_key(&method.name()), 0]),
                stream: 3,
                ..cfg.consensus.clone()
            },
            &s.scene.camera,
        )
        .unwrap();
        let r = &report.rows[3];
        assert_eq!(r.best_found_at, Some(direct.best_found_at));
        assert_eq!(r.score, direct.score);
        let gt = s.scene.groundtruth.lookup(&q.query_id).unwrap();
        assert_eq!(r.translation_error, (direct.pose.camera_center() - gt.position).norm());
    }
}
