//! `cliploc` command line: `localize`, `bench`, `synth`, `validate`.
//!
//! Exit codes: 0 success, 1 usage or data error, 2 at least one query could
//! not be localized.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::association::{Matching, DEFAULT_K};
use crate::bench::{default_sweep, emit_report, generate_scene, run_grid, GridConfig, SynthConfig};
use crate::consensus::{ConsensusConfig, ConsensusError, SamplerKind};
use crate::io::{
    load_camera, load_detections_with, load_map_with, load_results, load_scene, load_trajectory, read_embeddings,
    save_results, save_scene, translation_error, MatchRecord, PoseRecord, QueryResultRecord, ResultFile, ResultStatus,
    Scene, ScenePaths, DEFAULT_CONFIDENCE_FLOOR,
};
use crate::pipeline::{localize_query, CandidateOptions, Method};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_LOCALIZATION_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cliploc", version, about = "Global camera localization in maps of text-labeled ellipsoid landmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Localize every query of a detection file against a map.
    Localize(LocalizeArgs),
    /// Run a (matching × algorithm) grid on a scene and write CSV reports.
    Bench(BenchArgs),
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Load files and report invariant violations without running anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConsensusArgs {
    /// Nearest landmarks retrieved per observation.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Iteration budget per query (ignored by bf).
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    /// Minimum IoU for a verification match, in (0, 1).
    #[arg(long, default_value_t = 0.2)]
    pub iou_threshold: f64,
    /// Detections below this confidence are dropped on load.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_FLOOR)]
    pub confidence_floor: f64,
    /// Observations with a smaller box area (px²) are not sampled; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub min_bbox_area: f64,
    /// PROSAC growth horizon T_N.
    #[arg(long, default_value_t = 200_000)]
    pub prosac_tn: u64,
    /// Master random seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl ConsensusArgs {
    fn consensus(&self) -> ConsensusConfig {
        ConsensusConfig {
            iterations: self.iterations,
            iou_threshold: self.iou_threshold,
            prosac_t_n: self.prosac_tn,
            seed: self.seed,
            ..Default::default()
        }
    }

    fn candidates(&self) -> CandidateOptions {
        CandidateOptions {
            k: self.k,
            min_bbox_area: self.min_bbox_area,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("--k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err("--confidence-floor must lie in [0, 1]".into());
        }
        if !(self.min_bbox_area.is_finite() && self.min_bbox_area >= 0.0) {
            return Err("--min-bbox-area must be non-negative".into());
        }
        self.consensus().validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// TUM trajectory; enables translation errors in the output.
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    /// Result file (JSON).
    #[arg(long)]
    pub output: PathBuf,
    /// Overrides the map's embedding_file.
    #[arg(long)]
    pub map_embeddings: Option<PathBuf>,
    /// Overrides the detection file's embedding_file.
    #[arg(long)]
    pub detection_embeddings: Option<PathBuf>,
    #[arg(long, default_value = "hybrid")]
    pub matching: Matching,
    /// One of bf, ransac, prosac, b-prosac.
    #[arg(long, default_value = "b-prosac")]
    pub algorithm: SamplerKind,
    #[command(flatten)]
    pub consensus: ConsensusArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Scene directory with map.json, detections.json, intrinsics.json and
    /// groundtruth.txt. Individual paths below override its files.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    /// Directory for the CSV reports.
    #[arg(long)]
    pub output: PathBuf,
    /// Comma-separated `{matching}_{algorithm}` names; default: every valid
    /// combination except bf, which enumerates every valid triple and takes
    /// minutes per query on full scenes.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Success threshold in meters; default 0.1 × the map's scene_scale_hint.
    #[arg(long)]
    pub success_threshold: Option<f64>,
    /// Comma-separated sweep thresholds in meters; default 0.05..=1.5 step 0.05.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    #[command(flatten)]
    pub consensus: ConsensusArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub landmarks: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: u32,
    #[arg(long, default_value_t = 8)]
    pub queries: usize,
    /// Room side length in meters.
    #[arg(long, default_value_t = 4.0)]
    pub room_extent: f64,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    /// Embedding noise sigma.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Box edge noise in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub detector_noise: f64,
    /// Probability a visible landmark goes undetected.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Mean spurious detections per query.
    #[arg(long, default_value_t = 0.0)]
    pub clutter: f64,
    /// Scale embedding noise up for small boxes.
    #[arg(long)]
    pub area_scaled_noise: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Embedding files checked on their own (repeatable).
    #[arg(long)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    #[arg(long)]
    pub groundtruth: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_FLOOR)]
    pub confidence_floor: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_ERROR
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    let result = match cli.command {
        Command::Localize(a) => cmd_localize(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Validate(a) => cmd_validate(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_ERROR
        }
    }
}

fn check_method(method: Method) -> Result<(), String> {
    method.validate().map_err(|_| {
        format!(
            "invalid combination --matching {} --algorithm {}: {} needs similarity-scored candidates, which class matching does not provide",
            method.matching, method.sampler, method.sampler
        )
    })
}

pub fn cmd_localize(a: &LocalizeArgs, out: &mut dyn Write) -> Result<i32, String> {
    let method = Method::new(a.matching, a.algorithm);
    check_method(method)?;
    a.consensus.validate()?;
    let map = load_map_with(&a.map, a.map_embeddings.as_ref()).map_err(|e| e.to_string())?;
    let detections = load_detections_with(&a.detections, a.detection_embeddings.as_ref(), a.consensus.confidence_floor)
        .map_err(|e| e.to_string())?;
    let cam = load_camera(&a.intrinsics).map_err(|e| e.to_string())?;
    let groundtruth = a
        .groundtruth
        .as_ref()
        .map(load_trajectory)
        .transpose()
        .map_err(|e| e.to_string())?;
    if map.embeddings.dim() != detections.embeddings.dim() {
        return Err(format!(
            "embedding dimensions differ: map {} vs detections {}",
            map.embeddings.dim(),
            detections.embeddings.dim()
        ));
    }

    let map_store = map.landmark_store();
    let candidates = a.consensus.candidates();
    let mut failed = false;
    let mut records = Vec::with_capacity(detections.queries.len());
    for (qi, query) in detections.queries.iter().enumerate() {
        let cfg = ConsensusConfig {
            stream: qi as u64,
            ..a.consensus.consensus()
        };
        let gt = groundtruth
            .as_ref()
            .map(|g| g.lookup(&query.query_id))
            .transpose()
            .map_err(|e| e.to_string())?;
        let start = Instant::now();
        let outcome = localize_query(&map, &map_store, query, &detections.embeddings, method, &candidates, &cfg, &cam);
        let wall_time_s = start.elapsed().as_secs_f64();
        let record = match outcome {
            Ok(r) => {
                let err = gt.map(|g| translation_error(&r.pose, g));
                let _ = writeln!(
                    out,
                    "{}: score {:.4}, {} matches, best at {}/{}{}",
                    query.query_id,
                    r.score,
                    r.correspondences.len(),
                    r.best_found_at,
                    r.iterations_run,
                    err.map_or(String::new(), |e| format!(", error {e:.4} m"))
                );
                QueryResultRecord {
                    query_id: query.query_id.clone(),
                    status: ResultStatus::Ok,
                    pose: Some(PoseRecord::from(&r.pose)),
                    score: Some(r.score),
                    correspondences: r
                        .correspondences
                        .iter()
                        .map(|m| MatchRecord {
                            obs_index: m.obs_index,
                            landmark_index: m.landmark_index,
                            landmark_id: map.landmarks[m.landmark_index].id,
                            iou: m.iou,
                        })
                        .collect(),
                    iterations_run: r.iterations_run,
                    best_found_at: Some(r.best_found_at),
                    translation_error: err,
                    wall_time_s,
                }
            }
            Err(e @ (ConsensusError::NoSolution | ConsensusError::InsufficientCandidates | ConsensusError::SamplingStalled)) => {
                failed = true;
                let _ = writeln!(out, "{}: no solution ({e})", query.query_id);
                QueryResultRecord {
                    query_id: query.query_id.clone(),
                    status: ResultStatus::NoSolution,
                    pose: None,
                    score: None,
                    correspondences: Vec::new(),
                    iterations_run: 0,
                    best_found_at: None,
                    translation_error: None,
                    wall_time_s,
                }
            }
            Err(e) => return Err(format!("query '{}': {e}", query.query_id)),
        };
        records.push(record);
    }
    let file = ResultFile {
        method: method.name(),
        seed: a.consensus.seed,
        results: records,
    };
    save_results(&file, &a.output).map_err(|e| e.to_string())?;
    Ok(if failed { EXIT_LOCALIZATION_FAILED } else { EXIT_OK })
}

fn bench_paths(a: &BenchArgs) -> Result<ScenePaths, String> {
    let base = a.scene.as_ref().map(ScenePaths::in_dir);
    let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, flag: &str| {
        explicit
            .clone()
            .or_else(|| from_dir.cloned())
            .ok_or_else(|| format!("--{flag} is required without --scene"))
    };
    Ok(ScenePaths {
        map: pick(&a.map, base.as_ref().map(|b| &b.map), "map")?,
        detections: pick(&a.detections, base.as_ref().map(|b| &b.detections), "detections")?,
        intrinsics: pick(&a.intrinsics, base.as_ref().map(|b| &b.intrinsics), "intrinsics")?,
        groundtruth: pick(&a.groundtruth, base.as_ref().map(|b| &b.groundtruth), "groundtruth")?,
    })
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32, String> {
    a.consensus.validate()?;
    let methods = if a.methods.is_empty() {
        Method::sampled()
    } else {
        a.methods.clone()
    };
    for &m in &methods {
        check_method(m)?;
    }
    let scene: Scene = load_scene(&bench_paths(a)?, a.consensus.confidence_floor).map_err(|e| e.to_string())?;
    let cfg = GridConfig {
        trials: a.trials,
        seed: a.consensus.seed,
        candidates: a.consensus.candidates(),
        consensus: a.consensus.consensus(),
        success_threshold: a.success_threshold.unwrap_or(0.1 * scene.map.scene_scale_hint),
        sweep: if a.thresholds.is_empty() {
            default_sweep()
        } else {
            a.thresholds.clone()
        },
    };
    let report = run_grid(&scene, &methods, &cfg).map_err(|e| e.to_string())?;
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "{}: success {:.3} ± {:.3}, error {:.4} ± {:.4} m, best at {:.1}",
            s.method,
            s.success_rate_mean,
            s.success_rate_std,
            s.translation_error_mean,
            s.translation_error_std,
            s.best_found_at_mean
        );
    }
    for path in emit_report(&report, &a.output).map_err(|e| e.to_string())? {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<i32, String> {
    let cfg = SynthConfig {
        n_landmarks: a.landmarks,
        n_classes: a.classes,
        n_queries: a.queries,
        room_extent: a.room_extent,
        embed_dim: a.embed_dim,
        embed_noise_sigma: a.sigma,
        detector_noise_px: a.detector_noise,
        dropout_rate: a.dropout,
        clutter_rate: a.clutter,
        area_scaled_noise: a.area_scaled_noise,
        seed: a.seed,
    };
    let scene = generate_scene(&cfg).map_err(|e| e.to_string())?.scene;
    std::fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    save_scene(&scene, &a.out).map_err(|e| e.to_string())?;
    let n_obs: usize = scene.detections.queries.iter().map(|q| q.observations.len()).sum();
    let _ = writeln!(
        out,
        "wrote {} landmarks, {} queries, {n_obs} detections to {}",
        scene.map.landmarks.len(),
        scene.detections.queries.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<i32, String> {
    let mut problems = Vec::new();
    let mut checked = 0;
    let mut report = |path: &Path, outcome: Result<String, String>, out: &mut dyn Write| {
        checked += 1;
        match outcome {
            Ok(summary) => {
                let _ = writeln!(out, "ok {}: {summary}", path.display());
            }
            Err(e) => {
                let _ = writeln!(out, "FAIL {}: {e}", path.display());
                problems.push(e);
            }
        }
    };

    let map = a.map.as_ref().map(|p| {
        let loaded = load_map_with(p, None::<&Path>);
        let summary = loaded.as_ref().map(|m| format!("{} landmarks", m.landmarks.len()));
        report(p, summary.map_err(|e| e.to_string()), out);
        loaded.ok()
    });
    let detections = a.detections.as_ref().map(|p| {
        let loaded = load_detections_with(p, None::<&Path>, a.confidence_floor);
        let summary = loaded.as_ref().map(|d| {
            let n: usize = d.queries.iter().map(|q| q.observations.len()).sum();
            format!("{} queries, {n} detections kept", d.queries.len())
        });
        report(p, summary.map_err(|e| e.to_string()), out);
        loaded.ok()
    });
    for p in &a.embeddings {
        let summary = read_embeddings(p).map(|s| format!("{} rows of dimension {}", s.len(), s.dim()));
        report(p, summary.map_err(|e| e.to_string()), out);
    }
    let camera = a.intrinsics.as_ref().map(|p| {
        let loaded = load_camera(p);
        let summary = loaded.as_ref().map(|c| format!("{}×{} px", c.width, c.height));
        report(p, summary.map_err(|e| e.to_string()), out);
        loaded.ok()
    });
    let trajectory = a.groundtruth.as_ref().map(|p| {
        let loaded = load_trajectory(p);
        let summary = loaded.as_ref().map(|t| format!("{} poses", t.entries.len()));
        report(p, summary.map_err(|e| e.to_string()), out);
        loaded.ok()
    });
    if let Some(p) = &a.results {
        let summary = load_results(p).map(|r| format!("{} results for {}", r.results.len(), r.method));
        report(p, summary.map_err(|e| e.to_string()), out);
    }
    if checked == 0 {
        return Err("nothing to validate; pass at least one file".into());
    }

    // cross-file consistency
    if let (Some(Some(m)), Some(Some(d))) = (&map, &detections) {
        if m.embeddings.dim() != d.embeddings.dim() {
            let e = format!(
                "map embedding dimension {} differs from detection embedding dimension {}",
                m.embeddings.dim(),
                d.embeddings.dim()
            );
            let _ = writeln!(out, "FAIL consistency: {e}");
            problems.push(e);
        }
    }
    if let (Some(Some(d)), Some(Some(c))) = (&detections, &camera) {
        for q in d.queries.iter().filter(|q| q.image_size != (c.width, c.height)) {
            let e = format!(
                "query '{}' image size {}×{} differs from intrinsics {}×{}",
                q.query_id, q.image_size.0, q.image_size.1, c.width, c.height
            );
            let _ = writeln!(out, "FAIL consistency: {e}");
            problems.push(e);
        }
    }
    if let (Some(Some(d)), Some(Some(t))) = (&detections, &trajectory) {
        for q in &d.queries {
            if let Err(e) = t.lookup(&q.query_id) {
                let _ = writeln!(out, "FAIL consistency: {e}");
                problems.push(e.to_string());
            }
        }
    }
    Ok(if problems.is_empty() { EXIT_OK } else { EXIT_ERROR })
}
