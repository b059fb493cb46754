//! On-disk formats: maps, detections, embeddings, intrinsics, trajectories
//! and localization results. Field-level documentation lives in
//! `docs/formats.md`.
//!
//! Maps, detections, intrinsics and results are JSON. Embeddings use a small
//! binary container:
//!
//! ```text
//! "EMB1" | version: u16 LE | dim: u32 LE | count: u32 LE | count·dim × f32 LE
//! ```
//!
//! Trajectories follow the TUM RGB-D text convention
//! (`timestamp tx ty tz qx qy qz qw`, camera-to-world). Poses are
//! world-to-camera everywhere else; conversion happens here.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{AssociationError, EmbeddingStore};
use crate::geometry::{unit_quaternion, BBox, Camera, Ellipsoid, GeometryError, PoseWC};
use crate::model::{DetectionSet, Landmark, ObjectMap, Observation, Query};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const EMBEDDING_VERSION: u16 = 1;
pub const EMBEDDING_HEADER_LEN: usize = 14;

/// Default minimum detection confidence kept by [`load_detections`].
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.1;

const TRAJECTORY_QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: bad magic, expected \"EMB1\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported embedding file version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("{path}: truncated file, expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {column}")]
    NonFiniteValue {
        path: PathBuf,
        row: usize,
        column: usize,
    },
    #[error("{path}: {what} embedding_ref {index} out of range (file has {count} rows)")]
    EmbeddingRefOutOfRange {
        path: PathBuf,
        what: String,
        index: usize,
        count: usize,
    },
    #[error("{path}: {message}")]
    InvariantViolation { path: PathBuf, message: String },
    #[error("no groundtruth pose for query '{0}'")]
    MissingGroundtruth(String),
}

impl ModelIoError {
    fn invariant(path: &Path, message: impl Into<String>) -> Self {
        ModelIoError::InvariantViolation {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ModelIoError> {
    fs::read(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, ModelIoError> {
    fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), ModelIoError> {
    fs::write(path, bytes).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ModelIoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| ModelIoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ModelIoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn resolve_relative(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

// ---------------------------------------------------------------------------
// embeddings

pub fn encode_embeddings(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * store.raw().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for v in store.raw() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingStore, ModelIoError> {
    let truncated = |expected| ModelIoError::TruncatedFile {
        path: path.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(EMBEDDING_HEADER_LEN));
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(ModelIoError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < EMBEDDING_HEADER_LEN {
        return Err(truncated(EMBEDDING_HEADER_LEN));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EMBEDDING_VERSION {
        return Err(ModelIoError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = EMBEDDING_HEADER_LEN + 4 * dim * count;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(ModelIoError::invariant(
            path,
            format!("file has {} trailing bytes after {count}×{dim} payload", bytes.len() - expected),
        ));
    }
    let raw: Vec<f32> = bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(ModelIoError::NonFiniteValue {
            path: path.to_path_buf(),
            row: i / dim.max(1),
            column: i % dim.max(1),
        });
    }
    EmbeddingStore::new(dim, raw).map_err(|e| match e {
        AssociationError::ZeroVector => ModelIoError::invariant(path, "embedding row with zero norm"),
        other => ModelIoError::invariant(path, other.to_string()),
    })
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore, ModelIoError> {
    let path = path.as_ref();
    decode_embeddings(&read_bytes(path)?, path)
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    write_bytes(path.as_ref(), &encode_embeddings(store))
}

// ---------------------------------------------------------------------------
// maps

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MapMetadata {
    pub name: String,
    pub scene_scale_hint: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    pub id: u64,
    pub center: [f64; 3],
    pub radii: [f64; 3],
    /// Ellipsoid-to-world rotation as `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub class_id: u32,
    pub class_name: String,
    pub label: String,
    pub embedding_ref: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub metadata: MapMetadata,
    /// Text-embedding file, relative to the map file unless absolute.
    pub embedding_file: String,
    pub landmarks: Vec<LandmarkRecord>,
}

fn landmark_from_record(rec: &LandmarkRecord, path: &Path) -> Result<Landmark, ModelIoError> {
    let [w, x, y, z] = rec.rotation;
    let ellipsoid = Ellipsoid::new(
        Vector3::from(rec.center),
        Vector3::from(rec.radii),
        Quaternion::new(w, x, y, z),
    )
    .map_err(|e| ModelIoError::invariant(path, format!("landmark {}: {e}", rec.id)))?;
    Ok(Landmark::new(
        rec.id,
        ellipsoid,
        rec.class_id,
        rec.class_name.clone(),
        rec.label.clone(),
        rec.embedding_ref,
    ))
}

fn record_from_landmark(l: &Landmark) -> LandmarkRecord {
    let q = l.ellipsoid.rotation().quaternion();
    LandmarkRecord {
        id: l.id,
        center: (*l.ellipsoid.center()).into(),
        radii: (*l.ellipsoid.radii()).into(),
        rotation: [q.w, q.i, q.j, q.k],
        class_id: l.class_id,
        class_name: l.class_name.clone(),
        label: l.label.clone(),
        embedding_ref: l.embedding_ref,
    }
}

/// Loads a map and its embedding file (`embedding_file` resolved relative to
/// the map). All invariants are checked and dual quadrics precomputed.
pub fn load_map(path: impl AsRef<Path>) -> Result<ObjectMap, ModelIoError> {
    load_map_with(path, None::<&Path>)
}

/// Like [`load_map`], optionally overriding the embedding file path.
pub fn load_map_with(
    path: impl AsRef<Path>,
    embeddings: Option<impl AsRef<Path>>,
) -> Result<ObjectMap, ModelIoError> {
    let path = path.as_ref();
    let file: MapFile = parse_json(path)?;
    let emb_path = match embeddings {
        Some(p) => p.as_ref().to_path_buf(),
        None => resolve_relative(path, &file.embedding_file),
    };
    let store = read_embeddings(&emb_path)?;

    if !(file.metadata.scene_scale_hint.is_finite() && file.metadata.scene_scale_hint > 0.0) {
        return Err(ModelIoError::invariant(path, "scene_scale_hint must be positive"));
    }
    let mut ids = HashSet::new();
    let mut landmarks = Vec::with_capacity(file.landmarks.len());
    for rec in &file.landmarks {
        if !ids.insert(rec.id) {
            return Err(ModelIoError::invariant(path, format!("duplicate landmark id {}", rec.id)));
        }
        if rec.embedding_ref >= store.len() {
            return Err(ModelIoError::EmbeddingRefOutOfRange {
                path: path.to_path_buf(),
                what: format!("landmark {}", rec.id),
                index: rec.embedding_ref,
                count: store.len(),
            });
        }
        landmarks.push(landmark_from_record(rec, path)?);
    }
    Ok(ObjectMap {
        name: file.metadata.name,
        scene_scale_hint: file.metadata.scene_scale_hint,
        landmarks,
        embeddings: store,
    })
}

/// Writes `map` as JSON plus its embedding file at `embedding_path`. The map
/// refers to the embedding file by its file name.
pub fn save_map(
    map: &ObjectMap,
    path: impl AsRef<Path>,
    embedding_path: impl AsRef<Path>,
) -> Result<(), ModelIoError> {
    let embedding_path = embedding_path.as_ref();
    let file = MapFile {
        metadata: MapMetadata {
            name: map.name.clone(),
            scene_scale_hint: map.scene_scale_hint,
        },
        embedding_file: relative_name(path.as_ref(), embedding_path),
        landmarks: map.landmarks.iter().map(record_from_landmark).collect(),
    };
    write_embeddings(&map.embeddings, embedding_path)?;
    write_json(path.as_ref(), &file)
}

fn relative_name(base: &Path, target: &Path) -> String {
    let base_dir = base.parent().unwrap_or(Path::new(""));
    match target.strip_prefix(base_dir) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel.to_string_lossy().into_owned(),
        _ => target.to_string_lossy().into_owned(),
    }
}

// ---------------------------------------------------------------------------
// detections

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    /// `[xmin, ymin, xmax, ymax]` in pixels.
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub confidence: f64,
    pub embedding_ref: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub query_id: String,
    /// `[width, height]` in pixels.
    pub image_size: [u32; 2],
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    /// Image-embedding file, relative to the detection file unless absolute.
    pub embedding_file: String,
    pub queries: Vec<QueryRecord>,
}

/// Loads detections, dropping those with confidence below `confidence_floor`.
pub fn load_detections(path: impl AsRef<Path>, confidence_floor: f64) -> Result<DetectionSet, ModelIoError> {
    load_detections_with(path, None::<&Path>, confidence_floor)
}

pub fn load_detections_with(
    path: impl AsRef<Path>,
    embeddings: Option<impl AsRef<Path>>,
    confidence_floor: f64,
) -> Result<DetectionSet, ModelIoError> {
    let path = path.as_ref();
    let file: DetectionFile = parse_json(path)?;
    let emb_path = match embeddings {
        Some(p) => p.as_ref().to_path_buf(),
        None => resolve_relative(path, &file.embedding_file),
    };
    let store = read_embeddings(&emb_path)?;

    let mut ids = HashSet::new();
    let mut queries = Vec::with_capacity(file.queries.len());
    for q in &file.queries {
        if !ids.insert(q.query_id.clone()) {
            return Err(ModelIoError::invariant(path, format!("duplicate query_id '{}'", q.query_id)));
        }
        if q.image_size[0] == 0 || q.image_size[1] == 0 {
            return Err(ModelIoError::invariant(path, format!("query '{}': empty image size", q.query_id)));
        }
        let mut observations = Vec::new();
        for (i, d) in q.detections.iter().enumerate() {
            let bbox = BBox::try_from(d.bbox).map_err(|e: GeometryError| {
                ModelIoError::invariant(path, format!("query '{}' detection {i}: {e}", q.query_id))
            })?;
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(ModelIoError::invariant(
                    path,
                    format!("query '{}' detection {i}: confidence {} outside [0, 1]", q.query_id, d.confidence),
                ));
            }
            if d.embedding_ref >= store.len() {
                return Err(ModelIoError::EmbeddingRefOutOfRange {
                    path: path.to_path_buf(),
                    what: format!("query '{}' detection {i}", q.query_id),
                    index: d.embedding_ref,
                    count: store.len(),
                });
            }
            if d.confidence < confidence_floor {
                continue;
            }
            observations.push(Observation {
                bbox,
                class_id: d.class_id,
                confidence: d.confidence,
                embedding_ref: d.embedding_ref,
            });
        }
        queries.push(Query {
            query_id: q.query_id.clone(),
            image_size: (q.image_size[0], q.image_size[1]),
            observations,
        });
    }
    Ok(DetectionSet {
        queries,
        embeddings: store,
    })
}

pub fn save_detections(
    set: &DetectionSet,
    path: impl AsRef<Path>,
    embedding_path: impl AsRef<Path>,
) -> Result<(), ModelIoError> {
    let embedding_path = embedding_path.as_ref();
    let file = DetectionFile {
        embedding_file: relative_name(path.as_ref(), embedding_path),
        queries: set
            .queries
            .iter()
            .map(|q| QueryRecord {
                query_id: q.query_id.clone(),
                image_size: [q.image_size.0, q.image_size.1],
                detections: q
                    .observations
                    .iter()
                    .map(|o| DetectionRecord {
                        bbox: o.bbox.into(),
                        class_id: o.class_id,
                        confidence: o.confidence,
                        embedding_ref: o.embedding_ref,
                    })
                    .collect(),
            })
            .collect(),
    };
    write_embeddings(&set.embeddings, embedding_path)?;
    write_json(path.as_ref(), &file)
}

// ---------------------------------------------------------------------------
// intrinsics

pub fn load_camera(path: impl AsRef<Path>) -> Result<Camera, ModelIoError> {
    let path = path.as_ref();
    let cam: Camera = parse_json(path)?;
    cam.validate()
        .map_err(|e| ModelIoError::invariant(path, e.to_string()))?;
    Ok(cam)
}

pub fn save_camera(cam: &Camera, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    write_json(path.as_ref(), cam)
}

// ---------------------------------------------------------------------------
// trajectories

/// One camera-to-world pose from a TUM trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEntry {
    /// Timestamp token exactly as written in the file.
    pub timestamp: String,
    pub position: Vector3<f64>,
    /// Camera-to-world orientation.
    pub orientation: UnitQuaternion<f64>,
}

impl TrajectoryEntry {
    pub fn pose_wc(&self) -> PoseWC {
        PoseWC::from_camera_to_world(self.orientation, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    /// Finds the entry for a query id: exact timestamp text first, then
    /// numeric equality within 1e-6 s.
    pub fn lookup(&self, query_id: &str) -> Result<&TrajectoryEntry, ModelIoError> {
        if let Some(e) = self.entries.iter().find(|e| e.timestamp == query_id) {
            return Ok(e);
        }
        if let Ok(t) = query_id.parse::<f64>() {
            if let Some(e) = self
                .entries
                .iter()
                .find(|e| e.timestamp.parse::<f64>().is_ok_and(|s| (s - t).abs() < 1e-6))
            {
                return Ok(e);
            }
        }
        Err(ModelIoError::MissingGroundtruth(query_id.to_string()))
    }
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory, ModelIoError> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |column: usize, message: String| ModelIoError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            column,
            message,
        };
        if fields.len() != 8 {
            return Err(parse_err(1, format!("expected 8 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 7];
        for (i, tok) in fields[1..].iter().enumerate() {
            v[i] = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(i + 2, format!("invalid number '{tok}'")))?;
        }
        fields[0]
            .parse::<f64>()
            .map_err(|_| parse_err(1, format!("invalid timestamp '{}'", fields[0])))?;
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        if (q.norm() - 1.0).abs() > TRAJECTORY_QUATERNION_TOLERANCE {
            return Err(ModelIoError::invariant(
                path,
                format!("line {}: quaternion norm {} not within 1e-3 of 1", lineno + 1, q.norm()),
            ));
        }
        entries.push(TrajectoryEntry {
            timestamp: fields[0].to_string(),
            position: Vector3::new(v[0], v[1], v[2]),
            orientation: unit_quaternion(q),
        });
    }
    Ok(Trajectory { entries })
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, ModelIoError> {
    let path = path.as_ref();
    parse_trajectory(&read_text(path)?, path)
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for e in &traj.entries {
        let q = e.orientation.quaternion();
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            e.timestamp, e.position.x, e.position.y, e.position.z, q.i, q.j, q.k, q.w
        ));
    }
    out
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    write_bytes(path.as_ref(), format_trajectory(traj).as_bytes())
}

/// Distance between the estimated camera center and the groundtruth position.
pub fn translation_error(estimate: &PoseWC, gt: &TrajectoryEntry) -> f64 {
    (estimate.camera_center() - gt.position).norm()
}

// ---------------------------------------------------------------------------
// results

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatchRecord {
    pub obs_index: usize,
    pub landmark_index: usize,
    pub landmark_id: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// World-to-camera rotation `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub camera_center: [f64; 3],
}

impl From<&PoseWC> for PoseRecord {
    fn from(p: &PoseWC) -> Self {
        let q = p.rotation().quaternion();
        Self {
            rotation: [q.w, q.i, q.j, q.k],
            translation: (*p.translation()).into(),
            camera_center: p.camera_center().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    NoSolution,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QueryResultRecord {
    pub query_id: String,
    pub status: ResultStatus,
    pub pose: Option<PoseRecord>,
    pub score: Option<f64>,
    pub correspondences: Vec<MatchRecord>,
    pub iterations_run: usize,
    pub best_found_at: Option<usize>,
    pub translation_error: Option<f64>,
    /// Not reproducible across runs.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    /// `{matching}_{algorithm}`, e.g. `hybrid_b-prosac`.
    pub method: String,
    pub seed: u64,
    pub results: Vec<QueryResultRecord>,
}

pub fn save_results(results: &ResultFile, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    write_json(path.as_ref(), results)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ResultFile, ModelIoError> {
    parse_json(path.as_ref())
}

// ---------------------------------------------------------------------------
// scene directories

pub const SCENE_MAP: &str = "map.json";
pub const SCENE_MAP_EMBEDDINGS: &str = "map.emb";
pub const SCENE_DETECTIONS: &str = "detections.json";
pub const SCENE_DETECTION_EMBEDDINGS: &str = "detections.emb";
pub const SCENE_INTRINSICS: &str = "intrinsics.json";
pub const SCENE_GROUNDTRUTH: &str = "groundtruth.txt";

/// Everything needed to localize and evaluate a set of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub map: ObjectMap,
    pub detections: DetectionSet,
    pub camera: Camera,
    pub groundtruth: Trajectory,
}

/// Paths of the files making up a [`Scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePaths {
    pub map: PathBuf,
    pub detections: PathBuf,
    pub intrinsics: PathBuf,
    pub groundtruth: PathBuf,
}

impl ScenePaths {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            map: dir.join(SCENE_MAP),
            detections: dir.join(SCENE_DETECTIONS),
            intrinsics: dir.join(SCENE_INTRINSICS),
            groundtruth: dir.join(SCENE_GROUNDTRUTH),
        }
    }
}

pub fn load_scene(paths: &ScenePaths, confidence_floor: f64) -> Result<Scene, ModelIoError> {
    Ok(Scene {
        map: load_map(&paths.map)?,
        detections: load_detections(&paths.detections, confidence_floor)?,
        camera: load_camera(&paths.intrinsics)?,
        groundtruth: load_trajectory(&paths.groundtruth)?,
    })
}

/// Writes the six scene files into `dir`, which must exist.
pub fn save_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let dir = dir.as_ref();
    let paths = ScenePaths::in_dir(dir);
    save_map(&scene.map, &paths.map, dir.join(SCENE_MAP_EMBEDDINGS))?;
    save_detections(&scene.detections, &paths.detections, dir.join(SCENE_DETECTION_EMBEDDINGS))?;
    save_camera(&scene.camera, &paths.intrinsics)?;
    save_trajectory(&scene.groundtruth, &paths.groundtruth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem.emb")
    }

    #[test]
    fn empty_store_is_header_only() {
        let bytes = encode_embeddings(&EmbeddingStore::empty(8).unwrap());
        assert_eq!(bytes.len(), EMBEDDING_HEADER_LEN);
        assert_eq!(&bytes[..4], b"EMB1");
        let back = decode_embeddings(&bytes, p()).unwrap();
        assert_eq!((back.dim(), back.len()), (8, 0));
    }

    #[test]
    fn embedding_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f32> = (0..320).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let store = EmbeddingStore::new(32, raw.clone()).unwrap();
        let bytes = encode_embeddings(&store);
        assert_eq!(bytes.len(), 14 + 4 * 32 * 10);
        let back = decode_embeddings(&bytes, p()).unwrap();
        assert_eq!(
            back.raw().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            raw.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(encode_embeddings(&back), bytes);
    }

    #[test]
    fn embedding_decode_errors() {
        let store = EmbeddingStore::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_embeddings(&store);
        assert!(matches!(
            decode_embeddings(&bytes[..bytes.len() - 1], p()),
            Err(ModelIoError::TruncatedFile { .. })
        ));
        assert!(matches!(decode_embeddings(&bytes[..10], p()), Err(ModelIoError::TruncatedFile { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_embeddings(&bad, p()), Err(ModelIoError::BadMagic { .. })));
        let mut nan = bytes.clone();
        nan[14..18].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_embeddings(&nan, p()),
            Err(ModelIoError::NonFiniteValue { row: 0, column: 0, .. })
        ));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(decode_embeddings(&version, p()), Err(ModelIoError::UnsupportedVersion { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_embeddings(&long, p()), Err(ModelIoError::InvariantViolation { .. })));
    }

    #[test]
    fn trajectory_parsing() {
        let text = "# comment\n1.5 0.25 -1.5 2.0 0 0 0 1\n\n2.000000 1 2 3 0 0 0.7071068 0.7071068\n";
        let t = parse_trajectory(text, Path::new("gt.txt")).unwrap();
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.entries[0].position, Vector3::new(0.25, -1.5, 2.0));
        assert!((t.entries[1].orientation.quaternion().norm() - 1.0).abs() < 1e-15);
        assert_eq!(t.lookup("2.000000").unwrap().timestamp, "2.000000");
        assert_eq!(t.lookup("2").unwrap().timestamp, "2.000000");
        assert!(matches!(t.lookup("3.0"), Err(ModelIoError::MissingGroundtruth(_))));

        assert!(matches!(
            parse_trajectory("1 2 3\n", Path::new("gt.txt")),
            Err(ModelIoError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_trajectory("1 0 0 0 0 0 0 1.1\n", Path::new("gt.txt")),
            Err(ModelIoError::InvariantViolation { .. })
        ));
        // comma decimal separators are rejected, not silently misread
        assert!(parse_trajectory("1 0,5 0 0 0 0 0 1\n", Path::new("gt.txt")).is_err());
    }

    #[test]
    fn translation_error_examples() {
        let gt = TrajectoryEntry {
            timestamp: "0".into(),
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        };
        assert_eq!(translation_error(&gt.pose_wc(), &gt), 0.0);
        let est = PoseWC::from_camera_to_world(UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(3.0, 4.0, 0.0));
        assert!((translation_error(&est, &gt) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn translation_error_matches_matrix_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let pose = PoseWC::from_parts(
                UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0)),
                Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            );
            let gt = TrajectoryEntry {
                timestamp: "0".into(),
                position: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                orientation: UnitQuaternion::identity(),
            };
            let inv = pose.matrix().try_inverse().unwrap();
            let center = Vector3::new(inv[(0, 3)], inv[(1, 3)], inv[(2, 3)]);
            assert!((translation_error(&pose, &gt) - (center - gt.position).norm()).abs() < 1e-10);
        }
    }
}
