//! Correspondence candidates between observations and landmarks.
//!
//! Three matching types are supported:
//!
//! - `clip`: each observation embedding retrieves its `k` most similar
//!   landmark text embeddings; the same sets drive sampling and verification.
//! - `class`: every same-class (observation, landmark) pair is a candidate.
//!   These carry no similarity score.
//! - `hybrid`: `clip` candidates for sampling, verification against the union
//!   of `clip` and `class` landmarks.
//!
//! Score-ordered sampling uses [`sort_by_score`]; the balanced ordering in
//! [`sort_balanced`] lists every observation's nearest landmark first, then
//! every second-nearest, and so on, each group by descending score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Score carried by class-based candidates, which have no similarity.
pub const UNSCORED: f64 = -2.0;

/// Number of nearest landmarks retrieved per observation unless configured.
pub const DEFAULT_K: usize = 3;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm embedding vector")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("candidate set contains unscored (class-based) candidates")]
    UnscoredCandidate,
    #[error("embedding store is empty")]
    EmptyStore,
    #[error("class list length {got} does not match {expected} entries")]
    ClassCountMismatch { expected: usize, got: usize },
}

/// Row-major set of embeddings. Raw rows are kept as loaded; a unit-normalized
/// copy backs all similarity queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    raw: Vec<f32>,
    unit: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, raw: Vec<f32>) -> Result<Self, AssociationError> {
        if dim == 0 {
            return Err(AssociationError::ZeroDimension);
        }
        if !raw.len().is_multiple_of(dim) {
            return Err(AssociationError::DimensionMismatch {
                expected: dim,
                got: raw.len() % dim,
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(AssociationError::NonFinite);
        }
        let mut unit = Vec::with_capacity(raw.len());
        for row in raw.chunks_exact(dim) {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(AssociationError::ZeroVector);
            }
            unit.extend(row.iter().map(|&v| f64::from(v) / norm));
        }
        debug_assert!(unit
            .chunks_exact(dim)
            .all(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < UNIT_NORM_TOLERANCE));
        Ok(Self { dim, raw, unit })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self, AssociationError> {
        let mut raw = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(AssociationError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            raw.extend_from_slice(row);
        }
        Self::new(dim, raw)
    }

    pub fn empty(dim: usize) -> Result<Self, AssociationError> {
        Self::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.raw.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Unit-normalized row.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    /// Row exactly as loaded.
    pub fn raw_row(&self, i: usize) -> &[f32] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f32] {
        &self.raw
    }

    /// New store made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut raw = Vec::with_capacity(indices.len() * self.dim);
        let mut unit = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            raw.extend_from_slice(self.raw_row(i));
            unit.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            raw,
            unit,
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, AssociationError> {
    if a.len() != b.len() {
        return Err(AssociationError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(AssociationError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Exact top-`k` landmarks by cosine similarity, descending; ties go to the
/// lower index.
pub fn knn_landmarks(
    store: &EmbeddingStore,
    query: &[f64],
    k: usize,
) -> Result<Vec<(usize, f64)>, AssociationError> {
    if k == 0 {
        return Err(AssociationError::InvalidK);
    }
    let mut scored = (0..store.len())
        .map(|i| cosine_similarity(store.row(i), query).map(|s| (i, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceCandidate {
    pub obs_index: usize,
    pub landmark_index: usize,
    /// Cosine similarity, or [`UNSCORED`] for class-based candidates.
    pub score: f64,
    /// 1 for the nearest landmark of this observation; 0 when unscored.
    pub rank: usize,
}

impl CorrespondenceCandidate {
    pub fn is_scored(&self) -> bool {
        self.rank >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    /// Candidates available to hypothesis sampling, in sampling order.
    pub sampling: Vec<CorrespondenceCandidate>,
    /// Landmarks checked for each observation during pose verification.
    pub verification: Vec<Vec<usize>>,
}

impl CandidateSet {
    /// Checks that sampling pairs are unique and contained in verification.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.sampling {
            if !seen.insert((c.obs_index, c.landmark_index)) {
                return Err(format!(
                    "duplicate sampling pair ({}, {})",
                    c.obs_index, c.landmark_index
                ));
            }
            let listed = self
                .verification
                .get(c.obs_index)
                .is_some_and(|v| v.contains(&c.landmark_index));
            if !listed {
                return Err(format!(
                    "sampling pair ({}, {}) missing from verification",
                    c.obs_index, c.landmark_index
                ));
            }
        }
        Ok(())
    }

    pub fn is_scored(&self) -> bool {
        self.sampling.iter().all(CorrespondenceCandidate::is_scored)
    }

    /// Removes sampling candidates of observations for which `drop` holds.
    /// Verification is left untouched.
    pub fn drop_sampling_where(&mut self, drop: impl Fn(usize) -> bool) {
        self.sampling.retain(|c| !drop(c.obs_index));
    }
}

pub fn generate_clip_candidates(
    map_store: &EmbeddingStore,
    query_store: &EmbeddingStore,
    k: usize,
) -> Result<CandidateSet, AssociationError> {
    if k == 0 {
        return Err(AssociationError::InvalidK);
    }
    if map_store.is_empty() {
        return Err(AssociationError::EmptyStore);
    }
    if map_store.dim() != query_store.dim() {
        return Err(AssociationError::DimensionMismatch {
            expected: map_store.dim(),
            got: query_store.dim(),
        });
    }
    let mut set = CandidateSet {
        sampling: Vec::with_capacity(query_store.len() * k),
        verification: Vec::with_capacity(query_store.len()),
    };
    for j in 0..query_store.len() {
        let neighbors = knn_landmarks(map_store, query_store.row(j), k)?;
        set.verification.push(neighbors.iter().map(|n| n.0).collect());
        set.sampling.extend(neighbors.iter().enumerate().map(|(r, &(l, score))| {
            CorrespondenceCandidate {
                obs_index: j,
                landmark_index: l,
                score,
                rank: r + 1,
            }
        }));
    }
    debug_assert!(set.check_invariants().is_ok());
    Ok(set)
}

pub fn generate_class_candidates(landmark_classes: &[u32], observation_classes: &[u32]) -> CandidateSet {
    let mut set = CandidateSet::default();
    for (j, oc) in observation_classes.iter().enumerate() {
        let same: Vec<usize> = landmark_classes
            .iter()
            .enumerate()
            .filter(|(_, lc)| *lc == oc)
            .map(|(l, _)| l)
            .collect();
        set.sampling.extend(same.iter().map(|&l| CorrespondenceCandidate {
            obs_index: j,
            landmark_index: l,
            score: UNSCORED,
            rank: 0,
        }));
        set.verification.push(same);
    }
    set
}

/// `clip` sampling candidates with verification widened to same-class
/// landmarks. Empty class lists disable the widening.
pub fn generate_hybrid_candidates(
    map_store: &EmbeddingStore,
    query_store: &EmbeddingStore,
    k: usize,
    landmark_classes: &[u32],
    observation_classes: &[u32],
) -> Result<CandidateSet, AssociationError> {
    let mut set = generate_clip_candidates(map_store, query_store, k)?;
    if landmark_classes.is_empty() || observation_classes.is_empty() {
        return Ok(set);
    }
    if observation_classes.len() != query_store.len() {
        return Err(AssociationError::ClassCountMismatch {
            expected: query_store.len(),
            got: observation_classes.len(),
        });
    }
    if landmark_classes.len() != map_store.len() {
        return Err(AssociationError::ClassCountMismatch {
            expected: map_store.len(),
            got: landmark_classes.len(),
        });
    }
    let class_set = generate_class_candidates(landmark_classes, observation_classes);
    for (verify, same_class) in set.verification.iter_mut().zip(class_set.verification) {
        for l in same_class {
            if !verify.contains(&l) {
                verify.push(l);
            }
        }
    }
    debug_assert!(set.check_invariants().is_ok());
    Ok(set)
}

/// Descending score, stable for ties.
pub fn sort_by_score(mut c: CandidateSet) -> Result<CandidateSet, AssociationError> {
    if !c.is_scored() {
        return Err(AssociationError::UnscoredCandidate);
    }
    c.sampling.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(c)
}

/// Groups by neighbor rank (all rank-1 first), descending score within each
/// group, stable for ties.
pub fn sort_balanced(mut c: CandidateSet) -> Result<CandidateSet, AssociationError> {
    if !c.is_scored() {
        return Err(AssociationError::UnscoredCandidate);
    }
    c.sampling
        .sort_by(|a, b| a.rank.cmp(&b.rank).then(b.score.total_cmp(&a.score)));
    Ok(c)
}

/// How correspondence candidates are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    Class,
    Clip,
    Hybrid,
}

impl Matching {
    pub const ALL: [Matching; 3] = [Matching::Class, Matching::Clip, Matching::Hybrid];

    pub fn name(&self) -> &'static str {
        match self {
            Matching::Class => "class",
            Matching::Clip => "clip",
            Matching::Hybrid => "hybrid",
        }
    }

    pub fn is_scored(&self) -> bool {
        !matches!(self, Matching::Class)
    }
}

impl fmt::Display for Matching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Matching {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class" => Ok(Matching::Class),
            "clip" => Ok(Matching::Clip),
            "hybrid" => Ok(Matching::Hybrid),
            other => Err(format!("unknown matching type '{other}' (expected class, clip or hybrid)")),
        }
    }
}

/// Builds the candidate set of one query for the given matching type.
pub fn build_candidates(
    matching: Matching,
    map_store: &EmbeddingStore,
    query_store: &EmbeddingStore,
    k: usize,
    landmark_classes: &[u32],
    observation_classes: &[u32],
) -> Result<CandidateSet, AssociationError> {
    match matching {
        Matching::Class => Ok(generate_class_candidates(landmark_classes, observation_classes)),
        Matching::Clip => generate_clip_candidates(map_store, query_store, k),
        Matching::Hybrid => generate_hybrid_candidates(
            map_store,
            query_store,
            k,
            landmark_classes,
            observation_classes,
        ),
    }
}
