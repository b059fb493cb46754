//! Per-query glue: candidates from embeddings and classes, ordering for the
//! chosen sampler, then consensus.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::association::{build_candidates, AssociationError, CandidateSet, EmbeddingStore, Matching};
use crate::consensus::{localize, prepare_candidates, ConsensusConfig, ConsensusError, LocalizationResult, SamplerKind};
use crate::geometry::Camera;
use crate::model::{ObjectMap, Query};

/// A `{matching}_{algorithm}` combination such as `hybrid_b-prosac`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Method {
    pub matching: Matching,
    pub sampler: SamplerKind,
}

impl Method {
    pub fn new(matching: Matching, sampler: SamplerKind) -> Self {
        Self { matching, sampler }
    }

    /// Rejects combinations needing scores the matching type cannot provide.
    pub fn validate(&self) -> Result<(), AssociationError> {
        if self.sampler.requires_scores() && !self.matching.is_scored() {
            return Err(AssociationError::UnscoredCandidate);
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        format!("{}_{}", self.matching, self.sampler)
    }

    /// Every valid combination, matching-major.
    pub fn all() -> Vec<Method> {
        Matching::ALL
            .iter()
            .flat_map(|&m| SamplerKind::ALL.iter().map(move |&s| Method::new(m, s)))
            .filter(|m| m.validate().is_ok())
            .collect()
    }

    /// Valid combinations excluding brute force, whose cost grows with the
    /// cube of the candidate count.
    pub fn sampled() -> Vec<Method> {
        Self::all()
            .into_iter()
            .filter(|m| m.sampler != SamplerKind::BruteForce)
            .collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.matching, self.sampler)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, a) = s
            .split_once('_')
            .ok_or_else(|| format!("method '{s}' is not of the form matching_algorithm"))?;
        Ok(Method::new(m.parse()?, a.parse()?))
    }
}

/// Candidate options shared by all queries of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOptions {
    pub k: usize,
    /// Observations with a smaller box area (px²) contribute no sampling
    /// candidates; they are still verified. 0 disables the filter.
    pub min_bbox_area: f64,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self {
            k: crate::association::DEFAULT_K,
            min_bbox_area: 0.0,
        }
    }
}

/// Candidate set for one query, ordered for `method.sampler`.
pub fn query_candidates(
    map: &ObjectMap,
    map_store: &EmbeddingStore,
    query: &Query,
    image_embeddings: &EmbeddingStore,
    method: Method,
    opts: &CandidateOptions,
) -> Result<CandidateSet, ConsensusError> {
    method.validate()?;
    let mut set = build_candidates(
        method.matching,
        map_store,
        &query.observation_store(image_embeddings),
        opts.k,
        &map.landmark_classes(),
        &query.observation_classes(),
    )?;
    if opts.min_bbox_area > 0.0 {
        set.drop_sampling_where(|j| query.observations[j].bbox.area() < opts.min_bbox_area);
    }
    prepare_candidates(method.sampler, set)
}

/// Builds candidates and localizes one query.
pub fn localize_query(
    map: &ObjectMap,
    map_store: &EmbeddingStore,
    query: &Query,
    image_embeddings: &EmbeddingStore,
    method: Method,
    opts: &CandidateOptions,
    cfg: &ConsensusConfig,
    cam: &Camera,
) -> Result<LocalizationResult, ConsensusError> {
    let set = query_candidates(map, map_store, query, image_embeddings, method, opts)?;
    localize(map, query, &set, method.sampler, cfg, cam)
}
