//! In-memory map and query types.

use crate::association::EmbeddingStore;
use crate::geometry::{ellipsoid_to_dual_quadric, BBox, DualQuadric, Ellipsoid};

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub ellipsoid: Ellipsoid,
    pub quadric: DualQuadric,
    pub class_id: u32,
    pub class_name: String,
    /// Free-form description, stored verbatim and never interpreted here.
    pub label: String,
    /// Row of the map embedding file holding this landmark's text embedding.
    pub embedding_ref: usize,
}

impl Landmark {
    pub fn new(
        id: u64,
        ellipsoid: Ellipsoid,
        class_id: u32,
        class_name: impl Into<String>,
        label: impl Into<String>,
        embedding_ref: usize,
    ) -> Self {
        let quadric = ellipsoid_to_dual_quadric(&ellipsoid);
        Self {
            id,
            ellipsoid,
            quadric,
            class_id,
            class_name: class_name.into(),
            label: label.into(),
            embedding_ref,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMap {
    pub name: String,
    /// Rough scene size in meters.
    pub scene_scale_hint: f64,
    pub landmarks: Vec<Landmark>,
    /// Embedding file contents, in file order.
    pub embeddings: EmbeddingStore,
}

impl ObjectMap {
    /// Text embeddings aligned with `landmarks` (row `i` belongs to landmark `i`).
    pub fn landmark_store(&self) -> EmbeddingStore {
        let refs: Vec<usize> = self.landmarks.iter().map(|l| l.embedding_ref).collect();
        self.embeddings.select(&refs)
    }

    pub fn landmark_classes(&self) -> Vec<u32> {
        self.landmarks.iter().map(|l| l.class_id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
    pub embedding_ref: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub image_size: (u32, u32),
    pub observations: Vec<Observation>,
}

impl Query {
    pub fn observation_classes(&self) -> Vec<u32> {
        self.observations.iter().map(|o| o.class_id).collect()
    }

    /// Image embeddings aligned with `observations`.
    pub fn observation_store(&self, file: &EmbeddingStore) -> EmbeddingStore {
        let refs: Vec<usize> = self.observations.iter().map(|o| o.embedding_ref).collect();
        file.select(&refs)
    }
}

/// All queries of a detection file plus the shared image-embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub queries: Vec<Query>,
    pub embeddings: EmbeddingStore,
}
