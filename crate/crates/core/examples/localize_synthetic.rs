//! Localizes every query of a synthetic scene with each sampler under hybrid
//! matching, and reports error and the iteration where the best pose appeared.
//!
//! ```text
//! cargo run --release --example localize_synthetic
//! ```

use std::time::Instant;

use cliploc::association::Matching;
use cliploc::bench::{generate_scene, SynthConfig};
use cliploc::consensus::{ConsensusConfig, SamplerKind};
use cliploc::io::translation_error;
use cliploc::pipeline::{localize_query, CandidateOptions, Method};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate_scene(&SynthConfig {
        n_queries: 4,
        ..Default::default()
    })?
    .scene;
    let map_store = scene.map.landmark_store();
    let opts = CandidateOptions::default();

    for sampler in [SamplerKind::Ransac, SamplerKind::Prosac, SamplerKind::BProsac] {
        let method = Method::new(Matching::Hybrid, sampler);
        println!("{method}");
        for (qi, query) in scene.detections.queries.iter().enumerate() {
            let cfg = ConsensusConfig {
                seed: 7,
                stream: qi as u64,
                ..Default::default()
            };
            let start = Instant::now();
            let r = localize_query(
                &scene.map,
                &map_store,
                query,
                &scene.detections.embeddings,
                method,
                &opts,
                &cfg,
                &scene.camera,
            )?;
            let gt = scene.groundtruth.lookup(&query.query_id)?;
            println!(
                "  query {}: error {:.3} m, score {:.2}, {} matches, best at {:>3}, {:.0} ms",
                query.query_id,
                translation_error(&r.pose, gt),
                r.score,
                r.correspondences.len(),
                r.best_found_at,
                start.elapsed().as_secs_f64() * 1e3
            );
        }
    }
    Ok(())
}
