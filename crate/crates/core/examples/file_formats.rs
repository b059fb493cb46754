//! Writes a synthetic scene in the on-disk formats, reads it back, and
//! shows the typed error produced by a corrupted embedding file.
//!
//! ```text
//! cargo run --example file_formats [dir]
//! ```

use std::path::PathBuf;

use cliploc::bench::{generate_scene, SynthConfig};
use cliploc::io::{load_scene, read_embeddings, save_scene, ScenePaths, DEFAULT_CONFIDENCE_FLOOR, SCENE_MAP_EMBEDDINGS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cliploc-file-formats"));
    std::fs::create_dir_all(&dir)?;

    let scene = generate_scene(&SynthConfig {
        n_queries: 2,
        clutter_rate: 1.0,
        ..Default::default()
    })?
    .scene;
    save_scene(&scene, &dir)?;
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        println!("{:>8} bytes  {}", entry.metadata()?.len(), entry.path().display());
    }

    let loaded = load_scene(&ScenePaths::in_dir(&dir), DEFAULT_CONFIDENCE_FLOOR)?;
    println!(
        "\nround trip: map equal {}, detections equal {}, camera equal {}, groundtruth equal {}",
        loaded.map == scene.map,
        loaded.detections == scene.detections,
        loaded.camera == scene.camera,
        loaded.groundtruth == scene.groundtruth
    );

    // Detections below the confidence floor are dropped on load.
    let strict = load_scene(&ScenePaths::in_dir(&dir), 0.9)?;
    let count = |s: &cliploc::io::Scene| s.detections.queries.iter().map(|q| q.observations.len()).sum::<usize>();
    println!("detections kept at floor 0.1: {}, at floor 0.9: {}", count(&loaded), count(&strict));

    let emb = dir.join(SCENE_MAP_EMBEDDINGS);
    let mut bytes = std::fs::read(&emb)?;
    bytes.truncate(bytes.len() - 3);
    let broken = dir.join("truncated.emb");
    std::fs::write(&broken, &bytes)?;
    match read_embeddings(&broken) {
        Ok(_) => println!("unexpectedly decoded a truncated file"),
        Err(e) => println!("truncated embedding file: {e}"),
    }
    Ok(())
}
