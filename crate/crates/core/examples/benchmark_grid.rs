//! Generates the default synthetic scene and runs every sampled
//! (matching × algorithm) combination over five trials.
//!
//! ```text
//! cargo run --release --example benchmark_grid [output-dir]
//! ```

use std::time::Instant;

use cliploc::bench::{emit_report, generate_scene, run_grid, GridConfig, SynthConfig};
use cliploc::pipeline::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig::default();
    let scene = generate_scene(&synth)?.scene;
    let n_obs: usize = scene.detections.queries.iter().map(|q| q.observations.len()).sum();
    println!(
        "scene: {} landmarks, {} queries, {n_obs} observations",
        scene.map.landmarks.len(),
        scene.detections.queries.len()
    );

    let cfg = GridConfig::for_scale(synth.room_extent);
    let start = Instant::now();
    let report = run_grid(&scene, &Method::sampled(), &cfg)?;
    println!("grid ran in {:.1} s\n", start.elapsed().as_secs_f64());

    println!(
        "{:<18} {:>14} {:>16} {:>12}",
        "method", "success", "error [m]", "best at"
    );
    for s in &report.summaries {
        println!(
            "{:<18} {:>6.3} ± {:<5.3} {:>7.3} ± {:<6.3} {:>12.1}",
            s.method,
            s.success_rate_mean,
            s.success_rate_std,
            s.translation_error_mean,
            s.translation_error_std,
            s.best_found_at_mean
        );
    }

    if let Some(dir) = std::env::args().nth(1) {
        for path in emit_report(&report, &dir)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
