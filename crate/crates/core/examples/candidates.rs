//! Builds correspondence candidates for one query of a synthetic scene and
//! shows the two orderings used by the samplers.
//!
//! ```text
//! cargo run --example candidates
//! ```

use cliploc::association::{build_candidates, sort_balanced, sort_by_score, Matching};
use cliploc::bench::{generate_scene, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate_scene(&SynthConfig::default())?;
    let (map, detections) = (&synth.scene.map, &synth.scene.detections);
    let query = &detections.queries[0];
    let truth = &synth.truth[0];
    let map_store = map.landmark_store();
    let query_store = query.observation_store(&detections.embeddings);
    let k = 3;

    for matching in Matching::ALL {
        let set = build_candidates(
            matching,
            &map_store,
            &query_store,
            k,
            &map.landmark_classes(),
            &query.observation_classes(),
        )?;
        let correct = set
            .sampling
            .iter()
            .filter(|c| truth[c.obs_index] == Some(c.landmark_index))
            .count();
        let verification: usize = set.verification.iter().map(Vec::len).sum();
        println!(
            "{matching:>6}: {} sampling candidates ({correct} correct), {verification} verification pairs",
            set.sampling.len()
        );
    }

    let clip = build_candidates(Matching::Clip, &map_store, &query_store, k, &[], &[])?;
    let n_obs = query.observations.len();
    println!("\n{n_obs} observations × k={k} = {} clip candidates", clip.sampling.len());

    let show = |name: &str, list: &[cliploc::association::CorrespondenceCandidate]| {
        println!("{name} head (obs→landmark, score, rank):");
        for c in list.iter().take(8) {
            let mark = if truth[c.obs_index] == Some(c.landmark_index) { "✓" } else { " " };
            println!("  {mark} {:>2}→{:>2}  {:.3}  {}", c.obs_index, c.landmark_index, c.score, c.rank);
        }
    };
    let by_score = sort_by_score(clip.clone())?;
    show("score order (PROSAC)", &by_score.sampling);
    let balanced = sort_balanced(clip)?;
    show("rank-then-score order (B-PROSAC)", &balanced.sampling);
    let mut first: Vec<_> = balanced.sampling[..n_obs].iter().map(|c| c.obs_index).collect();
    first.sort_unstable();
    first.dedup();
    println!("first {n_obs} balanced entries cover {} distinct observations", first.len());
    Ok(())
}
