//! Prints the PROSAC growth schedule: how the sampling pool widens from the
//! top-ranked candidates to the full list as iterations go by.
//!
//! ```text
//! cargo run --example prosac_schedule
//! ```

use cliploc::consensus::{prosac_growth, ProsacSchedule, SAMPLE_SIZE};

fn main() {
    let (n_cand, t_n) = (20, 200_000);
    let growth = prosac_growth(SAMPLE_SIZE, t_n, n_cand);
    println!("T'_n for m={SAMPLE_SIZE}, N={n_cand}, T_N={t_n}:");
    for (i, g) in growth.iter().enumerate() {
        println!("  n={:>2}: {g}", i + SAMPLE_SIZE);
    }

    let schedule = ProsacSchedule::new(SAMPLE_SIZE, t_n, n_cand, SAMPLE_SIZE);
    println!("\niteration  pool  forced");
    for t in [1u64, 2, 3, 5, 10, 20, 50, 100, 200, 500, 1000, 5000, 20_000, 100_000, 200_000] {
        println!("{t:>9}  {:>4}  {}", schedule.pool_size(t), schedule.forced(t));
    }
}
