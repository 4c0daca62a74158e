//! Replay random online-knapsack instances through the admission threshold
//! and compare with the offline optimum.
//!
//!     cargo run --release --example knapsack_competitive_ratio -- [L] [U]

use budget_er::select::{admission_threshold, generate_instances, simulate_threshold_policy, DensityBounds};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let lower: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20.0);
    let upper: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000.0);
    let bounds = DensityBounds::new(lower, upper)?;

    for z in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("threshold at {:>3.0}% spent: {:>9.3}", z * 100.0, admission_threshold(z, 1.0, &bounds));
    }

    let budget = 100.0;
    let instances = generate_instances(1000, budget, &bounds, 0);
    let outcomes = simulate_threshold_policy(&instances, budget, &bounds)?;
    let mut ratios: Vec<f64> = outcomes.iter().map(|o| o.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    println!(
        "ratio median {:.3}  p99 {:.3}  max {:.3}  bound {:.3}",
        ratios[ratios.len() / 2],
        ratios[ratios.len() * 99 / 100],
        ratios[ratios.len() - 1],
        bounds.competitive_ratio()
    );
    Ok(())
}
