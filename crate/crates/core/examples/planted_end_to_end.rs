//! Generate a planted dataset, resolve it with and without oracle budget,
//! and compare the scores.
//!
//!     cargo run --release --example planted_end_to_end -- [budget] [seed]

use budget_er::metrics::{budget_report, quality, Clustering};
use budget_er::planted::{generate, PlantedConfig};
use budget_er::{run, RunConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let budget: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let planted = generate(&PlantedConfig { seed, ..Default::default() })?;
    let truth = Clustering::from_truth(&planted.truth, &planted.dataset)?;
    println!("{} records, {} entities", planted.dataset.len(), truth.cluster_count());

    for b in [0.0, budget] {
        let cfg = RunConfig { budget: b, seed, ..Default::default() };
        let result = run(&planted.dataset, &cfg, Some(&planted.truth))?;
        let q = quality(&Clustering::from_labels(&result.labels), &truth)?;
        let report = budget_report(&result, Some(&q));
        println!(
            "budget {b:>6}: FP {:.4}  NMI {:.4}  clusters {:>3}  calls {:>4}  cost ${:.6}  iterations {}",
            q.fp,
            q.nmi,
            q.predicted_clusters,
            report.calls,
            report.cost,
            result.reports.len()
        );
    }
    Ok(())
}
