//! Label propagation without any oracle, on a records file or a planted
//! dataset, across propagation thresholds.
//!
//!     cargo run --example propagation_only -- [records.csv [truth.csv]]

use budget_er::metrics::{quality, Clustering};
use budget_er::planted::{generate, PlantedConfig};
use budget_er::{load_ground_truth, load_records, run, RecordFormat, RunConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (dataset, truth) = match args.as_slice() {
        [] => {
            let p = generate(&PlantedConfig { corruption: 0.05, ..Default::default() })?;
            (p.dataset, Some(p.truth))
        }
        [records, rest @ ..] => {
            let path = std::path::Path::new(records);
            let truth = rest.first().map(load_ground_truth).transpose()?;
            (load_records(path, RecordFormat::from_path(path))?, truth)
        }
    };

    for theta in [0.1, 0.2, 0.3, 0.45, 0.6] {
        for k in [3, 5, 15] {
            let cfg = RunConfig {
                theta,
                graph: budget_er::graph::GraphParams { k, ..Default::default() },
                ..Default::default()
            };
            let r = run(&dataset, &cfg, None)?;
            let clusters = r.cluster_ids(&dataset).len();
            let score = match &truth {
                Some(t) => {
                    let q = quality(&Clustering::from_labels(&r.labels), &Clustering::from_truth(t, &dataset)?)?;
                    format!("FP {:.4}  NMI {:.4}", q.fp, q.nmi)
                }
                None => String::new(),
            };
            println!(
                "theta {theta:.2}  K {k:>2}: {clusters:>4} clusters after {:>2} iterations  {score}",
                r.reports.len()
            );
        }
    }
    Ok(())
}
