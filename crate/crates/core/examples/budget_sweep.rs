//! Quality as a function of budget with a noisy oracle.
//!
//! First measures what an unconstrained run spends ("ample"), then resolves
//! the same data at fractions of that amount.
//!
//!     cargo run --release --example budget_sweep -- [epsilon] [seed]

use budget_er::metrics::{quality, write_sweep_csv, Clustering, SweepRow};
use budget_er::oracle::OracleKind;
use budget_er::planted::{generate, PlantedConfig};
use budget_er::{run, RunConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epsilon: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.05);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let planted = generate(&PlantedConfig { seed, ..Default::default() })?;
    let truth = Clustering::from_truth(&planted.truth, &planted.dataset)?;
    let base = RunConfig {
        seed,
        oracle: OracleKind::Noisy { epsilon },
        ..Default::default()
    };

    let unconstrained = run(&planted.dataset, &RunConfig { budget: 1e6, ..base.clone() }, Some(&planted.truth))?;
    let ample = unconstrained.ledger.spent();
    eprintln!("unconstrained run spent ${ample:.6} over {} calls", unconstrained.oracle_calls());

    let mut rows = Vec::new();
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let budget = frac * ample;
        let r = run(&planted.dataset, &RunConfig { budget, ..base.clone() }, Some(&planted.truth))?;
        let q = quality(&Clustering::from_labels(&r.labels), &truth)?;
        rows.push(SweepRow { budget, fp: q.fp, nmi: q.nmi, cost: r.ledger.spent() });
    }
    write_sweep_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}
