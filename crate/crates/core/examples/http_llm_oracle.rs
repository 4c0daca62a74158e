//! Resolve a small planted dataset with a chat-completions endpoint as the
//! oracle. Needs `LLM_ENDPOINT` and `LLM_MODEL`; the key is read from
//! `OPENAI_API_KEY`.
//!
//!     LLM_ENDPOINT=https://api.openai.com/v1/chat/completions LLM_MODEL=gpt-4o-mini \
//!         cargo run --example http_llm_oracle -- 0.01

use budget_er::metrics::{budget_report, quality, Clustering};
use budget_er::oracle::{HttpOracleConfig, OracleKind};
use budget_er::planted::{generate, PlantedConfig};
use budget_er::{run, RunConfig};

fn main() -> anyhow::Result<()> {
    let (Ok(endpoint), Ok(model)) = (std::env::var("LLM_ENDPOINT"), std::env::var("LLM_MODEL")) else {
        eprintln!("set LLM_ENDPOINT and LLM_MODEL to run this example");
        return Ok(());
    };
    env_logger::init();
    let budget: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.01);

    let planted = generate(&PlantedConfig { entities: 10, ..Default::default() })?;
    let cfg = RunConfig {
        budget,
        oracle: OracleKind::Llm(HttpOracleConfig { endpoint, model, ..Default::default() }),
        on_oracle_error: budget_er::engine::OnOracleError::TreatAsNone,
        ..Default::default()
    };
    let result = run(&planted.dataset, &cfg, None)?;
    let q = quality(
        &Clustering::from_labels(&result.labels),
        &Clustering::from_truth(&planted.truth, &planted.dataset)?,
    )?;
    let report = budget_report(&result, Some(&q));
    println!("{}", serde_json::to_string_pretty(&report)?);
    for entry in result.transcript.iter().take(5) {
        println!("{}", serde_json::to_string(entry)?);
    }
    Ok(())
}
