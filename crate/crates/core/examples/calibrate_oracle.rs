//! Estimate an oracle's accuracy on labelled queries, the quantity used as
//! its confidence when deciding whether a query is worth paying for.

use budget_er::embed::{embed_dataset, serialize_record, EmbedderConfig};
use budget_er::engine::{label_distribution, ClusterIndex, LabelState};
use budget_er::graph::{build_knn_graph, GraphParams};
use budget_er::oracle::{build_oracle, calibrate_delta_llm, select_candidates, OracleKind, OracleQuery, TrueOracle};
use budget_er::planted::{generate, PlantedConfig};
use budget_er::select::Pricing;

fn main() -> anyhow::Result<()> {
    let planted = generate(&PlantedConfig { entities: 40, ..Default::default() })?;
    let dataset = &planted.dataset;
    let entity = planted.truth.entity_indices(dataset)?;
    let embeddings = embed_dataset(dataset, &EmbedderConfig::default())?;
    let graph = build_knn_graph(&embeddings, &GraphParams::default())?;
    let labels = LabelState::new(dataset);
    let clusters = ClusterIndex::new(&labels);
    let texts: Vec<String> = dataset.records().iter().map(serialize_record).collect();

    let truth = TrueOracle::new(entity.clone(), Pricing::default(), 4);
    let sample: Vec<(OracleQuery, Option<usize>)> = (0..dataset.len())
        .step_by(2)
        .map(|i| {
            let pi = label_distribution(&graph, &labels, i);
            let cands = select_candidates(&pi, &clusters, &embeddings, dataset.id_ranks(), i, 5)?;
            let q = OracleQuery::new(i, cands, &texts);
            let expected = truth.truth(&q);
            Ok((q, expected))
        })
        .collect::<budget_er::Result<_>>()?;
    println!("{} labelled queries", sample.len());

    for epsilon in [0.0, 0.05, 0.1, 0.2] {
        let mut oracle = build_oracle(&OracleKind::Noisy { epsilon }, Some(entity.clone()), Pricing::default(), 4, 1)?;
        let acc = calibrate_delta_llm(&sample, oracle.as_mut())?;
        println!("noise {epsilon:.2}: measured accuracy {acc:.3}");
    }
    Ok(())
}
