//! Build one oracle query by hand: candidate selection, the rendered
//! prompt, its estimated price and how replies are parsed.

use budget_er::embed::{embed_dataset, serialize_record, EmbedderConfig};
use budget_er::engine::{label_distribution, ClusterIndex, LabelState};
use budget_er::graph::{build_knn_graph, GraphParams};
use budget_er::oracle::{parse_response, select_candidates, OracleQuery};
use budget_er::select::{estimate_prompt_cost, marginal_value_gain, wlp_confidence, SelectionParams};
use budget_er::{Dataset, Record};

fn main() -> anyhow::Result<()> {
    let titles = [
        "Intermezzo in B minor, Op. 119 No. 1: Adago - Brahms: Complete Works",
        "Intermezzo in B minor, Op. 119 No. 1: Adagio",
        "017-Intermezzo in B minor, Op. 119 No. 1: Adagio",
        "Opus 6 No. 12 in B minor (HWV 330) - I. Largo - Concerti Grossi op. 6",
        "003-Symphony 1 in C minor, op. 11: III. Menuetto & Trio, Allegro di Molto",
        "Johannes Brahms - Concerto for Violin and Orchestra in D major, Op. 77: II. Adagio",
    ];
    let dataset = Dataset::new(
        titles
            .iter()
            .enumerate()
            .map(|(i, t)| Record::new(format!("m{i}")).with("title", *t))
            .collect(),
    )?;
    let embeddings = embed_dataset(&dataset, &EmbedderConfig::default())?;
    let graph = build_knn_graph(&embeddings, &GraphParams { k: 5, ..Default::default() })?;
    let labels = LabelState::new(&dataset);
    let clusters = ClusterIndex::new(&labels);

    let pi = label_distribution(&graph, &labels, 0);
    let params = SelectionParams::default();
    let gain = marginal_value_gain(params.delta_llm, wlp_confidence(&pi));
    let candidates = select_candidates(&pi, &clusters, &embeddings, dataset.id_ranks(), 0, 5)?;
    let texts: Vec<String> = dataset.records().iter().map(serialize_record).collect();
    let query = OracleQuery::new(0, candidates, &texts);
    let est = estimate_prompt_cost(&query.prompt, &params);

    println!("{}\n", query.prompt);
    println!(
        "gain {gain:.3}; estimated {} input + {} output tokens = ${:.8}; density {:.0}",
        est.tokens_in,
        est.tokens_out,
        est.cost,
        gain / est.cost
    );
    for reply in ["2", " none ", "The answer is 2", "9"] {
        println!("reply {reply:?} -> {:?}", parse_response(reply, query.candidates.len()));
    }
    Ok(())
}
