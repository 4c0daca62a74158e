//! Embed a planted dataset, build the neighbour graph at several K and
//! report how many true matches the neighbourhoods miss.

use budget_er::embed::{cosine, embed_dataset, EmbedderConfig};
use budget_er::graph::{build_knn_graph, cross_block_match_ratio, knn_blocks, GraphParams};
use budget_er::planted::{generate, PlantedConfig};

fn main() -> anyhow::Result<()> {
    let planted = generate(&PlantedConfig { corruption: 0.2, seed: 1, ..Default::default() })?;
    let dataset = &planted.dataset;
    let entity = planted.truth.entity_indices(dataset)?;
    let embeddings = embed_dataset(dataset, &EmbedderConfig::default())?;

    let (a, b) = (dataset.record(0), dataset.record(1));
    println!("{} vs {}: cosine {:.3}", a.id, b.id, cosine(&embeddings[0], &embeddings[1])?);

    for k in [2, 5, 10, 15, 30] {
        let g = build_knn_graph(&embeddings, &GraphParams { k, ..Default::default() })?;
        let cbmr = cross_block_match_ratio(&knn_blocks(&g), &entity)?;
        println!("K = {k:>2}: {:>5} edges, cross-block match ratio {cbmr:.4}", g.edge_count());
    }

    let g = build_knn_graph(&embeddings, &GraphParams::default())?;
    let mut out = Vec::new();
    g.write_edge_list(dataset, &mut out)?;
    for line in String::from_utf8(out)?.lines().take(6) {
        println!("{line}");
    }
    Ok(())
}
