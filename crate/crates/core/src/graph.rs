//! The mutable record graph.
//!
//! Initial edges come from an exact top-K cosine scan and are directed
//! (record `i` keeps its own K nearest). Oracle-confirmed edges are always
//! written in both directions with weight `sigma_llm`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, Embedding};
use crate::error::{Error, Result};
use crate::records::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    /// Initial neighbours per record.
    pub k: usize,
    /// Scale applied to cosine similarity for initial weights.
    pub alpha: f64,
    /// Weight of oracle-confirmed edges.
    pub sigma_llm: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            k: 15,
            alpha: 0.8,
            sigma_llm: 1.0,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.sigma_llm > 0.0) || !self.sigma_llm.is_finite() {
            return Err(Error::Config(format!("sigma_llm must be > 0, got {}", self.sigma_llm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Knn,
    Oracle,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Knn => "knn",
            Origin::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub weight: f64,
    pub origin: Origin,
}

/// Weighted out-neighbour lists keyed by record index.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityGraph {
    neighbors: Vec<BTreeMap<usize, Edge>>,
    k: usize,
    max_weight: f64,
}

impl EntityGraph {
    /// An edgeless graph over `n` records.
    pub fn empty(n: usize, params: &GraphParams) -> Self {
        Self {
            neighbors: vec![BTreeMap::new(); n],
            k: params.k,
            max_weight: params.alpha.max(params.sigma_llm),
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &BTreeMap<usize, Edge> {
        &self.neighbors[i]
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<Edge> {
        self.neighbors[i].get(&j).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(BTreeMap::len).sum()
    }

    /// Insert or overwrite a directed KNN edge. Non-positive weights,
    /// self-loops and pairs already confirmed by the oracle are ignored.
    pub fn set_knn_edge(&mut self, i: usize, j: usize, weight: f64) {
        let confirmed = self.neighbors[i]
            .get(&j)
            .is_some_and(|e| e.origin == Origin::Oracle);
        if i != j && weight > 0.0 && !confirmed {
            self.neighbors[i].insert(
                j,
                Edge {
                    weight: weight.min(self.max_weight),
                    origin: Origin::Knn,
                },
            );
        }
    }

    /// Link `i` with every record in `members` in both directions at weight
    /// `sigma_llm`, overwriting prior weights. Idempotent.
    pub fn expand_neighborhood<I>(&mut self, i: usize, members: I, sigma_llm: f64)
    where
        I: IntoIterator<Item = usize>,
    {
        let edge = Edge {
            weight: sigma_llm,
            origin: Origin::Oracle,
        };
        for j in members {
            if j == i {
                continue;
            }
            self.neighbors[i].insert(j, edge);
            self.neighbors[j].insert(i, edge);
        }
    }

    /// Drop edges between `i` and each of `others`, both directions.
    pub fn remove_edges<I>(&mut self, i: usize, others: I)
    where
        I: IntoIterator<Item = usize>,
    {
        for k in others {
            self.neighbors[i].remove(&k);
            self.neighbors[k].remove(&i);
        }
    }

    /// Check structural invariants: no self-loops, weights in (0, max],
    /// oracle edges mirrored with equal weight.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for (&j, e) in nbrs {
                if j == i {
                    return Err(format!("self-loop at {i}"));
                }
                if !(e.weight > 0.0 && e.weight <= self.max_weight) {
                    return Err(format!("edge ({i},{j}) weight {} out of range", e.weight));
                }
                if e.origin == Origin::Oracle {
                    match self.neighbors[j].get(&i) {
                        Some(back) if back.origin == Origin::Oracle && back.weight == e.weight => {}
                        _ => return Err(format!("oracle edge ({i},{j}) is not mirrored")),
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest out-degree.
    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(BTreeMap::len).max().unwrap_or(0)
    }

    /// Edge list CSV: `src,dst,weight,origin`.
    pub fn write_edge_list<W: Write>(&self, dataset: &Dataset, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst", "weight", "origin"])?;
        for (i, nbrs) in self.neighbors.iter().enumerate() {
            for (&j, e) in nbrs {
                w.write_record([
                    dataset.record(i).id.as_str(),
                    dataset.record(j).id.as_str(),
                    &e.weight.to_string(),
                    e.origin.as_str(),
                ])?;
            }
        }
        w.flush().map_err(crate::error::io_err("<edge list>"))?;
        Ok(())
    }
}

/// Exact top-K neighbours of record `i` as `(index, cosine)`, best first.
/// Ties go to the smaller record index.
pub fn top_k(embeddings: &[Embedding], i: usize, k: usize) -> Vec<(usize, f64)> {
    let q = embeddings[i].as_slice();
    let mut scored: Vec<(usize, f64)> = embeddings
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, e)| (j, dot(q, e.as_slice()).clamp(-1.0, 1.0)))
        .collect();
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);
    scored
}

/// Build the directed KNN graph with weights `alpha * cosine`; pairs with
/// non-positive cosine are left out.
pub fn build_knn_graph(embeddings: &[Embedding], params: &GraphParams) -> Result<EntityGraph> {
    params.validate()?;
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Config("knn graph needs at least two records".into()));
    }
    if params.k >= n {
        return Err(Error::Config(format!("k = {} must be < n = {n}", params.k)));
    }
    if let Some(e) = embeddings.iter().find(|e| e.dim() != embeddings[0].dim()) {
        return Err(Error::DimensionMismatch {
            left: embeddings[0].dim(),
            right: e.dim(),
        });
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| top_k(embeddings, i, params.k))
        .collect();
    let mut g = EntityGraph::empty(n, params);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, cos) in row {
            g.set_knn_edge(i, j, params.alpha * cos);
        }
    }
    Ok(g)
}

/// Treat each record's closed out-neighbourhood as a block: record `j`
/// belongs to block `j` and to block `i` for every `i` with `j ∈ N(i)`.
pub fn knn_blocks(g: &EntityGraph) -> Vec<BTreeSet<usize>> {
    let mut blocks: Vec<BTreeSet<usize>> = (0..g.len()).map(|i| BTreeSet::from([i])).collect();
    for i in 0..g.len() {
        for &j in g.neighbors(i).keys() {
            blocks[j].insert(i);
        }
    }
    blocks
}

/// Fraction of true matching pairs whose records share no block. Zero when
/// there are no matching pairs.
pub fn cross_block_match_ratio(blocks: &[BTreeSet<usize>], entity_of: &[usize]) -> Result<f64> {
    if blocks.len() != entity_of.len() {
        return Err(Error::Config(format!(
            "{} block sets for {} records",
            blocks.len(),
            entity_of.len()
        )));
    }
    if let Some(r) = blocks.iter().position(BTreeSet::is_empty) {
        return Err(Error::Config(format!("record {r} has no block")));
    }
    let mut by_entity: HashMap<usize, Vec<usize>> = HashMap::new();
    for (r, &e) in entity_of.iter().enumerate() {
        by_entity.entry(e).or_default().push(r);
    }
    let (mut total, mut split) = (0u64, 0u64);
    for members in by_entity.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                total += 1;
                if blocks[a].is_disjoint(&blocks[b]) {
                    split += 1;
                }
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        split as f64 / total as f64
    })
}
