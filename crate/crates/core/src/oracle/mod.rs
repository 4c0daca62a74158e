//! Oracle queries: picking candidate representatives, asking, and applying
//! the answer to the graph and labels.
//!
//! A query shows the oracle one target record and at most `m`
//! representatives, one per candidate label. A positive answer moves the
//! target into the chosen cluster and links it to every member at
//! `sigma_llm`; `NONE` cuts the edges between the target and each shown
//! candidate.

mod http;
mod prompt;

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, Embedding};
use crate::engine::{ClusterIndex, Label, LabelDistribution, LabelState};
use crate::error::{Error, Result};
use crate::graph::EntityGraph;
use crate::records::Dataset;
use crate::rng::{stream_rng, Stream};
use crate::select::{estimate_tokens, Pricing};

pub use http::{HttpLlmOracle, HttpOracleConfig};
pub use prompt::{parse_response, render_prompt};

/// A representative shown to the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub record: usize,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleQuery {
    pub target: usize,
    pub candidates: Vec<Candidate>,
    pub prompt: String,
}

impl OracleQuery {
    /// Assemble a query, rendering the prompt from per-record serialized
    /// texts.
    pub fn new(target: usize, candidates: Vec<Candidate>, texts: &[String]) -> Self {
        let cand_texts: Vec<String> = candidates.iter().map(|c| texts[c.record].clone()).collect();
        let prompt = render_prompt(&texts[target], &cand_texts);
        Self {
            target,
            candidates,
            prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleAnswer {
    /// 1-based candidate index, or `None`.
    pub choice: Option<usize>,
    pub reply: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
}

impl OracleAnswer {
    pub fn chosen_record(&self, q: &OracleQuery) -> Option<usize> {
        self.choice.map(|c| q.candidates[c - 1].record)
    }
}

/// Which oracle answers queries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleKind {
    /// Answers from ground truth.
    #[default]
    True,
    /// Ground truth, with each answer replaced by a uniformly drawn wrong
    /// alternative with probability `epsilon`.
    Noisy { epsilon: f64 },
    /// A chat-completions endpoint.
    Llm(HttpOracleConfig),
}

impl OracleKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            OracleKind::Noisy { epsilon } if !(0.0..1.0).contains(epsilon) => Err(Error::Config(
                format!("noise rate must be in [0, 1), got {epsilon}"),
            )),
            OracleKind::Llm(cfg) if cfg.endpoint.is_empty() => {
                Err(Error::Config("llm oracle needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_truth(&self) -> bool {
        matches!(self, OracleKind::True | OracleKind::Noisy { .. })
    }
}

pub trait Oracle {
    fn ask(&mut self, q: &OracleQuery) -> Result<OracleAnswer>;
}

/// Answers with the first candidate sharing the target's true entity.
#[derive(Debug, Clone)]
pub struct TrueOracle {
    entity: Vec<usize>,
    pricing: Pricing,
    chars_per_token: usize,
}

impl TrueOracle {
    /// `entity[i]` is record `i`'s true entity.
    pub fn new(entity: Vec<usize>, pricing: Pricing, chars_per_token: usize) -> Self {
        Self {
            entity,
            pricing,
            chars_per_token: chars_per_token.max(1),
        }
    }

    pub fn truth(&self, q: &OracleQuery) -> Option<usize> {
        let want = self.entity[q.target];
        q.candidates
            .iter()
            .position(|c| self.entity[c.record] == want)
            .map(|p| p + 1)
    }

    fn answer(&self, q: &OracleQuery, choice: Option<usize>) -> OracleAnswer {
        let reply = match choice {
            Some(c) => c.to_string(),
            None => "NONE".to_string(),
        };
        let tokens_in = estimate_tokens(&q.prompt, self.chars_per_token);
        let tokens_out = estimate_tokens(&reply, self.chars_per_token);
        OracleAnswer {
            choice,
            reply,
            tokens_in,
            tokens_out,
            cost: self.pricing.cost(tokens_in, tokens_out),
        }
    }
}

impl Oracle for TrueOracle {
    fn ask(&mut self, q: &OracleQuery) -> Result<OracleAnswer> {
        Ok(self.answer(q, self.truth(q)))
    }
}

#[derive(Debug, Clone)]
pub struct NoisyOracle {
    truth: TrueOracle,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl NoisyOracle {
    pub fn new(truth: TrueOracle, epsilon: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Config(format!("noise rate must be in [0, 1), got {epsilon}")));
        }
        Ok(Self {
            truth,
            epsilon,
            rng,
        })
    }
}

impl Oracle for NoisyOracle {
    fn ask(&mut self, q: &OracleQuery) -> Result<OracleAnswer> {
        let correct = self.truth.truth(q);
        // one draw per query keeps the stream aligned across noise rates
        let flip: f64 = self.rng.random();
        let choice = if flip < self.epsilon {
            let alternatives: Vec<Option<usize>> = (1..=q.candidates.len())
                .map(Some)
                .chain(std::iter::once(None))
                .filter(|a| *a != correct)
                .collect();
            alternatives[self.rng.random_range(0..alternatives.len())]
        } else {
            correct
        };
        Ok(self.truth.answer(q, choice))
    }
}

/// Construct the oracle for `kind`. `entity` (per-record true entity) is
/// required for the true and noisy kinds.
pub fn build_oracle(
    kind: &OracleKind,
    entity: Option<Vec<usize>>,
    pricing: Pricing,
    chars_per_token: usize,
    seed: u64,
) -> Result<Box<dyn Oracle>> {
    kind.validate()?;
    let need_truth = || {
        entity
            .clone()
            .ok_or_else(|| Error::Config("this oracle kind needs ground truth".into()))
    };
    Ok(match kind {
        OracleKind::True => Box::new(TrueOracle::new(need_truth()?, pricing, chars_per_token)),
        OracleKind::Noisy { epsilon } => Box::new(NoisyOracle::new(
            TrueOracle::new(need_truth()?, pricing, chars_per_token),
            *epsilon,
            stream_rng(seed, Stream::NoisyOracle),
        )?),
        OracleKind::Llm(cfg) => Box::new(HttpLlmOracle::new(cfg.clone(), pricing, chars_per_token)?),
    })
}

/// Pick up to `m` candidate labels by descending share (ties by label) and
/// for each the cluster member closest to the target, excluding the target
/// itself (ties by smaller record id).
pub fn select_candidates(
    pi: &LabelDistribution,
    clusters: &ClusterIndex,
    embeddings: &[Embedding],
    id_rank: &[u32],
    target: usize,
    m: usize,
) -> Result<Vec<Candidate>> {
    if pi.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let q = embeddings[target].as_slice();
    let mut out = Vec::with_capacity(m);
    for (label, _) in pi.ranked() {
        if out.len() >= m {
            break;
        }
        let best = clusters
            .members(label)
            .iter()
            .copied()
            .filter(|&j| j != target)
            .map(|j| (j, dot(q, embeddings[j].as_slice())))
            .fold(None::<(usize, f64)>, |best, (j, c)| match best {
                Some((bj, bc)) if bc > c || (bc == c && id_rank[bj] < id_rank[j]) => best,
                _ => Some((j, c)),
            });
        if let Some((record, _)) = best {
            out.push(Candidate { record, label });
        }
    }
    if out.is_empty() {
        return Err(Error::NoCandidates(target.to_string()));
    }
    Ok(out)
}

/// What [`apply_local_update`] changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LocalUpdate {
    pub relabeled: bool,
    /// Cluster members linked (or re-linked) to the target.
    pub linked: usize,
    /// Directed edges deleted.
    pub removed: usize,
}

/// Apply an oracle answer. `choice` is the 1-based candidate index.
pub fn apply_local_update(
    g: &mut EntityGraph,
    labels: &mut LabelState,
    clusters: &mut ClusterIndex,
    q: &OracleQuery,
    choice: Option<usize>,
    sigma_llm: f64,
) -> LocalUpdate {
    let target = q.target;
    match choice {
        Some(c) => {
            let chosen = q.candidates[c - 1].record;
            let label = labels.label(chosen);
            let relabeled = clusters.relabel(labels, target, label);
            let members: Vec<usize> = clusters
                .members(label)
                .iter()
                .copied()
                .filter(|&j| j != target)
                .collect();
            g.expand_neighborhood(target, members.iter().copied(), sigma_llm);
            LocalUpdate {
                relabeled,
                linked: members.len(),
                removed: 0,
            }
        }
        None => {
            let others: Vec<usize> = q.candidates.iter().map(|c| c.record).collect();
            let removed = others
                .iter()
                .map(|&k| g.edge(target, k).is_some() as usize + g.edge(k, target).is_some() as usize)
                .sum();
            g.remove_edges(target, others);
            LocalUpdate {
                relabeled: false,
                linked: 0,
                removed,
            }
        }
    }
}

/// Fraction of labelled queries the oracle answers correctly. Offline
/// helper for estimating the oracle-confidence parameter.
pub fn calibrate_delta_llm(sample: &[(OracleQuery, Option<usize>)], oracle: &mut dyn Oracle) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Config("calibration sample is empty".into()));
    }
    let mut correct = 0usize;
    for (q, expected) in sample {
        if oracle.ask(q)?.choice == *expected {
            correct += 1;
        }
    }
    Ok(correct as f64 / sample.len() as f64)
}

/// One line of the oracle transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub iteration: usize,
    pub target: String,
    pub candidates: Vec<String>,
    /// Chosen record id, or `None`.
    pub answer: Option<String>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
}

impl TranscriptEntry {
    pub fn new(iteration: usize, q: &OracleQuery, a: &OracleAnswer, cost: f64, dataset: &Dataset) -> Self {
        let id = |i: usize| dataset.record(i).id.clone();
        Self {
            iteration,
            target: id(q.target),
            candidates: q.candidates.iter().map(|c| id(c.record)).collect(),
            answer: a.chosen_record(q).map(id),
            tokens_in: a.tokens_in,
            tokens_out: a.tokens_out,
            cost,
        }
    }
}

pub fn write_transcript<W: Write>(entries: &[TranscriptEntry], mut out: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(crate::error::io_err("<transcript>"))?;
    }
    Ok(())
}
