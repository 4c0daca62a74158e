//! The refinement loop.
//!
//! Each iteration visits every record in dataset order. A record either
//! spends budget on an oracle query (when the selection rule admits it) or
//! takes a propagation step. Label updates apply immediately. The loop stops
//! after `t_max` iterations or once an iteration changes no label.

mod state;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use state::{
    clusters_from_labels, label_distribution, majority_vote_equivalence_check, wlp_update,
    ClusterIndex, Label, LabelDistribution, LabelState,
};

use crate::embed::{embed_dataset, serialize_record, EmbedderConfig, Embedding};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, EntityGraph, GraphParams};
use crate::oracle::{
    apply_local_update, build_oracle, select_candidates, Oracle, OracleAnswer, OracleKind,
    OracleQuery, TranscriptEntry,
};
use crate::records::{Dataset, GroundTruth};
use crate::rng::{stream_rng, Stream};
use crate::select::{
    admit, density_out_of_bounds, estimate_prompt_cost, marginal_value_gain, wlp_confidence,
    BudgetLedger, SelectionParams,
};

/// What to do when an oracle call fails outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OnOracleError {
    #[default]
    Abort,
    TreatAsNone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Propagation threshold.
    pub theta: f64,
    pub t_max: usize,
    /// Monetary budget for oracle queries.
    pub budget: f64,
    /// Candidate labels per query.
    pub m: usize,
    pub seed: u64,
    /// Visit records in a seeded random order each iteration instead of
    /// dataset order.
    pub shuffle: bool,
    pub graph: GraphParams,
    pub selection: SelectionParams,
    pub oracle: OracleKind,
    pub embedder: EmbedderConfig,
    pub on_oracle_error: OnOracleError,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            theta: 0.6,
            t_max: 20,
            budget: 0.0,
            m: 5,
            seed: 0,
            shuffle: false,
            graph: GraphParams::default(),
            selection: SelectionParams::default(),
            oracle: OracleKind::True,
            embedder: EmbedderConfig::default(),
            on_oracle_error: OnOracleError::Abort,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta must be in (0, 1], got {}", self.theta)));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be >= 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be >= 1".into()));
        }
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return Err(Error::Config(format!("budget must be >= 0, got {}", self.budget)));
        }
        self.graph.validate()?;
        self.selection.validate()?;
        self.oracle.validate()?;
        self.embedder.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub label_changes: usize,
    pub oracle_calls: usize,
    /// Budget spent at the end of the iteration.
    pub beta: f64,
    /// Largest cluster size seen so far.
    pub psi_max: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunDiagnostics {
    /// Admission checks whose density fell outside the bounds.
    pub density_clamps: usize,
    /// Charges clamped because the reported cost overshot the budget.
    pub budget_violations: usize,
    /// Oracle failures absorbed as `NONE`.
    pub oracle_errors: usize,
    /// Admitted-query candidates for which no representative existed.
    pub no_candidates: usize,
    pub psi_max: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub labels: LabelState,
    pub clusters: ClusterIndex,
    pub graph: EntityGraph,
    pub ledger: BudgetLedger,
    pub reports: Vec<IterationReport>,
    pub transcript: Vec<TranscriptEntry>,
    pub diagnostics: RunDiagnostics,
}

impl RunResult {
    pub fn cluster_ids(&self, dataset: &Dataset) -> Vec<Vec<String>> {
        clusters_from_labels(&self.labels, dataset)
    }

    pub fn oracle_calls(&self) -> usize {
        self.transcript.len()
    }
}

/// Embed, build the graph and oracle from `cfg`, and refine.
pub fn run(dataset: &Dataset, cfg: &RunConfig, truth: Option<&GroundTruth>) -> Result<RunResult> {
    cfg.validate()?;
    let embeddings = embed_dataset(dataset, &cfg.embedder)?;
    let entity = match truth {
        Some(gt) => Some(gt.entity_indices(dataset)?),
        None => None,
    };
    if cfg.oracle.needs_truth() && entity.is_none() && cfg.budget > 0.0 {
        return Err(Error::Config("the true and noisy oracles need ground truth".into()));
    }
    let mut oracle = match entity {
        Some(e) => build_oracle(
            &cfg.oracle,
            Some(e),
            cfg.selection.pricing,
            cfg.selection.chars_per_token,
            cfg.seed,
        )?,
        None if cfg.budget > 0.0 => build_oracle(
            &cfg.oracle,
            None,
            cfg.selection.pricing,
            cfg.selection.chars_per_token,
            cfg.seed,
        )?,
        None => Box::new(Unavailable),
    };
    run_with(dataset, &embeddings, cfg, oracle.as_mut())
}

/// Stand-in used when the budget is zero and no oracle can be built.
struct Unavailable;

impl Oracle for Unavailable {
    fn ask(&mut self, _: &OracleQuery) -> Result<OracleAnswer> {
        Err(Error::Config("no oracle configured".into()))
    }
}

/// Refine with precomputed embeddings and a caller-supplied oracle.
pub fn run_with(
    dataset: &Dataset,
    embeddings: &[Embedding],
    cfg: &RunConfig,
    oracle: &mut dyn Oracle,
) -> Result<RunResult> {
    cfg.validate()?;
    if embeddings.len() != dataset.len() {
        return Err(Error::Config(format!(
            "{} embeddings for {} records",
            embeddings.len(),
            dataset.len()
        )));
    }
    let n = dataset.len();
    let texts: Vec<String> = dataset.records().iter().map(serialize_record).collect();
    let mut graph = if n >= 2 {
        if cfg.graph.k >= n {
            log::warn!("k = {} with only {n} records; using k = {}", cfg.graph.k, n - 1);
        }
        let params = GraphParams {
            k: cfg.graph.k.min(n - 1),
            ..cfg.graph.clone()
        };
        build_knn_graph(embeddings, &params)?
    } else {
        EntityGraph::empty(n, &cfg.graph)
    };
    let mut labels = LabelState::new(dataset);
    let mut clusters = ClusterIndex::new(&labels);
    let mut ledger = BudgetLedger::new(cfg.budget);
    let mut reports = Vec::new();
    let mut transcript = Vec::new();
    let mut diag = RunDiagnostics::default();
    let mut queries_per_record = vec![0usize; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = stream_rng(cfg.seed, Stream::VisitOrder);
    let sel = &cfg.selection;

    for iteration in 1..=cfg.t_max {
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        let (mut changes, mut calls) = (0usize, 0usize);
        for &i in &order {
            let pi = label_distribution(&graph, &labels, i);
            if pi.is_empty() {
                continue;
            }

            let mut admitted = None;
            let under_cap = sel
                .max_queries_per_record
                .is_none_or(|cap| queries_per_record[i] < cap);
            if ledger.remaining() > 0.0 && under_cap {
                let gain = marginal_value_gain(sel.delta_llm, wlp_confidence(&pi));
                if gain > 0.0 {
                    match select_candidates(&pi, &clusters, embeddings, dataset.id_ranks(), i, cfg.m) {
                        Ok(cands) => {
                            let q = OracleQuery::new(i, cands, &texts);
                            let est = estimate_prompt_cost(&q.prompt, sel);
                            if est.cost > 0.0 && density_out_of_bounds(gain, est.cost, &sel.bounds) {
                                diag.density_clamps += 1;
                            }
                            if admit(gain, est.cost, &ledger, &sel.bounds) {
                                admitted = Some((q, est.cost));
                            }
                        }
                        Err(Error::NoCandidates(_)) => diag.no_candidates += 1,
                        Err(e) => return Err(e),
                    }
                }
            }

            match admitted {
                Some((q, estimated)) => {
                    let answer = match oracle.ask(&q) {
                        Ok(a) => a,
                        Err(Error::Oracle {
                            message,
                            tokens_in,
                            tokens_out,
                        }) if cfg.on_oracle_error == OnOracleError::TreatAsNone => {
                            log::warn!("oracle failure for record {i} treated as NONE: {message}");
                            diag.oracle_errors += 1;
                            OracleAnswer {
                                choice: None,
                                reply: String::new(),
                                tokens_in,
                                tokens_out,
                                cost: sel.pricing.cost(tokens_in, tokens_out),
                            }
                        }
                        Err(e) => return Err(e),
                    };
                    if let Some(c) = answer.choice {
                        if c == 0 || c > q.candidates.len() {
                            return Err(Error::ChoiceOutOfRange {
                                choice: c,
                                count: q.candidates.len(),
                            });
                        }
                    }
                    let charged = ledger.charge(i, iteration, estimated, answer.cost);
                    let update = apply_local_update(
                        &mut graph,
                        &mut labels,
                        &mut clusters,
                        &q,
                        answer.choice,
                        cfg.graph.sigma_llm,
                    );
                    if update.relabeled {
                        changes += 1;
                    }
                    calls += 1;
                    queries_per_record[i] += 1;
                    transcript.push(TranscriptEntry::new(iteration, &q, &answer, charged, dataset));
                }
                None => {
                    if wlp_update(&mut labels, &mut clusters, i, &pi, cfg.theta).is_some() {
                        changes += 1;
                    }
                }
            }
            debug_assert!(clusters.is_consistent(&labels));
        }
        diag.psi_max = clusters.psi_max();
        reports.push(IterationReport {
            iteration,
            label_changes: changes,
            oracle_calls: calls,
            beta: ledger.spent(),
            psi_max: clusters.psi_max(),
        });
        if changes == 0 {
            break;
        }
    }
    diag.budget_violations = ledger.violations();

    Ok(RunResult {
        labels,
        clusters,
        graph,
        ledger,
        reports,
        transcript,
        diagnostics: diag,
    })
}

/// CSV `iteration,label_changes,oracle_calls,beta`.
pub fn write_iteration_csv<W: std::io::Write>(reports: &[IterationReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "label_changes", "oracle_calls", "beta"])?;
    for r in reports {
        w.write_record([
            r.iteration.to_string(),
            r.label_changes.to_string(),
            r.oracle_calls.to_string(),
            r.beta.to_string(),
        ])?;
    }
    w.flush().map_err(crate::error::io_err("<iteration csv>"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::Record;

    fn identical(n: usize) -> (Dataset, GroundTruth) {
        let d = Dataset::new(
            (0..n)
                .map(|i| Record::new(format!("r{i}")).with("name", "john smith"))
                .collect(),
        )
        .unwrap();
        let gt = GroundTruth::from_pairs((0..n).map(|i| (format!("r{i}"), "E"))).unwrap();
        (d, gt)
    }

    #[test]
    fn zero_budget_high_theta_keeps_singletons() {
        let (d, gt) = identical(4);
        let cfg = RunConfig {
            theta: 1.0,
            budget: 0.0,
            graph: GraphParams { k: 2, ..Default::default() },
            ..Default::default()
        };
        let r = run(&d, &cfg, Some(&gt)).unwrap();
        assert_eq!(r.cluster_ids(&d).len(), 4);
        assert_eq!(r.oracle_calls(), 0);
    }

    #[test]
    fn three_identical_records_merge_with_oracle() {
        let (d, gt) = identical(3);
        let cfg = RunConfig {
            budget: 1.0,
            graph: GraphParams { k: 2, ..Default::default() },
            ..Default::default()
        };
        let r = run(&d, &cfg, Some(&gt)).unwrap();
        assert_eq!(r.cluster_ids(&d), vec![vec!["r0".to_string(), "r1".into(), "r2".into()]]);
        assert!(r.ledger.spent() <= 1.0);
        assert!(r.clusters.is_consistent(&r.labels));
        r.graph.check_invariants().unwrap();
    }

    #[test]
    fn clusters_match_index_after_run() {
        let (d, gt) = identical(6);
        let cfg = RunConfig {
            budget: 0.0005,
            graph: GraphParams { k: 3, ..Default::default() },
            ..Default::default()
        };
        let r = run(&d, &cfg, Some(&gt)).unwrap();
        let rebuilt = ClusterIndex::new(&r.labels);
        let a: Vec<_> = rebuilt.clusters().map(|(l, m)| (l, m.clone())).collect();
        let b: Vec<_> = r.clusters.clusters().map(|(l, m)| (l, m.clone())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_kind_requires_truth() {
        let (d, _) = identical(3);
        let cfg = RunConfig {
            budget: 1.0,
            graph: GraphParams { k: 2, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(run(&d, &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_theta_rejected() {
        let cfg = RunConfig { theta: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    struct Failing;
    impl Oracle for Failing {
        fn ask(&mut self, _: &OracleQuery) -> Result<OracleAnswer> {
            Err(Error::Oracle {
                message: "down".into(),
                tokens_in: 100,
                tokens_out: 0,
            })
        }
    }

    #[test]
    fn oracle_failure_policy() {
        let (d, _) = identical(3);
        let emb = embed_dataset(&d, &EmbedderConfig::default()).unwrap();
        let mut cfg = RunConfig {
            budget: 1.0,
            graph: GraphParams { k: 2, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(run_with(&d, &emb, &cfg, &mut Failing), Err(Error::Oracle { .. })));
        cfg.on_oracle_error = OnOracleError::TreatAsNone;
        let r = run_with(&d, &emb, &cfg, &mut Failing).unwrap();
        assert!(r.diagnostics.oracle_errors > 0);
        // failed calls are still billed
        assert!(r.ledger.spent() > 0.0);
        // the first record's NONE cut it off from both others
        assert!(r.cluster_ids(&d).contains(&vec!["r0".to_string()]));
        assert!(r.graph.neighbors(0).is_empty());
    }

    #[test]
    fn per_record_cap_limits_queries() {
        let (d, gt) = identical(5);
        let cfg = RunConfig {
            budget: 1.0,
            graph: GraphParams { k: 4, ..Default::default() },
            selection: SelectionParams {
                max_queries_per_record: Some(1),
                ..Default::default()
            },
            ..Default::default()
        };
        let r = run(&d, &cfg, Some(&gt)).unwrap();
        let mut per = std::collections::HashMap::new();
        for e in &r.transcript {
            *per.entry(e.target.clone()).or_insert(0) += 1;
        }
        assert!(per.values().all(|&c| c <= 1));
    }

    #[test]
    fn iteration_csv_header() {
        let mut out = Vec::new();
        write_iteration_csv(
            &[IterationReport { iteration: 1, label_changes: 2, oracle_calls: 3, beta: 0.5, psi_max: 1 }],
            &mut out,
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "iteration,label_changes,oracle_calls,beta\n1,2,3,0.5\n");
    }
}
