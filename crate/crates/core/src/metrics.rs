//! Clustering quality (FP-measure, NMI) and spend summaries.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::engine::{LabelState, RunResult};
use crate::error::{Error, Result};
use crate::records::{Dataset, GroundTruth};

/// A partition of records `0..n`, stored as a dense cluster index per record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl Clustering {
    /// From any per-record key; records sharing a key share a cluster.
    pub fn from_keys<K: Eq + std::hash::Hash>(keys: impl IntoIterator<Item = K>) -> Self {
        let mut dense: HashMap<K, usize> = HashMap::new();
        let mut sizes = Vec::new();
        let assignment = keys
            .into_iter()
            .map(|k| {
                let next = dense.len();
                let c = *dense.entry(k).or_insert(next);
                if c == sizes.len() {
                    sizes.push(0);
                }
                sizes[c] += 1;
                c
            })
            .collect();
        Self { assignment, sizes }
    }

    /// From explicit member lists. The lists must be disjoint and cover
    /// `0..n` exactly.
    pub fn from_clusters(clusters: &[Vec<usize>], n: usize) -> Result<Self> {
        let mut assignment = vec![usize::MAX; n];
        let mut sizes = Vec::with_capacity(clusters.len());
        for members in clusters.iter().filter(|m| !m.is_empty()) {
            let c = sizes.len();
            for &r in members {
                if r >= n {
                    return Err(Error::UniverseMismatch(format!("record {r} outside 0..{n}")));
                }
                if assignment[r] != usize::MAX {
                    return Err(Error::UniverseMismatch(format!("record {r} in two clusters")));
                }
                assignment[r] = c;
            }
            sizes.push(members.len());
        }
        if let Some(r) = assignment.iter().position(|&c| c == usize::MAX) {
            return Err(Error::UniverseMismatch(format!("record {r} not covered")));
        }
        Ok(Self { assignment, sizes })
    }

    pub fn from_labels(labels: &LabelState) -> Self {
        Self::from_keys(labels.labels().iter().copied())
    }

    pub fn from_truth(truth: &GroundTruth, dataset: &Dataset) -> Result<Self> {
        Ok(Self::from_keys(truth.entity_indices(dataset)?))
    }

    /// Number of records.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn cluster_of(&self, record: usize) -> usize {
        self.assignment[record]
    }

    /// Member lists in cluster order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (r, &c) in self.assignment.iter().enumerate() {
            out[c].push(r);
        }
        out
    }
}

struct Contingency {
    n: f64,
    // ordered so float sums are reproducible
    cells: BTreeMap<(usize, usize), usize>,
}

fn contingency(x: &Clustering, y: &Clustering) -> Result<Contingency> {
    if x.len() != y.len() {
        return Err(Error::UniverseMismatch(format!("{} vs {} records", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::UniverseMismatch("no records".into()));
    }
    let mut cells = BTreeMap::new();
    for (&a, &b) in x.assignment.iter().zip(&y.assignment) {
        *cells.entry((a, b)).or_insert(0) += 1;
    }
    Ok(Contingency {
        n: x.len() as f64,
        cells,
    })
}

/// Weighted share of each `x` cluster covered by its best `y` cluster.
pub fn purity(x: &Clustering, y: &Clustering) -> Result<f64> {
    let t = contingency(x, y)?;
    let mut best = vec![0usize; x.cluster_count()];
    for (&(a, _), &c) in &t.cells {
        best[a] = best[a].max(c);
    }
    Ok(best.iter().sum::<usize>() as f64 / t.n)
}

pub fn inverse_purity(x: &Clustering, y: &Clustering) -> Result<f64> {
    purity(y, x)
}

/// Harmonic mean of purity and inverse purity; 0 if either is 0.
pub fn fp_measure(x: &Clustering, y: &Clustering) -> Result<f64> {
    let p = purity(x, y)?;
    let ip = inverse_purity(x, y)?;
    if p == 0.0 || ip == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 / (1.0 / p + 1.0 / ip))
}

fn entropy(sizes: &[usize], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I / (H(x) + H(y))` with natural logs. Two single-cluster partitions
/// score 1; otherwise zero mutual information scores 0.
pub fn nmi(x: &Clustering, y: &Clustering) -> Result<f64> {
    let t = contingency(x, y)?;
    let hx = entropy(&x.sizes, t.n);
    let hy = entropy(&y.sizes, t.n);
    if hx + hy == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = t
        .cells
        .iter()
        .map(|(&(a, b), &c)| {
            let c = c as f64;
            c / t.n * (t.n * c / (x.sizes[a] as f64 * y.sizes[b] as f64)).ln()
        })
        .sum();
    if mi <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * mi / (hx + hy)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quality {
    pub fp: f64,
    pub nmi: f64,
    pub purity: f64,
    pub inverse_purity: f64,
    pub predicted_clusters: usize,
    pub true_clusters: usize,
}

pub fn quality(predicted: &Clustering, truth: &Clustering) -> Result<Quality> {
    Ok(Quality {
        fp: fp_measure(predicted, truth)?,
        nmi: nmi(predicted, truth)?,
        purity: purity(predicted, truth)?,
        inverse_purity: inverse_purity(predicted, truth)?,
        predicted_clusters: predicted.cluster_count(),
        true_clusters: truth.cluster_count(),
    })
}

/// Oracle usage totals next to the quality scores, if ground truth was given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub calls: usize,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Equals the ledger's spent amount.
    pub cost: f64,
    pub budget: f64,
    pub fp: Option<f64>,
    pub nmi: Option<f64>,
}

pub fn budget_report(result: &RunResult, quality: Option<&Quality>) -> BudgetReport {
    BudgetReport {
        calls: result.transcript.len(),
        tokens_in: result.transcript.iter().map(|e| e.tokens_in).sum(),
        tokens_out: result.transcript.iter().map(|e| e.tokens_out).sum(),
        cost: result.ledger.spent(),
        budget: result.ledger.budget(),
        fp: quality.map(|q| q.fp),
        nmi: quality.map(|q| q.nmi),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub budget: f64,
    pub fp: f64,
    pub nmi: f64,
    pub cost: f64,
}

/// CSV `budget,fp,nmi,cost`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(crate::error::io_err("<sweep csv>"))?;
    Ok(())
}
