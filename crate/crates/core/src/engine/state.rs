//! Labels, label distributions and the label → members index.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::EntityGraph;
use crate::records::Dataset;

/// A cluster label. Labels are record ids, represented by the lexicographic
/// rank of the id so that label order is id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl Label {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Current label of every record. Initially each record carries its own id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelState {
    labels: Vec<Label>,
    /// record index whose id a label names
    owner: Vec<usize>,
}

impl LabelState {
    pub fn new(dataset: &Dataset) -> Self {
        Self::from_ranks(dataset.id_ranks())
    }

    /// Build from per-record id ranks (a permutation of `0..n`).
    pub fn from_ranks(ranks: &[u32]) -> Self {
        let mut owner = vec![0; ranks.len()];
        for (i, &r) in ranks.iter().enumerate() {
            owner[r as usize] = i;
        }
        Self {
            labels: ranks.iter().map(|&r| Label(r)).collect(),
            owner,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Record index whose id is `label`.
    pub fn owner(&self, label: Label) -> usize {
        self.owner[label.index()]
    }

    pub(crate) fn set(&mut self, i: usize, label: Label) {
        self.labels[i] = label;
    }

    /// Distinct labels in use.
    pub fn label_count(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }
}

/// Members of each label's cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterIndex {
    members: Vec<BTreeSet<usize>>,
    psi_max: usize,
}

impl ClusterIndex {
    pub fn new(labels: &LabelState) -> Self {
        let mut members = vec![BTreeSet::new(); labels.len()];
        for (i, l) in labels.labels().iter().enumerate() {
            members[l.index()].insert(i);
        }
        let psi_max = members.iter().map(BTreeSet::len).max().unwrap_or(0);
        Self { members, psi_max }
    }

    pub fn members(&self, label: Label) -> &BTreeSet<usize> {
        &self.members[label.index()]
    }

    /// Largest cluster size observed since construction.
    pub fn psi_max(&self) -> usize {
        self.psi_max
    }

    pub fn current_max(&self) -> usize {
        self.members.iter().map(BTreeSet::len).max().unwrap_or(0)
    }

    /// Non-empty clusters keyed by label, in label order.
    pub fn clusters(&self) -> impl Iterator<Item = (Label, &BTreeSet<usize>)> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(l, m)| (Label(l as u32), m))
    }

    /// Relabel record `i` in both the state and the index. Returns whether the
    /// label changed.
    pub fn relabel(&mut self, labels: &mut LabelState, i: usize, to: Label) -> bool {
        let from = labels.label(i);
        if from == to {
            return false;
        }
        self.members[from.index()].remove(&i);
        self.members[to.index()].insert(i);
        self.psi_max = self.psi_max.max(self.members[to.index()].len());
        labels.set(i, to);
        true
    }

    /// Partition check: disjoint member sets covering every record, each
    /// record filed under its own label.
    pub fn is_consistent(&self, labels: &LabelState) -> bool {
        let total: usize = self.members.iter().map(BTreeSet::len).sum();
        total == labels.len()
            && labels
                .labels()
                .iter()
                .enumerate()
                .all(|(i, l)| self.members[l.index()].contains(&i))
    }
}

/// Weighted share of each neighbour label, keyed by label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelDistribution {
    entries: BTreeMap<Label, f64>,
}

impl LabelDistribution {
    pub fn from_masses<I: IntoIterator<Item = (Label, f64)>>(masses: I) -> Self {
        Self {
            entries: masses.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, label: Label) -> f64 {
        self.entries.get(&label).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, f64)> + '_ {
        self.entries.iter().map(|(&l, &p)| (l, p))
    }

    pub fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.values().copied()
    }

    /// Highest-mass label; ties go to the smallest label.
    pub fn argmax(&self) -> Option<(Label, f64)> {
        self.iter().fold(None, |best, (l, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((l, p)),
        })
    }

    /// Labels by descending mass, ties by ascending label.
    pub fn ranked(&self) -> Vec<(Label, f64)> {
        let mut v: Vec<(Label, f64)> = self.iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

/// Share of out-edge weight carried by each neighbour label. Empty when the
/// record has no neighbours or zero total weight.
pub fn label_distribution(g: &EntityGraph, labels: &LabelState, i: usize) -> LabelDistribution {
    let nbrs = g.neighbors(i);
    let total: f64 = nbrs.values().map(|e| e.weight).sum();
    if nbrs.is_empty() || total <= 0.0 {
        return LabelDistribution::default();
    }
    let mut acc: BTreeMap<Label, f64> = BTreeMap::new();
    for (&j, e) in nbrs {
        *acc.entry(labels.label(j)).or_default() += e.weight;
    }
    acc.values_mut().for_each(|w| *w /= total);
    LabelDistribution { entries: acc }
}

/// Adopt the dominant neighbour label when its share exceeds `theta`.
/// Returns the new label if the record's label changed.
pub fn wlp_update(
    labels: &mut LabelState,
    clusters: &mut ClusterIndex,
    i: usize,
    pi: &LabelDistribution,
    theta: f64,
) -> Option<Label> {
    let (best, mass) = pi.argmax()?;
    if mass > theta && clusters.relabel(labels, i, best) {
        Some(best)
    } else {
        None
    }
}

/// Group records by label. Each cluster lists record ids in ascending order;
/// clusters are sorted by their smallest id.
pub fn clusters_from_labels(labels: &LabelState, dataset: &Dataset) -> Vec<Vec<String>> {
    let mut groups: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for (i, l) in labels.labels().iter().enumerate() {
        groups.entry(*l).or_default().push(dataset.record(i).id.clone());
    }
    let mut out: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut ids| {
            ids.sort();
            ids
        })
        .collect();
    out.sort();
    out
}

/// With equal edge weights, the weighted argmax should be the plain
/// most-frequent neighbour label under the same tie-break.
pub fn majority_vote_equivalence_check(g: &EntityGraph, labels: &LabelState, i: usize) -> bool {
    let weighted = label_distribution(g, labels, i).argmax().map(|(l, _)| l);
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for &j in g.neighbors(i).keys() {
        *counts.entry(labels.label(j)).or_default() += 1;
    }
    let majority = counts
        .iter()
        .fold(None::<(Label, usize)>, |best, (&l, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        })
        .map(|(l, _)| l);
    weighted == majority
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphParams;
    use crate::records::Record;

    fn ds(ids: &[&str]) -> Dataset {
        Dataset::new(ids.iter().map(|i| Record::new(*i)).collect()).unwrap()
    }

    fn graph_with(n: usize, edges: &[(usize, usize, f64)]) -> EntityGraph {
        let mut g = EntityGraph::empty(n, &GraphParams::default());
        for &(i, j, w) in edges {
            g.set_knn_edge(i, j, w);
        }
        g
    }

    #[test]
    fn two_even_neighbours() {
        let d = ds(&["t", "a", "b"]);
        let ls = LabelState::new(&d);
        let g = graph_with(3, &[(0, 1, 0.5), (0, 2, 0.5)]);
        let pi = label_distribution(&g, &ls, 0);
        assert_eq!(pi.get(ls.label(1)), 0.5);
        assert_eq!(pi.get(ls.label(2)), 0.5);
    }

    #[test]
    fn weighted_shares() {
        let d = ds(&["t", "a1", "a2", "b"]);
        let mut ls = LabelState::new(&d);
        let mut ci = ClusterIndex::new(&ls);
        let a = ls.label(1);
        ci.relabel(&mut ls, 2, a);
        let g = graph_with(4, &[(0, 1, 0.72), (0, 2, 0.48), (0, 3, 0.40)]);
        let pi = label_distribution(&g, &ls, 0);
        assert!((pi.get(a) - 0.75).abs() < 1e-12);
        assert!((pi.get(ls.label(3)) - 0.25).abs() < 1e-12);
        assert!((pi.masses().sum::<f64>() - 1.0).abs() < 1e-9);

        let g1 = graph_with(4, &[(0, 1, 0.3), (0, 2, 0.9)]);
        assert_eq!(label_distribution(&g1, &ls, 0).get(a), 1.0);
    }

    #[test]
    fn empty_neighbourhood_empty_distribution() {
        let d = ds(&["a", "b"]);
        let ls = LabelState::new(&d);
        let g = graph_with(2, &[]);
        assert!(label_distribution(&g, &ls, 0).is_empty());
    }

    #[test]
    fn wlp_threshold_and_tie_break() {
        let d = ds(&["x", "A", "B"]);
        let (la, lb) = (Label(0), Label(1));
        let above = LabelDistribution::from_masses([(la, 0.7)]);
        let mut ls = LabelState::new(&d);
        let mut ci = ClusterIndex::new(&ls);
        assert_eq!(wlp_update(&mut ls, &mut ci, 0, &above, 0.6), Some(la));
        assert!(ci.is_consistent(&ls));

        let even = LabelDistribution::from_masses([(la, 0.5), (lb, 0.5)]);
        let mut ls = LabelState::new(&d);
        let mut ci = ClusterIndex::new(&ls);
        assert_eq!(wlp_update(&mut ls, &mut ci, 0, &even, 0.6), None);
        assert_eq!(ls.label(0), Label(2));

        let outcomes: BTreeSet<Option<Label>> = (0..100)
            .map(|_| {
                let mut ls = LabelState::new(&d);
                let mut ci = ClusterIndex::new(&ls);
                wlp_update(&mut ls, &mut ci, 0, &even, 0.4)
            })
            .collect();
        assert_eq!(outcomes, BTreeSet::from([Some(la)]));
    }

    #[test]
    fn wlp_empty_distribution_is_noop() {
        let d = ds(&["a", "b"]);
        let mut ls = LabelState::new(&d);
        let mut ci = ClusterIndex::new(&ls);
        assert_eq!(wlp_update(&mut ls, &mut ci, 0, &LabelDistribution::default(), 0.1), None);
    }

    #[test]
    fn clusters_grouping() {
        let d = ds(&["a", "b", "c"]);
        let mut ls = LabelState::new(&d);
        let mut ci = ClusterIndex::new(&ls);
        assert_eq!(clusters_from_labels(&ls, &d).len(), 3);
        let a = ls.label(0);
        ci.relabel(&mut ls, 1, a);
        assert_eq!(
            clusters_from_labels(&ls, &d),
            vec![vec!["a".to_string(), "b".into()], vec!["c".into()]]
        );
        assert_eq!(ci.psi_max(), 2);
    }

    #[test]
    fn labels_follow_id_order_not_file_order() {
        let d = ds(&["zeta", "alpha"]);
        let ls = LabelState::new(&d);
        assert!(ls.label(1) < ls.label(0));
        assert_eq!(ls.owner(ls.label(0)), 0);
    }

    #[test]
    fn majority_check_simple_cases() {
        let d = ds(&["t", "a1", "a2", "b"]);
        let mut ls = LabelState::new(&d);
        let mut ci = ClusterIndex::new(&ls);
        let a = ls.label(1);
        ci.relabel(&mut ls, 2, a);
        let g = graph_with(4, &[(0, 1, 0.5), (0, 2, 0.5), (0, 3, 0.5)]);
        assert!(majority_vote_equivalence_check(&g, &ls, 0));
        let tie = graph_with(4, &[(0, 1, 0.5), (0, 3, 0.5)]);
        assert!(majority_vote_equivalence_check(&tie, &ls, 0));
    }
}
