use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::Point2;
use crate::graph::{MapGraph, NodeId};

pub type WordId = u32;

/// A landmark feature: unit descriptor plus its position in the base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub vector: Vec<f64>,
    pub position: Point2,
    pub response: f64,
}

impl Descriptor {
    pub fn from_observation(o: &crate::sim::Observation) -> Self {
        Self {
            vector: o.descriptor.clone(),
            position: o.position(),
            response: o.response,
        }
    }

    /// Keeps the `max` strongest descriptors; ties keep input order.
    pub fn strongest(mut descriptors: Vec<Descriptor>, max: usize) -> Vec<Descriptor> {
        if descriptors.len() > max {
            let mut order: Vec<usize> = (0..descriptors.len()).collect();
            order.sort_by(|&a, &b| {
                descriptors[b]
                    .response
                    .partial_cmp(&descriptors[a].response)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut keep: Vec<usize> = order[..max].to_vec();
            keep.sort_unstable();
            let mut k = 0;
            descriptors.retain(|_| {
                let r = keep.binary_search(&k).is_ok();
                k += 1;
                r
            });
        }
        descriptors
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Incremental vocabulary with an inverted index over nodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    dim: usize,
    /// Word representatives, flattened.
    words: Vec<f64>,
    /// word → (node → occurrences).
    inverted: BTreeMap<WordId, BTreeMap<NodeId, u32>>,
    /// node → word count (with repetitions).
    node_totals: BTreeMap<NodeId, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.words.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn word(&self, id: WordId) -> &[f64] {
        let i = id as usize * self.dim;
        &self.words[i..i + self.dim]
    }

    /// Two nearest words among the first `limit` words: (id, squared distance).
    fn two_nearest(&self, v: &[f64], limit: usize) -> (Option<(WordId, f64)>, Option<(WordId, f64)>) {
        let mut best: Option<(WordId, f64)> = None;
        let mut second: Option<(WordId, f64)> = None;
        for (i, w) in self.words.chunks_exact(self.dim).take(limit).enumerate() {
            let d = squared_distance(v, w);
            if best.map_or(true, |b| d < b.1) {
                second = best;
                best = Some((i as WordId, d));
            } else if second.map_or(true, |s| d < s.1) {
                second = Some((i as WordId, d));
            }
        }
        (best, second)
    }

    /// Maps each descriptor to a word. A descriptor joins its nearest word
    /// when `d1 / d2 < nndr` against the vocabulary as it stood before this
    /// call; otherwise it founds a new word. Without a second word the ratio
    /// test cannot pass.
    pub fn quantize(&mut self, descriptors: &[Descriptor], nndr: f64) -> Vec<WordId> {
        if let Some(d) = descriptors.first() {
            if self.dim == 0 {
                self.dim = d.vector.len();
            }
        }
        let before = self.len();
        let mut out = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            assert_eq!(d.vector.len(), self.dim, "descriptor dimension mismatch");
            let matched = match self.two_nearest(&d.vector, before) {
                (Some((id, d1)), Some((_, d2))) if d2 > 0.0 && d1.sqrt() < nndr * d2.sqrt() => Some(id),
                _ => None,
            };
            out.push(matched.unwrap_or_else(|| {
                let id = self.len() as WordId;
                self.words.extend_from_slice(&d.vector);
                id
            }));
        }
        out
    }

    pub fn add_node(&mut self, node: NodeId, words: &[WordId]) {
        for &w in words {
            *self.inverted.entry(w).or_default().entry(node).or_insert(0) += 1;
        }
        self.node_totals.insert(node, words.len());
    }

    pub fn remove_node(&mut self, node: NodeId, words: &[WordId]) {
        for &w in words {
            if let Some(m) = self.inverted.get_mut(&w) {
                m.remove(&node);
                if m.is_empty() {
                    self.inverted.remove(&w);
                }
            }
        }
        self.node_totals.remove(&node);
    }

    pub fn contains_node(&self, node: NodeId) -> bool {
        self.node_totals.contains_key(&node)
    }

    pub fn indexed_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_totals.keys().copied()
    }

    /// Nodes listing `word`, with occurrence counts.
    pub fn postings(&self, word: WordId) -> Option<&BTreeMap<NodeId, u32>> {
        self.inverted.get(&word)
    }

    pub fn node_total(&self, node: NodeId) -> usize {
        self.node_totals.get(&node).copied().unwrap_or(0)
    }

    /// Every posting points at a node whose word list holds that word, and
    /// every indexed node is present in the graph.
    pub fn is_consistent_with(&self, graph: &MapGraph) -> bool {
        let sets: BTreeMap<NodeId, BTreeSet<WordId>> = self
            .node_totals
            .keys()
            .filter_map(|&id| graph.node(id).map(|n| (id, n.word_set())))
            .collect();
        if sets.len() != self.node_totals.len() {
            return false;
        }
        self.inverted
            .iter()
            .all(|(w, nodes)| nodes.keys().all(|n| sets.get(n).is_some_and(|s| s.contains(w))))
    }
}

/// Raw and standardized TF-IDF scores of a query against candidate nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Likelihood {
    pub raw: BTreeMap<NodeId, f64>,
    /// `1 + max(0, z)` per candidate.
    pub scores: BTreeMap<NodeId, f64>,
    pub new_place: f64,
}

/// Scores `words` against `candidates` (the WM): `Σ tf(w, n) · ln(N / df(w))`
/// over shared words, where `tf` is normalized by the node's word count and
/// `df` and `N` are taken over the candidates. Scores are standardized into
/// `1 + max(0, z)`; the new-place likelihood is `1 + mean(max(0, z))`.
pub fn likelihood(words: &[WordId], candidates: &BTreeSet<NodeId>, vocabulary: &Vocabulary) -> Likelihood {
    let mut raw: BTreeMap<NodeId, f64> = candidates.iter().map(|&n| (n, 0.0)).collect();
    let n_total = candidates.len() as f64;
    let query: BTreeSet<WordId> = words.iter().copied().collect();
    for w in query {
        let Some(postings) = vocabulary.postings(w) else { continue };
        let inside: Vec<(NodeId, u32)> = postings
            .iter()
            .filter(|(n, _)| candidates.contains(n))
            .map(|(&n, &c)| (n, c))
            .collect();
        if inside.is_empty() {
            continue;
        }
        let idf = (n_total / inside.len() as f64).ln();
        for (n, c) in inside {
            let tf = c as f64 / vocabulary.node_total(n).max(1) as f64;
            *raw.get_mut(&n).unwrap() += tf * idf;
        }
    }
    let (scores, new_place) = standardize(&raw);
    Likelihood { raw, scores, new_place }
}

fn standardize(raw: &BTreeMap<NodeId, f64>) -> (BTreeMap<NodeId, f64>, f64) {
    if raw.is_empty() {
        return (BTreeMap::new(), 1.0);
    }
    let n = raw.len() as f64;
    let mean = raw.values().sum::<f64>() / n;
    let std = (raw.values().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return (raw.keys().map(|&k| (k, 1.0)).collect(), 1.0);
    }
    let mut sum = 0.0;
    let scores = raw
        .iter()
        .map(|(&k, &s)| {
            let z = ((s - mean) / std).max(0.0);
            sum += z;
            (k, 1.0 + z)
        })
        .collect();
    (scores, 1.0 + sum / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(v: &[f64]) -> Descriptor {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Descriptor {
            vector: v.iter().map(|x| x / n).collect(),
            position: Point2::origin(),
            response: 1.0,
        }
    }

    #[test]
    fn empty_vocabulary_creates_words() {
        let mut v = Vocabulary::new();
        let w = v.quantize(&[desc(&[1.0, 0.0, 0.0]), desc(&[1.0, 0.0, 0.0]), desc(&[0.0, 1.0, 0.0])], 0.6);
        // Matching only sees the vocabulary from before the call.
        assert_eq!(w, vec![0, 1, 2]);
    }

    #[test]
    fn nndr_assignment() {
        let mut v = Vocabulary::new();
        v.quantize(&[desc(&[1.0, 0.0, 0.0]), desc(&[0.0, 1.0, 0.0])], 0.6);
        assert_eq!(v.quantize(&[desc(&[1.0, 0.0, 0.0])], 0.6), vec![0]);
        // Equidistant from both words: ratio 1, new word.
        assert_eq!(v.quantize(&[desc(&[1.0, 1.0, 0.0])], 0.6), vec![2]);
        // A single word cannot pass the ratio test.
        let mut one = Vocabulary::new();
        one.quantize(&[desc(&[1.0, 0.0])], 0.6);
        assert_eq!(one.quantize(&[desc(&[1.0, 0.0])], 0.6), vec![1]);
    }

    #[test]
    fn strongest_keeps_order() {
        let mut ds: Vec<Descriptor> = (0..5).map(|i| desc(&[1.0, i as f64])).collect();
        for (i, r) in [0.5, 0.9, 0.1, 0.9, 0.7].iter().enumerate() {
            ds[i].response = *r;
        }
        let kept = Descriptor::strongest(ds.clone(), 3);
        assert_eq!(kept, vec![ds[1].clone(), ds[3].clone(), ds[4].clone()]);
    }

    fn index(nodes: &[(NodeId, Vec<WordId>)]) -> Vocabulary {
        let mut v = Vocabulary::new();
        for (n, w) in nodes {
            v.add_node(*n, w);
        }
        v
    }

    #[test]
    fn no_shared_words_is_uniform() {
        let v = index(&[(1, vec![0, 1]), (2, vec![2, 3])]);
        let l = likelihood(&[9, 10], &BTreeSet::from([1, 2]), &v);
        assert!(l.scores.values().all(|&s| s == 1.0));
        assert_eq!(l.new_place, 1.0);
    }

    #[test]
    fn identical_frame_is_strict_maximum() {
        let nodes = vec![
            (1, vec![0, 1, 2, 3]),
            (2, vec![2, 3, 4, 5]),
            (3, vec![6, 7, 8, 9]),
            (4, vec![0, 9, 10, 11]),
        ];
        let v = index(&nodes);
        let wm: BTreeSet<NodeId> = [1, 2, 3, 4].into();
        let l = likelihood(&nodes[1].1, &wm, &v);
        // Brute-force oracle.
        let oracle = |n: &Vec<WordId>| -> f64 {
            let mut s = 0.0;
            for w in nodes[1].1.iter().collect::<BTreeSet<_>>() {
                let df = nodes.iter().filter(|(_, ws)| ws.contains(w)).count();
                let tf = n.iter().filter(|x| *x == w).count() as f64 / n.len() as f64;
                if tf > 0.0 {
                    s += tf * (4.0 / df as f64).ln();
                }
            }
            s
        };
        for (id, ws) in &nodes {
            assert!((l.raw[id] - oracle(ws)).abs() < 1e-12);
        }
        let best = l.raw.iter().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
        assert_eq!(*best.0, 2);
        assert!(l.raw.iter().filter(|(k, _)| **k != 2).all(|(_, s)| *s < l.raw[&2]));
    }

    #[test]
    fn ubiquitous_word_scores_zero() {
        let v = index(&[(1, vec![0, 1]), (2, vec![0, 2]), (3, vec![0, 3])]);
        let l = likelihood(&[0], &BTreeSet::from([1, 2, 3]), &v);
        assert!(l.raw.values().all(|&s| s == 0.0));
    }

    #[test]
    fn removal_keeps_index_sound() {
        let mut v = index(&[(1, vec![0, 1, 1]), (2, vec![1, 2])]);
        v.remove_node(1, &[0, 1, 1]);
        assert!(v.postings(0).is_none());
        assert_eq!(v.postings(1).unwrap().len(), 1);
        assert!(!v.contains_node(1));
    }
}
