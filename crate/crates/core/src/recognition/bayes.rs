use std::collections::BTreeMap;

use crate::graph::{LinkKind, MapGraph, NodeId};

use super::Likelihood;

/// How hypothesis mass moves between updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    /// Probability that a new place stays a new place.
    pub new_place_self: f64,
    /// Mass sent to the hypotheses at neighbor offsets -1, 0, +1, +2.
    pub kernel: [f64; 4],
}

impl Default for TransitionModel {
    fn default() -> Self {
        Self {
            new_place_self: 0.9,
            kernel: [0.175, 0.675, 0.1, 0.025],
        }
    }
}

/// Discrete Bayes filter over "the current node revisits node n" for every
/// WM node `n`, plus the new-place hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisFilter {
    model: TransitionModel,
    posterior: BTreeMap<NodeId, f64>,
    new_place: f64,
}

impl Default for HypothesisFilter {
    fn default() -> Self {
        Self::new(TransitionModel::default())
    }
}

fn neighbor(graph: &MapGraph, id: NodeId, forward: bool) -> Option<NodeId> {
    graph
        .links_of(id)
        .filter(|l| l.kind == LinkKind::Neighbor)
        .find_map(|l| match forward {
            true if l.from == id => Some(l.to),
            false if l.to == id => Some(l.from),
            _ => None,
        })
}

impl HypothesisFilter {
    pub fn new(model: TransitionModel) -> Self {
        Self {
            model,
            posterior: BTreeMap::new(),
            new_place: 1.0,
        }
    }

    pub fn posterior(&self) -> &BTreeMap<NodeId, f64> {
        &self.posterior
    }

    pub fn new_place(&self) -> f64 {
        self.new_place
    }

    pub fn sum(&self) -> f64 {
        self.new_place + self.posterior.values().sum::<f64>()
    }

    pub fn reset(&mut self) {
        self.posterior.clear();
        self.new_place = 1.0;
    }

    /// Spreads the prior through the transition model over the hypothesis
    /// set `ids` (previous mass on ids outside it is dropped).
    fn predict(&self, ids: &[NodeId], graph: &MapGraph) -> (BTreeMap<NodeId, f64>, f64) {
        let m = &self.model;
        let mut pred: BTreeMap<NodeId, f64> = ids.iter().map(|&i| (i, 0.0)).collect();
        let n = ids.len() as f64;
        let mut new_place = m.new_place_self * self.new_place;
        if n > 0.0 {
            let share = (1.0 - m.new_place_self) * self.new_place / n;
            pred.values_mut().for_each(|p| *p += share);
        } else {
            new_place = self.new_place;
        }
        // Mass aimed at neighbors outside the hypothesis set goes to the new
        // place, so hypotheses never pile up at the edge of WM.
        for (&id, &p) in &self.posterior {
            if p == 0.0 || !pred.contains_key(&id) {
                continue;
            }
            let prev = neighbor(graph, id, false);
            let next = neighbor(graph, id, true);
            let next2 = next.and_then(|x| neighbor(graph, x, true));
            let mut kept = 0.0;
            for (t, k) in [prev, Some(id), next, next2].iter().zip(&m.kernel) {
                if let Some(slot) = t.and_then(|t| pred.get_mut(&t)) {
                    *slot += p * k;
                    kept += k;
                }
            }
            new_place += p * (1.0 - kept);
        }
        (pred, new_place)
    }

    /// One predict/update cycle. The hypothesis set becomes the keys of
    /// `likelihood.scores`.
    pub fn update(&mut self, likelihood: &Likelihood, graph: &MapGraph) {
        let ids: Vec<NodeId> = likelihood.scores.keys().copied().collect();
        let (mut pred, mut new_place) = self.predict(&ids, graph);
        new_place *= likelihood.new_place;
        for (id, p) in pred.iter_mut() {
            *p *= likelihood.scores[id];
        }
        let total = new_place + pred.values().sum::<f64>();
        if total > 0.0 && total.is_finite() {
            new_place /= total;
            pred.values_mut().for_each(|p| *p /= total);
        } else {
            new_place = 1.0;
            pred.values_mut().for_each(|p| *p = 0.0);
        }
        self.posterior = pred;
        self.new_place = new_place;
    }

    /// The most probable revisited node (lowest id on ties) if its
    /// posterior reaches `threshold`.
    pub fn best(&self, threshold: f64) -> Option<(NodeId, f64)> {
        let mut best: Option<(NodeId, f64)> = None;
        for (&id, &p) in &self.posterior {
            if best.map_or(true, |b| p > b.1) {
                best = Some((id, p));
            }
        }
        best.filter(|b| b.1 >= threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Covariance3, Transform2};
    use crate::graph::{Link, MapNode};

    fn graph(n: u64) -> MapGraph {
        let mut g = MapGraph::new();
        for i in 1..=n {
            g.add_node(MapNode::new(i, 0, i as f64, Transform2::identity())).unwrap();
            if i > 1 {
                g.add_link(Link::new(i - 1, i, LinkKind::Neighbor, Transform2::identity(), Covariance3::isotropic(1.0))).unwrap();
            }
        }
        g
    }

    fn flat(n: u64) -> Likelihood {
        Likelihood {
            raw: (1..=n).map(|i| (i, 0.0)).collect(),
            scores: (1..=n).map(|i| (i, 1.0)).collect(),
            new_place: 1.0,
        }
    }

    #[test]
    fn flat_evidence_keeps_new_place() {
        let g = graph(20);
        let mut f = HypothesisFilter::default();
        f.update(&flat(20), &g);
        assert!((f.new_place() - 0.9).abs() < 1e-12);
        for _ in 0..50 {
            f.update(&flat(20), &g);
            assert!((f.sum() - 1.0).abs() < 1e-12);
            assert!(f.posterior().values().all(|&p| p < f.new_place()));
            assert!(f.best(0.11).is_none());
        }
    }

    #[test]
    fn strong_repeated_evidence_detects() {
        let g = graph(20);
        let mut f = HypothesisFilter::default();
        let mut l = flat(20);
        *l.scores.get_mut(&7).unwrap() = 8.0;
        l.new_place = 1.0 + 7.0 / 20.0;
        for _ in 0..3 {
            f.update(&l, &g);
        }
        let (id, p) = f.best(0.11).unwrap();
        assert_eq!(id, 7);
        assert!(p > 0.11);
        assert!((f.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_follows_neighbors() {
        let g = graph(5);
        let mut f = HypothesisFilter::default();
        f.posterior = BTreeMap::from([(3, 1.0)]);
        f.new_place = 0.0;
        let (pred, np) = f.predict(&[1, 2, 3, 4, 5], &g);
        assert!((pred[&2] - 0.175).abs() < 1e-15);
        assert!((pred[&3] - 0.675).abs() < 1e-15);
        assert!((pred[&4] - 0.1).abs() < 1e-15);
        assert!((pred[&5] - 0.025).abs() < 1e-15);
        assert!((np - 0.025).abs() < 1e-15);
        // At the chain end the missing offsets feed the new place.
        f.posterior = BTreeMap::from([(5, 1.0)]);
        let (pred, np) = f.predict(&[1, 2, 3, 4, 5], &g);
        assert!((pred[&4] - 0.175).abs() < 1e-15);
        assert!((pred[&5] - 0.675).abs() < 1e-15);
        assert!((np - 0.15).abs() < 1e-15);
    }

    #[test]
    fn flat_evidence_does_not_gather_at_the_wm_edge() {
        // A sliding hypothesis window, like WM under a size limit.
        let g = graph(300);
        let mut f = HypothesisFilter::default();
        for k in 0..250u64 {
            let ids = (k + 1)..=(k + 50);
            let l = Likelihood {
                raw: ids.clone().map(|i| (i, 0.0)).collect(),
                scores: ids.map(|i| (i, 1.0)).collect(),
                new_place: 1.0,
            };
            f.update(&l, &g);
            assert!(f.best(0.11).is_none(), "update {k}: {:?}", f.best(0.0));
        }
    }

    #[test]
    fn dropped_hypotheses_renormalize() {
        let g = graph(6);
        let mut f = HypothesisFilter::default();
        let mut l = flat(6);
        *l.scores.get_mut(&2).unwrap() = 20.0;
        f.update(&l, &g);
        f.update(&l, &g);
        // Nodes 1..3 leave the hypothesis set.
        let l2 = Likelihood {
            raw: (4..=6).map(|i| (i, 0.0)).collect(),
            scores: (4..=6).map(|i| (i, 1.0)).collect(),
            new_place: 1.0,
        };
        f.update(&l2, &g);
        assert!((f.sum() - 1.0).abs() < 1e-12);
        assert!(f.posterior().keys().all(|k| *k >= 4));
    }
}
