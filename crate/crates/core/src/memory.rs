//! Short-term, working and long-term memory.
//!
//! Every node lives in exactly one of the three memories, recorded in
//! [`MapNode::location`]. New nodes enter STM, a fixed-size buffer; the
//! oldest STM node moves to WM once the buffer overflows. WM nodes are the
//! loop closure candidates. When the update time or WM size exceeds its
//! threshold, the lightest (then oldest) WM nodes move to LTM, and a loop
//! closure brings LTM nodes around the matched node back to WM.
//!
//! LTM nodes keep their graph links. With a journal configured, their scan,
//! descriptors and words are written to disk and dropped from memory until
//! retrieval.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{Link, LinkKind, MapGraph, MapNode, MemoryLocation, NodeId};
use crate::io::{LtmJournal, NodePayload};
use crate::odometry::accumulate;
use crate::recognition::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryParams {
    pub detection_rate: f64,
    pub stm_size: usize,
    /// Maximum WM size, 0 disables.
    pub memory_threshold: usize,
    /// Maximum update time in ms, 0 disables.
    pub time_threshold_ms: f64,
    /// Fraction of WM moved to LTM per update over the time threshold.
    pub transfer_ratio: f64,
    pub rehearsal_similarity: f64,
    pub stationary_linear: f64,
    pub stationary_angular: f64,
    pub retrieval_depth: usize,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self::from_config(&Config::default())
    }
}

impl MemoryParams {
    pub fn from_config(c: &Config) -> Self {
        Self {
            detection_rate: c.detection_rate,
            stm_size: c.stm_size,
            memory_threshold: c.memory_threshold,
            time_threshold_ms: c.time_threshold_ms,
            transfer_ratio: c.transfer_ratio,
            rehearsal_similarity: c.rehearsal_similarity,
            stationary_linear: c.stationary_linear,
            stationary_angular: c.stationary_angular,
            retrieval_depth: c.retrieval_depth,
        }
    }
}

/// Whether a node is due at `stamp`. A small tolerance absorbs stamp
/// rounding (ten 0.1 s steps must count as 1 s).
pub fn should_create_node(last_node_stamp: Option<f64>, stamp: f64, detection_rate: f64) -> bool {
    match last_node_stamp {
        None => true,
        Some(last) => stamp - last >= 1.0 / detection_rate - 1e-9,
    }
}

/// Shared distinct words over the larger distinct word count.
pub fn word_similarity(a: &MapNode, b: &MapNode) -> f64 {
    let (wa, wb) = (a.word_set(), b.word_set());
    let denom = wa.len().max(wb.len());
    if denom == 0 {
        return 0.0;
    }
    wa.intersection(&wb).count() as f64 / denom as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rehearsal {
    pub similarity: f64,
    pub merged: bool,
    pub discard_last: bool,
}

/// Compares the new node with the previous one and moves the previous
/// node's weight onto the new node when they look alike.
pub fn rehearse(new_node: &mut MapNode, last_node: &mut MapNode, params: &MemoryParams) -> Rehearsal {
    let similarity = word_similarity(new_node, last_node);
    if similarity < params.rehearsal_similarity || similarity == 0.0 {
        return Rehearsal {
            similarity,
            merged: false,
            discard_last: false,
        };
    }
    new_node.weight += 1 + last_node.weight;
    last_node.weight = 0;
    let d = last_node.odom_pose.relative(&new_node.odom_pose);
    let discard_last = last_node.session == new_node.session
        && d.translation_norm() < params.stationary_linear
        && d.theta.abs() < params.stationary_angular;
    Rehearsal {
        similarity,
        merged: true,
        discard_last,
    }
}

#[derive(Debug)]
pub struct Memory {
    params: MemoryParams,
    stm: VecDeque<NodeId>,
    journal: Option<LtmJournal>,
    offloaded: BTreeSet<NodeId>,
}

impl Memory {
    pub fn new(params: MemoryParams) -> Self {
        Self {
            params,
            stm: VecDeque::new(),
            journal: None,
            offloaded: BTreeSet::new(),
        }
    }

    /// Memory whose LTM payloads go to a journal file at `path`.
    pub fn with_journal(params: MemoryParams, path: &Path) -> Result<Self> {
        let mut m = Self::new(params);
        m.journal = Some(LtmJournal::create(path)?);
        Ok(m)
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    pub fn stm(&self) -> &VecDeque<NodeId> {
        &self.stm
    }

    /// Nodes whose payload currently lives only in the journal.
    pub fn offloaded(&self) -> &BTreeSet<NodeId> {
        &self.offloaded
    }

    /// Registers a node already in `graph` as the newest STM node.
    pub fn add_to_stm(&mut self, graph: &mut MapGraph, id: NodeId) -> Result<()> {
        let node = graph
            .node_mut(id)
            .ok_or_else(|| Error::Graph(format!("unknown node {id}")))?;
        node.location = MemoryLocation::Stm;
        self.stm.push_back(id);
        Ok(())
    }

    /// Moves the oldest STM node to WM when STM is over capacity.
    pub fn move_to_wm(&mut self, graph: &mut MapGraph) -> Option<NodeId> {
        if self.stm.len() <= self.params.stm_size {
            return None;
        }
        let id = self.stm.pop_front()?;
        if let Some(n) = graph.node_mut(id) {
            n.location = MemoryLocation::Wm;
        }
        Some(id)
    }

    /// Removes the `last` node after it was rehearsed into `new`. Its
    /// neighbor chain is bridged, and its other links are re-expressed
    /// from `new`.
    pub fn discard(&mut self, graph: &mut MapGraph, vocabulary: &mut Vocabulary, last: NodeId, new: NodeId) -> Result<()> {
        let bridge = graph
            .link(last, new, LinkKind::Neighbor)
            .cloned()
            .ok_or_else(|| Error::Graph(format!("no neighbor link {last} -> {new}")))?;
        let back = bridge.reversed();
        let links: Vec<Link> = graph.links_of(last).cloned().collect();
        let node = graph.remove_node(last).expect("checked by the link lookup");
        vocabulary.remove_node(last, &node.words);
        graph.optimized_poses.remove(&last);
        self.stm.retain(|&i| i != last);
        for l in links {
            if l.key() == bridge.key() {
                continue;
            }
            let out = if l.from == last { l.clone() } else { l.reversed() };
            let (t, c) = accumulate((&back.transform, &back.covariance), (&out.transform, &out.covariance));
            let relinked = Link::new(new, out.to, out.kind, t, c);
            let relinked = if out.kind == LinkKind::Neighbor { relinked.reversed() } else { relinked };
            if out.to != new && graph.link(relinked.from, relinked.to, relinked.kind).is_none() {
                graph.add_link(relinked)?;
            }
        }
        Ok(())
    }

    /// Moves one WM node to LTM.
    pub fn transfer(&mut self, graph: &mut MapGraph, vocabulary: &mut Vocabulary, id: NodeId) -> Result<()> {
        let node = graph
            .node_mut(id)
            .ok_or_else(|| Error::Graph(format!("unknown node {id}")))?;
        if node.location != MemoryLocation::Wm {
            return Err(Error::Graph(format!("node {id} is not in WM")));
        }
        node.location = MemoryLocation::Ltm;
        vocabulary.remove_node(id, &node.words);
        if let Some(j) = self.journal.as_mut() {
            let payload = NodePayload::take_from(node);
            j.append(id, &payload)?;
            self.offloaded.insert(id);
        }
        Ok(())
    }

    /// Applies the time and size thresholds, transferring WM nodes by
    /// (weight, id) order. Nodes in `exempt` stay.
    pub fn enforce(
        &mut self,
        graph: &mut MapGraph,
        vocabulary: &mut Vocabulary,
        update_ms: f64,
        exempt: &BTreeSet<NodeId>,
    ) -> Result<Vec<NodeId>> {
        let wm = graph.ids_in(MemoryLocation::Wm);
        let p = &self.params;
        let mut count = 0;
        if p.memory_threshold > 0 && wm.len() > p.memory_threshold {
            count = wm.len() - p.memory_threshold;
        }
        if p.time_threshold_ms > 0.0 && update_ms > p.time_threshold_ms {
            count = count.max((wm.len() as f64 * p.transfer_ratio).ceil() as usize);
        }
        if count == 0 {
            return Ok(Vec::new());
        }
        let mut order: Vec<(u32, NodeId)> = wm
            .into_iter()
            .filter(|id| !exempt.contains(id))
            .map(|id| (graph.node(id).unwrap().weight, id))
            .collect();
        order.sort_unstable();
        let out: Vec<NodeId> = order.into_iter().take(count).map(|(_, id)| id).collect();
        for &id in &out {
            self.transfer(graph, vocabulary, id)?;
        }
        Ok(out)
    }

    /// Brings the LTM nodes within the retrieval radius of `loop_node` back
    /// to WM. The walk passes through nodes in any memory.
    pub fn retrieve_neighbors(
        &mut self,
        graph: &mut MapGraph,
        vocabulary: &mut Vocabulary,
        loop_node: NodeId,
    ) -> Result<Vec<NodeId>> {
        let found: Vec<NodeId> = graph
            .bfs_depths(loop_node, self.params.retrieval_depth, |_| true)
            .into_keys()
            .filter(|&id| graph.node(id).is_some_and(|n| n.location == MemoryLocation::Ltm))
            .collect();
        self.retrieve(graph, vocabulary, &found)
    }

    /// Moves the given LTM nodes back to WM and returns those moved.
    pub fn retrieve(&mut self, graph: &mut MapGraph, vocabulary: &mut Vocabulary, ids: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut moved = Vec::new();
        for &id in ids {
            if !graph.node(id).is_some_and(|n| n.location == MemoryLocation::Ltm) {
                continue;
            }
            let payload = match self.offloaded.remove(&id) {
                true => Some(self.journal.as_mut().expect("offloaded implies a journal").load(id)?),
                false => None,
            };
            let node = graph.node_mut(id).unwrap();
            if let Some(p) = payload {
                p.restore_into(node);
            }
            node.location = MemoryLocation::Wm;
            vocabulary.add_node(id, &node.words);
            moved.push(id);
        }
        Ok(moved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Covariance3, Transform2};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn node(id: NodeId, x: f64, words: &[u32]) -> MapNode {
        let mut n = MapNode::new(id, 0, id as f64, Transform2::new(x, 0.0, 0.0));
        n.words = words.to_vec();
        n
    }

    fn chain(n: u64) -> (MapGraph, Vocabulary) {
        let mut g = MapGraph::new();
        let mut v = Vocabulary::new();
        for i in 1..=n {
            let nd = node(i, i as f64, &[i as u32, 1000]);
            v.add_node(i, &nd.words);
            g.add_node(nd).unwrap();
            if i > 1 {
                g.add_link(Link::new(i - 1, i, LinkKind::Neighbor, Transform2::new(1.0, 0.0, 0.0), Covariance3::isotropic(0.01)))
                    .unwrap();
            }
        }
        (g, v)
    }

    #[test]
    fn node_creation_rate() {
        assert!(should_create_node(Some(0.0), 0.6, 2.0));
        assert!(!should_create_node(Some(0.0), 0.4, 2.0));
        assert!(should_create_node(None, 0.0, 2.0));
        let stamp = (0..5).fold(0.0, |s, _| s + 0.1);
        assert!(should_create_node(Some(0.0), stamp, 2.0));
    }

    #[test]
    fn rehearsal_examples() {
        let p = MemoryParams::default();
        // 3 of 10 distinct words shared.
        let mut new = node(2, 1.0, &(0..10).collect::<Vec<_>>());
        let mut last = node(1, 0.0, &[0, 1, 2, 20, 21, 22, 23, 24, 25, 26]);
        last.weight = 3;
        let r = rehearse(&mut new, &mut last, &p);
        assert!((r.similarity - 0.3).abs() < 1e-12);
        assert!(r.merged && !r.discard_last);
        assert_eq!((new.weight, last.weight), (4, 0));

        let mut new = node(2, 1.0, &(0..10).collect::<Vec<_>>());
        let mut last = node(1, 0.0, &[0, 20, 21, 22, 23, 24, 25, 26, 27, 28]);
        last.weight = 3;
        let r = rehearse(&mut new, &mut last, &p);
        assert!(!r.merged);
        assert_eq!((new.weight, last.weight), (0, 3));

        let mut new = node(2, 0.0, &[0, 1, 2, 3]);
        let mut last = node(1, 0.0, &[0, 1, 7, 8]);
        let r = rehearse(&mut new, &mut last, &p);
        assert_eq!(r.similarity, 0.5);
        assert!(r.discard_last);
    }

    #[test]
    fn rehearsal_divides_by_larger_set() {
        let a = node(1, 0.0, &[1, 2]);
        let b = node(2, 0.0, &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(word_similarity(&a, &b), 0.25);
        assert_eq!(word_similarity(&node(1, 0.0, &[]), &node(2, 0.0, &[])), 0.0);
    }

    #[test]
    fn stm_buffer() {
        let (mut g, _) = chain(31);
        let mut m = Memory::new(MemoryParams { stm_size: 30, ..Default::default() });
        for i in 1..=30 {
            m.add_to_stm(&mut g, i).unwrap();
            assert_eq!(m.move_to_wm(&mut g), None);
        }
        m.add_to_stm(&mut g, 31).unwrap();
        assert_eq!(m.move_to_wm(&mut g), Some(1));
        assert_eq!(g.node(1).unwrap().location, MemoryLocation::Wm);
        assert_eq!(m.stm().len(), 30);
    }

    fn all_wm(g: &mut MapGraph) {
        let ids: Vec<_> = g.node_ids().collect();
        for id in ids {
            g.node_mut(id).unwrap().location = MemoryLocation::Wm;
        }
    }

    #[test]
    fn size_threshold_transfers_lightest_oldest() {
        let (mut g, mut v) = chain(301);
        all_wm(&mut g);
        for id in 1..=301 {
            g.node_mut(id).unwrap().weight = if id == 7 || id == 9 { 0 } else { 1 };
        }
        let mut m = Memory::new(MemoryParams { memory_threshold: 300, ..Default::default() });
        let out = m.enforce(&mut g, &mut v, 0.0, &BTreeSet::new()).unwrap();
        assert_eq!(out, vec![7]);
        assert_eq!(g.node(7).unwrap().location, MemoryLocation::Ltm);
        assert!(!v.contains_node(7));
        assert!(v.is_consistent_with(&g));
    }

    #[test]
    fn disabled_thresholds_never_transfer() {
        let (mut g, mut v) = chain(50);
        all_wm(&mut g);
        let mut m = Memory::new(MemoryParams { memory_threshold: 0, time_threshold_ms: 0.0, ..Default::default() });
        assert!(m.enforce(&mut g, &mut v, 1e9, &BTreeSet::new()).unwrap().is_empty());
    }

    #[test]
    fn time_threshold_moves_a_tenth() {
        let (mut g, mut v) = chain(25);
        all_wm(&mut g);
        let mut m = Memory::new(MemoryParams { time_threshold_ms: 100.0, ..Default::default() });
        assert!(m.enforce(&mut g, &mut v, 99.0, &BTreeSet::new()).unwrap().is_empty());
        let exempt = BTreeSet::from([1]);
        assert_eq!(m.enforce(&mut g, &mut v, 150.0, &exempt).unwrap(), vec![2, 3, 4]);
    }

    #[test]
    fn retrieval_around_loop_node() {
        let (mut g, mut v) = chain(10);
        all_wm(&mut g);
        let links_before = g.link_total();
        let dir = tempfile::tempdir().unwrap();
        let mut m = Memory::with_journal(MemoryParams::default(), &dir.path().join("ltm")).unwrap();
        for id in [4, 6, 8] {
            m.transfer(&mut g, &mut v, id).unwrap();
        }
        assert!(g.node(4).unwrap().words.is_empty());
        assert_eq!(g.link_total(), links_before);
        assert_eq!(m.retrieve_neighbors(&mut g, &mut v, 5).unwrap(), vec![4, 6]);
        assert_eq!(g.node(4).unwrap().words, vec![4, 1000]);
        assert!(v.is_consistent_with(&g) && v.contains_node(6));
        assert!(m.retrieve_neighbors(&mut g, &mut v, 5).unwrap().is_empty());
        assert_eq!(m.retrieve_neighbors(&mut g, &mut v, 6).unwrap(), vec![8]);
        assert_eq!(g.link_total(), links_before);
    }

    #[test]
    fn retrieve_moves_only_ltm_nodes() {
        let (mut g, mut v) = chain(6);
        all_wm(&mut g);
        let mut m = Memory::new(MemoryParams::default());
        for id in [2, 5] {
            m.transfer(&mut g, &mut v, id).unwrap();
        }
        assert!(!v.contains_node(5));
        // 3 is in WM, 9 does not exist.
        assert_eq!(m.retrieve(&mut g, &mut v, &[5, 3, 9, 2]).unwrap(), vec![5, 2]);
        assert!(g.nodes().all(|n| n.location == MemoryLocation::Wm));
        assert!(v.contains_node(5) && v.is_consistent_with(&g));
        assert!(m.retrieve(&mut g, &mut v, &[5]).unwrap().is_empty());
    }

    #[test]
    fn discard_bridges_chain() {
        let (mut g, mut v) = chain(4);
        g.add_link(Link::new(3, 1, LinkKind::LoopClosure, Transform2::new(-2.0, 0.0, 0.0), Covariance3::isotropic(0.01)))
            .unwrap();
        let mut m = Memory::new(MemoryParams::default());
        for i in 1..=4 {
            m.add_to_stm(&mut g, i).unwrap();
        }
        m.discard(&mut g, &mut v, 3, 4).unwrap();
        g.validate().unwrap();
        assert!(!g.contains(3) && !v.contains_node(3));
        let l = g.link(2, 4, LinkKind::Neighbor).unwrap();
        assert!((l.transform.x - 2.0).abs() < 1e-12);
        let lc = g.link(4, 1, LinkKind::LoopClosure).unwrap();
        assert!((lc.transform.x + 3.0).abs() < 1e-12);
        assert_eq!(m.stm(), &VecDeque::from([1, 2, 4]));
    }

    proptest! {
        #[test]
        fn weights_conserved(wn in 0u32..50, wl in 0u32..50, shared in 0usize..6) {
            let mut a = node(2, 1.0, &(0..5).collect::<Vec<_>>());
            let mut b = node(1, 0.0, &(5 - shared as u32..10 - shared as u32).collect::<Vec<_>>());
            a.weight = wn;
            b.weight = wl;
            let r = rehearse(&mut a, &mut b, &MemoryParams::default());
            if r.merged {
                prop_assert_eq!(a.weight, wn + 1 + wl);
                prop_assert_eq!(b.weight, 0);
            } else {
                prop_assert_eq!((a.weight, b.weight), (wn, wl));
            }
            prop_assert!(r.merged == (shared as f64 / 5.0 >= 0.2));
        }

        #[test]
        fn wm_bounded_and_links_kept(n in 5u64..80, cap in 1usize..20, weights in proptest::collection::vec(0u32..4, 80)) {
            let (mut g, mut v) = chain(n);
            let mut m = Memory::new(MemoryParams { memory_threshold: cap, stm_size: 3, ..Default::default() });
            let links = g.link_total();
            for id in 1..=n {
                g.node_mut(id).unwrap().weight = weights[id as usize - 1];
                m.add_to_stm(&mut g, id).unwrap();
                m.move_to_wm(&mut g);
                m.enforce(&mut g, &mut v, 0.0, &BTreeSet::new()).unwrap();
                prop_assert!(g.ids_in(MemoryLocation::Wm).len() <= cap);
                if id % 7 == 0 {
                    m.retrieve_neighbors(&mut g, &mut v, id).unwrap();
                    m.enforce(&mut g, &mut v, 0.0, &BTreeSet::new()).unwrap();
                    prop_assert!(g.ids_in(MemoryLocation::Wm).len() <= cap);
                }
            }
            prop_assert_eq!(g.link_total(), links);
            prop_assert!(v.is_consistent_with(&g));
        }
    }
}
