//! The map graph: nodes with their sensor data and the links between them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::geometry::{inverse_jacobian, Covariance3, Transform2};
use crate::grid::LocalGrid;
use crate::recognition::{Descriptor, WordId};
use crate::registration::Scan;

pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MemoryLocation {
    Stm,
    Wm,
    Ltm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkKind {
    Neighbor,
    LoopClosure,
    Proximity,
}

impl LinkKind {
    pub fn code(self) -> u8 {
        match self {
            LinkKind::Neighbor => 0,
            LinkKind::LoopClosure => 1,
            LinkKind::Proximity => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LinkKind::Neighbor),
            1 => Some(LinkKind::LoopClosure),
            2 => Some(LinkKind::Proximity),
            _ => None,
        }
    }
}

/// A constraint: `transform` is the pose of `to` in the frame of `from`,
/// and `covariance` is expressed in the `from` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: LinkKind,
    pub transform: Transform2,
    pub covariance: Covariance3,
}

impl Link {
    pub fn new(from: NodeId, to: NodeId, kind: LinkKind, transform: Transform2, covariance: Covariance3) -> Self {
        Self {
            from,
            to,
            kind,
            transform,
            covariance,
        }
    }

    pub fn key(&self) -> (NodeId, NodeId, LinkKind) {
        (self.from, self.to, self.kind)
    }

    /// The same constraint seen from `to`.
    pub fn reversed(&self) -> Link {
        let inv = self.transform.inverse();
        Link {
            from: self.to,
            to: self.from,
            kind: self.kind,
            transform: inv,
            covariance: self.covariance.transformed(&inverse_jacobian(&self.transform)).unwrap_or(self.covariance),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapNode {
    pub id: NodeId,
    pub session: u32,
    pub stamp: f64,
    /// Pose in the session's odometry frame.
    pub odom_pose: Transform2,
    pub weight: u32,
    /// Filtered scan in the base frame, with normals.
    pub scan: Scan,
    pub descriptors: Vec<Descriptor>,
    /// Word of each descriptor, same order.
    pub words: Vec<WordId>,
    pub local_grid: LocalGrid,
    pub location: MemoryLocation,
}

impl MapNode {
    pub fn new(id: NodeId, session: u32, stamp: f64, odom_pose: Transform2) -> Self {
        Self {
            id,
            session,
            stamp,
            odom_pose,
            weight: 0,
            scan: Scan::default(),
            descriptors: Vec::new(),
            words: Vec::new(),
            local_grid: LocalGrid::default(),
            location: MemoryLocation::Stm,
        }
    }

    /// Distinct words of this node.
    pub fn word_set(&self) -> BTreeSet<WordId> {
        self.words.iter().copied().collect()
    }
}

type LinkKey = (NodeId, NodeId, LinkKind);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapGraph {
    nodes: BTreeMap<NodeId, MapNode>,
    links: BTreeMap<LinkKey, Link>,
    /// Undirected view: node → keys of its links.
    adjacency: BTreeMap<NodeId, BTreeSet<LinkKey>>,
    /// Map-frame poses from the last optimization.
    pub optimized_poses: BTreeMap<NodeId, Transform2>,
}

impl MapGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn last_id(&self) -> Option<NodeId> {
        self.nodes.keys().next_back().copied()
    }

    pub fn add_node(&mut self, node: MapNode) -> Result<()> {
        if let Some(last) = self.last_id() {
            if node.id <= last {
                return Err(Error::Graph(format!("node id {} is not above {last}", node.id)));
            }
        }
        self.adjacency.insert(node.id, BTreeSet::new());
        self.nodes.insert(node.id, node);
        Ok(())
    }

    /// Removes a node and every link touching it.
    pub fn remove_node(&mut self, id: NodeId) -> Option<MapNode> {
        let node = self.nodes.remove(&id)?;
        for key in self.adjacency.remove(&id).unwrap_or_default() {
            self.links.remove(&key);
            let other = if key.0 == id { key.1 } else { key.0 };
            if let Some(adj) = self.adjacency.get_mut(&other) {
                adj.remove(&key);
            }
        }
        self.optimized_poses.remove(&id);
        Some(node)
    }

    pub fn node(&self, id: NodeId) -> Option<&MapNode> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut MapNode> {
        self.nodes.get_mut(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MapNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Adds a link; endpoints must exist and differ, and the
    /// `(from, to, kind)` triple must be new.
    pub fn add_link(&mut self, link: Link) -> Result<()> {
        if link.from == link.to {
            return Err(Error::Graph(format!("self link on node {}", link.from)));
        }
        for id in [link.from, link.to] {
            if !self.nodes.contains_key(&id) {
                return Err(Error::Graph(format!("link endpoint {id} does not exist")));
            }
        }
        let key = link.key();
        if self.links.contains_key(&key) {
            return Err(Error::Graph(format!("duplicate {:?} link {} -> {}", key.2, key.0, key.1)));
        }
        self.adjacency.get_mut(&link.from).unwrap().insert(key);
        self.adjacency.get_mut(&link.to).unwrap().insert(key);
        self.links.insert(key, link);
        Ok(())
    }

    pub fn remove_link(&mut self, from: NodeId, to: NodeId, kind: LinkKind) -> Option<Link> {
        let key = (from, to, kind);
        let link = self.links.remove(&key)?;
        for id in [from, to] {
            if let Some(adj) = self.adjacency.get_mut(&id) {
                adj.remove(&key);
            }
        }
        Some(link)
    }

    pub fn link(&self, from: NodeId, to: NodeId, kind: LinkKind) -> Option<&Link> {
        self.links.get(&(from, to, kind))
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    /// Links touching `id`, in key order.
    pub fn links_of(&self, id: NodeId) -> impl Iterator<Item = &Link> {
        self.adjacency
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |k| &self.links[k])
    }

    pub fn neighbors(&self, id: NodeId) -> BTreeSet<NodeId> {
        self.links_of(id)
            .map(|l| if l.from == id { l.to } else { l.from })
            .collect()
    }

    pub fn link_count(&self, kind: LinkKind) -> usize {
        self.links.values().filter(|l| l.kind == kind).count()
    }

    pub fn link_total(&self) -> usize {
        self.links.len()
    }

    pub fn ids_in(&self, location: MemoryLocation) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.location == location)
            .map(|n| n.id)
            .collect()
    }

    /// Nodes taking part in online mapping (STM and WM).
    pub fn active_ids(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.location != MemoryLocation::Ltm)
            .map(|n| n.id)
            .collect()
    }

    /// Breadth-first link distances from `start` up to `max_depth`, walking
    /// only through nodes accepted by `allow` (`start` is always included).
    pub fn bfs_depths<F: Fn(&MapNode) -> bool>(
        &self,
        start: NodeId,
        max_depth: usize,
        allow: F,
    ) -> BTreeMap<NodeId, usize> {
        let mut depth = BTreeMap::new();
        if !self.nodes.contains_key(&start) {
            return depth;
        }
        depth.insert(start, 0);
        let mut queue = VecDeque::from([start]);
        while let Some(id) = queue.pop_front() {
            let d = depth[&id];
            if d >= max_depth {
                continue;
            }
            for n in self.neighbors(id) {
                if depth.contains_key(&n) || !allow(&self.nodes[&n]) {
                    continue;
                }
                depth.insert(n, d + 1);
                queue.push_back(n);
            }
        }
        depth
    }

    /// Connected components among the nodes accepted by `allow`, each sorted,
    /// listed by their lowest id.
    pub fn components<F: Fn(&MapNode) -> bool>(&self, allow: F) -> Vec<Vec<NodeId>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for n in self.nodes.values() {
            if seen.contains(&n.id) || !allow(n) {
                continue;
            }
            let comp: Vec<NodeId> = self.bfs_depths(n.id, usize::MAX, &allow).into_keys().collect();
            seen.extend(comp.iter().copied());
            out.push(comp);
        }
        out
    }

    /// Checks the structural invariants: link endpoints exist, no self
    /// links, and neighbor links chain consecutive nodes of each session.
    pub fn validate(&self) -> Result<()> {
        for l in self.links.values() {
            if l.from == l.to || !self.contains(l.from) || !self.contains(l.to) {
                return Err(Error::Graph(format!("dangling link {} -> {}", l.from, l.to)));
            }
        }
        let mut by_session: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
        for n in self.nodes.values() {
            by_session.entry(n.session).or_default().push(n.id);
        }
        for l in self.links.values().filter(|l| l.kind == LinkKind::Neighbor) {
            let s = self.nodes[&l.from].session;
            let ids = &by_session[&s];
            let ok = self.nodes[&l.to].session == s
                && ids
                    .windows(2)
                    .any(|w| w[0] == l.from && w[1] == l.to);
            if !ok {
                return Err(Error::Graph(format!(
                    "neighbor link {} -> {} does not join consecutive session nodes",
                    l.from, l.to
                )));
            }
        }
        for ids in by_session.values() {
            let chained = ids
                .windows(2)
                .filter(|w| self.links.contains_key(&(w[0], w[1], LinkKind::Neighbor)))
                .count();
            // Lost odometry may leave gaps; a session is then several paths.
            if chained > ids.len().saturating_sub(1) {
                return Err(Error::Graph("neighbor chain has extra links".into()));
            }
        }
        Ok(())
    }

    /// Poses obtained by composing links outward from `anchor` in BFS order
    /// (first-reached link wins). Only nodes accepted by `allow` are visited.
    pub fn dead_reckoning<F: Fn(&MapNode) -> bool>(
        &self,
        anchor: NodeId,
        anchor_pose: Transform2,
        allow: F,
    ) -> BTreeMap<NodeId, Transform2> {
        let mut poses = BTreeMap::from([(anchor, anchor_pose)]);
        let mut queue = VecDeque::from([anchor]);
        while let Some(id) = queue.pop_front() {
            let p = poses[&id];
            for l in self.links_of(id) {
                let (other, rel) = if l.from == id {
                    (l.to, l.transform)
                } else {
                    (l.from, l.transform.inverse())
                };
                if poses.contains_key(&other) || !allow(&self.nodes[&other]) {
                    continue;
                }
                poses.insert(other, p.compose(&rel));
                queue.push_back(other);
            }
        }
        poses
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov() -> Covariance3 {
        Covariance3::isotropic(0.01)
    }

    fn chain(n: u64) -> MapGraph {
        let mut g = MapGraph::new();
        for i in 1..=n {
            g.add_node(MapNode::new(i, 0, i as f64, Transform2::new(i as f64, 0.0, 0.0))).unwrap();
            if i > 1 {
                g.add_link(Link::new(i - 1, i, LinkKind::Neighbor, Transform2::new(1.0, 0.0, 0.0), cov())).unwrap();
            }
        }
        g
    }

    #[test]
    fn rejects_bad_links_and_ids() {
        let mut g = chain(3);
        assert!(g.add_node(MapNode::new(2, 0, 0.0, Transform2::identity())).is_err());
        assert!(g.add_link(Link::new(1, 1, LinkKind::LoopClosure, Transform2::identity(), cov())).is_err());
        assert!(g.add_link(Link::new(1, 9, LinkKind::LoopClosure, Transform2::identity(), cov())).is_err());
        assert!(g.add_link(Link::new(1, 2, LinkKind::Neighbor, Transform2::identity(), cov())).is_err());
        // Same pair, different kind is fine.
        g.add_link(Link::new(3, 1, LinkKind::LoopClosure, Transform2::new(-2.0, 0.0, 0.0), cov())).unwrap();
        g.validate().unwrap();
        assert_eq!(g.link_count(LinkKind::Neighbor), 2);
        assert_eq!(g.link_count(LinkKind::LoopClosure), 1);
    }

    #[test]
    fn remove_node_drops_links() {
        let mut g = chain(4);
        g.remove_node(2).unwrap();
        assert_eq!(g.link_total(), 1);
        assert!(g.neighbors(1).is_empty());
        g.validate().unwrap();
    }

    #[test]
    fn bfs_and_components() {
        let mut g = chain(6);
        let d = g.bfs_depths(1, 3, |_| true);
        assert_eq!(d.len(), 4);
        assert_eq!(d[&4], 3);
        g.remove_link(3, 4, LinkKind::Neighbor);
        assert_eq!(g.components(|_| true), vec![vec![1, 2, 3], vec![4, 5, 6]]);
        assert_eq!(g.components(|n| n.id != 2), vec![vec![1], vec![3], vec![4, 5, 6]]);
    }

    #[test]
    fn dead_reckoning_composes() {
        let g = chain(4);
        let p = g.dead_reckoning(1, Transform2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2), |_| true);
        assert!((p[&4].y - 3.0).abs() < 1e-12 && p[&4].x.abs() < 1e-12);
    }

    #[test]
    fn validate_catches_skipping_neighbor() {
        let mut g = chain(3);
        g.add_link(Link::new(1, 3, LinkKind::Neighbor, Transform2::identity(), cov())).unwrap();
        assert!(g.validate().is_err());
    }

    #[test]
    fn reversed_link_roundtrip() {
        let l = Link::new(1, 2, LinkKind::LoopClosure, Transform2::new(1.0, 2.0, 0.3), Covariance3::diagonal(0.01, 0.02, 0.001).unwrap());
        let rr = l.reversed().reversed();
        assert!((rr.transform.x - 1.0).abs() < 1e-12);
        assert!((rr.covariance.matrix() - l.covariance.matrix()).norm() < 1e-12);
    }
}
