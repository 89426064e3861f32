//! Odometry and map update wired into one mapping session.
//!
//! The odometry stage turns each [`SensorFrame`] into an
//! [`OdometryMessage`]. The map-update stage consumes those messages and, at
//! the detection rate, creates a node and runs rehearsal, loop closure and
//! proximity detection, graph optimization with link rejection, grid
//! assembly and memory management. Both stages run on their own thread
//! joined by a bounded queue, or inline when `deterministic` is set; the
//! results are the same except for wall-clock timings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{self, AteSummary, StampedPose, Timings, UpdateStats};
use crate::geometry::{Covariance3, Point2, Transform2};
use crate::graph::{Link, LinkKind, MapGraph, MapNode, MemoryLocation, NodeId};
use crate::grid::{assemble, build_local_grid, GridAssembler, GridParams, OccupancyGrid};
use crate::io;
use crate::memory::{rehearse, should_create_node, Memory, MemoryParams};
use crate::odometry::{accumulate, Odometry, OdometryParams};
use crate::optimizer::{self, OptimizerParams};
use crate::recognition::{
    detect_proximity, estimate_loop_transform, likelihood, Descriptor, HypothesisFilter, LoopParams, TransitionModel,
    Vocabulary,
};
use crate::registration::Scan;
use crate::sim::{emulate_short_range, SensorFrame};

/// Output of the odometry stage for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryMessage {
    pub session: u32,
    pub stamp: f64,
    pub pose: Transform2,
    pub increment: Transform2,
    pub covariance: Covariance3,
    pub lost: bool,
    /// Filtered scan with normals, base frame.
    pub scan: Scan,
    /// Unfiltered scan for the local occupancy grid.
    pub grid_scan: Scan,
    pub descriptors: Vec<Descriptor>,
    pub ground_truth: Transform2,
}

/// Runs odometry frame by frame, restarting at each new session.
#[derive(Debug)]
pub struct OdometryStage {
    params: OdometryParams,
    odometry: Odometry,
    session: Option<u32>,
}

impl OdometryStage {
    pub fn new(config: &Config) -> Self {
        let params = OdometryParams::from_config(config);
        Self {
            odometry: Odometry::new(params.clone()),
            params,
            session: None,
        }
    }

    pub fn process(&mut self, frame: &SensorFrame) -> OdometryMessage {
        if self.session != Some(frame.session) {
            self.odometry = Odometry::new(self.params.clone());
            self.session = Some(frame.session);
        }
        let external = self.params.strategy.uses_external().then_some(frame.wheel_odom_pose);
        let out = self.odometry.process(&frame.scan, frame.stamp, external);
        let grid_scan = if self.params.range_max > 0.0 {
            emulate_short_range(&frame.scan, self.params.range_max)
        } else {
            frame.scan.clone()
        };
        let descriptors = frame.observations.iter().map(Descriptor::from_observation).collect();
        let base = |pose, increment, covariance, lost, scan| OdometryMessage {
            session: frame.session,
            stamp: frame.stamp,
            pose,
            increment,
            covariance,
            lost,
            scan,
            grid_scan,
            descriptors,
            ground_truth: frame.gt_pose,
        };
        match out {
            Ok(o) if !o.lost => base(o.pose, o.increment, o.covariance, false, o.scan),
            other => {
                if let Err(e) = &other {
                    log::debug!("odometry failed at {}: {e}", frame.stamp);
                }
                // Start over from the current pose; the map gets a gap.
                self.odometry.reset();
                let pose = self.odometry.pose();
                let scan = other.map(|o| o.scan).unwrap_or_default();
                base(pose, Transform2::identity(), Covariance3::isotropic(crate::odometry::LOST_VARIANCE), true, scan)
            }
        }
    }
}

/// Everything recorded over a run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub config: Config,
    pub graph: MapGraph,
    pub stats: Vec<UpdateStats>,
    /// Odometry pose of every frame.
    pub odometry: Vec<StampedPose>,
    /// Ground truth of every frame.
    pub ground_truth: Vec<StampedPose>,
    pub node_ground_truth: BTreeMap<NodeId, Transform2>,
    /// Stamps of frames whose odometry was lost.
    pub lost_frames: Vec<f64>,
    /// Posterior total after every filter update.
    pub posterior_sums: Vec<f64>,
    /// Loop candidates that were STM nodes (should stay 0).
    pub stm_candidates: usize,
    /// Online global grid of STM and WM nodes, when assembled.
    pub grid: Option<OccupancyGrid>,
}

impl RunTrace {
    /// Node stamps with their latest optimized poses, in id order.
    pub fn trajectory(&self) -> Vec<StampedPose> {
        self.graph
            .nodes()
            .filter_map(|n| self.graph.optimized_poses.get(&n.id).map(|p| (n.stamp, *p)))
            .collect()
    }

    pub fn ate_series(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.ate).collect()
    }

    pub fn ate_summary(&self) -> Option<AteSummary> {
        eval::summarize(&self.ate_series())
    }

    /// ATE RMSE of the final node poses against ground truth, aligned.
    pub fn final_ate_rmse(&self) -> Result<f64> {
        eval::ate_rmse(&self.trajectory(), &self.ground_truth, true)
    }

    /// Error of the last node in the final map, aligned over all nodes.
    pub fn final_ate_end(&self) -> Option<f64> {
        let last = self.graph.last_id()?;
        node_error(&self.graph.optimized_poses, &self.node_ground_truth, last)
    }

    /// Links by kind: (neighbor, loop closure, proximity).
    pub fn link_counts(&self) -> (usize, usize, usize) {
        (
            self.graph.link_count(LinkKind::Neighbor),
            self.graph.link_count(LinkKind::LoopClosure),
            self.graph.link_count(LinkKind::Proximity),
        )
    }

    /// Grid of every node at its final pose, LTM included.
    pub fn full_grid(&self) -> Result<OccupancyGrid> {
        grid_of(&self.graph, self.config.cell_size, |_| true)
    }

    /// Writes the run outputs into `dir`:
    ///
    /// | File | Content |
    /// |------|---------|
    /// | `trajectory.txt` | node poses, `stamp x y theta` |
    /// | `odometry.txt` | per-frame odometry poses |
    /// | `ground_truth.txt` | per-frame ground truth |
    /// | `stats.csv` | one row per map update, see [`eval::STATS_HEADER`] |
    /// | `timing.csv` | per-update stage durations (wall clock) |
    /// | `graph.bin` | graph snapshot |
    /// | `graph.g2o` | optimization problem dump |
    /// | `map.pgm`, `map.yaml` | occupancy grid of all nodes |
    /// | `config.txt` | effective configuration |
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trajectory.txt"), io::trajectory_to_text(&self.trajectory()))?;
        std::fs::write(dir.join("odometry.txt"), io::trajectory_to_text(&self.odometry))?;
        std::fs::write(dir.join("ground_truth.txt"), io::trajectory_to_text(&self.ground_truth))?;
        std::fs::write(dir.join("stats.csv"), eval::stats_csv(&self.stats))?;
        std::fs::write(dir.join("timing.csv"), eval::timing_csv(&self.stats))?;
        std::fs::write(dir.join("graph.bin"), io::encode_graph(&self.graph))?;
        std::fs::write(dir.join("graph.g2o"), optimizer::to_g2o(&self.graph))?;
        write_map(&self.full_grid()?, dir, "map")?;
        std::fs::write(dir.join("config.txt"), self.config.to_text())?;
        Ok(())
    }
}

/// Writes `<name>.pgm` and `<name>.yaml`.
pub fn write_map(grid: &OccupancyGrid, dir: &Path, name: &str) -> Result<()> {
    let image = format!("{name}.pgm");
    std::fs::write(dir.join(&image), grid.to_pgm())?;
    std::fs::write(dir.join(format!("{name}.yaml")), grid.metadata(&image))?;
    Ok(())
}

/// Assembles the local grids of the nodes accepted by `keep` at their
/// optimized poses.
pub fn grid_of(graph: &MapGraph, cell_size: f64, keep: impl Fn(&MapNode) -> bool) -> Result<OccupancyGrid> {
    let nodes: Vec<&MapNode> = graph
        .nodes()
        .filter(|n| keep(n) && graph.optimized_poses.contains_key(&n.id))
        .collect();
    let grids: Vec<(NodeId, &crate::grid::LocalGrid)> = nodes.iter().map(|n| (n.id, &n.local_grid)).collect();
    assemble(&graph.optimized_poses, &grids, cell_size)
}

/// The map-update stage.
#[derive(Debug)]
pub struct MapUpdater {
    config: Config,
    graph: MapGraph,
    vocabulary: Vocabulary,
    filter: HypothesisFilter,
    memory: Memory,
    loop_params: LoopParams,
    grid_params: GridParams,
    optimizer_params: OptimizerParams,
    assembler: Option<GridAssembler>,
    next_id: NodeId,
    session: Option<u32>,
    last_node: Option<NodeId>,
    last_node_stamp: Option<f64>,
    /// Odometry accumulated since the last node.
    pending: Option<(Transform2, Covariance3)>,
    gap: bool,
    trace_odometry: Vec<StampedPose>,
    trace_ground_truth: Vec<StampedPose>,
    node_ground_truth: BTreeMap<NodeId, Transform2>,
    stats: Vec<UpdateStats>,
    lost_frames: Vec<f64>,
    posterior_sums: Vec<f64>,
    stm_candidates: usize,
    components: Components,
}

/// Connected components of the graph, grown as links are accepted.
#[derive(Debug, Default)]
struct Components {
    parent: BTreeMap<NodeId, NodeId>,
}

impl Components {
    fn find(&mut self, id: NodeId) -> NodeId {
        let mut root = id;
        while let Some(&p) = self.parent.get(&root) {
            if p == root {
                break;
            }
            root = p;
        }
        let mut cur = id;
        while cur != root {
            let next = self.parent.insert(cur, root).unwrap_or(root);
            cur = next;
        }
        root
    }

    fn union(&mut self, a: NodeId, b: NodeId) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra.max(rb), ra.min(rb));
        }
    }
}

/// Position error of node `id` after aligning every node with ground truth.
fn node_error(
    poses: &BTreeMap<NodeId, Transform2>,
    ground_truth: &BTreeMap<NodeId, Transform2>,
    id: NodeId,
) -> Option<f64> {
    let pairs: Vec<(Point2, Point2)> = ground_truth
        .iter()
        .filter_map(|(n, g)| {
            let p = poses.get(n)?;
            Some((Point2::new(p.x, p.y), Point2::new(g.x, g.y)))
        })
        .collect();
    let (p, g) = (poses.get(&id)?, ground_truth.get(&id)?);
    Some(eval::current_error(&pairs, (Point2::new(p.x, p.y), Point2::new(g.x, g.y))))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl MapUpdater {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let memory_params = MemoryParams::from_config(config);
        let memory = if config.ltm_journal.is_empty() {
            Memory::new(memory_params)
        } else {
            Memory::with_journal(memory_params, Path::new(&config.ltm_journal))?
        };
        Ok(Self {
            config: config.clone(),
            graph: MapGraph::new(),
            vocabulary: Vocabulary::new(),
            filter: HypothesisFilter::new(TransitionModel {
                new_place_self: config.new_place_self_prob,
                ..TransitionModel::default()
            }),
            memory,
            loop_params: LoopParams::from_config(config),
            grid_params: GridParams::from_config(config),
            optimizer_params: OptimizerParams::from_config(config),
            assembler: config.grid_global_assembly.then(|| GridAssembler::new(config.cell_size)),
            next_id: 1,
            session: None,
            last_node: None,
            last_node_stamp: None,
            pending: None,
            gap: false,
            trace_odometry: Vec::new(),
            trace_ground_truth: Vec::new(),
            node_ground_truth: BTreeMap::new(),
            stats: Vec::new(),
            lost_frames: Vec::new(),
            posterior_sums: Vec::new(),
            stm_candidates: 0,
            components: Components::default(),
        })
    }

    pub fn graph(&self) -> &MapGraph {
        &self.graph
    }

    pub fn stats(&self) -> &[UpdateStats] {
        &self.stats
    }

    pub fn filter(&self) -> &HypothesisFilter {
        &self.filter
    }

    /// Handles one odometry message. Returns the update statistics when a
    /// node was created.
    pub fn process(&mut self, msg: OdometryMessage) -> Result<Option<&UpdateStats>> {
        if let Some(&(last, _)) = self.trace_odometry.last() {
            if msg.stamp < last {
                return Err(Error::InvalidInput(format!("frame stamps go back from {last} to {}", msg.stamp)));
            }
        }
        self.trace_odometry.push((msg.stamp, msg.pose));
        self.trace_ground_truth.push((msg.stamp, msg.ground_truth));
        if self.session != Some(msg.session) {
            self.session = Some(msg.session);
            self.last_node = None;
            self.last_node_stamp = None;
            self.pending = None;
            self.gap = false;
        }
        if msg.lost {
            self.lost_frames.push(msg.stamp);
            self.pending = None;
            self.gap = true;
            return Ok(None);
        }
        self.pending = Some(match self.pending {
            None => (msg.increment, msg.covariance),
            Some(p) => accumulate((&p.0, &p.1), (&msg.increment, &msg.covariance)),
        });
        if !should_create_node(self.last_node_stamp, msg.stamp, self.config.detection_rate) {
            return Ok(None);
        }
        self.update(msg).map(Some)
    }

    /// Nodes in `location` of the same component as `id`, within the local
    /// radius of its current pose, nearest first.
    fn local_nodes(&mut self, id: NodeId, location: MemoryLocation) -> Vec<NodeId> {
        let here = self.graph.optimized_poses[&id].translation();
        let root = self.components.find(id);
        let mut near: Vec<(f64, NodeId)> = Vec::new();
        for n in self.graph.ids_in(location) {
            let d = (self.graph.optimized_poses[&n].translation() - here).norm();
            if n != id && d <= self.config.local_radius && self.components.find(n) == root {
                near.push((d, n));
            }
        }
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.into_iter().map(|(_, n)| n).collect()
    }

    fn update(&mut self, msg: OdometryMessage) -> Result<&UpdateStats> {
        let start = Instant::now();
        let mut timings = Timings::default();
        let mut stats = UpdateStats {
            update: self.stats.len(),
            stamp: msg.stamp,
            session: msg.session,
            odometry_lost: self.gap,
            ..Default::default()
        };

        // Node creation, rehearsal and STM.
        let t = Instant::now();
        let id = self.next_id;
        self.next_id += 1;
        stats.node = id;
        let descriptors = Descriptor::strongest(msg.descriptors, self.config.max_features);
        let words = self.vocabulary.quantize(&descriptors, self.config.nndr);
        let mut node = MapNode::new(id, msg.session, msg.stamp, msg.pose);
        node.local_grid = build_local_grid(&msg.grid_scan, &self.grid_params)?;
        node.scan = msg.scan;
        node.descriptors = descriptors;
        node.words = words;
        let (pending_t, pending_c) = self.pending.take().expect("set before every update");
        let previous = self.last_node.filter(|_| !self.gap);
        let prior = match (self.last_node, previous) {
            (_, Some(p)) => self.graph.optimized_poses[&p].compose(&pending_t),
            (Some(last), None) => {
                let l = self.graph.node(last).expect("last node exists");
                self.graph.optimized_poses[&last].compose(&l.odom_pose.relative(&msg.pose))
            }
            (None, None) => msg.pose,
        };
        self.vocabulary.add_node(id, &node.words);
        self.graph.add_node(node)?;
        self.graph.optimized_poses.insert(id, prior);
        self.node_ground_truth.insert(id, msg.ground_truth);
        if let Some(p) = previous {
            self.graph.add_link(Link::new(p, id, LinkKind::Neighbor, pending_t, pending_c))?;
            self.components.union(p, id);
        }
        self.memory.add_to_stm(&mut self.graph, id)?;
        if let Some(p) = previous {
            if self.graph.node(p).is_some_and(|n| n.location == MemoryLocation::Stm) {
                let mut a = self.graph.node(id).unwrap().clone();
                let mut b = self.graph.node(p).unwrap().clone();
                let r = rehearse(&mut a, &mut b, self.memory.params());
                stats.rehearsed = r.merged;
                self.graph.node_mut(id).unwrap().weight = a.weight;
                self.graph.node_mut(p).unwrap().weight = b.weight;
                if r.discard_last {
                    self.memory.discard(&mut self.graph, &mut self.vocabulary, p, id)?;
                    self.node_ground_truth.remove(&p);
                }
            }
        }
        self.memory.move_to_wm(&mut self.graph);
        self.last_node = Some(id);
        self.last_node_stamp = Some(msg.stamp);
        self.gap = false;
        timings.node_creation = ms(t);

        // Loop closure and proximity detection.
        let t = Instant::now();
        let mut new_links: Vec<Link> = Vec::new();
        let mut loop_target = None;
        let mut hypothesis = None;
        let local: Vec<NodeId> = self
            .local_nodes(id, MemoryLocation::Ltm)
            .into_iter()
            .take(self.config.max_retrieved)
            .collect();
        let mut retrieved = self.memory.retrieve(&mut self.graph, &mut self.vocabulary, &local)?;
        if self.config.loop_detection {
            let candidates: BTreeSet<NodeId> = self.graph.ids_in(MemoryLocation::Wm).into_iter().collect();
            let words = self.graph.node(id).unwrap().words.clone();
            let lk = likelihood(&words, &candidates, &self.vocabulary);
            self.filter.update(&lk, &self.graph);
            self.posterior_sums.push(self.filter.sum());
            stats.best_posterior = self.filter.posterior().values().copied().fold(0.0, f64::max);
            if let Some((c, _)) = self.filter.best(self.config.loop_threshold) {
                // The neighborhood of a detected place comes back from LTM
                // whether or not the transform is verified.
                retrieved.extend(self.memory.retrieve_neighbors(&mut self.graph, &mut self.vocabulary, c)?);
                hypothesis = Some(c);
                let target = self.graph.node(c).expect("hypotheses are graph nodes");
                if target.location == MemoryLocation::Stm {
                    self.stm_candidates += 1;
                }
                match estimate_loop_transform(self.graph.node(id).unwrap(), target, &self.loop_params) {
                    Ok(link) => {
                        loop_target = Some(c);
                        new_links.push(link);
                    }
                    Err(e) => log::debug!("loop {id} -> {c} rejected: {e}"),
                }
            }
        }
        let snapshot = self.graph.optimized_poses.clone();
        if self.config.proximity_by_space {
            if let (Some(c), Some(l)) = (loop_target, new_links.first()) {
                // Proximity search from where the loop closure puts the node.
                let guess = self.graph.optimized_poses[&c].compose(&l.transform.inverse());
                self.graph.optimized_poses.insert(id, guess);
            }
            for l in detect_proximity(&self.graph, id, &self.loop_params) {
                if Some(l.to) != loop_target {
                    new_links.push(l);
                }
            }
            self.graph.optimized_poses.insert(id, prior);
        }
        timings.detection = ms(t);

        // Optimization and link rejection.
        let t = Instant::now();
        for l in &new_links {
            self.graph.add_link(l.clone())?;
        }
        if !new_links.is_empty() && self.config.optimize {
            let sol = optimizer::optimize_component_of(&self.graph, id, &self.optimizer_params)?;
            let check = optimizer::check_links(&self.graph, &sol.poses, self.config.optimize_max_error);
            if check.accepted {
                self.graph.optimized_poses.extend(sol.poses);
                for l in &new_links {
                    self.components.union(l.from, l.to);
                }
            } else {
                if let Some((key, ratio)) = check.worst {
                    log::debug!("node {id}: link {key:?} moved {ratio:.2}x its allowance, rejecting new links");
                }
                for l in &new_links {
                    self.graph.remove_link(l.from, l.to, l.kind);
                }
                self.graph.optimized_poses = snapshot;
                new_links.clear();
                loop_target = None;
                stats.rejected = true;
            }
        }
        stats.loop_accepted = loop_target.is_some();
        timings.optimization = ms(t);

        // Global grid.
        let t = Instant::now();
        if let Some(asm) = self.assembler.as_mut() {
            let active: BTreeMap<NodeId, Transform2> = self
                .graph
                .active_ids()
                .into_iter()
                .map(|i| (i, self.graph.optimized_poses[&i]))
                .collect();
            let mut before = active.clone();
            before.remove(&id);
            if asm.is_stale(&before, 1e-6) {
                let grids: Vec<_> = active.keys().map(|&i| (i, &self.graph.node(i).unwrap().local_grid)).collect();
                asm.rebuild(&active, &grids)?;
            } else {
                asm.add(id, active[&id], &self.graph.node(id).unwrap().local_grid)?;
            }
        }
        timings.map_assembly = ms(t);

        // Memory management.
        let t = Instant::now();
        let mut exempt: BTreeSet<NodeId> = retrieved.iter().copied().collect();
        // The neighborhoods of this update's hypothesis and link targets stay in WM.
        for c in hypothesis.into_iter().chain(new_links.iter().map(|l| l.to)) {
            let near = self.graph.bfs_depths(c, self.memory.params().retrieval_depth, |_| true);
            exempt.extend(near.into_keys());
        }
        let wm_size = match self.config.memory_threshold {
            0 => self.graph.ids_in(MemoryLocation::Wm).len(),
            m => m,
        };
        let cap = (wm_size as f64 * self.config.local_immunization_ratio).ceil() as usize;
        exempt.extend(self.local_nodes(id, MemoryLocation::Wm).into_iter().take(cap));
        let transferred = self.memory.enforce(&mut self.graph, &mut self.vocabulary, ms(start), &exempt)?;
        timings.memory = ms(t);
        timings.total = ms(start);

        stats.transferred = transferred.len();
        stats.retrieved = retrieved.len();
        stats.stm = self.memory.stm().len();
        stats.wm = self.graph.ids_in(MemoryLocation::Wm).len();
        stats.ltm = self.graph.ids_in(MemoryLocation::Ltm).len();
        let (n, l, p) = (
            self.graph.link_count(LinkKind::Neighbor),
            self.graph.link_count(LinkKind::LoopClosure),
            self.graph.link_count(LinkKind::Proximity),
        );
        (stats.neighbor_links, stats.loop_links, stats.proximity_links) = (n, l, p);
        stats.ate = self.current_ate(id);
        stats.timings = timings;
        self.stats.push(stats);
        Ok(self.stats.last().unwrap())
    }

    /// Error of the node's pose after aligning all nodes so far.
    fn current_ate(&self, id: NodeId) -> f64 {
        node_error(&self.graph.optimized_poses, &self.node_ground_truth, id).expect("node has a pose and ground truth")
    }

    /// Ends the run. With optimization on, the whole graph (LTM included)
    /// is optimized once more for the final map; the per-update statistics
    /// keep the online estimates.
    pub fn finish(mut self) -> Result<RunTrace> {
        let grid = self.assembler.as_ref().map(|a| a.grid());
        if self.config.optimize && !self.graph.is_empty() {
            let sol = optimizer::optimize_global(&self.graph, &self.optimizer_params)?;
            self.graph.optimized_poses.extend(sol.poses);
        }
        Ok(RunTrace {
            config: self.config,
            graph: self.graph,
            stats: self.stats,
            odometry: self.trace_odometry,
            ground_truth: self.trace_ground_truth,
            node_ground_truth: self.node_ground_truth,
            lost_frames: self.lost_frames,
            posterior_sums: self.posterior_sums,
            stm_candidates: self.stm_candidates,
            grid,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Run both stages on the calling thread.
    pub deterministic: bool,
    /// Capacity of the queue between the stages.
    pub queue_capacity: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            deterministic: true,
            queue_capacity: 16,
        }
    }
}

/// Maps a stamp-ordered frame sequence.
pub fn run_slam(frames: &[SensorFrame], config: &Config, options: &RunOptions) -> Result<RunTrace> {
    let mut updater = MapUpdater::new(config)?;
    let mut odometry = OdometryStage::new(config);
    if options.deterministic {
        for f in frames {
            updater.process(odometry.process(f))?;
        }
        return updater.finish();
    }
    let (tx, rx) = mpsc::sync_channel::<OdometryMessage>(options.queue_capacity.max(1));
    std::thread::scope(|scope| {
        scope.spawn(move || {
            for f in frames {
                if tx.send(odometry.process(f)).is_err() {
                    break;
                }
            }
        });
        for msg in rx {
            updater.process(msg)?;
        }
        Ok::<(), Error>(())
    })?;
    updater.finish()
}

/// Default output directory, overridable with `GSLAM_OUTPUT_DIR`.
pub fn output_dir(default: &Path) -> PathBuf {
    std::env::var_os("GSLAM_OUTPUT_DIR").map(PathBuf::from).unwrap_or_else(|| default.to_path_buf())
}
