//! SE(2) pose-graph optimization.
//!
//! Each link `i → j` with measurement `z` contributes the residual
//! `e = z⁻¹ ∘ (xᵢ⁻¹ ∘ xⱼ)` read as (x, y, θ), weighted by the inverse link
//! covariance. Levenberg-Marquardt with a sparse Cholesky solve minimizes
//! the sum; each connected component of active (STM/WM) nodes is solved on
//! its own with its lowest id held fixed. LTM nodes keep their last pose.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DVector, Matrix3, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Transform2};
use crate::graph::{Link, LinkKind, MapGraph, MemoryLocation, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerParams {
    pub iterations: usize,
    /// Stop once the relative chi² decrease falls below this.
    pub epsilon: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            iterations: 100,
            epsilon: 1e-6,
        }
    }
}

impl OptimizerParams {
    pub fn from_config(c: &Config) -> Self {
        Self {
            iterations: c.optimizer_iterations,
            epsilon: c.optimizer_epsilon,
        }
    }
}

/// Residual of a measurement `z` between poses `xi` and `xj`.
pub fn edge_error(xi: &Transform2, xj: &Transform2, z: &Transform2) -> Vector3<f64> {
    let (si, ci) = xi.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    let rx = ci * dx + si * dy - z.x;
    let ry = -si * dx + ci * dy - z.y;
    Vector3::new(
        cz * rx + sz * ry,
        -sz * rx + cz * ry,
        normalize_angle(xj.theta - xi.theta - z.theta),
    )
}

/// Jacobians of [`edge_error`] with respect to `xi` and `xj`.
pub fn edge_jacobians(xi: &Transform2, xj: &Transform2, z: &Transform2) -> (Matrix3<f64>, Matrix3<f64>) {
    let (si, ci) = xi.theta.sin_cos();
    let (sz, cz) = z.theta.sin_cos();
    let dx = xj.x - xi.x;
    let dy = xj.y - xi.y;
    // Rzᵀ Riᵀ
    let a = nalgebra::Matrix2::new(cz, sz, -sz, cz) * nalgebra::Matrix2::new(ci, si, -si, ci);
    // Rzᵀ dRiᵀ/dθ (tj − ti)
    let d = nalgebra::Matrix2::new(cz, sz, -sz, cz) * nalgebra::Vector2::new(-si * dx + ci * dy, -ci * dx - si * dy);
    let ji = Matrix3::new(-a[(0, 0)], -a[(0, 1)], d.x, -a[(1, 0)], -a[(1, 1)], d.y, 0.0, 0.0, -1.0);
    let jj = Matrix3::new(a[(0, 0)], a[(0, 1)], 0.0, a[(1, 0)], a[(1, 1)], 0.0, 0.0, 0.0, 1.0);
    (ji, jj)
}

/// One constraint in optimizer form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub measurement: Transform2,
    pub information: Matrix3<f64>,
}

impl From<&Link> for Edge {
    fn from(l: &Link) -> Self {
        Self {
            from: l.from,
            to: l.to,
            measurement: l.transform,
            information: l.covariance.information(),
        }
    }
}

pub fn chi2(poses: &BTreeMap<NodeId, Transform2>, edges: &[Edge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = edge_error(&poses[&e.from], &poses[&e.to], &e.measurement);
            (r.transpose() * e.information * r)[0]
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub poses: BTreeMap<NodeId, Transform2>,
    pub initial_chi2: f64,
    pub chi2: f64,
    /// chi² after each accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Solves one connected problem. `initial` must hold a pose for every
/// endpoint of `edges`; `fixed` keeps its initial pose exactly.
pub fn solve(initial: &BTreeMap<NodeId, Transform2>, edges: &[Edge], fixed: NodeId, params: &OptimizerParams) -> Result<Solution> {
    for e in edges {
        if !initial.contains_key(&e.from) || !initial.contains_key(&e.to) {
            return Err(Error::Graph(format!("edge {} -> {} has no initial pose", e.from, e.to)));
        }
    }
    if !initial.contains_key(&fixed) {
        return Err(Error::Graph(format!("fixed node {fixed} has no initial pose")));
    }
    let free: Vec<NodeId> = initial.keys().copied().filter(|&id| id != fixed).collect();
    let index: BTreeMap<NodeId, usize> = reverse_cuthill_mckee(&free, edges)
        .into_iter()
        .enumerate()
        .map(|(k, id)| (id, k))
        .collect();
    let dim = 3 * index.len();
    let mut poses = initial.clone();
    let initial_chi2 = chi2(&poses, edges);
    let mut current = initial_chi2;
    let mut history = Vec::new();
    let mut iterations = 0;
    if dim == 0 || edges.is_empty() || current == 0.0 {
        return Ok(Solution { poses, initial_chi2, chi2: current, history, iterations });
    }

    let mut lambda = 1e-6;
    let mut factor: Option<CscCholesky<f64>> = None;
    while iterations < params.iterations {
        iterations += 1;
        let (h, b) = normal_equations(&poses, edges, &index);
        let mut improved = false;
        for _ in 0..10 {
            let Some(step) = sparse_solve(&h, &b, dim, lambda, &mut factor) else {
                lambda *= 10.0;
                continue;
            };
            let mut candidate = poses.clone();
            for (&id, &k) in &index {
                let p = candidate.get_mut(&id).unwrap();
                p.x -= step[3 * k];
                p.y -= step[3 * k + 1];
                p.theta = normalize_angle(p.theta - step[3 * k + 2]);
            }
            let c = chi2(&candidate, edges);
            if c.is_finite() && c <= current {
                let decrease = (current - c) / current.max(f64::MIN_POSITIVE);
                poses = candidate;
                current = c;
                history.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                improved = decrease >= params.epsilon;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || current == 0.0 {
            break;
        }
    }
    Ok(Solution { poses, initial_chi2, chi2: current, history, iterations })
}

/// Block entries of H (keyed by block row and column) and the gradient b
/// over the free variables.
fn normal_equations(
    poses: &BTreeMap<NodeId, Transform2>,
    edges: &[Edge],
    index: &BTreeMap<NodeId, usize>,
) -> (BTreeMap<(usize, usize), Matrix3<f64>>, DVector<f64>) {
    let mut h: BTreeMap<(usize, usize), Matrix3<f64>> = BTreeMap::new();
    let mut b = DVector::zeros(3 * index.len());
    for e in edges {
        let (xi, xj) = (&poses[&e.from], &poses[&e.to]);
        let r = edge_error(xi, xj, &e.measurement);
        let (ji, jj) = edge_jacobians(xi, xj, &e.measurement);
        let blocks = [(index.get(&e.from), ji), (index.get(&e.to), jj)];
        for (a, ja) in &blocks {
            let Some(&a) = a else { continue };
            let mut seg = b.fixed_rows_mut::<3>(3 * a);
            seg += ja.transpose() * e.information * r;
            for (c, jc) in &blocks {
                let Some(&c) = c else { continue };
                *h.entry((a, c)).or_insert_with(Matrix3::zeros) += ja.transpose() * e.information * jc;
            }
        }
    }
    (h, b)
}

/// Solves `(H + λ·diag(H)) x = b`. The block pattern of H is the same on
/// every call of one solve, so the symbolic factorization is reused.
fn sparse_solve(
    h: &BTreeMap<(usize, usize), Matrix3<f64>>,
    b: &DVector<f64>,
    dim: usize,
    lambda: f64,
    factor: &mut Option<CscCholesky<f64>>,
) -> Option<DVector<f64>> {
    let mut coo = CooMatrix::new(dim, dim);
    for (&(r, c), blk) in h {
        let mut blk = *blk;
        if r == c {
            for k in 0..3 {
                blk[(k, k)] += lambda * blk[(k, k)].abs().max(1e-9);
            }
        }
        coo.push_matrix(3 * r, 3 * c, &blk);
    }
    let csc = CscMatrix::from(&coo);
    let ok = match factor.as_mut() {
        Some(f) => f.refactor(csc.values()).is_ok(),
        None => {
            *factor = CscCholesky::factor(&csc).ok();
            factor.is_some()
        }
    };
    if !ok {
        // A failed numeric factorization leaves the factor unusable.
        *factor = None;
        return None;
    }
    let x = factor.as_ref()?.solve(b).column(0).into_owned();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Reverse Cuthill-McKee order of `ids` over the edge graph, which keeps the
/// Cholesky fill small when loop links join distant node ids.
fn reverse_cuthill_mckee(ids: &[NodeId], edges: &[Edge]) -> Vec<NodeId> {
    let members: BTreeSet<NodeId> = ids.iter().copied().collect();
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = ids.iter().map(|&i| (i, BTreeSet::new())).collect();
    for e in edges {
        if e.from != e.to && members.contains(&e.from) && members.contains(&e.to) {
            adj.get_mut(&e.from).unwrap().insert(e.to);
            adj.get_mut(&e.to).unwrap().insert(e.from);
        }
    }
    let degree = |i: &NodeId| adj[i].len();
    let mut starts: Vec<NodeId> = ids.to_vec();
    starts.sort_by_key(|i| (degree(i), *i));
    let mut seen = BTreeSet::new();
    let mut order = Vec::with_capacity(ids.len());
    for s in starts {
        if !seen.insert(s) {
            continue;
        }
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            let mut next: Vec<NodeId> = adj[&i].iter().copied().filter(|n| !seen.contains(n)).collect();
            next.sort_by_key(|n| (degree(n), *n));
            for n in next {
                seen.insert(n);
                queue.push_back(n);
            }
        }
    }
    order.reverse();
    order
}

/// Initial pose for every node of `component`: the graph's current
/// optimized pose where known, otherwise propagated over links from a node
/// that has one (the lowest id falls back to its odometry pose).
pub fn initial_guess(graph: &MapGraph, component: &[NodeId]) -> BTreeMap<NodeId, Transform2> {
    let members: BTreeSet<NodeId> = component.iter().copied().collect();
    let mut out: BTreeMap<NodeId, Transform2> = component
        .iter()
        .filter_map(|id| graph.optimized_poses.get(id).map(|p| (*id, *p)))
        .collect();
    if out.is_empty() {
        if let Some(&first) = component.first() {
            out.insert(first, graph.node(first).map(|n| n.odom_pose).unwrap_or_default());
        }
    }
    let mut queue: VecDeque<NodeId> = out.keys().copied().collect();
    while let Some(id) = queue.pop_front() {
        let base = out[&id];
        for l in graph.links_of(id) {
            let (other, t) = if l.from == id { (l.to, l.transform) } else { (l.from, l.transform.inverse()) };
            if members.contains(&other) && !out.contains_key(&other) {
                out.insert(other, base.compose(&t));
                queue.push_back(other);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSolution {
    /// Poses of all optimized nodes.
    pub poses: BTreeMap<NodeId, Transform2>,
    pub chi2: f64,
    pub iterations: usize,
    /// Anchor of each optimized component.
    pub anchors: Vec<NodeId>,
}

fn solve_component(graph: &MapGraph, comp: &[NodeId], params: &OptimizerParams) -> Result<Solution> {
    let members: BTreeSet<NodeId> = comp.iter().copied().collect();
    let mut edges: Vec<Edge> = Vec::new();
    for &id in comp {
        for l in graph.links_of(id) {
            // Each link once, from its source side.
            if l.from == id && members.contains(&l.to) {
                edges.push(Edge::from(l));
            }
        }
    }
    solve(&initial_guess(graph, comp), &edges, comp[0], params)
}

/// Optimizes every connected component of active nodes.
pub fn optimize(graph: &MapGraph, params: &OptimizerParams) -> Result<GraphSolution> {
    optimize_components(graph, graph.components(|n| n.location != MemoryLocation::Ltm), params)
}

/// Optimizes every connected component over all nodes, LTM included, as
/// done once when a map is closed.
pub fn optimize_global(graph: &MapGraph, params: &OptimizerParams) -> Result<GraphSolution> {
    optimize_components(graph, graph.components(|_| true), params)
}

fn optimize_components(graph: &MapGraph, comps: Vec<Vec<NodeId>>, params: &OptimizerParams) -> Result<GraphSolution> {
    let mut out = GraphSolution { poses: BTreeMap::new(), chi2: 0.0, iterations: 0, anchors: Vec::new() };
    for comp in comps {
        let sol = solve_component(graph, &comp, params)?;
        out.chi2 += sol.chi2;
        out.iterations = out.iterations.max(sol.iterations);
        out.anchors.push(comp[0]);
        out.poses.extend(sol.poses);
    }
    Ok(out)
}

/// Optimizes only the active component containing `member`.
pub fn optimize_component_of(graph: &MapGraph, member: NodeId, params: &OptimizerParams) -> Result<GraphSolution> {
    let comp: Vec<NodeId> = graph
        .bfs_depths(member, usize::MAX, |n| n.location != MemoryLocation::Ltm)
        .into_keys()
        .collect();
    if comp.is_empty() {
        return Err(Error::Graph(format!("unknown node {member}")));
    }
    let sol = solve_component(graph, &comp, params)?;
    Ok(GraphSolution { poses: sol.poses, chi2: sol.chi2, iterations: sol.iterations, anchors: vec![comp[0]] })
}

/// Outcome of the post-optimization consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkCheck {
    pub accepted: bool,
    /// Link with the largest deviation relative to its allowance, and the
    /// ratio `deviation / (factor · σ_t)`.
    pub worst: Option<((NodeId, NodeId, LinkKind), f64)>,
}

/// Checks every link between nodes of `poses`: the squared difference between
/// its measured translation and the optimized relative translation must not
/// exceed `factor²` times its translational variance. A factor of 0 accepts.
pub fn check_links(graph: &MapGraph, poses: &BTreeMap<NodeId, Transform2>, factor: f64) -> LinkCheck {
    if factor <= 0.0 {
        return LinkCheck { accepted: true, worst: None };
    }
    let mut worst: Option<((NodeId, NodeId, LinkKind), f64)> = None;
    let links = poses.keys().flat_map(|&id| graph.links_of(id).filter(move |l| l.from == id));
    for l in links {
        let (Some(a), Some(b)) = (poses.get(&l.from), poses.get(&l.to)) else { continue };
        let rel = a.relative(b);
        let dev2 = (rel.x - l.transform.x).powi(2) + (rel.y - l.transform.y).powi(2);
        let allowed = factor * factor * l.covariance.translational_variance();
        let ratio = (dev2 / allowed).sqrt();
        if worst.as_ref().is_none_or(|w| ratio > w.1) {
            worst = Some((l.key(), ratio));
        }
    }
    LinkCheck { accepted: worst.as_ref().is_none_or(|w| w.1 <= 1.0), worst }
}

/// Text dump of the active problem: `VERTEX_SE2 id x y θ`, `FIX id` for
/// each anchor and `EDGE_SE2 from to x y θ` followed by the information
/// upper triangle (xx xy xθ yy yθ θθ).
pub fn to_g2o(graph: &MapGraph) -> String {
    let mut s = String::new();
    let ids: BTreeSet<NodeId> = graph.active_ids().into_iter().collect();
    for &id in &ids {
        let p = graph
            .optimized_poses
            .get(&id)
            .copied()
            .unwrap_or_else(|| graph.node(id).unwrap().odom_pose);
        let _ = writeln!(s, "VERTEX_SE2 {id} {:?} {:?} {:?}", p.x, p.y, p.theta);
    }
    for comp in graph.components(|n| n.location != MemoryLocation::Ltm) {
        let _ = writeln!(s, "FIX {}", comp[0]);
    }
    for l in graph.links().filter(|l| ids.contains(&l.from) && ids.contains(&l.to)) {
        let i = l.covariance.information();
        let _ = writeln!(
            s,
            "EDGE_SE2 {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            l.from,
            l.to,
            l.transform.x,
            l.transform.y,
            l.transform.theta,
            i[(0, 0)],
            i[(0, 1)],
            i[(0, 2)],
            i[(1, 1)],
            i[(1, 2)],
            i[(2, 2)]
        );
    }
    s
}
