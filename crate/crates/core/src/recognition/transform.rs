use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Covariance3, Point2, Transform2};
use crate::graph::{Link, LinkKind, MapGraph, MapNode, MemoryLocation, NodeId};
use crate::registration::{icp, procrustes, IcpParams};

use super::vocabulary::{squared_distance, Descriptor};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopParams {
    pub nndr: f64,
    pub min_inliers: usize,
    pub ransac_iterations: usize,
    pub inlier_distance: f64,
    pub seed: u64,
    pub icp: IcpParams,
    pub proximity_radius: f64,
    /// Proximity candidates must be fewer links away than this (0: no limit).
    pub proximity_max_depth: usize,
}

impl LoopParams {
    pub fn from_config(c: &crate::Config) -> Self {
        Self {
            nndr: c.nndr,
            min_inliers: c.min_inliers,
            ransac_iterations: c.ransac_iterations,
            inlier_distance: c.inlier_distance,
            seed: c.seed,
            icp: IcpParams::from_config(c),
            proximity_radius: c.proximity_radius,
            proximity_max_depth: c.proximity_max_graph_depth,
        }
    }
}

impl Default for LoopParams {
    fn default() -> Self {
        Self::from_config(&crate::Config::default())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoopRejection {
    #[error("only {got} inliers, {needed} required")]
    TooFewInliers { got: usize, needed: usize },
    #[error("scan registration did not converge")]
    RegistrationFailed,
    #[error("node has no scan")]
    MissingScan,
}

/// Index pairs `(i, j)` where descriptor `j` of `b` passes the NNDR test as
/// the match of descriptor `i` of `a`.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], nndr: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if b.len() < 2 {
        return out;
    }
    for (i, da) in a.iter().enumerate() {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (j, db) in b.iter().enumerate() {
            let d = squared_distance(&da.vector, &db.vector);
            if d < best.1 {
                second = best.1;
                best = (j, d);
            } else if d < second {
                second = d;
            }
        }
        if second > 0.0 && best.1.sqrt() < nndr * second.sqrt() {
            out.push((i, best.0));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    /// Maps the first point of each pair onto the second.
    pub transform: Transform2,
    pub inliers: Vec<usize>,
}

/// Two-point RANSAC for a rigid transform mapping `pairs[k].0` onto
/// `pairs[k].1`. The returned transform is the least-squares fit over the
/// returned inliers.
pub fn ransac_rigid(
    pairs: &[(Point2, Point2)],
    iterations: usize,
    threshold: f64,
    rng: &mut impl Rng,
) -> Option<RansacResult> {
    if pairs.len() < 2 {
        return None;
    }
    let inliers_of = |t: &Transform2| -> Vec<usize> {
        pairs
            .iter()
            .enumerate()
            .filter(|(_, (s, d))| (t.transform_point(s) - d).norm() <= threshold)
            .map(|(k, _)| k)
            .collect()
    };
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..iterations {
        let i = rng.random_range(0..pairs.len());
        let mut j = rng.random_range(0..pairs.len() - 1);
        if j >= i {
            j += 1;
        }
        if (pairs[i].0 - pairs[j].0).norm() < 1e-6 {
            continue;
        }
        let Some(t) = procrustes(&[pairs[i].0, pairs[j].0], &[pairs[i].1, pairs[j].1]) else {
            continue;
        };
        let inl = inliers_of(&t);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    if best.len() < 2 {
        return None;
    }
    let src: Vec<Point2> = best.iter().map(|&k| pairs[k].0).collect();
    let dst: Vec<Point2> = best.iter().map(|&k| pairs[k].1).collect();
    Some(RansacResult {
        transform: procrustes(&src, &dst)?,
        inliers: best,
    })
}

fn rotate_covariance(c: &Covariance3, theta: f64) -> Covariance3 {
    let (s, co) = theta.sin_cos();
    let j = Matrix3::new(co, -s, 0.0, s, co, 0.0, 0.0, 0.0, 1.0);
    c.transformed(&j).unwrap_or(*c)
}

/// Registers `b`'s scan into `a`'s frame starting from `guess` and turns the
/// result into a link from `a` to `b`.
fn refine(a: &MapNode, b: &MapNode, guess: Transform2, kind: LinkKind, params: &IcpParams) -> Result<Link, LoopRejection> {
    if a.scan.is_empty() || b.scan.is_empty() {
        return Err(LoopRejection::MissingScan);
    }
    let r = icp(&b.scan, &a.scan, guess, params).map_err(|_| LoopRejection::RegistrationFailed)?;
    if !r.converged {
        return Err(LoopRejection::RegistrationFailed);
    }
    let covariance = rotate_covariance(&r.covariance, r.transform.theta);
    Ok(Link::new(a.id, b.id, kind, r.transform, covariance))
}

/// Loop closure link from `a` (new node) to `b` (matched node): landmark
/// matches, RANSAC, then ICP refinement of the visual estimate.
pub fn estimate_loop_transform(a: &MapNode, b: &MapNode, params: &LoopParams) -> Result<Link, LoopRejection> {
    let matches = match_descriptors(&a.descriptors, &b.descriptors, params.nndr);
    if matches.len() < params.min_inliers {
        return Err(LoopRejection::TooFewInliers {
            got: matches.len(),
            needed: params.min_inliers,
        });
    }
    let pairs: Vec<(Point2, Point2)> = matches
        .iter()
        .map(|&(i, j)| (b.descriptors[j].position, a.descriptors[i].position))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ a.id.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.id);
    let ransac = ransac_rigid(&pairs, params.ransac_iterations, params.inlier_distance, &mut rng);
    let got = ransac.as_ref().map_or(0, |r| r.inliers.len());
    let ransac = match ransac {
        Some(r) if got >= params.min_inliers => r,
        _ => {
            return Err(LoopRejection::TooFewInliers {
                got,
                needed: params.min_inliers,
            })
        }
    };
    refine(a, b, ransac.transform, LinkKind::LoopClosure, &params.icp)
}

/// Proximity link from `current` to the closest WM node within the metric
/// radius and graph depth limit, using optimized poses as the ICP guess.
/// Nodes already linked to `current` are skipped.
pub fn detect_proximity(graph: &MapGraph, current: NodeId, params: &LoopParams) -> Vec<Link> {
    let (Some(node), Some(pose)) = (graph.node(current), graph.optimized_poses.get(&current)) else {
        return Vec::new();
    };
    let depth_limit = match params.proximity_max_depth {
        0 => usize::MAX,
        d => d - 1,
    };
    let depths = graph.bfs_depths(current, depth_limit, |n| n.location != MemoryLocation::Ltm);
    let linked = graph.neighbors(current);
    let mut candidates: Vec<(f64, NodeId)> = depths
        .keys()
        .filter(|&&id| id != current && !linked.contains(&id))
        .filter_map(|&id| {
            let n = graph.node(id)?;
            if n.location != MemoryLocation::Wm || n.scan.is_empty() {
                return None;
            }
            let p = graph.optimized_poses.get(&id)?;
            let d = (p.translation() - pose.translation()).norm();
            (d <= params.proximity_radius).then_some((d, id))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, id) in candidates {
        let other = graph.node(id).unwrap();
        let guess = pose.relative(&graph.optimized_poses[&id]);
        if let Ok(link) = refine(node, other, guess, LinkKind::Proximity, &params.icp) {
            return vec![link];
        }
    }
    Vec::new()
}
