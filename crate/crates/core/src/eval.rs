//! Trajectory error and per-update statistics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Transform2};
use crate::registration::procrustes;

/// Stamp association tolerance in seconds.
pub const STAMP_TOLERANCE: f64 = 0.02;

pub type StampedPose = (f64, Transform2);

/// Pairs every estimated pose with the ground-truth pose of nearest stamp,
/// dropping pairs further apart than `tolerance`. Ground truth must be
/// stamp-sorted.
pub fn associate(estimated: &[StampedPose], ground_truth: &[StampedPose], tolerance: f64) -> Vec<(Point2, Point2)> {
    let mut out = Vec::new();
    if ground_truth.is_empty() {
        return out;
    }
    for (t, p) in estimated {
        let k = ground_truth.partition_point(|(s, _)| s < t);
        let best = [k.checked_sub(1), (k < ground_truth.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (ground_truth[a].0 - t).abs().total_cmp(&(ground_truth[b].0 - t).abs()));
        if let Some(i) = best {
            if (ground_truth[i].0 - t).abs() <= tolerance {
                let g = &ground_truth[i].1;
                out.push((Point2::new(p.x, p.y), Point2::new(g.x, g.y)));
            }
        }
    }
    out
}

/// Rigid transform taking estimated positions onto ground truth in the
/// least-squares sense (no scale).
pub fn align(pairs: &[(Point2, Point2)]) -> Transform2 {
    let (src, dst): (Vec<Point2>, Vec<Point2>) = pairs.iter().copied().unzip();
    procrustes(&src, &dst).unwrap_or_else(|| {
        // All estimated positions coincide: only a translation is defined.
        let n = pairs.len().max(1) as f64;
        let d = pairs.iter().fold(nalgebra::Vector2::zeros(), |a, (p, q)| a + (q - p)) / n;
        Transform2::new(d.x, d.y, 0.0)
    })
}

pub fn rmse(pairs: &[(Point2, Point2)], t: &Transform2) -> f64 {
    let sum: f64 = pairs.iter().map(|(p, q)| (t.transform_point(p) - q).norm_squared()).sum();
    (sum / pairs.len() as f64).sqrt()
}

/// Absolute trajectory error, RMSE over stamp-matched positions.
pub fn ate_rmse(estimated: &[StampedPose], ground_truth: &[StampedPose], align_first: bool) -> Result<f64> {
    let pairs = associate(estimated, ground_truth, STAMP_TOLERANCE);
    if pairs.len() < 2 {
        return Err(Error::Evaluation(format!(
            "need at least 2 stamp-matched poses, found {}",
            pairs.len()
        )));
    }
    let t = if align_first { align(&pairs) } else { Transform2::identity() };
    Ok(rmse(&pairs, &t))
}

/// Error of the current position after aligning the trajectory so far
/// (`pairs`, estimate then ground truth) onto ground truth.
pub fn current_error(pairs: &[(Point2, Point2)], current: (Point2, Point2)) -> f64 {
    let t = if pairs.is_empty() { Transform2::identity() } else { align(pairs) };
    (t.transform_point(&current.0) - current.1).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteSummary {
    pub end: f64,
    pub max: f64,
}

pub fn summarize(series: &[f64]) -> Option<AteSummary> {
    Some(AteSummary {
        end: *series.last()?,
        max: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Durations in milliseconds of the map-update stages of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub node_creation: f64,
    pub detection: f64,
    pub optimization: f64,
    pub map_assembly: f64,
    pub memory: f64,
    pub total: f64,
}

impl Timings {
    pub fn bucket_sum(&self) -> f64 {
        self.node_creation + self.detection + self.optimization + self.map_assembly + self.memory
    }
}

/// One map update of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub update: usize,
    pub stamp: f64,
    pub node: u64,
    pub session: u32,
    pub stm: usize,
    pub wm: usize,
    pub ltm: usize,
    pub neighbor_links: usize,
    pub loop_links: usize,
    pub proximity_links: usize,
    /// Posterior of the best hypothesis, 0 when there is none.
    pub best_posterior: f64,
    pub loop_accepted: bool,
    pub rejected: bool,
    pub transferred: usize,
    pub retrieved: usize,
    pub rehearsed: bool,
    /// Odometry was lost since the previous update.
    pub odometry_lost: bool,
    pub ate: f64,
    pub timings: Timings,
}

pub const STATS_HEADER: &str = "update,stamp,node,session,stm,wm,ltm,neighbor_links,loop_links,proximity_links,best_posterior,loop_accepted,rejected,transferred,retrieved,rehearsed,odometry_lost,ate";

pub const TIMING_HEADER: &str = "update,node,wm,node_creation_ms,detection_ms,optimization_ms,map_assembly_ms,memory_ms,total_ms";

/// Stats CSV. Columns follow [`STATS_HEADER`]; booleans are 0/1.
pub fn stats_csv(stats: &[UpdateStats]) -> String {
    let mut s = format!("{STATS_HEADER}\n");
    for u in stats {
        let _ = writeln!(
            s,
            "{},{:?},{},{},{},{},{},{},{},{},{:?},{},{},{},{},{},{},{:?}",
            u.update,
            u.stamp,
            u.node,
            u.session,
            u.stm,
            u.wm,
            u.ltm,
            u.neighbor_links,
            u.loop_links,
            u.proximity_links,
            u.best_posterior,
            u.loop_accepted as u8,
            u.rejected as u8,
            u.transferred,
            u.retrieved,
            u.rehearsed as u8,
            u.odometry_lost as u8,
            u.ate
        );
    }
    s
}

/// Timing CSV. Wall-clock values, so it is not part of the reproducible
/// outputs.
pub fn timing_csv(stats: &[UpdateStats]) -> String {
    let mut s = format!("{TIMING_HEADER}\n");
    for u in stats {
        let t = &u.timings;
        let _ = writeln!(
            s,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            u.update, u.node, u.wm, t.node_creation, t.detection, t.optimization, t.map_assembly, t.memory, t.total
        );
    }
    s
}

/// Reads the `ate` column back from a stats CSV.
pub fn ate_column(csv: &str) -> Result<Vec<f64>> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty stats file".into()))?;
    let col = header
        .split(',')
        .position(|c| c == "ate")
        .ok_or_else(|| Error::Format("stats file has no 'ate' column".into()))?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { line: i + 2, msg: "bad ate value".into() })
        })
        .collect()
}

/// Least-squares slope of `values` against their index.
pub fn slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(n: usize) -> Vec<StampedPose> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, Transform2::new(t.cos() * 3.0 + t, t.sin() * 2.0, t))
            })
            .collect()
    }

    #[test]
    fn identical_is_zero() {
        let gt = track(50);
        assert_eq!(ate_rmse(&gt, &gt, true).unwrap(), 0.0);
        assert_eq!(ate_rmse(&gt, &gt, false).unwrap(), 0.0);
    }

    #[test]
    fn rigid_offset_is_absorbed() {
        let gt = track(50);
        let t = Transform2::new(4.0, -2.0, 0.7);
        let est: Vec<_> = gt.iter().map(|(s, p)| (*s, t.compose(p))).collect();
        assert!(ate_rmse(&est, &gt, true).unwrap() < 1e-9);
    }

    #[test]
    fn unaligned_constant_offset() {
        let gt = track(50);
        let est: Vec<_> = gt.iter().map(|(s, p)| (*s, Transform2::new(p.x + 1.0, p.y, p.theta))).collect();
        assert_eq!(ate_rmse(&est, &gt, false).unwrap(), 1.0);
    }

    #[test]
    fn association() {
        let gt = track(10);
        let est = vec![(0.31, Transform2::identity()), (0.5, Transform2::identity()), (5.0, Transform2::identity())];
        assert_eq!(associate(&est, &gt, 0.02).len(), 2);
        let far = vec![(100.0, Transform2::identity()), (200.0, Transform2::identity())];
        assert!(matches!(ate_rmse(&far, &gt, true), Err(Error::Evaluation(_))));
    }

    #[test]
    fn slope_of_line() {
        let v: Vec<f64> = (0..20).map(|i| 2.0 + 0.5 * i as f64).collect();
        assert!((slope(&v) - 0.5).abs() < 1e-12);
        assert_eq!(slope(&[3.0; 8]), 0.0);
    }

    #[test]
    fn csv_roundtrip_of_ate() {
        let stats = vec![
            UpdateStats { update: 0, ate: 0.25, ..Default::default() },
            UpdateStats { update: 1, ate: 0.125, loop_accepted: true, ..Default::default() },
        ];
        let csv = stats_csv(&stats);
        assert!(csv.starts_with(STATS_HEADER));
        assert_eq!(ate_column(&csv).unwrap(), vec![0.25, 0.125]);
        let s = summarize(&[0.3, 0.5, 0.1]).unwrap();
        assert_eq!((s.end, s.max), (0.1, 0.5));
    }

    proptest! {
        #[test]
        fn symmetric_without_alignment(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = track(30);
            let est: Vec<_> = gt.iter().map(|(s, p)| (*s, Transform2::new(p.x + rng.random_range(-1.0..1.0), p.y + rng.random_range(-1.0..1.0), p.theta))).collect();
            let a = ate_rmse(&est, &gt, false).unwrap();
            let b = ate_rmse(&gt, &est, false).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn alignment_is_local_minimum(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = track(40);
            let warp = Transform2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let est: Vec<_> = gt
                .iter()
                .map(|(s, p)| (*s, warp.compose(&Transform2::new(p.x + rng.random_range(-0.3..0.3), p.y + rng.random_range(-0.3..0.3), 0.0))))
                .collect();
            let pairs = associate(&est, &gt, STAMP_TOLERANCE);
            let t = align(&pairs);
            let best = rmse(&pairs, &t);
            for _ in 0..100 {
                let d = Transform2::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
                prop_assert!(rmse(&pairs, &d.compose(&t)) >= best - 1e-12);
            }
        }
    }
}
