use std::collections::HashMap;

use crate::geometry::Point2;

/// Uniform bucket grid over a point set for radius-bounded nearest neighbor
/// queries. Ties resolve to the lowest point index.
pub(crate) struct GridIndex<'a> {
    points: &'a [Point2],
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point2], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    fn key(p: &Point2, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// Nearest point within `max_dist` (inclusive): `(index, distance)`.
    pub fn nearest(&self, p: &Point2, max_dist: f64) -> Option<(usize, f64)> {
        let (cx, cy) = Self::key(p, self.cell);
        let reach = (max_dist / self.cell).ceil().max(1.0) as i64;
        let max_sq = max_dist * max_dist;
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy)) else {
                    continue;
                };
                for &i in bucket {
                    let d = (self.points[i] - p).norm_squared();
                    if d > max_sq {
                        continue;
                    }
                    match best {
                        Some((bi, bd)) if d > bd || (d == bd && i > bi) => {}
                        _ => best = Some((i, d)),
                    }
                }
            }
        }
        best.map(|(i, d)| (i, d.sqrt()))
    }

    pub fn any_within(&self, p: &Point2, radius: f64) -> bool {
        self.nearest(p, radius).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_brute_force(
            pts in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..120),
            q in (-3.5..3.5f64, -3.5..3.5f64),
            r in 0.05..1.5f64,
        ) {
            let points: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let index = GridIndex::new(&points, 0.3);
            let q = Point2::new(q.0, q.1);
            let brute = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .filter(|&(_, d)| d <= r)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let got = index.nearest(&q, r);
            prop_assert_eq!(got.map(|g| g.0), brute.map(|b| b.0));
        }
    }
}
