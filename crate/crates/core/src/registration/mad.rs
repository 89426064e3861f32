use crate::error::{Error, Result};
use crate::geometry::{Covariance3, Point2};

const MAD_SCALE: f64 = 1.4826;
const VARIANCE_FLOOR: f64 = 1e-9;

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn robust_variance(values: &[f64]) -> f64 {
    let m = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    let sigma = MAD_SCALE * median(&deviations);
    sigma * sigma
}

/// Diagonal covariance from the median absolute deviation of correspondence
/// residuals.
///
/// Each pair is `(source, target)` in the source sensor frame. Translation
/// variances come from the x and y residual components; the rotation
/// variance from the tangential residual component divided by the mean
/// source point radius. Every variance is floored at 1e-9.
pub fn mad_covariance(pairs: &[(Point2, Point2)]) -> Result<Covariance3> {
    if pairs.len() < 4 {
        return Err(Error::DegenerateRegistration(pairs.len()));
    }
    let mut rx = Vec::with_capacity(pairs.len());
    let mut ry = Vec::with_capacity(pairs.len());
    let mut rt = Vec::with_capacity(pairs.len());
    let mut radius_sum = 0.0;
    for (p, q) in pairs {
        let r = q - p;
        rx.push(r.x);
        ry.push(r.y);
        let radius = p.coords.norm();
        radius_sum += radius;
        rt.push(if radius > 1e-12 {
            (-p.y * r.x + p.x * r.y) / radius
        } else {
            0.0
        });
    }
    let mean_radius = radius_sum / pairs.len() as f64;
    let var_theta = if mean_radius > 1e-12 {
        robust_variance(&rt) / (mean_radius * mean_radius)
    } else {
        0.0
    };
    Covariance3::diagonal(
        robust_variance(&rx).max(VARIANCE_FLOOR),
        robust_variance(&ry).max(VARIANCE_FLOOR),
        var_theta.max(VARIANCE_FLOOR),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pairs_with(residuals: &[(f64, f64)]) -> Vec<(Point2, Point2)> {
        residuals
            .iter()
            .enumerate()
            .map(|(i, &(dx, dy))| {
                let p = Point2::new(1.0 + i as f64 * 0.37, -0.5 + i as f64 * 0.11);
                (p, Point2::new(p.x + dx, p.y + dy))
            })
            .collect()
    }

    /// Brute-force MAD: the median found by counting, not sorting.
    fn brute_median(v: &[f64]) -> f64 {
        let mut candidates: Vec<f64> = Vec::new();
        for &c in v {
            let below = v.iter().filter(|&&x| x < c).count();
            let above = v.iter().filter(|&&x| x > c).count();
            if below <= v.len() / 2 && above <= v.len() / 2 {
                candidates.push(c);
            }
        }
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        if v.len() % 2 == 1 {
            candidates[0]
        } else {
            // Even length: average of the two middle order statistics.
            let mut s = v.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            0.5 * (s[v.len() / 2 - 1] + s[v.len() / 2])
        }
    }

    #[test]
    fn zero_residuals_hit_floor() {
        let c = mad_covariance(&pairs_with(&[(0.0, 0.0); 6])).unwrap();
        assert_eq!(c.variance_x(), 1e-9);
        assert_eq!(c.variance_y(), 1e-9);
        assert_eq!(c.variance_theta(), 1e-9);
    }

    #[test]
    fn symmetric_residuals_match_brute_force_mad() {
        let xs = [-0.01, 0.0, 0.01, -0.02, 0.02, 0.005, -0.005];
        let res: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
        let c = mad_covariance(&pairs_with(&res)).unwrap();
        let m = brute_median(&xs);
        let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
        let expected = (1.4826 * brute_median(&dev)).powi(2);
        assert_abs_diff_eq!(c.variance_x(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, (1.4826f64 * 0.01).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn doubling_residuals_quadruples_translation_variance() {
        let res = [(0.01, -0.03), (0.02, 0.01), (-0.015, 0.02), (0.005, 0.0), (-0.03, -0.01)];
        let doubled: Vec<_> = res.iter().map(|&(x, y)| (2.0 * x, 2.0 * y)).collect();
        let a = mad_covariance(&pairs_with(&res)).unwrap();
        let b = mad_covariance(&pairs_with(&doubled)).unwrap();
        assert_abs_diff_eq!(b.variance_x(), 4.0 * a.variance_x(), epsilon = 1e-15);
        assert_abs_diff_eq!(b.variance_y(), 4.0 * a.variance_y(), epsilon = 1e-15);
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(
            mad_covariance(&pairs_with(&[(0.0, 0.0); 3])),
            Err(Error::DegenerateRegistration(3))
        ));
    }
}
