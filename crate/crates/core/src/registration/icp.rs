use nalgebra::{Matrix3, Vector3};

use super::index::GridIndex;
use super::mad::mad_covariance;
use super::scan::Scan;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Covariance3, Point2, Transform2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpMode {
    PointToPoint,
    PointToPlane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpParams {
    pub mode: IcpMode,
    pub max_iterations: usize,
    pub epsilon_translation: f64,
    pub epsilon_rotation: f64,
    pub max_correspondence_distance: f64,
    /// When larger than `max_correspondence_distance`, a first pass with
    /// this gate brings the estimate close before the fine pass.
    pub coarse_correspondence_distance: f64,
    /// Results matching fewer source points than this fraction are reported
    /// as not converged.
    pub min_correspondence_ratio: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            mode: IcpMode::PointToPlane,
            max_iterations: 30,
            epsilon_translation: 1e-5,
            epsilon_rotation: 1e-5,
            max_correspondence_distance: 0.1,
            coarse_correspondence_distance: 0.0,
            min_correspondence_ratio: 0.2,
        }
    }
}

impl IcpParams {
    pub fn from_config(config: &crate::Config) -> Self {
        Self {
            mode: if config.point_to_plane {
                IcpMode::PointToPlane
            } else {
                IcpMode::PointToPoint
            },
            max_iterations: config.icp_iterations,
            epsilon_translation: config.icp_epsilon,
            epsilon_rotation: config.icp_epsilon,
            max_correspondence_distance: config.max_correspondence_distance,
            coarse_correspondence_distance: config.coarse_correspondence_distance,
            min_correspondence_ratio: config.min_correspondence_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps source points into the target frame.
    pub transform: Transform2,
    /// Matched source points / source point count.
    pub correspondence_ratio: f64,
    /// Point distances of the final correspondences.
    pub inlier_residuals: Vec<f64>,
    pub covariance: Covariance3,
    pub converged: bool,
    pub iterations: usize,
    /// Mean matched point distance at the start of each iteration.
    pub residual_history: Vec<f64>,
}

/// Closed-form least-squares rigid transform mapping `src[i]` onto `dst[i]`.
pub fn procrustes(src: &[Point2], dst: &[Point2]) -> Option<Transform2> {
    if src.len() != dst.len() || src.len() < 2 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Point2::origin().coords, |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Point2::origin().coords, |a, p| a + p.coords) / n;
    let (mut sxx, mut sxy, mut syx, mut syy) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let a = p.coords - cs;
        let b = q.coords - cd;
        sxx += a.x * b.x;
        sxy += a.x * b.y;
        syx += a.y * b.x;
        syy += a.y * b.y;
    }
    if sxx == 0.0 && sxy == 0.0 && syx == 0.0 && syy == 0.0 {
        return None;
    }
    let theta = (sxy - syx).atan2(sxx + syy);
    let (s, c) = theta.sin_cos();
    Some(Transform2 {
        x: cd.x - (c * cs.x - s * cs.y),
        y: cd.y - (s * cs.x + c * cs.y),
        theta: normalize_angle(theta),
    })
}

struct Match {
    source: usize,
    target: usize,
    distance: f64,
}

fn find_matches(
    source: &[Point2],
    index: &GridIndex<'_>,
    t: &Transform2,
    max_dist: f64,
) -> Vec<Match> {
    source
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            index
                .nearest(&t.transform_point(p), max_dist)
                .map(|(j, d)| Match {
                    source: i,
                    target: j,
                    distance: d,
                })
        })
        .collect()
}

/// One Gauss-Newton step of point-to-plane ICP, as a left increment. Rank
/// deficient directions (corridors) get no update.
fn point_to_plane_step(
    source: &[Point2],
    target: &Scan,
    matches: &[Match],
    t: &Transform2,
) -> Option<Transform2> {
    let normals = target.normals.as_ref()?;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for m in matches {
        let p = t.transform_point(&source[m.source]);
        let q = target.points[m.target];
        let n = normals[m.target];
        let row = Vector3::new(n.x, n.y, n.x * -p.y + n.y * p.x);
        let r = (p - q).dot(&n);
        a += row * row.transpose();
        b += row * r;
    }
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return None;
    }
    let mut delta = Vector3::zeros();
    for k in 0..3 {
        let l = eig.eigenvalues[k];
        if l > 1e-9 * max {
            let v = eig.eigenvectors.column(k);
            delta -= v * (v.dot(&b) / l);
        }
    }
    Some(Transform2 {
        x: delta[0],
        y: delta[1],
        theta: normalize_angle(delta[2]),
    })
}

fn point_to_point_step(
    source: &[Point2],
    target: &Scan,
    matches: &[Match],
    t: &Transform2,
) -> Option<Transform2> {
    let src: Vec<Point2> = matches
        .iter()
        .map(|m| t.transform_point(&source[m.source]))
        .collect();
    let dst: Vec<Point2> = matches.iter().map(|m| target.points[m.target]).collect();
    procrustes(&src, &dst)
}

struct Pass {
    transform: Transform2,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
}

fn iterate(
    source: &Scan,
    target: &Scan,
    index: &GridIndex<'_>,
    guess: Transform2,
    params: &IcpParams,
    max_dist: f64,
) -> Pass {
    let min_matches = match params.mode {
        IcpMode::PointToPlane => 3,
        IcpMode::PointToPoint => 2,
    };
    let mut pass = Pass {
        transform: guess,
        converged: false,
        iterations: 0,
        history: Vec::new(),
    };
    // Nearest-neighbor assignments can cycle on noisy data; the second half
    // of the iterations keeps the last assignment fixed so the step settles.
    let freeze_after = params.max_iterations / 2;
    let mut frozen: Option<Vec<Match>> = None;
    for it in 0..params.max_iterations {
        let matches = match frozen.take() {
            Some(m) => m,
            None => find_matches(&source.points, index, &pass.transform, max_dist),
        };
        if matches.len() < min_matches {
            break;
        }
        pass.history
            .push(matches.iter().map(|m| m.distance).sum::<f64>() / matches.len() as f64);
        let step = match params.mode {
            IcpMode::PointToPlane => point_to_plane_step(&source.points, target, &matches, &pass.transform),
            IcpMode::PointToPoint => point_to_point_step(&source.points, target, &matches, &pass.transform),
        };
        let Some(delta) = step else { break };
        pass.transform = delta.compose(&pass.transform);
        pass.iterations += 1;
        if delta.translation_norm() < params.epsilon_translation
            && delta.theta.abs() < params.epsilon_rotation
        {
            pass.converged = true;
            break;
        }
        if it + 1 >= freeze_after {
            frozen = Some(matches);
        }
    }
    pass
}

/// Registers `source` onto `target` starting from `guess`.
///
/// Failing to converge, or matching too few points, is reported through
/// `converged = false` rather than an error. Errors are reserved for invalid
/// inputs: empty scans, a non-finite guess, or point-to-plane without target
/// normals.
pub fn icp(
    source: &Scan,
    target: &Scan,
    guess: Transform2,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::DegenerateScan {
            needed: 1,
            got: source.len().min(target.len()),
        });
    }
    if !guess.is_finite() {
        return Err(Error::InvalidInput("ICP guess is not finite".into()));
    }
    if params.mode == IcpMode::PointToPlane {
        match &target.normals {
            Some(n) if n.len() == target.len() => {}
            _ => return Err(Error::MissingNormals),
        }
    }
    let max_dist = params.max_correspondence_distance;
    let mut t = guess;
    if params.coarse_correspondence_distance > max_dist {
        let coarse = GridIndex::new(&target.points, params.coarse_correspondence_distance);
        let pass = iterate(source, target, &coarse, t, params, params.coarse_correspondence_distance);
        t = pass.transform;
    }
    let index = GridIndex::new(&target.points, max_dist);
    let pass = iterate(source, target, &index, t, params, max_dist);
    t = pass.transform;
    let mut converged = pass.converged;
    let iterations = pass.iterations;
    let history = pass.history;

    let matches = find_matches(&source.points, &index, &t, max_dist);
    let ratio = matches.len() as f64 / source.len() as f64;
    let inv = t.inverse();
    let pairs: Vec<(Point2, Point2)> = matches
        .iter()
        .map(|m| {
            (
                source.points[m.source],
                inv.transform_point(&target.points[m.target]),
            )
        })
        .collect();
    let covariance = match mad_covariance(&pairs) {
        Ok(c) => c,
        Err(_) => {
            converged = false;
            Covariance3::isotropic(9999.0)
        }
    };
    if ratio < params.min_correspondence_ratio {
        converged = false;
    }
    Ok(RegistrationResult {
        transform: t,
        correspondence_ratio: ratio,
        inlier_residuals: matches.iter().map(|m| m.distance).collect(),
        covariance,
        converged,
        iterations,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::estimate_normals;
    use approx::assert_abs_diff_eq;

    /// Two walls meeting at (3, 2), sampled every 5 cm.
    fn corner() -> Scan {
        let mut pts: Vec<Point2> = (0..80).map(|i| Point2::new(3.0, -2.0 + 0.05 * i as f64)).collect();
        pts.extend((0..80).map(|i| Point2::new(-1.0 + 0.05 * i as f64, 2.0)));
        estimate_normals(&Scan::from_points(pts), 5).unwrap()
    }

    fn corridor() -> Scan {
        let mut pts: Vec<Point2> = (0..100).map(|i| Point2::new(-2.5 + 0.05 * i as f64, 1.0)).collect();
        pts.extend((0..100).map(|i| Point2::new(-2.5 + 0.05 * i as f64, -1.0)));
        estimate_normals(&Scan::from_points(pts), 5).unwrap()
    }

    #[test]
    fn identical_scans() {
        let s = corner();
        for mode in [IcpMode::PointToPlane, IcpMode::PointToPoint] {
            let params = IcpParams { mode, ..Default::default() };
            let r = icp(&s, &s, Transform2::identity(), &params).unwrap();
            assert!(r.converged);
            assert_eq!(r.correspondence_ratio, 1.0);
            assert!(r.transform.translation_norm() < 1e-9);
            assert!(r.transform.theta.abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_shift_on_corner() {
        let s = corner();
        let target = s.transformed(&Transform2::new(0.1, 0.0, 0.0));
        let r = icp(&s, &target, Transform2::identity(), &IcpParams::default()).unwrap();
        assert!(r.converged);
        assert_abs_diff_eq!(r.transform.x, 0.1, epsilon = 1e-6);
        assert_abs_diff_eq!(r.transform.y, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.transform.theta, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn corridor_slides() {
        let s = corridor();
        let target = s.transformed(&Transform2::new(0.07, 0.0, 0.0));
        let r = icp(&s, &target, Transform2::identity(), &IcpParams::default()).unwrap();
        assert!(r.converged);
        // Along-corridor motion is unobservable: no update along x.
        assert!(r.transform.x.abs() < 1e-9);
        assert!(r.transform.y.abs() < 1e-9);
        // The point-to-plane residual is flat along the corridor axis.
        let normals = target.normals.as_ref().unwrap();
        let index = GridIndex::new(&target.points, 0.1);
        for shift in [-0.02, 0.0, 0.02] {
            let t = Transform2::new(shift, 0.0, 0.0);
            let cost: f64 = s
                .points
                .iter()
                .filter_map(|p| {
                    let q = t.transform_point(p);
                    index.nearest(&q, 0.1).map(|(j, _)| (q - target.points[j]).dot(&normals[j]).powi(2))
                })
                .sum();
            assert!(cost < 1e-20);
        }
    }

    #[test]
    fn point_to_point_residual_is_monotone() {
        let s = corner();
        let target = s.transformed(&Transform2::new(0.04, -0.03, 0.01));
        let params = IcpParams {
            mode: IcpMode::PointToPoint,
            max_iterations: 60,
            ..Default::default()
        };
        let r = icp(&s, &target, Transform2::identity(), &params).unwrap();
        for w in r.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.residual_history);
        }
    }

    #[test]
    fn invalid_inputs() {
        let s = corner();
        assert!(icp(&Scan::default(), &s, Transform2::identity(), &IcpParams::default()).is_err());
        let bad = Transform2 { x: f64::NAN, y: 0.0, theta: 0.0 };
        assert!(icp(&s, &s, bad, &IcpParams::default()).is_err());
        let no_normals = Scan::from_points(s.points.clone());
        assert!(matches!(
            icp(&s, &no_normals, Transform2::identity(), &IcpParams::default()),
            Err(Error::MissingNormals)
        ));
    }

    #[test]
    fn far_guess_does_not_converge() {
        let s = corner();
        let r = icp(&s, &s, Transform2::new(5.0, 5.0, 0.0), &IcpParams::default()).unwrap();
        assert!(!r.converged);
        assert_eq!(r.correspondence_ratio, 0.0);
    }

    #[test]
    fn procrustes_exact() {
        let src = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 2.0)];
        let t = Transform2::new(0.5, -0.2, 0.3);
        let dst: Vec<Point2> = src.iter().map(|p| t.transform_point(p)).collect();
        let got = procrustes(&src, &dst).unwrap();
        assert_abs_diff_eq!(got.x, t.x, epsilon = 1e-12);
        assert_abs_diff_eq!(got.y, t.y, epsilon = 1e-12);
        assert_abs_diff_eq!(got.theta, t.theta, epsilon = 1e-12);
    }
}
