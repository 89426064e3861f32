use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Transform2};

/// Frame a scan's points are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanFrame {
    #[default]
    Base,
    Odometry,
    Map,
}

/// A 2D point cloud from a single lidar sweep.
///
/// `misses` holds the beam angles (sensor frame) that produced no return,
/// which the occupancy grid may trace as free space up to `max_range`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub stamp: f64,
    pub frame: ScanFrame,
    pub points: Vec<Point2>,
    pub normals: Option<Vec<Vector2<f64>>>,
    pub misses: Vec<f64>,
    pub max_range: f64,
}

impl Scan {
    pub fn from_points(points: Vec<Point2>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies a rigid transform to points and normals.
    pub fn transformed(&self, t: &Transform2) -> Scan {
        Scan {
            stamp: self.stamp,
            frame: self.frame,
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotate_vector(n)).collect()),
            misses: self.misses.clone(),
            max_range: self.max_range,
        }
    }
}

/// Keeps one point per `voxel`-sized cell, at the centroid of the points
/// that fell into it. Output order follows the first point of each cell.
/// Normals are dropped; re-estimate them on the filtered cloud.
pub fn voxel_filter(scan: &Scan, voxel: f64) -> Result<Scan> {
    if !(voxel > 0.0) {
        return Err(Error::InvalidInput(format!("voxel size must be > 0, got {voxel}")));
    }
    let mut slots: HashMap<(i64, i64), usize> = HashMap::new();
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for p in &scan.points {
        let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64);
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((0.0, 0.0, 0));
            sums.len() - 1
        });
        let s = &mut sums[slot];
        s.0 += p.x;
        s.1 += p.y;
        s.2 += 1;
    }
    Ok(Scan {
        stamp: scan.stamp,
        frame: scan.frame,
        points: sums
            .into_iter()
            .map(|(x, y, n)| Point2::new(x / n as f64, y / n as f64))
            .collect(),
        normals: None,
        misses: scan.misses.clone(),
        max_range: scan.max_range,
    })
}

/// Eigen-decomposition of a symmetric 2x2 matrix: (small, large) eigenvalues
/// and the unit eigenvector of the small one.
pub(crate) fn sym2_eigen(m: &Matrix2<f64>) -> (f64, f64, Vector2<f64>) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let small = half_trace - disc;
    let large = half_trace + disc;
    let v1 = Vector2::new(b, small - a);
    let v2 = Vector2::new(small - c, b);
    let v = if v1.norm_squared() >= v2.norm_squared() { v1 } else { v2 };
    let n = v.norm();
    let v = if n > 1e-300 {
        v / n
    } else if a <= c {
        Vector2::new(1.0, 0.0)
    } else {
        Vector2::new(0.0, 1.0)
    };
    (small, large, v)
}

struct NormalFit {
    normal: Vector2<f64>,
    /// `λ_small / (λ_small + λ_large)` of the neighborhood covariance.
    curvature: f64,
    /// Distance to the farthest of the `k` neighbors.
    radius: f64,
}

fn fit_normals(scan: &Scan, k: usize) -> Result<Vec<NormalFit>> {
    let n = scan.points.len();
    if k < 2 || n < k {
        return Err(Error::DegenerateScan {
            needed: k.max(2),
            got: n,
        });
    }
    let pts = &scan.points;
    let mut out = Vec::with_capacity(n);
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(n);
    for p in pts {
        dists.clear();
        dists.extend(pts.iter().enumerate().map(|(j, q)| ((q - p).norm_squared(), j)));
        dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let nb = &dists[..k];
        let mean = nb
            .iter()
            .fold(Vector2::zeros(), |acc, &(_, j)| acc + pts[j].coords)
            / k as f64;
        let cov = nb.iter().fold(Matrix2::zeros(), |acc, &(_, j)| {
            let d = pts[j].coords - mean;
            acc + d * d.transpose()
        }) / k as f64;
        let (small, large, mut normal) = sym2_eigen(&cov);
        if normal.dot(&(-p.coords)) < 0.0 {
            normal = -normal;
        }
        let total = small + large;
        out.push(NormalFit {
            normal,
            curvature: if total > 0.0 { (small / total).max(0.0) } else { 0.0 },
            radius: dists[k - 1].0.sqrt(),
        });
    }
    Ok(out)
}

/// Per-point normals from the `k` nearest neighbors (the point included),
/// oriented toward the sensor at the frame origin.
pub fn estimate_normals(scan: &Scan, k: usize) -> Result<Scan> {
    let fits = fit_normals(scan, k)?;
    Ok(Scan {
        normals: Some(fits.into_iter().map(|f| f.normal).collect()),
        ..scan.clone()
    })
}

/// Like [`estimate_normals`], but keeps only points whose `k` neighbors lie
/// within `max_radius` and fit a line with curvature at most
/// `max_curvature`. Sparse returns and corners, whose normals are
/// unreliable, are dropped.
pub fn estimate_reliable_normals(scan: &Scan, k: usize, max_radius: f64, max_curvature: f64) -> Result<Scan> {
    let fits = fit_normals(scan, k)?;
    let mut points = Vec::with_capacity(fits.len());
    let mut normals = Vec::with_capacity(fits.len());
    for (p, f) in scan.points.iter().zip(&fits) {
        if f.radius <= max_radius && f.curvature <= max_curvature {
            points.push(*p);
            normals.push(f.normal);
        }
    }
    Ok(Scan {
        points,
        normals: Some(normals),
        ..scan.clone()
    })
}

/// Principal axes of a scan's normal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPca {
    /// Twice the second eigenvalue, in [0, 1].
    pub complexity: f64,
    /// Unit vector along which the normals give the least constraint.
    pub minor_axis: Vector2<f64>,
}

/// Eigen-analysis of the second-moment matrix `mean(n nᵀ)` of the normals.
///
/// For unit normals the eigenvalues sum to one, so the second one is at most
/// 0.5 and the complexity lands in [0, 1]. The matrix is not mean-centered:
/// it equals the translational information of point-to-plane ICP, so its
/// minor axis is the direction ICP cannot observe.
pub fn normal_pca(scan: &Scan) -> Result<NormalPca> {
    let normals = scan.normals.as_ref().ok_or(Error::MissingNormals)?;
    if normals.is_empty() {
        return Ok(NormalPca {
            complexity: 0.0,
            minor_axis: Vector2::new(1.0, 0.0),
        });
    }
    let m = normals
        .iter()
        .fold(Matrix2::zeros(), |acc, n| acc + n * n.transpose())
        / normals.len() as f64;
    let (small, _, axis) = sym2_eigen(&m);
    Ok(NormalPca {
        complexity: (2.0 * small).clamp(0.0, 1.0),
        minor_axis: axis,
    })
}

/// Twice the second eigenvalue of the normals' PCA, in [0, 1]. Near zero
/// for corridors.
pub fn structural_complexity(scan: &Scan) -> Result<f64> {
    Ok(normal_pca(scan)?.complexity)
}
