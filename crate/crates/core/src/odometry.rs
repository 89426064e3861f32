//! Lidar odometry: scan-to-scan or scan-to-map ICP with motion prediction,
//! external odometry fallback along degenerate directions, and key frame /
//! point cloud map maintenance.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::config::{Config, OdometryStrategy};
use crate::error::Result;
use crate::geometry::{Covariance3, Point2, Transform2};
use crate::registration::{
    estimate_reliable_normals, icp, normal_pca, voxel_filter, GridIndex, IcpParams, Scan, ScanFrame,
};
use crate::sim::emulate_short_range;

/// Variance reported on every axis while lost.
pub const LOST_VARIANCE: f64 = 9999.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryParams {
    pub strategy: OdometryStrategy,
    pub range_max: f64,
    pub voxel_size: f64,
    pub normal_k: usize,
    pub normal_max_radius: f64,
    pub normal_max_curvature: f64,
    pub icp: IcpParams,
    pub min_complexity: f64,
    pub keyframe_threshold: f64,
    pub map_max_size: usize,
    pub subtract_radius: f64,
    pub external_linear_noise: f64,
    pub external_angular_noise: f64,
}

impl OdometryParams {
    pub fn from_config(c: &Config) -> Self {
        Self {
            strategy: c.odom_strategy,
            range_max: c.icp_range_max,
            voxel_size: c.voxel_size,
            normal_k: c.normal_k,
            normal_max_radius: c.normal_max_radius,
            normal_max_curvature: c.normal_max_curvature,
            icp: IcpParams::from_config(c),
            min_complexity: c.min_complexity,
            keyframe_threshold: c.scan_keyframe_threshold,
            map_max_size: c.scan_map_max_size,
            subtract_radius: c.scan_subtract_radius,
            external_linear_noise: c.external_linear_noise,
            external_angular_noise: c.external_angular_noise,
        }
    }
}

impl Default for OdometryParams {
    fn default() -> Self {
        Self::from_config(&Config::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryOutput {
    pub stamp: f64,
    pub pose: Transform2,
    /// Covariance of the increment since the previous output.
    pub covariance: Covariance3,
    pub increment: Transform2,
    pub lost: bool,
    /// Filtered scan with normals (base frame), for mapping.
    pub scan: Scan,
    pub complexity: Option<f64>,
    pub correspondence_ratio: Option<f64>,
    /// Whether the degenerate direction was taken from external odometry.
    pub substituted: bool,
    pub keyframe_updated: bool,
}

impl OdometryOutput {
    pub fn lost_output(stamp: f64, pose: Transform2, scan: Scan) -> Self {
        Self {
            stamp,
            pose,
            covariance: Covariance3::isotropic(LOST_VARIANCE),
            increment: Transform2::identity(),
            lost: true,
            scan,
            complexity: None,
            correspondence_ratio: None,
            substituted: false,
            keyframe_updated: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Odometry {
    params: OdometryParams,
    pose: Transform2,
    /// Body-frame velocity (m/s, m/s, rad/s).
    last_velocity: Vector3<f64>,
    frames: usize,
    last_stamp: Option<f64>,
    last_external: Option<Transform2>,
    lost: bool,
    key_frame: Option<Scan>,
    key_pose: Transform2,
    map_points: VecDeque<(Point2, Vector2<f64>)>,
    map_scan: Scan,
}

impl Odometry {
    pub fn new(params: OdometryParams) -> Self {
        Self {
            params,
            pose: Transform2::identity(),
            last_velocity: Vector3::zeros(),
            frames: 0,
            last_stamp: None,
            last_external: None,
            lost: false,
            key_frame: None,
            key_pose: Transform2::identity(),
            map_points: VecDeque::new(),
            map_scan: Scan::default(),
        }
    }

    pub fn with_initial_pose(params: OdometryParams, pose: Transform2) -> Self {
        let mut o = Self::new(params);
        o.pose = pose;
        o.key_pose = pose;
        o
    }

    pub fn params(&self) -> &OdometryParams {
        &self.params
    }

    pub fn pose(&self) -> Transform2 {
        self.pose
    }

    pub fn is_lost(&self) -> bool {
        self.lost
    }

    pub fn last_velocity(&self) -> Vector3<f64> {
        self.last_velocity
    }

    pub fn set_last_velocity(&mut self, v: Vector3<f64>) {
        self.last_velocity = v;
    }

    pub fn map_size(&self) -> usize {
        self.map_points.len()
    }

    /// Scan-to-map cloud in the odometry frame.
    pub fn map_cloud(&self) -> &Scan {
        &self.map_scan
    }

    pub fn key_frame(&self) -> Option<&Scan> {
        self.key_frame.as_ref()
    }

    /// Forgets all state, keeping the current pose.
    pub fn reset(&mut self) {
        let pose = self.pose;
        *self = Self::with_initial_pose(self.params.clone(), pose);
    }

    /// Motion guess for the next scan: the external increment when there is
    /// one, identity for the first two frames, else constant velocity.
    pub fn predict_motion(&self, dt: f64, external: Option<Transform2>) -> Transform2 {
        if let Some(e) = external {
            return e;
        }
        if self.frames < 2 {
            return Transform2::identity();
        }
        let v = self.last_velocity * dt;
        Transform2::new(v.x, v.y, v.z)
    }

    fn external_covariance(&self, inc: &Transform2, dt: f64) -> Covariance3 {
        let st = self.params.external_linear_noise * inc.translation_norm();
        let sr = self.params.external_angular_noise * dt.max(0.0);
        Covariance3::diagonal((st * st).max(1e-9), (st * st).max(1e-9), (sr * sr).max(1e-9))
            .expect("positive diagonal")
    }

    /// Processes one scan (base frame). `external` is an absolute pose from
    /// an external odometry source, consumed as increments between calls.
    pub fn process(&mut self, scan: &Scan, stamp: f64, external: Option<Transform2>) -> Result<OdometryOutput> {
        let ext_inc = match (self.last_external, external) {
            (Some(a), Some(b)) => Some(a.relative(&b)),
            _ => None,
        };
        if external.is_some() {
            self.last_external = external;
        }
        let dt = self.last_stamp.map_or(0.0, |t| stamp - t);
        let first = self.frames == 0;

        let input = if self.params.range_max > 0.0 {
            emulate_short_range(scan, self.params.range_max)
        } else {
            scan.clone()
        };
        let filtered = voxel_filter(&input, self.params.voxel_size)?;
        let filtered = estimate_reliable_normals(
            &filtered,
            self.params.normal_k,
            self.params.normal_max_radius,
            self.params.normal_max_curvature,
        )
        .unwrap_or(Scan {
            normals: None,
            ..filtered
        });
        let mut filtered = filtered;
        filtered.stamp = stamp;
        filtered.frame = ScanFrame::Base;

        if self.params.strategy == OdometryStrategy::External {
            let out = match ext_inc {
                Some(inc) => {
                    self.lost = false;
                    self.finish(inc, self.external_covariance(&inc, dt), dt, stamp, filtered, None, None, false, false)
                }
                None if first => self.finish(
                    Transform2::identity(),
                    Covariance3::isotropic(1e-9),
                    dt,
                    stamp,
                    filtered,
                    None,
                    None,
                    false,
                    false,
                ),
                None => {
                    self.lost = true;
                    OdometryOutput::lost_output(stamp, self.pose, filtered)
                }
            };
            return Ok(out);
        }

        if first {
            let has_normals = filtered.normals.is_some();
            let out = self.finish(
                Transform2::identity(),
                Covariance3::isotropic(1e-9),
                dt,
                stamp,
                filtered.clone(),
                None,
                None,
                false,
                false,
            );
            if has_normals {
                self.update_keyframe(0.0, &filtered);
            }
            return Ok(out);
        }
        if self.lost && ext_inc.is_none() {
            self.last_stamp = Some(stamp);
            return Ok(OdometryOutput::lost_output(stamp, self.pose, filtered));
        }

        let use_ext = self.params.strategy.uses_external();
        let ext_inc = if use_ext { ext_inc } else { None };
        let prediction = self.predict_motion(dt, ext_inc);
        let guess_pose = self.pose.compose(&prediction);
        let registered = self.register(&filtered, &guess_pose);

        match registered {
            Some((new_pose, cov, ratio)) => {
                let mut inc = self.pose.relative(&new_pose);
                let mut cov = cov;
                let pca = normal_pca(&filtered).ok();
                let complexity = pca.as_ref().map(|p| p.complexity);
                let mut substituted = false;
                if let (Some(e), Some(p)) = (ext_inc, pca.as_ref()) {
                    if p.complexity < self.params.min_complexity {
                        // Minor axis of the new scan, expressed in the previous
                        // base frame where the increment's translation lives.
                        let (s, c) = inc.theta.sin_cos();
                        let a = Vector2::new(c * p.minor_axis.x - s * p.minor_axis.y, s * p.minor_axis.x + c * p.minor_axis.y);
                        let t = inc.translation();
                        let fixed = t - a * t.dot(&a) + a * e.translation().dot(&a);
                        inc = Transform2 {
                            x: fixed.x,
                            y: fixed.y,
                            theta: inc.theta,
                        };
                        let ev = self.external_covariance(&e, dt).variance_x();
                        let mut m = *cov.matrix();
                        let add = a * a.transpose() * ev;
                        let mut block = m.fixed_view_mut::<2, 2>(0, 0);
                        block += add;
                        cov = Covariance3::new(m).unwrap_or(cov);
                        substituted = true;
                    }
                }
                self.lost = false;
                let out = self.finish(inc, cov, dt, stamp, filtered.clone(), complexity, Some(ratio), substituted, false);
                let updated = self.update_keyframe(ratio, &filtered);
                Ok(OdometryOutput {
                    keyframe_updated: updated,
                    ..out
                })
            }
            None => match ext_inc {
                Some(e) => {
                    self.lost = false;
                    let out = self.finish(e, self.external_covariance(&e, dt), dt, stamp, filtered.clone(), None, None, false, false);
                    let updated = filtered.normals.is_some() && self.update_keyframe(0.0, &filtered);
                    Ok(OdometryOutput {
                        keyframe_updated: updated,
                        ..out
                    })
                }
                None => {
                    self.lost = true;
                    self.last_stamp = Some(stamp);
                    Ok(OdometryOutput::lost_output(stamp, self.pose, filtered))
                }
            },
        }
    }

    /// ICP of the filtered scan against the key frame or map. Returns the new
    /// pose, its covariance and the correspondence ratio.
    fn register(&self, filtered: &Scan, guess_pose: &Transform2) -> Option<(Transform2, Covariance3, f64)> {
        if filtered.normals.is_none() || filtered.is_empty() {
            return None;
        }
        let s2s = self.params.strategy == OdometryStrategy::S2S;
        let (target, guess) = if s2s {
            (self.key_frame.as_ref()?, self.key_pose.relative(guess_pose))
        } else {
            if self.map_scan.is_empty() {
                return None;
            }
            (&self.map_scan, *guess_pose)
        };
        let r = icp(filtered, target, guess, &self.params.icp).ok()?;
        if !r.converged {
            return None;
        }
        let pose = if s2s {
            self.key_pose.compose(&r.transform)
        } else {
            r.transform
        };
        Some((pose, r.covariance, r.correspondence_ratio))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        inc: Transform2,
        covariance: Covariance3,
        dt: f64,
        stamp: f64,
        scan: Scan,
        complexity: Option<f64>,
        ratio: Option<f64>,
        substituted: bool,
        keyframe_updated: bool,
    ) -> OdometryOutput {
        self.pose = self.pose.compose(&inc);
        if dt > 0.0 && self.frames > 0 {
            self.last_velocity = Vector3::new(inc.x, inc.y, inc.theta) / dt;
        }
        self.frames += 1;
        self.last_stamp = Some(stamp);
        OdometryOutput {
            stamp,
            pose: self.pose,
            covariance,
            increment: inc,
            lost: false,
            scan,
            complexity,
            correspondence_ratio: ratio,
            substituted,
            keyframe_updated,
        }
    }

    /// Takes `scan` (base frame, at the current pose) as the new key frame,
    /// or merges its novel points into the map, when `ratio` is under the
    /// key frame threshold. Returns whether anything changed.
    pub fn update_keyframe(&mut self, ratio: f64, scan: &Scan) -> bool {
        if ratio >= self.params.keyframe_threshold {
            return false;
        }
        if self.params.strategy == OdometryStrategy::S2S {
            self.key_frame = Some(scan.clone());
            self.key_pose = self.pose;
            return true;
        }
        let world = scan.transformed(&self.pose);
        let normals = match &world.normals {
            Some(n) => n.clone(),
            None => return false,
        };
        self.add_to_map(&world.points, &normals) > 0
    }

    /// Appends the points farther than the subtraction radius from the map
    /// (odometry frame), then evicts the oldest beyond the size bound.
    /// Returns the number of points added.
    pub fn add_to_map(&mut self, points: &[Point2], normals: &[Vector2<f64>]) -> usize {
        let r = self.params.subtract_radius;
        let novel: Vec<(Point2, Vector2<f64>)> = {
            let index = GridIndex::new(&self.map_scan.points, r);
            points
                .iter()
                .zip(normals)
                .filter(|(p, _)| !index.any_within(p, r))
                .map(|(p, n)| (*p, *n))
                .collect()
        };
        let added = novel.len();
        self.map_points.extend(novel);
        while self.map_points.len() > self.params.map_max_size {
            self.map_points.pop_front();
        }
        self.map_scan = Scan {
            frame: ScanFrame::Odometry,
            points: self.map_points.iter().map(|(p, _)| *p).collect(),
            normals: Some(self.map_points.iter().map(|(_, n)| *n).collect()),
            ..Scan::default()
        };
        added
    }
}

/// Covariance of a composed increment, `a ∘ b`, given both covariances.
pub fn accumulate(a: (&Transform2, &Covariance3), b: (&Transform2, &Covariance3)) -> (Transform2, Covariance3) {
    let (ja, jb) = crate::geometry::compose_jacobians(a.0, b.0);
    let m: Matrix3<f64> = ja * a.1.matrix() * ja.transpose() + jb * b.1.matrix() * jb.transpose();
    let m = (m + m.transpose()) * 0.5;
    (a.0.compose(b.0), Covariance3::new(m).unwrap_or_else(|_| a.1.add(b.1)))
}
