//! Deterministic 2D world simulator: lidar ray casting, landmark
//! observations with descriptors, noisy wheel odometry and ground truth.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Point2, Transform2};
use crate::registration::Scan;

/// A wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            a: Point2::new(x1, y1),
            b: Point2::new(x2, y2),
        }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Distance along the ray `origin + t * dir` (unit `dir`) to this segment.
    pub fn ray_hit(&self, origin: &Point2, dir: &nalgebra::Vector2<f64>) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.x * e.y - dir.y * e.x;
        if denom.abs() < 1e-15 {
            return None;
        }
        let ao = self.a - origin;
        let t = (ao.x * e.y - ao.y * e.x) / denom;
        let u = (ao.x * dir.y - ao.y * dir.x) / denom;
        (t > 1e-12 && (0.0..=1.0).contains(&u)).then_some(t)
    }

    /// Shortest distance from a point to this segment.
    pub fn distance_to(&self, p: &Point2) -> f64 {
        let e = self.b - self.a;
        let u = ((p - self.a).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
        (p - (self.a + e * u)).norm()
    }

    /// Proper intersection of two segments (touching endpoints excluded).
    fn crosses(&self, other: &Segment) -> bool {
        let d = self.b - self.a;
        let e = other.b - other.a;
        let denom = d.x * e.y - d.y * e.x;
        if denom.abs() < 1e-15 {
            return false;
        }
        let ao = other.a - self.a;
        let t = (ao.x * e.y - ao.y * e.x) / denom;
        let u = (ao.x * d.y - ao.y * d.x) / denom;
        t > 1e-9 && t < 1.0 - 1e-9 && u > 1e-9 && u < 1.0 - 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: Point2,
    pub descriptor_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub segments: Vec<Segment>,
    pub landmarks: Vec<Landmark>,
}

impl World {
    pub fn new(segments: Vec<Segment>, landmarks: Vec<Landmark>) -> Result<Self> {
        for s in &segments {
            if !(s.length() > 0.0) || !s.a.coords.iter().chain(s.b.coords.iter()).all(|v| v.is_finite()) {
                return Err(Error::Simulation(format!("degenerate segment {s:?}")));
            }
        }
        Ok(Self {
            segments,
            landmarks,
        })
    }

    /// Axis-aligned bounds of all walls: (min, max).
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for s in &self.segments {
            for p in [s.a, s.b] {
                lo.x = lo.x.min(p.x);
                lo.y = lo.y.min(p.y);
                hi.x = hi.x.max(p.x);
                hi.y = hi.y.max(p.y);
            }
        }
        (lo, hi)
    }

    /// Range to the first wall along a world-frame ray, if within `max_range`.
    pub fn raycast(&self, origin: &Point2, angle: f64, max_range: f64) -> Option<f64> {
        let dir = nalgebra::Vector2::new(angle.cos(), angle.sin());
        self.segments
            .iter()
            .filter_map(|s| s.ray_hit(origin, &dir))
            .filter(|&t| t <= max_range)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    fn line_of_sight(&self, from: &Point2, to: &Point2) -> bool {
        let seg = Segment { a: *from, b: *to };
        !self.segments.iter().any(|w| seg.crosses(w))
    }

    /// Distance from a point to the closest wall.
    pub fn distance_to_walls(&self, p: &Point2) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Trajectory vertex: the robot turns in place toward it, then drives to it
/// at `speed` (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, speed: f64) -> Self {
        Self { x, y, speed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Lidar (and odometry) frame rate, Hz.
    pub lidar_rate: f64,
    pub beams: usize,
    pub max_range: f64,
    /// Additive Gaussian range noise (m).
    pub range_noise: f64,
    /// Wheel odometry translation noise, fraction of each step.
    pub odom_linear_noise: f64,
    /// Wheel odometry angular velocity noise (rad/s).
    pub odom_angular_noise: f64,
    /// In-place turning rate (rad/s).
    pub angular_speed: f64,
    pub camera_fov: f64,
    pub camera_range: f64,
    pub bearing_noise: f64,
    pub landmark_range_noise: f64,
    /// Per-component Gaussian noise added to descriptors before normalization.
    pub descriptor_noise: f64,
    pub descriptor_dim: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            lidar_rate: 10.0,
            beams: 360,
            max_range: 30.0,
            range_noise: 0.01,
            odom_linear_noise: 0.02,
            odom_angular_noise: 0.5f64.to_radians(),
            angular_speed: 0.5,
            camera_fov: FRAC_PI_2,
            camera_range: 8.0,
            bearing_noise: 0.002,
            landmark_range_noise: 0.01,
            descriptor_noise: 0.02,
            descriptor_dim: 32,
        }
    }
}

impl SimParams {
    /// All noise sources off.
    pub fn noiseless() -> Self {
        Self {
            range_noise: 0.0,
            odom_linear_noise: 0.0,
            odom_angular_noise: 0.0,
            bearing_noise: 0.0,
            landmark_range_noise: 0.0,
            descriptor_noise: 0.0,
            ..Self::default()
        }
    }

    /// The same sensors with every noise source off.
    pub fn without_noise(self) -> Self {
        let quiet = Self::noiseless();
        Self {
            range_noise: quiet.range_noise,
            odom_linear_noise: quiet.odom_linear_noise,
            odom_angular_noise: quiet.odom_angular_noise,
            bearing_noise: quiet.bearing_noise,
            landmark_range_noise: quiet.landmark_range_noise,
            descriptor_noise: quiet.descriptor_noise,
            ..self
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let f = || value.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        match key {
            "lidar_rate" => self.lidar_rate = f()?,
            "beams" => self.beams = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "max_range" => self.max_range = f()?,
            "range_noise" => self.range_noise = f()?,
            "odom_linear_noise" => self.odom_linear_noise = f()?,
            "odom_angular_noise" => self.odom_angular_noise = f()?,
            "angular_speed" => self.angular_speed = f()?,
            "camera_fov" => self.camera_fov = f()?,
            "camera_range" => self.camera_range = f()?,
            "bearing_noise" => self.bearing_noise = f()?,
            "landmark_range_noise" => self.landmark_range_noise = f()?,
            "descriptor_noise" => self.descriptor_noise = f()?,
            "descriptor_dim" => self.descriptor_dim = value.parse().map_err(|e| format!("{key}: {e}"))?,
            _ => return Err(format!("unknown parameter '{key}'")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lidar_rate", format!("{:?}", self.lidar_rate)),
            ("beams", self.beams.to_string()),
            ("max_range", format!("{:?}", self.max_range)),
            ("range_noise", format!("{:?}", self.range_noise)),
            ("odom_linear_noise", format!("{:?}", self.odom_linear_noise)),
            ("odom_angular_noise", format!("{:?}", self.odom_angular_noise)),
            ("angular_speed", format!("{:?}", self.angular_speed)),
            ("camera_fov", format!("{:?}", self.camera_fov)),
            ("camera_range", format!("{:?}", self.camera_range)),
            ("bearing_noise", format!("{:?}", self.bearing_noise)),
            ("landmark_range_noise", format!("{:?}", self.landmark_range_noise)),
            ("descriptor_noise", format!("{:?}", self.descriptor_noise)),
            ("descriptor_dim", self.descriptor_dim.to_string()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("lidar_rate", self.lidar_rate),
            ("max_range", self.max_range),
            ("angular_speed", self.angular_speed),
            ("camera_fov", self.camera_fov),
            ("camera_range", self.camera_range),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Simulation(format!("{k} must be > 0")));
            }
        }
        if self.beams == 0 || self.descriptor_dim == 0 {
            return Err(Error::Simulation("beams and descriptor_dim must be > 0".into()));
        }
        Ok(())
    }
}

/// A landmark seen by the forward camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Unit-norm descriptor.
    pub descriptor: Vec<f64>,
    /// Bearing in the base frame (rad).
    pub bearing: f64,
    pub range: f64,
    /// Detector response, used to keep the strongest features.
    pub response: f64,
}

impl Observation {
    /// Landmark position in the base frame.
    pub fn position(&self) -> Point2 {
        Point2::new(self.range * self.bearing.cos(), self.range * self.bearing.sin())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    /// Mapping session index; each session has its own odometry frame.
    pub session: u32,
    pub stamp: f64,
    pub gt_pose: Transform2,
    pub wheel_odom_pose: Transform2,
    /// Lidar returns in the base frame.
    pub scan: Scan,
    pub observations: Vec<Observation>,
}

/// Base descriptor of a landmark: a unit vector drawn from its seed.
pub fn landmark_descriptor(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d35c_0000_0001);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn landmark_response(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e59_0a5e_0000_0002);
    rng.random::<f64>()
}

/// Removes returns beyond `max_range`; their beams become misses.
pub fn emulate_short_range(scan: &Scan, max_range: f64) -> Scan {
    let mut out = Scan {
        stamp: scan.stamp,
        frame: scan.frame,
        points: Vec::with_capacity(scan.points.len()),
        normals: scan.normals.as_ref().map(|_| Vec::new()),
        misses: scan.misses.clone(),
        max_range: if scan.max_range > 0.0 {
            scan.max_range.min(max_range)
        } else {
            max_range
        },
    };
    for (i, p) in scan.points.iter().enumerate() {
        if p.coords.norm() <= max_range {
            out.points.push(*p);
            if let (Some(dst), Some(src)) = (out.normals.as_mut(), scan.normals.as_ref()) {
                dst.push(src[i]);
            }
        } else {
            out.misses.push(p.y.atan2(p.x));
        }
    }
    out
}

enum Motion {
    Turn { at: Point2, from: f64, delta: f64 },
    Drive { from: Point2, to: Point2, heading: f64 },
}

struct Primitive {
    start: f64,
    duration: f64,
    motion: Motion,
}

fn build_primitives(world: &World, trajectory: &[Waypoint], params: &SimParams) -> Result<Vec<Primitive>> {
    if trajectory.len() < 2 {
        return Err(Error::Simulation("trajectory needs at least two waypoints".into()));
    }
    let (lo, hi) = world.bounds();
    for w in trajectory {
        if !(w.x >= lo.x && w.x <= hi.x && w.y >= lo.y && w.y <= hi.y) {
            return Err(Error::Simulation(format!(
                "waypoint ({}, {}) leaves the world bounds",
                w.x, w.y
            )));
        }
    }
    let mut prims = Vec::new();
    let mut t = 0.0;
    let first = Point2::new(trajectory[0].x, trajectory[0].y);
    let mut heading = {
        let n = trajectory
            .iter()
            .map(|w| Point2::new(w.x, w.y))
            .find(|p| (p - first).norm() > 1e-9)
            .ok_or_else(|| Error::Simulation("trajectory does not move".into()))?;
        (n.y - first.y).atan2(n.x - first.x)
    };
    for pair in trajectory.windows(2) {
        let from = Point2::new(pair[0].x, pair[0].y);
        let to = Point2::new(pair[1].x, pair[1].y);
        let dist = (to - from).norm();
        if dist < 1e-9 {
            continue;
        }
        if !(pair[1].speed > 0.0) {
            return Err(Error::Simulation("waypoint speed must be > 0".into()));
        }
        let path = Segment { a: from, b: to };
        if world.segments.iter().any(|w| path.crosses(w)) {
            return Err(Error::Simulation(format!(
                "path from ({}, {}) to ({}, {}) crosses a wall",
                from.x, from.y, to.x, to.y
            )));
        }
        let target = (to.y - from.y).atan2(to.x - from.x);
        let delta = normalize_angle(target - heading);
        if delta.abs() > 1e-12 {
            let duration = delta.abs() / params.angular_speed;
            prims.push(Primitive {
                start: t,
                duration,
                motion: Motion::Turn { at: from, from: heading, delta },
            });
            t += duration;
        }
        let duration = dist / pair[1].speed;
        prims.push(Primitive {
            start: t,
            duration,
            motion: Motion::Drive { from, to, heading: target },
        });
        t += duration;
        heading = target;
    }
    Ok(prims)
}

fn pose_at(prims: &[Primitive], t: f64) -> Transform2 {
    let idx = prims
        .partition_point(|p| p.start <= t)
        .saturating_sub(1);
    let p = &prims[idx];
    let s = ((t - p.start) / p.duration).clamp(0.0, 1.0);
    match p.motion {
        Motion::Turn { at, from, delta } => Transform2::new(at.x, at.y, from + s * delta),
        Motion::Drive { from, to, heading } => {
            let q = from + (to - from) * s;
            Transform2::new(q.x, q.y, heading)
        }
    }
}

struct Sensors<'a> {
    world: &'a World,
    params: &'a SimParams,
    base_descriptors: Vec<Vec<f64>>,
    responses: Vec<f64>,
}

impl<'a> Sensors<'a> {
    fn new(world: &'a World, params: &'a SimParams) -> Self {
        Self {
            world,
            params,
            base_descriptors: world
                .landmarks
                .iter()
                .map(|l| landmark_descriptor(l.descriptor_seed, params.descriptor_dim))
                .collect(),
            responses: world
                .landmarks
                .iter()
                .map(|l| landmark_response(l.descriptor_seed))
                .collect(),
        }
    }

    fn scan(&self, pose: &Transform2, stamp: f64, rng: &mut ChaCha8Rng) -> Scan {
        let p = self.params;
        let origin = Point2::new(pose.x, pose.y);
        let mut scan = Scan {
            stamp,
            max_range: p.max_range,
            ..Default::default()
        };
        for i in 0..p.beams {
            let local = -PI + TAU * i as f64 / p.beams as f64;
            let noise: f64 = rng.sample(StandardNormal);
            match self.world.raycast(&origin, pose.theta + local, p.max_range) {
                Some(range) => {
                    let r = (range + p.range_noise * noise).clamp(1e-6, p.max_range);
                    scan.points.push(Point2::new(r * local.cos(), r * local.sin()));
                }
                None => scan.misses.push(local),
            }
        }
        scan
    }

    fn observe(&self, pose: &Transform2, rng: &mut ChaCha8Rng) -> Vec<Observation> {
        let p = self.params;
        let origin = Point2::new(pose.x, pose.y);
        let mut out = Vec::new();
        for (k, lm) in self.world.landmarks.iter().enumerate() {
            let d = lm.position - origin;
            let range = d.norm();
            let bearing = normalize_angle(d.y.atan2(d.x) - pose.theta);
            if range > p.camera_range || bearing.abs() > 0.5 * p.camera_fov {
                continue;
            }
            if !self.world.line_of_sight(&origin, &lm.position) {
                continue;
            }
            let mut desc: Vec<f64> = self.base_descriptors[k]
                .iter()
                .map(|v| v + p.descriptor_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = desc.iter().map(|x| x * x).sum::<f64>().sqrt();
            desc.iter_mut().for_each(|x| *x /= n);
            let nb: f64 = rng.sample(StandardNormal);
            let nr: f64 = rng.sample(StandardNormal);
            out.push(Observation {
                descriptor: desc,
                bearing: normalize_angle(bearing + p.bearing_noise * nb),
                range: (range + p.landmark_range_noise * nr).max(1e-6),
                response: self.responses[k],
            });
        }
        out
    }
}

/// Simulates one session. Deterministic for a fixed seed.
pub fn simulate(
    world: &World,
    trajectory: &[Waypoint],
    params: &SimParams,
    seed: u64,
) -> Result<Vec<SensorFrame>> {
    simulate_sessions(world, &[trajectory.to_vec()], params, seed)
}

/// Simulates consecutive sessions. Stamps keep increasing across sessions;
/// each session's wheel odometry starts at that session's first true pose.
pub fn simulate_sessions(
    world: &World,
    sessions: &[Vec<Waypoint>],
    params: &SimParams,
    seed: u64,
) -> Result<Vec<SensorFrame>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensors = Sensors::new(world, params);
    let dt = 1.0 / params.lidar_rate;
    let mut frames = Vec::new();
    let mut stamp0 = 0.0;
    for (session, trajectory) in sessions.iter().enumerate() {
        let prims = build_primitives(world, trajectory, params)?;
        let total = prims.last().map(|p| p.start + p.duration).unwrap_or(0.0);
        let steps = (total / dt + 1e-9).floor() as usize;
        let mut prev_gt = pose_at(&prims, 0.0);
        let mut odom = prev_gt;
        for k in 0..=steps {
            let gt = pose_at(&prims, k as f64 * dt);
            let inc = prev_gt.relative(&gt);
            let nv: f64 = rng.sample(StandardNormal);
            let nw: f64 = rng.sample(StandardNormal);
            if k > 0 {
                let scale = 1.0 + params.odom_linear_noise * nv;
                let noisy = Transform2 {
                    x: inc.x * scale,
                    y: inc.y * scale,
                    theta: normalize_angle(inc.theta + params.odom_angular_noise * dt * nw),
                };
                odom = odom.compose(&noisy);
            }
            prev_gt = gt;
            let stamp = stamp0 + k as f64 * dt;
            let scan = sensors.scan(&gt, stamp, &mut rng);
            let observations = sensors.observe(&gt, &mut rng);
            frames.push(SensorFrame {
                session: session as u32,
                stamp,
                gt_pose: gt,
                wheel_odom_pose: odom,
                scan,
                observations,
            });
        }
        stamp0 += (steps as f64 + 10.0) * dt;
    }
    Ok(frames)
}

/// World, trajectories and sensor parameters read from a definition file.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFile {
    pub world: World,
    pub sessions: Vec<Vec<Waypoint>>,
    pub params: SimParams,
}

impl WorldFile {
    /// Parses the plain-text world format:
    ///
    /// ```text
    /// # comment
    /// param <name> <value>        # sensor parameter, see SimParams
    /// segment <x1> <y1> <x2> <y2> # wall
    /// landmark <x> <y> <seed>
    /// session                     # starts a new trajectory (the first is implicit)
    /// waypoint <x> <y> <speed>
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut params = SimParams::default();
        let mut segments = Vec::new();
        let mut landmarks = Vec::new();
        let mut sessions: Vec<Vec<Waypoint>> = vec![Vec::new()];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let nums = |n: usize| -> Result<Vec<f64>> {
                if fields.len() != n + 1 {
                    return Err(err(format!("'{}' expects {n} values", fields[0])));
                }
                fields[1..]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| err(format!("{f}: {e}"))))
                    .collect()
            };
            match fields[0] {
                "param" => {
                    if fields.len() != 3 {
                        return Err(err("'param' expects a name and a value".into()));
                    }
                    params.set(fields[1], fields[2]).map_err(err)?;
                }
                "segment" => {
                    let v = nums(4)?;
                    segments.push(Segment::new(v[0], v[1], v[2], v[3]));
                }
                "landmark" => {
                    if fields.len() != 4 {
                        return Err(err("'landmark' expects x y seed".into()));
                    }
                    let v = nums(3).or_else(|_| Err(err("bad landmark".into())))?;
                    let seed = fields[3].parse::<u64>().map_err(|e| err(format!("seed: {e}")))?;
                    landmarks.push(Landmark {
                        position: Point2::new(v[0], v[1]),
                        descriptor_seed: seed,
                    });
                }
                "session" => {
                    if !sessions.last().unwrap().is_empty() {
                        sessions.push(Vec::new());
                    }
                }
                "waypoint" => {
                    let v = nums(3)?;
                    sessions.last_mut().unwrap().push(Waypoint::new(v[0], v[1], v[2]));
                }
                other => return Err(err(format!("unknown record '{other}'"))),
            }
        }
        if sessions.last().map_or(false, |s| s.is_empty()) && sessions.len() > 1 {
            sessions.pop();
        }
        params.validate()?;
        Ok(Self {
            world: World::new(segments, landmarks)?,
            sessions,
            params,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# gslam world\n");
        for (k, v) in self.params.entries() {
            let _ = writeln!(out, "param {k} {v}");
        }
        for s in &self.world.segments {
            let _ = writeln!(out, "segment {:?} {:?} {:?} {:?}", s.a.x, s.a.y, s.b.x, s.b.y);
        }
        for l in &self.world.landmarks {
            let _ = writeln!(out, "landmark {:?} {:?} {}", l.position.x, l.position.y, l.descriptor_seed);
        }
        for (i, session) in self.sessions.iter().enumerate() {
            if i > 0 {
                out.push_str("session\n");
            }
            for w in session {
                let _ = writeln!(out, "waypoint {:?} {:?} {:?}", w.x, w.y, w.speed);
            }
        }
        out
    }

    pub fn simulate(&self, seed: u64) -> Result<Vec<SensorFrame>> {
        simulate_sessions(&self.world, &self.sessions, &self.params, seed)
    }
}

/// Parses a trajectory file: `waypoint <x> <y> <speed>` records, split into
/// sessions by `session` lines. Comments start with `#`.
pub fn parse_trajectory(text: &str) -> Result<Vec<Vec<Waypoint>>> {
    let mut sessions: Vec<Vec<Waypoint>> = vec![Vec::new()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "session" if fields.len() == 1 => {
                if !sessions.last().unwrap().is_empty() {
                    sessions.push(Vec::new());
                }
            }
            "waypoint" if fields.len() == 4 => {
                let v = fields[1..]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| err(format!("{f}: {e}"))))
                    .collect::<Result<Vec<f64>>>()?;
                sessions.last_mut().unwrap().push(Waypoint::new(v[0], v[1], v[2]));
            }
            other => return Err(err(format!("unexpected record '{other}'"))),
        }
    }
    sessions.retain(|s| !s.is_empty());
    if sessions.is_empty() {
        return Err(Error::Simulation("trajectory has no waypoints".into()));
    }
    Ok(sessions)
}

/// Ready-made worlds and trajectories.
pub mod presets {
    use super::*;

    const OUTER: f64 = 12.0;
    const INNER: f64 = 8.0;
    /// Half side of the square driven in the ring world.
    pub const RING_PATH: f64 = 10.0;

    fn wall_landmarks(seg: &Segment, spacing: f64, offset: f64, seed: &mut u64, out: &mut Vec<Landmark>) {
        let e = seg.b - seg.a;
        let len = e.norm();
        let dir = e / len;
        let normal = nalgebra::Vector2::new(-dir.y, dir.x);
        let n = (len / spacing).floor() as usize;
        for k in 0..n {
            let s = (k as f64 + 0.5) * spacing;
            out.push(Landmark {
                position: seg.a + dir * s + normal * offset,
                descriptor_seed: *seed,
            });
            *seed += 1;
        }
    }

    /// Square ring corridor, 4 m wide, with pillars on the outer wall and
    /// landmarks every 0.3 m on every corridor-facing wall.
    pub fn ring_world() -> World {
        let mut segments = Vec::new();
        let mut landmarks = Vec::new();
        let mut seed = 1000;
        // Outer walls, counter-clockwise so the corridor is on the left.
        let outer = [(-OUTER, -OUTER), (OUTER, -OUTER), (OUTER, OUTER), (-OUTER, OUTER)];
        for i in 0..4 {
            let (x1, y1) = outer[i];
            let (x2, y2) = outer[(i + 1) % 4];
            let s = Segment::new(x1, y1, x2, y2);
            wall_landmarks(&s, 0.3, 0.02, &mut seed, &mut landmarks);
            segments.push(s);
        }
        // Inner block, clockwise so the corridor is on the left.
        let inner = [(-INNER, -INNER), (-INNER, INNER), (INNER, INNER), (INNER, -INNER)];
        for i in 0..4 {
            let (x1, y1) = inner[i];
            let (x2, y2) = inner[(i + 1) % 4];
            let s = Segment::new(x1, y1, x2, y2);
            wall_landmarks(&s, 0.3, 0.02, &mut seed, &mut landmarks);
            segments.push(s);
        }
        // Pillars: small boxes along the outer walls, every 5 m, irregular.
        let mut k = 0;
        for side in 0..4 {
            let mut s = -9.0;
            while s <= 9.0 {
                let depth = 0.3 + 0.1 * (k % 3) as f64;
                let width = 0.4 + 0.2 * (k % 2) as f64;
                let (cx, cy, along_x) = match side {
                    0 => (s, -OUTER + depth / 2.0, true),
                    1 => (OUTER - depth / 2.0, s, false),
                    2 => (-s, OUTER - depth / 2.0, true),
                    _ => (-OUTER + depth / 2.0, -s, false),
                };
                let (hx, hy) = if along_x { (width / 2.0, depth / 2.0) } else { (depth / 2.0, width / 2.0) };
                let corners = [(cx - hx, cy - hy), (cx + hx, cy - hy), (cx + hx, cy + hy), (cx - hx, cy + hy)];
                for i in 0..4 {
                    let (x1, y1) = corners[i];
                    let (x2, y2) = corners[(i + 1) % 4];
                    segments.push(Segment::new(x1, y1, x2, y2));
                }
                s += 5.0 + 0.7 * (k % 2) as f64;
                k += 1;
            }
        }
        World { segments, landmarks }
    }

    /// Counter-clockwise laps of the ring world's center square, starting
    /// mid-way along the bottom side, covering `distance` meters.
    pub fn square_loop(distance: f64, speed: f64) -> Vec<Waypoint> {
        square_loop_from(0, distance, speed)
    }

    /// Like [`square_loop`] but starting at the middle of side `start_side`
    /// (0 bottom, 1 right, 2 top, 3 left).
    pub fn square_loop_from(start_side: usize, distance: f64, speed: f64) -> Vec<Waypoint> {
        let r = RING_PATH;
        let corners = [(r, -r), (r, r), (-r, r), (-r, -r)];
        let mids = [(0.0, -r), (r, 0.0), (0.0, r), (-r, 0.0)];
        let (sx, sy) = mids[start_side % 4];
        let mut out = vec![Waypoint::new(sx, sy, speed)];
        let mut left = distance;
        let mut pos = (sx, sy);
        let mut corner = start_side % 4;
        while left > 1e-9 {
            let (cx, cy) = corners[corner];
            let d = ((cx - pos.0) as f64).hypot(cy - pos.1);
            if d >= left {
                let f = left / d;
                out.push(Waypoint::new(pos.0 + (cx - pos.0) * f, pos.1 + (cy - pos.1) * f, speed));
                break;
            }
            out.push(Waypoint::new(cx, cy, speed));
            left -= d;
            pos = (cx, cy);
            corner = (corner + 1) % 4;
        }
        out
    }

    /// Two parallel walls 2 m apart along x, open at both ends beyond the
    /// range of a short-range lidar.
    pub fn corridor_world(length: f64) -> World {
        World {
            segments: vec![
                Segment::new(-40.0, 1.0, length + 40.0, 1.0),
                Segment::new(-40.0, -1.0, length + 40.0, -1.0),
            ],
            landmarks: Vec::new(),
        }
    }

    /// Straight 30 m run down the corridor, slowing from 1.0 to 0.2 m/s.
    pub fn decelerating_corridor_run() -> Vec<Waypoint> {
        let speeds = [1.0, 0.8, 0.6, 0.45, 0.3, 0.2];
        let mut out = vec![Waypoint::new(0.0, 0.0, speeds[0])];
        for (i, s) in speeds.iter().enumerate() {
            out.push(Waypoint::new(5.0 * (i + 1) as f64, 0.0, *s));
        }
        out
    }

    /// 10 x 8 m room with a few boxes; rich structure for registration tests.
    pub fn room_world() -> World {
        let mut segments = vec![
            Segment::new(-5.0, -4.0, 5.0, -4.0),
            Segment::new(5.0, -4.0, 5.0, 4.0),
            Segment::new(5.0, 4.0, -5.0, 4.0),
            Segment::new(-5.0, 4.0, -5.0, -4.0),
        ];
        for &(cx, cy, hx, hy) in &[(2.5, 1.5, 0.4, 0.3), (-2.0, -2.0, 0.5, 0.5), (-3.0, 2.5, 0.3, 0.6), (3.0, -2.5, 0.6, 0.2)] {
            let c = [(cx - hx, cy - hy), (cx + hx, cy - hy), (cx + hx, cy + hy), (cx - hx, cy + hy)];
            for i in 0..4 {
                segments.push(Segment::new(c[i].0, c[i].1, c[(i + 1) % 4].0, c[(i + 1) % 4].1));
            }
        }
        let mut landmarks = Vec::new();
        let mut seed = 1;
        for s in segments.clone().iter().take(4) {
            wall_landmarks(&Segment { a: s.a, b: s.b }, 0.25, 0.02, &mut seed, &mut landmarks);
        }
        World { segments, landmarks }
    }

    /// Names accepted by [`named`].
    pub const NAMES: [&str; 3] = ["ring", "two-session", "corridor"];

    /// Built-in world, trajectory and default sensor parameters:
    /// - `ring`: 200 m around the ring world;
    /// - `two-session`: two 120 m sessions in the ring world, the second
    ///   starting on the opposite side;
    /// - `corridor`: a decelerating 30 m run down a featureless corridor.
    pub fn named(name: &str) -> Option<WorldFile> {
        let (world, sessions) = match name {
            "ring" => (ring_world(), vec![square_loop(200.0, 1.0)]),
            "two-session" => (ring_world(), vec![square_loop(120.0, 1.0), square_loop_from(2, 120.0, 1.0)]),
            "corridor" => (corridor_world(30.0), vec![decelerating_corridor_run()]),
            _ => return None,
        };
        Some(WorldFile {
            world,
            sessions,
            params: SimParams::default(),
        })
    }
}
