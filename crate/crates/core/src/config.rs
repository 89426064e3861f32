//! Run configuration.
//!
//! Keys use the `Group/Name` spelling of the original system's parameter
//! tables so that published parameter sets can be pasted into a config file
//! directly. The file format is one `Key = value` per line; `#` starts a
//! comment. Unknown keys produce a warning, not an error.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Where the odometry pose stream comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdometryStrategy {
    /// Scan-to-scan ICP against the last key frame.
    S2S,
    /// Scan-to-map ICP against a bounded point cloud map.
    S2M,
    /// External (wheel) odometry only.
    External,
    /// Scan-to-map ICP seeded by external odometry.
    ExternalS2M,
}

impl FromStr for OdometryStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s2s" => Ok(Self::S2S),
            "s2m" => Ok(Self::S2M),
            "external" => Ok(Self::External),
            "externals2m" | "external->s2m" | "wheelimu->s2m" => Ok(Self::ExternalS2M),
            other => Err(format!("unknown odometry strategy '{other}'")),
        }
    }
}

impl fmt::Display for OdometryStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::S2S => "S2S",
            Self::S2M => "S2M",
            Self::External => "External",
            Self::ExternalS2M => "ExternalS2M",
        };
        f.write_str(s)
    }
}

impl OdometryStrategy {
    pub fn uses_icp(&self) -> bool {
        !matches!(self, Self::External)
    }

    pub fn uses_external(&self) -> bool {
        matches!(self, Self::External | Self::ExternalS2M)
    }
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.trim().parse().map_err(|e| format!("{e}"))
    }
    fn format_value(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.trim().parse().map_err(|e| format!("{e}"))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.trim().parse().map_err(|e| format!("{e}"))
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(format!("expected a boolean, got '{other}'")),
        }
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.trim().to_string())
    }
    fn format_value(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for OdometryStrategy {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn format_value(&self) -> String {
        self.to_string()
    }
}

macro_rules! config_keys {
    ($( $field:ident : $ty:ty = $default:expr => $key:literal, $doc:literal; )*) => {
        /// All tunable parameters of a run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $( #[doc = $doc] pub $field: $ty, )*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl Config {
            /// `(key, description)` for every recognised key, in file order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[ $( ($key, $doc), )* ];

            /// Sets a key from its textual value. Returns `Ok(false)` for
            /// unknown keys.
            pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
                match key {
                    $( $key => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("{}: {}", $key, e)))?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( $key => Some(self.$field.format_value()), )*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    detection_rate: f64 = 2.0 => "Rtabmap/DetectionRate", "Map update (node creation) rate in Hz.";
    time_threshold_ms: f64 = 0.0 => "Rtabmap/TimeThr", "Maximum map update time in ms before WM nodes are transferred to LTM (0 disables).";
    memory_threshold: usize = 0 => "Rtabmap/MemoryThr", "Maximum number of nodes in WM (0 disables).";
    loop_threshold: f64 = 0.11 => "Rtabmap/LoopThr", "Posterior a loop closure hypothesis must reach to be accepted.";
    rehearsal_similarity: f64 = 0.2 => "Mem/RehearsalSimilarity", "Word overlap ratio above which consecutive nodes are merged by weight.";
    stm_size: usize = 30 => "Mem/STMSize", "Short-term memory capacity in nodes.";
    max_features: usize = 500 => "Kp/MaxFeatures", "Maximum descriptors quantized per node (highest response first).";
    min_inliers: usize = 20 => "Vis/MinInliers", "Minimum RANSAC inliers to accept a loop closure transform.";
    nndr: f64 = 0.6 => "Vis/CorNNDR", "Nearest neighbor distance ratio for descriptor matching.";
    scan_keyframe_threshold: f64 = 0.9 => "Odom/ScanKeyFrameThr", "Correspondence ratio under which a new key frame is taken (or the scan map updated).";
    scan_map_max_size: usize = 10000 => "OdomF2M/ScanMaxSize", "Maximum points kept in the scan-to-map odometry cloud.";
    scan_subtract_radius: f64 = 0.05 => "OdomF2M/ScanSubtractRadius", "New points closer than this to the map are not added (m).";
    min_complexity: f64 = 0.02 => "Icp/PointToPlaneMinComplexity", "Structural complexity under which translation along the degenerate axis comes from external odometry.";
    optimize_max_error: f64 = 1.0 => "RGBD/OptimizeMaxError", "Reject new loop/proximity links if any link deviates more than this factor of its translational standard deviation (0 disables).";
    proximity_max_graph_depth: usize = 50 => "RGBD/ProximityMaxGraphDepth", "Proximity candidates must be fewer links than this from the current node.";
    cell_size: f64 = 0.05 => "Grid/CellSize", "Occupancy grid resolution (m).";
    odom_strategy: OdometryStrategy = OdometryStrategy::S2M => "Odom/Strategy", "Odometry source: S2S, S2M, External or ExternalS2M.";
    icp_range_max: f64 = 0.0 => "Icp/RangeMax", "Drop lidar returns beyond this range before odometry and mapping (m, 0 keeps all).";
    voxel_size: f64 = 0.05 => "Icp/VoxelSize", "Voxel filter size applied to scans (m).";
    max_correspondence_distance: f64 = 0.1 => "Icp/MaxCorrespondenceDistance", "ICP correspondence rejection distance (m).";
    coarse_correspondence_distance: f64 = 1.0 => "Icp/CoarseCorrespondenceDistance", "Gate of a first ICP pass run before the fine pass (m, not above Icp/MaxCorrespondenceDistance disables).";
    icp_iterations: usize = 30 => "Icp/Iterations", "Maximum ICP iterations.";
    icp_epsilon: f64 = 1e-5 => "Icp/Epsilon", "ICP convergence threshold on the per-iteration update (m and rad).";
    point_to_plane: bool = true => "Icp/PointToPlane", "Use point-to-plane (true) or point-to-point (false) ICP.";
    normal_k: usize = 5 => "Icp/PointToPlaneK", "Neighbors used for normal estimation.";
    normal_max_radius: f64 = 0.5 => "Icp/NormalMaxRadius", "Points whose normal neighborhood is wider than this are dropped (m).";
    normal_max_curvature: f64 = 0.01 => "Icp/NormalMaxCurvature", "Points whose normal neighborhood curvature exceeds this are dropped.";
    min_correspondence_ratio: f64 = 0.2 => "Icp/CorrespondenceRatio", "Registrations matching fewer source points than this fraction fail.";
    external_linear_noise: f64 = 0.02 => "Odom/ExternalLinearNoise", "External odometry translation noise, standard deviation as a fraction of distance.";
    external_angular_noise: f64 = 0.008726646259971648 => "Odom/ExternalAngularNoise", "External odometry rotation noise, standard deviation in rad/s.";
    stationary_linear: f64 = 0.01 => "Mem/StationaryLinear", "Displacement (m) under which a rehearsed node is discarded.";
    stationary_angular: f64 = 0.01 => "Mem/StationaryAngular", "Rotation (rad) under which a rehearsed node is discarded.";
    transfer_ratio: f64 = 0.1 => "Mem/TransferRatio", "Fraction of WM transferred when the time threshold is exceeded.";
    retrieval_depth: usize = 2 => "Mem/RetrievalDepth", "Graph radius (links) retrieved from LTM around a loop closure.";
    max_retrieved: usize = 2 => "Rtabmap/MaxRetrieved", "LTM nodes of the local neighborhood brought back to WM per update.";
    local_radius: f64 = 10.0 => "RGBD/LocalRadius", "Radius (m) of the local neighborhood around the current pose.";
    local_immunization_ratio: f64 = 0.25 => "RGBD/LocalImmunizationRatio", "Fraction of the WM size reserved for local nodes exempt from transfer.";
    ltm_journal: String = String::new() => "Mem/LtmJournal", "Path of the on-disk LTM journal (empty keeps LTM in memory).";
    loop_detection: bool = true => "Rtabmap/LoopClosureDetection", "Enable appearance-based loop closure detection.";
    proximity_by_space: bool = true => "RGBD/ProximityBySpace", "Enable proximity detection with laser scans.";
    proximity_radius: f64 = 1.0 => "RGBD/ProximityRadius", "Metric radius for proximity candidates (m).";
    optimize: bool = true => "RGBD/OptimizeGraph", "Enable graph optimization.";
    ransac_iterations: usize = 200 => "Vis/RansacIterations", "RANSAC iterations for loop closure transforms.";
    inlier_distance: f64 = 0.1 => "Vis/InlierDistance", "RANSAC inlier distance (m).";
    new_place_self_prob: f64 = 0.9 => "Bayes/NewPlaceSelfProb", "Transition probability of staying in the new-place hypothesis.";
    optimizer_iterations: usize = 100 => "Optimizer/Iterations", "Maximum optimizer iterations.";
    optimizer_epsilon: f64 = 1e-6 => "Optimizer/Epsilon", "Relative chi2 decrease under which optimization stops.";
    grid_ray_trace_misses: bool = false => "Grid/RayTraceMisses", "Mark free space along beams without a return, up to the sensor range.";
    grid_range_max: f64 = 5.0 => "Grid/RangeMax", "Returns farther than this (m) only clear space in local grids.";
    grid_global_assembly: bool = true => "Grid/GlobalAssembly", "Maintain the global occupancy grid during the run.";
    seed: u64 = 0 => "Rtabmap/Seed", "Seed of the deterministic RANSAC sampler.";
}

impl Config {
    /// Parses `Key = value` lines on top of the defaults. Returns the config
    /// and one warning per unknown key.
    pub fn parse(text: &str) -> Result<(Config, Vec<String>)> {
        let mut config = Config::default();
        let warnings = config.apply(text)?;
        Ok((config, warnings))
    }

    /// Applies `Key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 'Key = value', got '{line}'"),
                });
            };
            let key = key.trim();
            if !self.set(key, value).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })? {
                let msg = format!("line {}: unknown key '{key}' ignored", i + 1);
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        self.validate()?;
        Ok(warnings)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("Rtabmap/DetectionRate", self.detection_rate),
            ("OdomF2M/ScanSubtractRadius", self.scan_subtract_radius),
            ("Grid/CellSize", self.cell_size),
            ("Grid/RangeMax", self.grid_range_max),
            ("Icp/VoxelSize", self.voxel_size),
            ("Icp/MaxCorrespondenceDistance", self.max_correspondence_distance),
            ("Icp/Epsilon", self.icp_epsilon),
            ("Icp/NormalMaxRadius", self.normal_max_radius),
            ("Icp/NormalMaxCurvature", self.normal_max_curvature),
            ("RGBD/ProximityRadius", self.proximity_radius),
            ("Vis/InlierDistance", self.inlier_distance),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be > 0, got {v}")));
            }
        }
        if !(self.local_radius >= 0.0 && self.local_radius.is_finite()) {
            return Err(Error::Config(format!("RGBD/LocalRadius must be >= 0, got {}", self.local_radius)));
        }
        let counts = [
            ("Mem/STMSize", self.stm_size),
            ("Kp/MaxFeatures", self.max_features),
            ("OdomF2M/ScanMaxSize", self.scan_map_max_size),
            ("Icp/Iterations", self.icp_iterations),
            ("Icp/PointToPlaneK", self.normal_k),
            ("Optimizer/Iterations", self.optimizer_iterations),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be > 0")));
            }
        }
        if !(self.loop_threshold > 0.0 && self.loop_threshold < 1.0) {
            return Err(Error::Config(format!(
                "Rtabmap/LoopThr must be in (0, 1), got {}",
                self.loop_threshold
            )));
        }
        let unit = [
            ("Mem/RehearsalSimilarity", self.rehearsal_similarity),
            ("Odom/ScanKeyFrameThr", self.scan_keyframe_threshold),
            ("Icp/CorrespondenceRatio", self.min_correspondence_ratio),
            ("Mem/TransferRatio", self.transfer_ratio),
            ("RGBD/LocalImmunizationRatio", self.local_immunization_ratio),
            ("Bayes/NewPlaceSelfProb", self.new_place_self_prob),
            ("Vis/CorNNDR", self.nndr),
        ];
        for (key, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{key} must be in [0, 1], got {v}")));
            }
        }
        let non_negative = [
            ("Rtabmap/TimeThr", self.time_threshold_ms),
            ("Icp/RangeMax", self.icp_range_max),
            ("Icp/CoarseCorrespondenceDistance", self.coarse_correspondence_distance),
            ("Icp/PointToPlaneMinComplexity", self.min_complexity),
            ("RGBD/OptimizeMaxError", self.optimize_max_error),
            ("Odom/ExternalLinearNoise", self.external_linear_noise),
            ("Odom/ExternalAngularNoise", self.external_angular_noise),
            ("Mem/StationaryLinear", self.stationary_linear),
            ("Mem/StationaryAngular", self.stationary_angular),
            ("Optimizer/Epsilon", self.optimizer_epsilon),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Memory management is active when either threshold is set.
    pub fn memory_management_enabled(&self) -> bool {
        self.time_threshold_ms > 0.0 || self.memory_threshold > 0
    }

    /// Serializes every key with its current value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in Self::KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap_or_default()));
        }
        out
    }

    /// Help text listing every key, its default and description.
    pub fn describe() -> String {
        let defaults = Config::default();
        let mut out = String::from("Configuration keys (Key = default: description):\n");
        for (key, doc) in Self::KEYS {
            out.push_str(&format!(
                "  {key} = {}: {doc}\n",
                defaults.get(key).unwrap_or_default()
            ));
        }
        out
    }
}
