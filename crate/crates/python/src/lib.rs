//! Python module `pygslam`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gslam::pipeline::{self, RunOptions, RunTrace};
use gslam::registration::{self, IcpParams};
use gslam::sim::{presets, SensorFrame, WorldFile};
use gslam::{eval, io, Point2};
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

fn err(e: gslam::Error) -> PyErr {
    match e {
        gslam::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn points(xy: Vec<(f64, f64)>) -> Vec<Point2> {
    xy.into_iter().map(|(x, y)| Point2::new(x, y)).collect()
}

/// Rigid 2D transform.
#[pyclass(name = "Transform2", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyTransform2(gslam::Transform2);

#[pymethods]
impl PyTransform2 {
    #[new]
    #[pyo3(signature = (x=0.0, y=0.0, theta=0.0))]
    fn new(x: f64, y: f64, theta: f64) -> Self {
        Self(gslam::Transform2::new(x, y, theta))
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    fn compose(&self, other: &PyTransform2) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn __mul__(&self, other: &PyTransform2) -> Self {
        self.compose(other)
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// Transform taking this pose to `other`.
    fn relative(&self, other: &PyTransform2) -> Self {
        Self(self.0.relative(&other.0))
    }

    fn transform_point(&self, p: (f64, f64)) -> (f64, f64) {
        let q = self.0.transform_point(&Point2::new(p.0, p.1));
        (q.x, q.y)
    }

    fn to_tuple(&self) -> (f64, f64, f64) {
        (self.0.x, self.0.y, self.0.theta)
    }

    fn __repr__(&self) -> String {
        format!("Transform2({:?}, {:?}, {:?})", self.0.x, self.0.y, self.0.theta)
    }
}

/// SLAM parameters, addressed by their `Group/Name` keys.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone, Default)]
struct PyConfig(gslam::Config);

#[pymethods]
impl PyConfig {
    /// Defaults, then `overrides` as `{key: value}`.
    #[new]
    #[pyo3(signature = (overrides=None))]
    fn new(overrides: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut c = Self::default();
        for (k, v) in overrides.unwrap_or_default() {
            c.set(&k, &config_value(&v)?)?;
        }
        Ok(c)
    }

    /// Parses `Key = value` text. Returns the config and the warnings about
    /// unknown keys.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<(Self, Vec<String>)> {
        let (c, warnings) = gslam::Config::parse(text).map_err(err)?;
        Ok((Self(c), warnings))
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        gslam::Config::KEYS.iter().map(|(k, _)| *k).collect()
    }

    #[staticmethod]
    fn describe() -> String {
        gslam::Config::describe()
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.0.get(key).ok_or_else(|| PyKeyError::new_err(key.to_string()))
    }

    #[pyo3(name = "set")]
    fn py_set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.set(key, &config_value(value)?)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }
}

impl PyConfig {
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.0.clone();
        if !next.set(key, value).map_err(err)? {
            return Err(PyKeyError::new_err(key.to_string()));
        }
        next.validate().map_err(err)?;
        self.0 = next;
        Ok(())
    }
}

/// Python values as config text; booleans in lower case.
fn config_value(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(b.to_string());
    }
    Ok(v.str()?.to_string())
}

/// A recorded or simulated frame sequence.
#[pyclass(name = "Frames", frozen)]
struct PyFrames(Vec<SensorFrame>);

#[pymethods]
impl PyFrames {
    /// Simulates one of the built-in worlds: "ring", "two-session" or
    /// "corridor".
    #[staticmethod]
    #[pyo3(signature = (name, seed=0, noiseless=false))]
    fn preset(py: Python<'_>, name: &str, seed: u64, noiseless: bool) -> PyResult<Self> {
        let mut wf = presets::named(name).ok_or_else(|| {
            PyValueError::new_err(format!("unknown preset '{name}', expected one of {:?}", presets::NAMES))
        })?;
        if noiseless {
            wf.params = wf.params.without_noise();
        }
        py.detach(|| wf.simulate(seed)).map(Self).map_err(err)
    }

    /// Simulates a world definition given as text.
    #[staticmethod]
    #[pyo3(signature = (text, seed=0))]
    fn from_world(py: Python<'_>, text: &str, seed: u64) -> PyResult<Self> {
        let wf = WorldFile::parse(text).map_err(err)?;
        py.detach(|| wf.simulate(seed)).map(Self).map_err(err)
    }

    /// Reads a frames file, binary or text dump.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        io::read_frames(&path).map(Self).map_err(err)
    }

    #[pyo3(signature = (path, text=false))]
    fn save(&self, path: PathBuf, text: bool) -> PyResult<()> {
        let bytes = if text {
            io::frames_to_text(&self.0).into_bytes()
        } else {
            io::encode_frames(&self.0)
        };
        std::fs::write(path, bytes).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// `(stamp, x, y, theta)` of every frame.
    fn ground_truth(&self) -> Vec<(f64, f64, f64, f64)> {
        self.0.iter().map(|f| (f.stamp, f.gt_pose.x, f.gt_pose.y, f.gt_pose.theta)).collect()
    }

    /// Lidar points of frame `index`, in the sensor frame.
    fn scan(&self, index: usize) -> PyResult<Vec<(f64, f64)>> {
        let f = self.0.get(index).ok_or_else(|| PyValueError::new_err("frame index out of range"))?;
        Ok(f.scan.points.iter().map(|p| (p.x, p.y)).collect())
    }
}

/// Result of a SLAM run.
#[pyclass(name = "RunTrace", frozen)]
struct PyRunTrace(RunTrace);

#[pymethods]
impl PyRunTrace {
    #[getter]
    fn node_count(&self) -> usize {
        self.0.graph.len()
    }

    /// `(neighbor, loop closure, proximity)` link counts.
    #[getter]
    fn link_counts(&self) -> (usize, usize, usize) {
        self.0.link_counts()
    }

    /// Final `(stamp, x, y, theta)` of every node.
    fn trajectory(&self) -> Vec<(f64, f64, f64, f64)> {
        self.0.trajectory().iter().map(|(t, p)| (*t, p.x, p.y, p.theta)).collect()
    }

    /// Online trajectory error after every map update.
    fn ate_series(&self) -> Vec<f64> {
        self.0.ate_series()
    }

    /// Error of the last node on the final map.
    fn final_ate_end(&self) -> Option<f64> {
        self.0.final_ate_end()
    }

    fn final_ate_rmse(&self) -> PyResult<f64> {
        self.0.final_ate_rmse().map_err(err)
    }

    /// Working-memory size after every update.
    fn wm_sizes(&self) -> Vec<usize> {
        self.0.stats.iter().map(|s| s.wm).collect()
    }

    fn stats_csv(&self) -> String {
        eval::stats_csv(&self.0.stats)
    }

    fn write_outputs(&self, dir: PathBuf) -> PyResult<()> {
        self.0.write_outputs(&dir).map_err(err)
    }
}

/// Runs the full pipeline over `frames`.
#[pyfunction]
#[pyo3(signature = (frames, config=None, deterministic=true))]
fn run_slam(py: Python<'_>, frames: &PyFrames, config: Option<PyConfig>, deterministic: bool) -> PyResult<PyRunTrace> {
    let config = config.unwrap_or_default().0;
    let options = RunOptions {
        deterministic,
        ..RunOptions::default()
    };
    py.detach(|| pipeline::run_slam(&frames.0, &config, &options))
        .map(PyRunTrace)
        .map_err(err)
}

/// Registers `source` points onto `target` points with point-to-plane ICP.
/// Returns the transform and whether it converged.
#[pyfunction]
#[pyo3(signature = (source, target, guess=None, max_correspondence_distance=0.1, coarse_correspondence_distance=1.0))]
fn icp(
    source: Vec<(f64, f64)>,
    target: Vec<(f64, f64)>,
    guess: Option<PyTransform2>,
    max_correspondence_distance: f64,
    coarse_correspondence_distance: f64,
) -> PyResult<(PyTransform2, bool)> {
    let source = gslam::Scan::from_points(points(source));
    let target = registration::estimate_normals(&gslam::Scan::from_points(points(target)), 10).map_err(err)?;
    let params = IcpParams {
        max_correspondence_distance,
        coarse_correspondence_distance,
        ..IcpParams::default()
    };
    let guess = guess.map(|g| g.0).unwrap_or_default();
    let r = registration::icp(&source, &target, guess, &params).map_err(err)?;
    Ok((PyTransform2(r.transform), r.converged))
}

/// Structural complexity of a point set, in [0, 1].
#[pyfunction]
fn structural_complexity(points_xy: Vec<(f64, f64)>) -> PyResult<f64> {
    let scan = registration::estimate_normals(&gslam::Scan::from_points(points(points_xy)), 10).map_err(err)?;
    registration::structural_complexity(&scan).map_err(err)
}

/// Absolute trajectory error (RMSE) between `(stamp, x, y, theta)` lists.
#[pyfunction]
#[pyo3(signature = (estimate, ground_truth, align=true))]
fn ate_rmse(estimate: Vec<(f64, f64, f64, f64)>, ground_truth: Vec<(f64, f64, f64, f64)>, align: bool) -> PyResult<f64> {
    let conv = |v: Vec<(f64, f64, f64, f64)>| -> Vec<eval::StampedPose> {
        v.into_iter().map(|(t, x, y, th)| (t, gslam::Transform2::new(x, y, th))).collect()
    };
    let mut gt = conv(ground_truth);
    gt.sort_by(|a, b| a.0.total_cmp(&b.0));
    eval::ate_rmse(&conv(estimate), &gt, align).map_err(err)
}

#[pymodule]
pub fn pygslam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransform2>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyFrames>()?;
    m.add_class::<PyRunTrace>()?;
    m.add_function(wrap_pyfunction!(run_slam, m)?)?;
    m.add_function(wrap_pyfunction!(icp, m)?)?;
    m.add_function(wrap_pyfunction!(structural_complexity, m)?)?;
    m.add_function(wrap_pyfunction!(ate_rmse, m)?)?;
    m.add("PRESETS", presets::NAMES.to_vec())?;
    Ok(())
}
