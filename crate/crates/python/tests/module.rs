use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    use pygslam::pygslam as module;
    pyo3::append_to_inittab!(module);
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        let code = std::ffi::CString::new(format!("import pygslam as g\n{code}")).unwrap();
        py.run(&code, Some(&globals), None).map_err(|e| e.display(py)).unwrap();
    });
}

#[test]
fn module_runs_a_preset() {
    run(r#"
frames = g.Frames.preset("corridor", seed=2)
assert len(frames) > 100
t = g.run_slam(frames, g.Config({"Rtabmap/MemoryThr": 20, "Rtabmap/LoopThr": 0.2}))
assert t.node_count > 10
assert max(t.wm_sizes()) <= 20 + int(g.Config().get("Mem/STMSize"))
assert len(t.trajectory()) == t.node_count
assert set(g.PRESETS) == {"ring", "two-session", "corridor"}
"#);
}
