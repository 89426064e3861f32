"""Smoke test of the pygslam extension.

Run with `python3 python/smoke_test.py` (or pytest). When pygslam is not
importable, the extension is built with cargo and loaded from target/.
"""

import importlib.util
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_pygslam():
    try:
        import pygslam

        return pygslam
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "gslam-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"
    lib = next(p for p in (target / "libpygslam.so", target / "libpygslam.dylib", target / "pygslam.dll") if p.exists())
    out = Path(tempfile.mkdtemp()) / "pygslam.so"
    shutil.copy(lib, out)
    spec = importlib.util.spec_from_file_location("pygslam", out)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    sys.modules["pygslam"] = module
    return module


g = load_pygslam()


def test_transform():
    a = g.Transform2(1.0, 2.0, math.pi / 2)
    b = a * a.inverse()
    assert max(abs(v) for v in b.to_tuple()) < 1e-12
    x, y = a.transform_point((1.0, 0.0))
    assert abs(x - 1.0) < 1e-12 and abs(y - 3.0) < 1e-12
    assert "Transform2(" in repr(a)


def test_config():
    c = g.Config({"Rtabmap/MemoryThr": 50, "Icp/PointToPlane": False})
    assert c.get("Rtabmap/MemoryThr") == "50"
    assert c.get("Icp/PointToPlane") == "false"
    assert "Rtabmap/LoopThr" in g.Config.keys()
    parsed, warnings = g.Config.parse("Rtabmap/LoopThr = 0.2\nNot/AKey = 1\n")
    assert parsed.get("Rtabmap/LoopThr") == "0.2"
    assert len(warnings) == 1
    for bad in [("No/Such", 1), ("Rtabmap/LoopThr", "x")]:
        try:
            c.set(*bad)
        except (KeyError, ValueError):
            pass
        else:
            raise AssertionError(f"accepted {bad}")


def test_icp_recovers_offset():
    frames = g.Frames.preset("ring", seed=1, noiseless=True)
    pts = frames.scan(0)
    truth = g.Transform2(0.05, -0.03, 0.02)
    moved = [truth.inverse().transform_point(p) for p in pts]
    t, converged = g.icp(moved, pts)
    assert converged
    assert abs(t.x - truth.x) < 1e-3 and abs(t.y - truth.y) < 1e-3 and abs(t.theta - truth.theta) < 1e-3
    assert 0.0 <= g.structural_complexity(pts) <= 1.0


def test_run_and_evaluate():
    frames = g.Frames.from_world(
        "\n".join(
            [
                "param beams 180",
                "segment -5 -4 5 -4",
                "segment 5 -4 5 4",
                "segment 5 4 -5 4",
                "segment -5 4 -5 -4",
                "segment 1 1 2 1",
                "segment 2 1 2 2",
                "waypoint 0 0 0.8",
                "waypoint 3 0 0.8",
                "waypoint 3 -2 0.8",
                "waypoint 0 -2 0.8",
            ]
        ),
        seed=3,
    )
    assert len(frames) > 50
    trace = g.run_slam(frames, g.Config({"Rtabmap/MemoryThr": 5}))
    assert trace.node_count > 5
    assert max(trace.wm_sizes()) <= 5 + int(g.Config().get("Mem/STMSize"))
    assert trace.final_ate_rmse() < 0.2
    gt = frames.ground_truth()
    assert g.ate_rmse(gt, gt) == 0.0
    with tempfile.TemporaryDirectory() as d:
        trace.write_outputs(d)
        assert (Path(d) / "map.pgm").exists()
        frames.save(Path(d) / "f.bin")
        assert len(g.Frames.load(Path(d) / "f.bin")) == len(frames)
    again = g.run_slam(frames, g.Config({"Rtabmap/MemoryThr": 5}))
    assert again.stats_csv() == trace.stats_csv()


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")
