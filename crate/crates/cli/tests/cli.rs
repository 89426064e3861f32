use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gslam::sim::{presets, SimParams, Waypoint, WorldFile};
use gslam::Config;
use tempfile::TempDir;

fn gslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gslam"))
        .args(args)
        .env_remove("GSLAM_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A short loop in the room world.
fn small_world(dir: &Path) -> PathBuf {
    let wf = WorldFile {
        world: presets::room_world(),
        sessions: vec![vec![
            Waypoint::new(0.0, 0.0, 0.8),
            Waypoint::new(3.5, 0.0, 0.8),
            Waypoint::new(3.5, 3.0, 0.8),
            Waypoint::new(0.0, 3.0, 0.8),
            Waypoint::new(0.0, 0.0, 0.8),
        ]],
        params: SimParams { beams: 180, ..SimParams::default() },
    };
    let path = dir.join("world.txt");
    std::fs::write(&path, wf.to_text()).unwrap();
    path
}

fn simulate(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let frames = dir.join(name);
    let o = gslam(&["simulate", "--world", p(&small_world(dir)), "--seed", seed, "-o", p(&frames)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    frames
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = std::fs::read(simulate(dir.path(), "a.bin", "7")).unwrap();
    let b = std::fs::read(simulate(dir.path(), "b.bin", "7")).unwrap();
    let c = std::fs::read(simulate(dir.path(), "c.bin", "8")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn text_dump_runs_like_binary() {
    let dir = TempDir::new().unwrap();
    let bin = simulate(dir.path(), "f.bin", "3");
    let txt = dir.path().join("f.txt");
    let world = dir.path().join("world.txt");
    let o = gslam(&["simulate", "--world", p(&world), "--seed", "3", "--text", "-o", p(&txt)]);
    assert_eq!(code(&o), 0);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_eq!(code(&gslam(&["run", p(&bin), "--deterministic", "-o", p(&out_a)])), 0);
    assert_eq!(code(&gslam(&["run", p(&txt), "--deterministic", "-o", p(&out_b)])), 0);
    for f in ["trajectory.txt", "stats.csv", "map.pgm", "graph.bin"] {
        assert_eq!(std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_writes_outputs_and_evaluates() {
    let dir = TempDir::new().unwrap();
    let frames = simulate(dir.path(), "f.bin", "1");
    let out = dir.path().join("out");
    let o = gslam(&["run", p(&frames), "--set", "Rtabmap/MemoryThr=10", "-o", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("memory_management true"));
    for f in ["trajectory.txt", "odometry.txt", "ground_truth.txt", "stats.csv", "timing.csv", "graph.bin", "graph.g2o", "map.pgm", "map.yaml", "config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let traj = out.join("trajectory.txt");
    let o = gslam(&["eval", p(&traj), p(&traj)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ate_rmse 0.0\n"), "{}", stdout(&o));
    assert!(stdout(&o).contains("ate_end 0.0\n"));

    let o = gslam(&["eval", p(&traj), p(&out.join("ground_truth.txt"))]);
    assert_eq!(code(&o), 0);
    let rmse: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("ate_rmse "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(rmse > 0.0 && rmse < 0.2, "{rmse}");

    let maps = dir.path().join("maps");
    let o = gslam(&["export-map", p(&out), "-o", p(&maps)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(maps.join("map.pgm")).unwrap(), std::fs::read(out.join("map.pgm")).unwrap());
    assert!(std::fs::read_to_string(maps.join("map.yaml")).unwrap().contains("map.pgm"));

    let svg = dir.path().join("ate.svg");
    let o = gslam(&["plot", p(&out.join("stats.csv")), "-y", "ate", "-y", "wm", "-o", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = std::fs::read_to_string(svg).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<path").count() == 2);

    let o = gslam(&["plot", p(&out.join("stats.csv")), "-y", "nope", "-o", p(&dir.path().join("x.svg"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_thresholds_disable_memory_management() {
    let dir = TempDir::new().unwrap();
    let frames = simulate(dir.path(), "f.bin", "2");
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "Rtabmap/TimeThr = 0\nRtabmap/MemoryThr = 0\n").unwrap();
    let out = dir.path().join("out");
    let o = gslam(&["run", p(&frames), "-c", p(&cfg), "--set", "Mem/STMSize=2", "-o", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("memory_management false"));
    let stats = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    let header: Vec<&str> = stats.lines().next().unwrap().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    for line in stats.lines().skip(1) {
        let v: Vec<&str> = line.split(',').collect();
        assert_eq!(v[col("ltm")], "0");
        assert_eq!(v[col("transferred")], "0");
    }
    let saved = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("Rtabmap/MemoryThr = 0\n"));
    assert!(saved.contains("Mem/STMSize = 2\n"));
}

#[test]
fn unknown_config_keys_warn() {
    let dir = TempDir::new().unwrap();
    let frames = simulate(dir.path(), "f.bin", "4");
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(&cfg, "Rtabmap/LoopThr = 0.11\nVis/MaxFeatures = 400\n").unwrap();
    let o = gslam(&["run", p(&frames), "-c", p(&cfg), "-o", p(&dir.path().join("out"))]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning: line 2: unknown key 'Vis/MaxFeatures'"), "{}", stderr(&o));
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let frames = simulate(dir.path(), "f.bin", "5");
    let env_out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_gslam"))
        .args(["run", p(&frames)])
        .env("GSLAM_OUTPUT_DIR", &env_out)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(env_out.join("stats.csv").exists());
    assert!(!dir.path().join("gslam-out").exists());
}

#[test]
fn help_lists_every_config_key() {
    let o = gslam(&["run", "--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let defaults = Config::default();
    for (key, _) in Config::KEYS {
        let line = format!("{key} = {}:", defaults.get(key).unwrap());
        assert!(text.contains(&line), "missing {line}");
    }
    assert!(stdout(&gslam(&["--help"])).contains("Exit codes"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let o = gslam(&["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&gslam(&["run"])), 1);
    assert_eq!(code(&gslam(&["simulate", "-o", "x.bin"])), 1);

    let missing = dir.path().join("missing.bin");
    let o = gslam(&["run", p(&missing), "-o", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert_eq!(stderr(&o).lines().count(), 1, "{}", stderr(&o));

    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"\x00\x01garbage").unwrap();
    assert_eq!(code(&gslam(&["run", p(&junk), "-o", p(&dir.path().join("o"))])), 2);

    let frames = simulate(dir.path(), "f.bin", "6");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "Rtabmap/LoopThr = lots\n").unwrap();
    let o = gslam(&["run", p(&frames), "-c", p(&cfg), "-o", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error: "));
    assert_eq!(code(&gslam(&["run", p(&frames), "--set", "Rtabmap/LoopThr", "-o", "o"])), 1);

    let world = dir.path().join("bad_world.txt");
    std::fs::write(&world, "segment 0 0 1\n").unwrap();
    let o = gslam(&["simulate", "--world", p(&world), "-o", p(&dir.path().join("w.bin"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 1"));

    let t = dir.path().join("t.txt");
    std::fs::write(&t, "0.0 0 0 0\n").unwrap();
    assert_eq!(code(&gslam(&["eval", p(&t), p(&t)])), 2);

    // Writing into a path below a regular file fails at runtime.
    let o = gslam(&["simulate", "--world", p(&small_world(dir.path())), "-o", p(&junk.join("f.bin"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn preset_and_trajectory_override() {
    let dir = TempDir::new().unwrap();
    let traj = dir.path().join("traj.txt");
    std::fs::write(&traj, "waypoint 0 -10 1\nwaypoint 3 -10 1\n").unwrap();
    let world = dir.path().join("ring.txt");
    let frames = dir.path().join("f.bin");
    let o = gslam(&[
        "simulate", "--preset", "ring", "--trajectory", p(&traj), "--noiseless", "--dump-world", p(&world), "-o", p(&frames),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let wf = WorldFile::parse(&std::fs::read_to_string(&world).unwrap()).unwrap();
    assert_eq!(wf.sessions, vec![vec![Waypoint::new(0.0, -10.0, 1.0), Waypoint::new(3.0, -10.0, 1.0)]]);
    assert_eq!(wf.params.odom_linear_noise, 0.0);
    let frames = gslam::io::read_frames(&frames).unwrap();
    assert!(frames.len() >= 30 && frames.len() <= 40, "{}", frames.len());
}
