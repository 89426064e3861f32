use gslam::config::OdometryStrategy;
use gslam::eval;
use gslam::pipeline::{run_slam, MapUpdater, OdometryStage, RunOptions};
use gslam::sim::{presets, simulate_sessions, SensorFrame, SimParams};
use gslam::{Config, LinkKind};

fn ring(distances: &[(usize, f64)], params: &SimParams, seed: u64) -> Vec<SensorFrame> {
    let sessions: Vec<_> = distances.iter().map(|&(side, d)| presets::square_loop_from(side, d, 1.0)).collect();
    simulate_sessions(&presets::ring_world(), &sessions, params, seed).unwrap()
}

fn external(strategy: OdometryStrategy) -> Config {
    let mut c = Config::default();
    c.odom_strategy = strategy;
    c.grid_global_assembly = false;
    c
}

#[test]
fn noiseless_loop_with_wheel_seeded_scan_matching() {
    let frames = ring(&[(0, 90.0)], &SimParams::noiseless(), 1);
    let trace = run_slam(&frames, &external(OdometryStrategy::ExternalS2M), &RunOptions::default()).unwrap();
    let end = trace.final_ate_end().unwrap();
    assert!(end <= 2.0 * trace.config.cell_size, "ATE_end {end}");
    assert!(trace.lost_frames.is_empty());
    assert!(trace.link_counts().1 > 0);
}

#[test]
fn overlapping_sessions_merge_into_one_graph() {
    let frames = ring(&[(0, 60.0), (2, 60.0)], &SimParams::default(), 3);
    let trace = run_slam(&frames, &external(OdometryStrategy::External), &RunOptions::default()).unwrap();
    let sessions: std::collections::BTreeSet<u32> = trace.graph.nodes().map(|n| n.session).collect();
    assert_eq!(sessions.len(), 2);
    // No neighbor link crosses sessions; a loop or proximity link must.
    let bridging = trace
        .graph
        .links()
        .filter(|l| trace.graph.node(l.from).unwrap().session != trace.graph.node(l.to).unwrap().session)
        .inspect(|l| assert_ne!(l.kind, LinkKind::Neighbor))
        .count();
    assert!(bridging > 0);
    assert_eq!(trace.graph.components(|_| true).len(), 1);
    // The merged map is consistent in the frame of the first session.
    assert!(trace.final_ate_rmse().unwrap() < 0.1, "{}", trace.final_ate_rmse().unwrap());
}

/// The map update only sees the pose stream: feeding it messages from the
/// external odometry gives the same map whatever odometry its config names.
#[test]
fn mapping_is_independent_of_the_odometry_source() {
    let frames = ring(&[(0, 30.0)], &SimParams::default(), 5);
    let ext = external(OdometryStrategy::External);
    let mut stage = OdometryStage::new(&ext);
    let messages: Vec<_> = frames.iter().map(|f| stage.process(f)).collect();
    let map = |config: &Config| {
        let mut updater = MapUpdater::new(config).unwrap();
        for m in &messages {
            updater.process(m.clone()).unwrap();
        }
        updater.finish().unwrap()
    };
    let a = map(&ext);
    let b = map(&external(OdometryStrategy::S2S));
    assert_eq!(eval::stats_csv(&a.stats), eval::stats_csv(&b.stats));
    assert_eq!(a.trajectory(), b.trajectory());
    assert_eq!(a.graph.optimized_poses, b.graph.optimized_poses);

    let direct = run_slam(&frames, &ext, &RunOptions::default()).unwrap();
    assert_eq!(direct.trajectory(), a.trajectory());
}

#[test]
fn lost_odometry_leaves_a_flagged_gap() {
    let mut frames = ring(&[(0, 30.0)], &SimParams::default(), 6);
    for f in &mut frames[100..106] {
        f.scan.points.clear();
        f.scan.misses.clear();
    }
    let trace = run_slam(&frames, &Config::default(), &RunOptions::default()).unwrap();
    assert!(!trace.lost_frames.is_empty());
    assert!(trace.lost_frames.iter().all(|t| *t >= frames[100].stamp && *t <= frames[106].stamp));
    assert!(trace.stats.iter().any(|s| s.odometry_lost));
    // Mapping carried on past the gap.
    let last = trace.graph.nodes().last().unwrap();
    assert!(last.stamp > frames[200].stamp);
}

#[test]
fn threaded_and_serial_runs_agree() {
    let frames = ring(&[(0, 40.0)], &SimParams::default(), 8);
    let mut config = Config::default();
    config.memory_threshold = 20;
    let serial = run_slam(&frames, &config, &RunOptions::default()).unwrap();
    let threaded = run_slam(&frames, &config, &RunOptions { deterministic: false, queue_capacity: 2 }).unwrap();
    assert_eq!(eval::stats_csv(&serial.stats), eval::stats_csv(&threaded.stats));
    assert_eq!(serial.trajectory(), threaded.trajectory());
    assert_eq!(serial.full_grid().unwrap(), threaded.full_grid().unwrap());
}

#[test]
fn working_memory_stays_bounded() {
    let frames = ring(&[(0, 120.0)], &SimParams::default(), 9);
    let mut config = external(OdometryStrategy::External);
    config.memory_threshold = 15;
    config.stm_size = 5;
    let trace = run_slam(&frames, &config, &RunOptions::default()).unwrap();
    assert!(trace.stats.iter().all(|s| s.wm <= 15 + 5), "max wm {:?}", trace.stats.iter().map(|s| s.wm).max());
    assert!(trace.stats.last().unwrap().ltm > 0);
    assert!(trace.stats.iter().any(|s| s.retrieved > 0));
    assert_eq!(trace.stm_candidates, 0);
    // All nodes, LTM included, end up in the final map.
    assert_eq!(trace.graph.optimized_poses.len(), trace.graph.len());
    let total: usize = trace.stats.iter().map(|s| s.transferred).sum();
    assert!(total > 0);
}
