//! `gslam`: batch front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input data, 3 runtime failure.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gslam::eval::{self, StampedPose};
use gslam::pipeline::{self, RunOptions};
use gslam::sim::{self, presets, WorldFile};
use gslam::{io, Config, Error};

const DEFAULT_OUTPUT: &str = "gslam-out";

#[derive(Debug, Parser)]
#[command(name = "gslam", version, about = "2D lidar graph-SLAM with memory management")]
#[command(after_long_help = after_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn after_help() -> String {
    format!(
        "Exit codes: 0 ok, 1 usage, 2 data, 3 runtime.\n\
         GSLAM_OUTPUT_DIR overrides the default output directory of `run`.\n\n{}",
        Config::describe()
    )
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a world and trajectory into a frames file.
    Simulate(SimulateArgs),
    /// Run SLAM on a frames file.
    #[command(after_long_help = Config::describe())]
    Run(RunArgs),
    /// Trajectory error against ground truth.
    Eval(EvalArgs),
    /// Occupancy grid of a saved graph as PGM + YAML.
    ExportMap(ExportArgs),
    /// SVG line chart of CSV columns.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// 200 m around the ring world.
    Ring,
    /// Two 120 m sessions in the ring world, the second starting on another side.
    TwoSession,
    /// Decelerating 30 m run down a featureless corridor.
    Corridor,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// World file (segments, landmarks, sensor params, waypoints).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    world: Option<PathBuf>,
    /// Built-in world and trajectory.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Trajectory file replacing the world's waypoints.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable every noise source.
    #[arg(long)]
    noiseless: bool,
    /// Frames file to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Write the lossless text dump instead of the binary container.
    #[arg(long)]
    text: bool,
    /// Also write the world definition used.
    #[arg(long)]
    dump_world: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Frames file, binary or text dump.
    frames: PathBuf,
    /// Config file, one `Key = value` per line.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Extra `Key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory [default: $GSLAM_OUTPUT_DIR or ./gslam-out].
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Run odometry and map update on one thread.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 16)]
    queue: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Estimated trajectory (`stamp x y theta` lines).
    estimate: PathBuf,
    ground_truth: PathBuf,
    /// Skip the rigid alignment.
    #[arg(long)]
    no_align: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// graph.bin of a run, or the run's output directory.
    graph: PathBuf,
    /// Cell size; defaults to Grid/CellSize of the run's config.txt.
    #[arg(long)]
    cell_size: Option<f64>,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    output: PathBuf,
    #[arg(long, default_value = "map")]
    name: String,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// CSV files (stats.csv, timing.csv, ...); one series per file and column.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Columns to plot.
    #[arg(short, long, required = true)]
    y: Vec<String>,
    #[arg(short, long, default_value = "update")]
    x: String,
    #[arg(long)]
    title: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }
}

/// Errors while reading inputs are data errors.
fn data(context: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", context.display()))
}

/// Errors while processing are runtime errors, except bad parameters.
fn runtime(e: Error) -> Failure {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Parse { .. } | Error::Format(_) => Failure::Data(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn preset_world(p: Preset) -> WorldFile {
    let name = p.to_possible_value().expect("presets have names");
    presets::named(name.get_name()).expect("every preset is defined in core")
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut wf = match (&a.world, a.preset) {
        (Some(path), _) => WorldFile::parse(&read_text(path)?).map_err(data(path))?,
        (None, Some(p)) => preset_world(p),
        (None, None) => return Err(Failure::Usage("one of --world or --preset is required".into())),
    };
    if let Some(path) = &a.trajectory {
        wf.sessions = sim::parse_trajectory(&read_text(path)?).map_err(data(path))?;
    }
    if a.noiseless {
        wf.params = wf.params.without_noise();
    }
    if let Some(path) = &a.dump_world {
        write(path, wf.to_text())?;
    }
    let frames = wf.simulate(a.seed).map_err(runtime)?;
    if a.text {
        write(&a.output, io::frames_to_text(&frames))?;
    } else {
        write(&a.output, io::encode_frames(&frames))?;
    }
    eprintln!("{} frames written to {}", frames.len(), a.output.display());
    Ok(())
}

fn load_config(a: &RunArgs) -> Result<Config, Failure> {
    let mut config = Config::default();
    let mut warnings = Vec::new();
    if let Some(path) = &a.config {
        warnings.extend(config.apply(&read_text(path)?).map_err(data(path))?);
    }
    for o in &a.overrides {
        if !o.contains('=') {
            return Err(Failure::Usage(format!("--set expects KEY=VALUE, got '{o}'")));
        }
        warnings.extend(config.apply(o).map_err(|e| Failure::Data(format!("--set {o}: {e}")))?);
    }
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let config = load_config(&a)?;
    let frames = io::read_frames(&a.frames).map_err(data(&a.frames))?;
    let out = a.output.clone().unwrap_or_else(|| pipeline::output_dir(Path::new(DEFAULT_OUTPUT)));
    let options = RunOptions {
        deterministic: a.deterministic,
        queue_capacity: a.queue,
    };
    let trace = pipeline::run_slam(&frames, &config, &options).map_err(runtime)?;
    trace
        .write_outputs(&out)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let (neighbor, loops, proximity) = trace.link_counts();
    println!("frames {}", frames.len());
    println!("nodes {}", trace.graph.len());
    println!("links neighbor {neighbor} loop {loops} proximity {proximity}");
    println!("memory_management {}", config.memory_management_enabled());
    if let Some(end) = trace.final_ate_end() {
        println!("ate_end {end:.4}");
    }
    if let Ok(rmse) = trace.final_ate_rmse() {
        println!("ate_rmse {rmse:.4}");
    }
    println!("output {}", out.display());
    Ok(())
}

fn read_trajectory(path: &Path) -> Result<Vec<StampedPose>, Failure> {
    io::trajectory_from_text(&read_text(path)?).map_err(data(path))
}

fn evaluate(a: EvalArgs) -> Result<(), Failure> {
    let est = read_trajectory(&a.estimate)?;
    let mut gt = read_trajectory(&a.ground_truth)?;
    gt.sort_by(|x, y| x.0.total_cmp(&y.0));
    let pairs = eval::associate(&est, &gt, eval::STAMP_TOLERANCE);
    if pairs.len() < 2 {
        return Err(Failure::Data(format!(
            "need at least 2 stamp-matched poses, found {}",
            pairs.len()
        )));
    }
    let t = if a.no_align { gslam::Transform2::identity() } else { eval::align(&pairs) };
    let rmse = eval::rmse(&pairs, &t);
    let last = pairs[pairs.len() - 1];
    let end = (t.transform_point(&last.0) - last.1).norm();
    println!("pairs {}", pairs.len());
    println!("ate_rmse {rmse:?}");
    println!("ate_end {end:?}");
    Ok(())
}

fn export_map(a: ExportArgs) -> Result<(), Failure> {
    let (graph_path, run_dir) = if a.graph.is_dir() {
        (a.graph.join("graph.bin"), Some(a.graph.clone()))
    } else {
        (a.graph.clone(), a.graph.parent().map(Path::to_path_buf))
    };
    let cell_size = match a.cell_size {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Failure::Usage(format!("--cell-size must be > 0, got {c}"))),
        None => {
            let cfg = run_dir.map(|d| d.join("config.txt")).filter(|p| p.exists());
            match cfg {
                Some(p) => Config::parse(&read_text(&p)?).map_err(data(&p))?.0.cell_size,
                None => Config::default().cell_size,
            }
        }
    };
    let bytes = std::fs::read(&graph_path).map_err(|e| Failure::Data(format!("{}: {e}", graph_path.display())))?;
    let graph = io::decode_graph(&bytes).map_err(data(&graph_path))?;
    let grid = pipeline::grid_of(&graph, cell_size, |_| true).map_err(runtime)?;
    std::fs::create_dir_all(&a.output).map_err(|e| Failure::Runtime(format!("{}: {e}", a.output.display())))?;
    pipeline::write_map(&grid, &a.output, &a.name).map_err(runtime)?;
    println!("{}", a.output.join(format!("{}.pgm", a.name)).display());
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<(), Failure> {
    let mut series = Vec::new();
    for path in &a.inputs {
        let table = plot::Table::parse(&read_text(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let label_file = a.inputs.len() > 1;
        for y in &a.y {
            let points = table
                .xy(&a.x, y)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let label = if label_file { format!("{stem}: {y}") } else { y.clone() };
            series.push(plot::Series { label, points });
        }
    }
    let title = a.title.unwrap_or_else(|| a.y.join(", "));
    write(&a.output, plot::svg(&title, &a.x, &series))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => evaluate(a),
        Command::ExportMap(a) => export_map(a),
        Command::Plot(a) => plot_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().replace('\n', " "));
            ExitCode::from(f.code())
        }
    }
}
