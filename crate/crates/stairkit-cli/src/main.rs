//! `stairkit` — command-line front end for the stair detection toolkit.
//!
//! Six subcommands wrap the library chain: `eval` scores grid dumps against
//! label files, `cluster` turns one dump into image-space lines, `measure`
//! runs the full geometric measurement, `loss-sched` replays the dynamic
//! loss-weight schedule, `render-overlay` draws a dump as SVG, and
//! `simulate` emits a complete synthetic test case.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 input problem
//! (unreadable file, parse error, bad arguments), 3 degenerate geometry
//! (zero gravity, gimbal lock), 4 insufficient data (nothing detected or
//! nothing measurable). Logging goes to stderr, controlled by the
//! `STAIRKIT_LOG` environment variable.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use stairkit::cluster::{cluster_grid, ClusterParams, StairLine2D};
use stairkit::geom::StairDirection;
use stairkit::grid::{labels_to_grid, DetectionGrid, GridDims};
use stairkit::io::{
    read_depth, read_grid_dump, read_labels, read_rig, write_depth, write_grid_dump,
    write_labels, write_rig, IoError,
};
use stairkit::loss::{detection_metrics, update_weights, LossWeights, MetricReport, ValErrors};
use stairkit::pipeline::{measure_pipeline, MeasureError, MeasureParams, StairMeasurement};
use stairkit::synth::{
    make_scene, perturb_grid, project_gt_lines, render_depth, sample_scene, SceneSpec,
};

const EXIT_INPUT: i32 = 2;
const EXIT_GEOMETRY: i32 = 3;
const EXIT_INSUFFICIENT: i32 = 4;

#[derive(Debug)]
enum CliError {
    /// Unreadable file, parse failure, or inconsistent arguments.
    Input(String),
    /// The math cannot proceed: zero gravity, gimbal lock, and kin.
    Geometry(String),
    /// Inputs were well-formed but contained nothing to work with.
    Insufficient(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Geometry(_) => EXIT_GEOMETRY,
            CliError::Insufficient(_) => EXIT_INSUFFICIENT,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Geometry(m) | CliError::Insufficient(m) => {
                f.write_str(m)
            }
        }
    }
}

/// Pins an input-stage failure to the file that caused it.
fn input_err(path: &Path, err: impl fmt::Display) -> CliError {
    CliError::Input(format!("{}: {err}", path.display()))
}

fn measure_err(err: MeasureError) -> CliError {
    match err {
        MeasureError::Geometry(g) => CliError::Geometry(g.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

#[derive(Parser)]
#[command(name = "stairkit", version, about = "Stair detection post-processing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score prediction grid dumps against ground-truth label files.
    Eval(EvalArgs),
    /// Cluster one grid dump into image-space stair lines.
    Cluster(ClusterArgs),
    /// Measure step sizes from a grid dump, a depth map, and a camera rig.
    Measure(MeasureArgs),
    /// Replay the dynamic loss-weight schedule over an error trace.
    LossSched(LossSchedArgs),
    /// Render a grid dump (optionally with clustered lines) to SVG.
    RenderOverlay(RenderOverlayArgs),
    /// Generate a complete synthetic test case into a directory.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction grid dumps (JSON), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth label files, comma separated, aligned with --pred.
    #[arg(long, value_delimiter = ',', required = true)]
    labels: Vec<PathBuf>,
    /// Confidence threshold for counting a cell as positive.
    #[arg(long, default_value_t = 0.5)]
    conf: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Grid dump to cluster (JSON).
    #[arg(long)]
    grid: PathBuf,
    /// Confidence threshold for counting a cell as positive.
    #[arg(long, default_value_t = 0.5)]
    conf: f64,
    /// Assignment tolerance in pixels.
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    /// Segment dedupe tolerance in pixels.
    #[arg(long, default_value_t = 4.0)]
    epsilon: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MeasureArgs {
    /// Grid dump (JSON).
    #[arg(long)]
    grid: PathBuf,
    /// Depth map file (DPTH1).
    #[arg(long)]
    depth: PathBuf,
    /// Camera rig file (JSON): intrinsics plus camera-frame gravity.
    #[arg(long)]
    rig: PathBuf,
    /// Confidence threshold for counting a cell as positive.
    #[arg(long, default_value_t = 0.5)]
    conf: f64,
    /// Assignment tolerance in pixels.
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    /// Segment dedupe tolerance in pixels.
    #[arg(long, default_value_t = 4.0)]
    epsilon: f64,
    /// Minimum metric span (m) for an anchor difference to count as a step
    /// component; also the depth agreement tolerance.
    #[arg(long, default_value_t = 0.05)]
    omega: f64,
    /// Keep only the nearest N steps.
    #[arg(long, default_value_t = 3)]
    steps: usize,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossSchedArgs {
    /// CSV of per-epoch validation errors, one `x_error,y_error` per line.
    #[arg(long)]
    errors: PathBuf,
    /// Initial x-direction weight.
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Initial y-direction weight.
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    /// Weight floor: updates that would push either weight below it freeze.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderOverlayArgs {
    /// Grid dump to render (JSON).
    #[arg(long)]
    grid: PathBuf,
    /// Also cluster the dump and draw the resulting lines.
    #[arg(long)]
    lines: bool,
    /// Confidence threshold for counting a cell as positive.
    #[arg(long, default_value_t = 0.5)]
    conf: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory the case files are written into (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Scene seed; the pose, noise, and jitter all derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate an ascending staircase (the default).
    #[arg(long, conflicts_with = "descending")]
    ascending: bool,
    /// Generate a descending staircase.
    #[arg(long)]
    descending: bool,
    /// Gaussian depth noise sigma in meters.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Depth quantization step in meters.
    #[arg(long, default_value_t = 0.0)]
    quant: f64,
    /// Uniform jitter applied to encoded cell endpoints, in pixels.
    #[arg(long, default_value_t = 0.0)]
    jitter_px: f64,
    /// Probability of dropping an encoded cell.
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter("STAIRKIT_LOG"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Eval(args) => cmd_eval(&args),
        Command::Cluster(args) => cmd_cluster(&args),
        Command::Measure(args) => cmd_measure(&args),
        Command::LossSched(args) => cmd_loss_sched(&args),
        Command::RenderOverlay(args) => cmd_render_overlay(&args),
        Command::Simulate(args) => cmd_simulate(&args),
    };
    if let Err(e) = result {
        eprintln!("stairkit: {e}");
        process::exit(e.code());
    }
}

/// Writes `content` to `--out`, or stdout when no path was given.
fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| input_err(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::Input(format!("stdout: {e}")))
        }
    }
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalFileReport {
    pred: String,
    labels: String,
    #[serde(flatten)]
    metrics: MetricReport,
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    metrics: MetricReport,
    files: Vec<EvalFileReport>,
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.pred.len() != args.labels.len() {
        return Err(CliError::Input(format!(
            "--pred lists {} files but --labels lists {}; they must pair up",
            args.pred.len(),
            args.labels.len()
        )));
    }
    let mut files = Vec::with_capacity(args.pred.len());
    let (mut tp, mut fp, mut false_neg) = (0u64, 0u64, 0u64);
    for (pred_path, labels_path) in args.pred.iter().zip(&args.labels) {
        let pred = read_grid_dump(pred_path).map_err(|e| input_err(pred_path, e))?;
        let labels = read_labels(labels_path).map_err(|e| input_err(labels_path, e))?;
        let dims = GridDims { rows: pred.rows(), cols: pred.cols() };
        let gt = labels_to_grid(&labels, dims, pred.image_dims())
            .map_err(|e| input_err(labels_path, e))?;
        let metrics = detection_metrics(&pred, &gt.grid, args.conf)
            .map_err(|e| input_err(pred_path, e))?;
        tp += metrics.tp;
        fp += metrics.fp;
        false_neg += metrics.false_neg;
        files.push(EvalFileReport {
            pred: pred_path.display().to_string(),
            labels: labels_path.display().to_string(),
            metrics,
        });
    }
    let report =
        EvalReport { metrics: MetricReport::from_counts(tp, fp, false_neg), files };
    info!(
        "eval: {} file pair(s), {} tp / {} fp / {} fn",
        report.files.len(),
        tp,
        fp,
        false_neg
    );
    emit(&args.out, &to_json_pretty(&report))
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct LineReport {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    k: f64,
    b: f64,
    member_count: usize,
}

impl From<&StairLine2D> for LineReport {
    fn from(l: &StairLine2D) -> Self {
        LineReport {
            x1: l.x1,
            y1: l.y1,
            x2: l.x2,
            y2: l.y2,
            k: l.k,
            b: l.b,
            member_count: l.members.len(),
        }
    }
}

fn cluster_dump(
    path: &Path,
    conf: f64,
    tau: f64,
    epsilon: f64,
) -> Result<(DetectionGrid, Vec<StairLine2D>), CliError> {
    let grid = read_grid_dump(path).map_err(|e| input_err(path, e))?;
    let params = ClusterParams {
        assign_tolerance: tau,
        dedupe_tolerance: epsilon,
        ..ClusterParams::default()
    };
    let lines =
        cluster_grid(&grid.thresholded(conf), &params).map_err(|e| input_err(path, e))?;
    Ok((grid, lines))
}

fn cmd_cluster(args: &ClusterArgs) -> Result<(), CliError> {
    let (_, lines) = cluster_dump(&args.grid, args.conf, args.tau, args.epsilon)?;
    info!("cluster: {} line(s) from {}", lines.len(), args.grid.display());
    let report: Vec<LineReport> = lines.iter().map(LineReport::from).collect();
    emit(&args.out, &to_json_pretty(&report))
}

// ---------------------------------------------------------------------------
// measure
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct MeasureReport {
    direction: Option<StairDirection>,
    steps: Vec<stairkit::geom::StepDims>,
    yaw_deg: Option<f64>,
    pitch_deg: f64,
    roll_deg: f64,
}

impl From<&StairMeasurement> for MeasureReport {
    fn from(m: &StairMeasurement) -> Self {
        MeasureReport {
            direction: m.direction,
            steps: m.steps.clone(),
            yaw_deg: m.yaw.map(f64::to_degrees),
            pitch_deg: m.pitch.to_degrees(),
            roll_deg: m.roll.to_degrees(),
        }
    }
}

fn cmd_measure(args: &MeasureArgs) -> Result<(), CliError> {
    let grid = read_grid_dump(&args.grid).map_err(|e| input_err(&args.grid, e))?;
    let depth = read_depth(&args.depth).map_err(|e| input_err(&args.depth, e))?;
    // A rig file that parses but fails geometric validation (zero gravity,
    // bad focal length) is a geometry problem, not an input problem.
    let rig = read_rig(&args.rig).map_err(|e| match e {
        IoError::Rig(g) => CliError::Geometry(format!("{}: {g}", args.rig.display())),
        other => input_err(&args.rig, other),
    })?;
    let params = MeasureParams {
        conf_threshold: args.conf,
        cluster: ClusterParams {
            assign_tolerance: args.tau,
            dedupe_tolerance: args.epsilon,
            ..ClusterParams::default()
        },
        omega: args.omega,
        max_steps: args.steps,
        ..MeasureParams::default()
    };
    let (measurement, diag) =
        measure_pipeline(&grid, &depth, &rig, &params).map_err(measure_err)?;
    info!(
        "measure: {} line(s) clustered, {} measured, {} dropped, {} step(s)",
        diag.lines_clustered,
        diag.lines_measured,
        diag.lines_dropped,
        measurement.steps.len()
    );
    emit(&args.out, &to_json_pretty(&MeasureReport::from(&measurement)))?;
    if measurement.steps.is_empty() {
        return Err(CliError::Insufficient(
            "no measurable stair steps in the input".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// loss-sched
// ---------------------------------------------------------------------------

fn parse_error_trace(path: &Path) -> Result<Vec<ValErrors>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |field: Option<&str>| {
            field
                .map(str::trim)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite() && *v >= 0.0)
        };
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(x_error), Some(y_error), None) => {
                rows.push(ValErrors { x_error, y_error });
            }
            _ => {
                return Err(input_err(
                    path,
                    format!("line {}: expected `x_error,y_error`, got `{line}`", idx + 1),
                ));
            }
        }
    }
    Ok(rows)
}

fn cmd_loss_sched(args: &LossSchedArgs) -> Result<(), CliError> {
    if !(args.sigma.is_finite() && args.sigma >= 0.0) {
        return Err(CliError::Input(format!("--sigma must be >= 0, got {}", args.sigma)));
    }
    if !(args.alpha.is_finite() && args.alpha >= args.sigma)
        || !(args.beta.is_finite() && args.beta >= args.sigma)
    {
        return Err(CliError::Input(format!(
            "--alpha and --beta must start at or above the --sigma floor {}",
            args.sigma
        )));
    }
    let trace = parse_error_trace(&args.errors)?;
    let mut weights = LossWeights {
        alpha: args.alpha,
        beta: args.beta,
        sigma: args.sigma,
        ..LossWeights::dynamic_init()
    };
    let mut csv = String::from("epoch,alpha,beta,x_error,y_error\n");
    csv.push_str(&format!("0,{},{},,\n", weights.alpha, weights.beta));
    for (epoch, errors) in trace.iter().enumerate() {
        weights = update_weights(&weights, errors);
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            epoch + 1,
            weights.alpha,
            weights.beta,
            errors.x_error,
            errors.y_error
        ));
    }
    info!("loss-sched: replayed {} epoch(s)", trace.len());
    emit(&args.out, &csv)
}

// ---------------------------------------------------------------------------
// render-overlay
// ---------------------------------------------------------------------------

/// Line stroke palette, cycled per cluster index.
const LINE_COLORS: [&str; 6] =
    ["#f78166", "#3fb950", "#d2a8ff", "#58a6ff", "#f2cc60", "#ff7b72"];

fn cmd_render_overlay(args: &RenderOverlayArgs) -> Result<(), CliError> {
    let (grid, lines) = if args.lines {
        let (grid, lines) = cluster_dump(&args.grid, args.conf, 10.0, 4.0)?;
        (grid, lines)
    } else {
        let grid = read_grid_dump(&args.grid).map_err(|e| input_err(&args.grid, e))?;
        (grid, Vec::new())
    };
    let (img_w, img_h) = grid.image_dims();
    let (cell_w, cell_h) = (grid.cell_width(), grid.cell_height());

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{img_w}\" height=\"{img_h}\" \
         viewBox=\"0 0 {img_w} {img_h}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{img_w}\" height=\"{img_h}\" fill=\"#10151b\"/>\n"
    ));
    for (i, j, cell) in grid.iter_cells() {
        if cell.conf < args.conf {
            continue;
        }
        // Confidence sets the fill strength so soft detections read fainter.
        svg.push_str(&format!(
            "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell_w:.2}\" height=\"{cell_h:.2}\" \
             fill=\"#58a6ff\" fill-opacity=\"{:.3}\"/>\n",
            j as f64 * cell_w,
            i as f64 * cell_h,
            0.15 + 0.5 * cell.conf.clamp(0.0, 1.0)
        ));
    }
    for (idx, line) in lines.iter().enumerate() {
        svg.push_str(&format!(
            "  <path d=\"M {:.2} {:.2} L {:.2} {:.2}\" stroke=\"{}\" stroke-width=\"2\" \
             fill=\"none\"/>\n",
            line.x1,
            line.y1,
            line.x2,
            line.y2,
            LINE_COLORS[idx % LINE_COLORS.len()]
        ));
    }
    svg.push_str("</svg>\n");
    info!("render-overlay: {} line(s) drawn", lines.len());
    emit(&args.out, &svg)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.drop_rate) {
        return Err(CliError::Input(format!(
            "--drop-rate must be in [0, 1), got {}",
            args.drop_rate
        )));
    }
    if args.noise_sigma < 0.0 || args.quant < 0.0 || args.jitter_px < 0.0 {
        return Err(CliError::Input(
            "--noise-sigma, --quant, and --jitter-px must be >= 0".into(),
        ));
    }
    let direction = if args.descending {
        StairDirection::Descending
    } else {
        StairDirection::Ascending
    };
    let spec = SceneSpec {
        depth_noise_sigma: args.noise_sigma,
        depth_quantization: args.quant,
        ..sample_scene(args.seed, direction)
    };
    let scene = make_scene(&spec)
        .map_err(|e| CliError::Input(format!("seed {} produced no scene: {e}", args.seed)))?;
    let labels = project_gt_lines(&scene, &spec.intrinsics);
    let encoding = labels_to_grid(&labels, GridDims::default(), spec.intrinsics.image_dims)
        .map_err(|e| CliError::Input(format!("encoding labels failed: {e}")))?;
    let grid = if args.jitter_px > 0.0 || args.drop_rate > 0.0 {
        perturb_grid(&encoding.grid, args.jitter_px, args.drop_rate, spec.rng_seed)
    } else {
        encoding.grid
    };
    let depth = render_depth(&scene, &spec.intrinsics);

    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| input_err(dir, e))?;
    let scene_path = dir.join("scene.json");
    std::fs::write(&scene_path, to_json_pretty(&spec))
        .map_err(|e| input_err(&scene_path, e))?;
    let labels_path = dir.join("labels.txt");
    write_labels(&labels_path, &labels).map_err(|e| input_err(&labels_path, e))?;
    let depth_path = dir.join("depth.dpth");
    write_depth(&depth_path, &depth).map_err(|e| input_err(&depth_path, e))?;
    let rig_path = dir.join("rig.json");
    write_rig(&rig_path, &scene.rig()).map_err(|e| input_err(&rig_path, e))?;
    let grid_path = dir.join("grid.json");
    write_grid_dump(&grid_path, &grid).map_err(|e| input_err(&grid_path, e))?;
    info!(
        "simulate: seed {} {:?} case written to {}",
        args.seed,
        direction,
        dir.display()
    );
    Ok(())
}
