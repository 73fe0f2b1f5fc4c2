//! Command line front end.
//!
//! Every command takes `--config <file>`: a flat `key = value` file whose
//! keys are long flag names (`ct-mean = 0.2`). File values are applied
//! first, so flags given on the command line win.

mod selftest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::blink::{format_records, format_series, read_records, run_blink_detector, BlinkConfig, RoiTrack};
use crate::detector::{
    detect_window, write_detections, AnchorSet, DetectorConfig, TimedDetection, DEFAULT_IOU_THRESHOLD,
    DEFAULT_OBJECTNESS_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::events::{read_events, write_events, EventFormat, EventStream, EventWindow};
use crate::metrics::{
    average_precision, build_targets, detection_mse, match_blinks, read_annotations, read_blink_annotations,
    EvalReport, GroundTruthBox, DEFAULT_BLINK_TOLERANCE_US, DEFAULT_MATCH_IOU,
};
use crate::net::{forward, NetworkWeights};
use crate::raster::Raster;
use crate::representation::{
    accumulate, encode_evfr, encode_pgm_text, frame_to_input, resample_area, voxel_grid, voxel_to_input, LeakySurface,
    DEFAULT_CLIP,
};
use crate::seeds::{stage_rng, stage_seed, ANCHORS_KMEANS, DETECT_WEIGHTS, SIMULATE_THRESHOLDS, SYNTH_THRESHOLDS, SYNTH_TRAJECTORY};
use crate::simulator::{
    read_frame_manifest, sample_contrast_thresholds, simulate_events, SimulatorConfig, DEFAULT_CT_MEAN, DEFAULT_CT_STD,
    DEFAULT_EPS, DEFAULT_REFRACTORY_US,
};
use crate::synth::{
    generate_sequence, kmeans_anchors, parse_manifest, synthetic_face, write_dataset, BoxPadding, LandmarkSet, Pose6,
    SynthConfig, DEFAULT_EYE_PADDING, DEFAULT_FACE_PADDING, DEFAULT_FPS,
};

pub use selftest::{run_selftest, SuiteResult};

/// Events per detection window.
pub const DEFAULT_WINDOW_EVENTS: usize = 50_000;
pub const THREADS_ENV: &str = "EVDMS_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "evdms",
    version,
    about = "Event-camera driver monitoring: simulation, representations, detection and blink analysis",
    after_help = "Environment: EVDMS_THREADS caps internal parallelism (0 = auto). This build runs single-threaded."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate events from a timed frame sequence
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Simulate(SimulateArgs),
    /// Generate an annotated synthetic sequence from one landmarked still
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Synth(SynthArgs),
    /// Convert event windows to dense representations
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Repr(ReprArgs),
    /// Run the recurrent detector over event windows
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Detect(DetectArgs),
    /// Detect blinks in per-eye event statistics
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Blink(BlinkArgs),
    /// Evaluate face and eye detections against box annotations
    #[command(args_override_self = true, allow_negative_numbers = true, name = "eval-det")]
    EvalDet(EvalDetArgs),
    /// Evaluate blink records against annotated blink times
    #[command(args_override_self = true, allow_negative_numbers = true, name = "eval-blink")]
    EvalBlink(EvalBlinkArgs),
    /// Cluster annotated box sizes into anchors
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Anchors(AnchorsArgs),
    /// Run the bundled oracle fixtures
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Selftest(SelftestArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not WIDTHxHEIGHT"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a size"));
    Ok((num(w)?, num(h)?))
}

fn ms_to_us(name: &'static str, ms: f64) -> Result<u64> {
    if !(ms > 0.0 && ms.is_finite()) {
        return Err(Error::invalid(name, "must be positive"));
    }
    Ok((ms * 1000.0).round() as u64)
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Frame manifest: one `<t_us> <image file>` per line
    #[arg(long)]
    frames: PathBuf,
    /// Output event file (.csv or EVS1)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean contrast threshold (log intensity)
    #[arg(long, default_value_t = DEFAULT_CT_MEAN)]
    ct_mean: f64,
    #[arg(long, default_value_t = DEFAULT_CT_STD)]
    ct_std: f64,
    #[arg(long, default_value_t = DEFAULT_REFRACTORY_US)]
    refractory_us: u64,
    /// Offset added before taking the log
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// key=value file with defaults for any of these flags
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Still image (PGM or PNG); a procedural face is used when absent
    #[arg(long)]
    image: Option<PathBuf>,
    /// Landmark file, one `x y` per line (required with --image)
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Group file naming the face, left_eye and right_eye landmarks
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Width of the procedural face
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Height of the procedural face
    #[arg(long, default_value_t = 192)]
    height: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    duration_ms: u64,
    /// Rendering rate
    #[arg(long, default_value_t = DEFAULT_FPS)]
    fps: f64,
    #[arg(long, default_value_t = DEFAULT_CT_MEAN)]
    ct_mean: f64,
    #[arg(long, default_value_t = DEFAULT_CT_STD)]
    ct_std: f64,
    #[arg(long, default_value_t = DEFAULT_REFRACTORY_US)]
    refractory_us: u64,
    /// Multiplies the default pose bounds
    #[arg(long, default_value_t = 1.0)]
    motion_scale: f64,
    #[arg(long, default_value_t = DEFAULT_FACE_PADDING)]
    face_pad: f64,
    #[arg(long, default_value_t = DEFAULT_EYE_PADDING)]
    eye_pad: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReprMode {
    Accumulate,
    Voxel,
    Leaky,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RasterFormat {
    Evfr,
    Pgm,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("windowing").args(["window_events", "window_ms"])))]
struct ReprArgs {
    #[arg(long)]
    events: PathBuf,
    /// Output directory, one file per window plus windows.txt
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReprMode::Accumulate)]
    mode: ReprMode,
    /// Events per window [default: 50000 unless --window-ms is given]
    #[arg(long)]
    window_events: Option<usize>,
    /// Window length in milliseconds
    #[arg(long)]
    window_ms: Option<f64>,
    /// Voxel bins
    #[arg(long, default_value_t = 1)]
    bins: usize,
    /// Accumulation clip; 0 disables clipping
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    clip: f32,
    /// Leaky surface decay constant
    #[arg(long, default_value_t = 50.0)]
    tau_ms: f64,
    /// Resample to a network input size, e.g. 512x288
    #[arg(long, value_parser = parse_size)]
    input_size: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value_t = RasterFormat::Evfr)]
    format: RasterFormat,
    /// Stop after this many windows
    #[arg(long)]
    max_windows: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("net").required(true).args(["weights", "random_weights"])))]
struct DetectArgs {
    #[arg(long)]
    events: PathBuf,
    /// GRWT weight file
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Use random weights drawn from this run seed
    #[arg(long)]
    random_weights: Option<u64>,
    /// Detection file: `t_end_us label score cx cy w h` in sensor pixels
    #[arg(long)]
    out: PathBuf,
    /// Network input size
    #[arg(long, value_parser = parse_size, default_value = "512x288")]
    input_size: (usize, usize),
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    clip: f32,
    #[arg(long, default_value_t = DEFAULT_WINDOW_EVENTS)]
    window_events: usize,
    #[arg(long, default_value_t = DEFAULT_OBJECTNESS_THRESHOLD)]
    objectness: f64,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    nms_iou: f64,
    /// Six anchors as `w,h,w,h,...` in input pixels, coarse head first
    #[arg(long, default_value_t = AnchorSet::default().to_text())]
    anchors: String,
    #[arg(long)]
    max_windows: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BlinkArgs {
    #[arg(long)]
    events: PathBuf,
    /// ROI track: `t_us left|right x_min y_min x_max y_max` per line
    #[arg(long)]
    rois: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    step_ms: f64,
    /// Events per pixel per window
    #[arg(long, default_value_t = crate::blink::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    threshold_scale: f64,
    /// Runs closer than this many windows are merged
    #[arg(long, default_value_t = crate::blink::DEFAULT_MERGE_GAP)]
    merge_gap: usize,
    /// Median column std above which a candidate counts as horizontal motion
    #[arg(long, default_value_t = crate::blink::DEFAULT_STD_THRESHOLD)]
    std_threshold: f64,
    /// Minimum peak prominence as a fraction of the threshold
    #[arg(long, default_value_t = crate::blink::DEFAULT_PROMINENCE_FRACTION)]
    prominence: f64,
    #[arg(long, default_value_t = 50.0)]
    fusion_ms: f64,
    /// Also write the per-window statistics here
    #[arg(long)]
    dump_series: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("net").args(["weights", "random_weights"])))]
struct EvalDetArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    /// key=value report
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
    iou: f64,
    /// Largest gap between a detection and the annotated frame it is scored against
    #[arg(long, default_value_t = 500)]
    frame_tolerance_us: u64,
    /// Events for the regression loss (needs --weights or --random-weights)
    #[arg(long, requires = "net")]
    events: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    random_weights: Option<u64>,
    #[arg(long, value_parser = parse_size, default_value = "512x288")]
    input_size: (usize, usize),
    #[arg(long, default_value_t = DEFAULT_CLIP)]
    clip: f32,
    #[arg(long, default_value_t = DEFAULT_WINDOW_EVENTS)]
    window_events: usize,
    #[arg(long, default_value_t = AnchorSet::default().to_text())]
    anchors: String,
    #[arg(long)]
    max_windows: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalBlinkArgs {
    /// Blink record file written by `blink`
    #[arg(long)]
    detections: PathBuf,
    /// One blink per line: `t_us` or `t_start_us t_end_us`
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BLINK_TOLERANCE_US as f64 / 1000.0)]
    tolerance_ms: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnchorsArgs {
    /// Annotation files (repeat or list several)
    #[arg(long, num_args = 1.., required = true)]
    annotations: Vec<PathBuf>,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sensor size of the annotations; with --input-size boxes are rescaled
    #[arg(long, value_parser = parse_size, requires = "input_size")]
    sensor: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_size, requires = "sensor")]
    input_size: Option<(usize, usize)>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Splices `--config` file entries in right after the command name.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let strings: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strings.iter().enumerate().skip(2) {
        if a == "--config" {
            path = strings.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries = parse_manifest(&text)?;
    let mut flags = Vec::with_capacity(entries.len());
    for (k, v) in entries {
        let key = k.replace('_', "-");
        if key == "config" {
            return Err(Error::invalid("config", "a config file cannot name another config file"));
        }
        flags.push(OsString::from(format!("--{key}={v}")));
    }
    let mut out = argv;
    let at = 2.min(out.len());
    out.splice(at..at, flags);
    Ok(out)
}

fn check_threads_env() -> Result<()> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().parse::<usize>().is_err() => {
            Err(Error::invalid("EVDMS_THREADS", format!("`{v}` is not a non-negative integer")))
        }
        _ => Ok(()),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 validation error, 2 I/O error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let result = check_threads_env().and_then(|_| expand_config(argv));
    let argv = match result {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Synth(a) => synth(a),
        Command::Repr(a) => repr(a),
        Command::Detect(a) => detect(a),
        Command::Blink(a) => blink(a),
        Command::EvalDet(a) => eval_det(a),
        Command::EvalBlink(a) => eval_blink(a),
        Command::Anchors(a) => anchors(a),
        Command::Selftest(_) => {
            let results = run_selftest();
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} suites, {} failed", results.len(), failed);
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_stream(path: &Path) -> Result<EventStream> {
    let loaded = read_events(path, EventFormat::from_path(path))?;
    if loaded.reordered {
        eprintln!("warning: {} was not time-ordered; sorted on load", path.display());
    }
    Ok(loaded.stream)
}

fn limit<'a>(mut windows: Vec<EventWindow<'a>>, max: Option<usize>) -> Vec<EventWindow<'a>> {
    if let Some(m) = max {
        windows.truncate(m);
    }
    windows
}

fn network(weights: &Option<PathBuf>, random: Option<u64>) -> Result<NetworkWeights> {
    match (weights, random) {
        (Some(p), _) => crate::net::load_weights(p),
        (None, Some(seed)) => Ok(NetworkWeights::random(stage_seed(seed, DETECT_WEIGHTS))),
        (None, None) => Err(Error::invalid("weights", "give --weights or --random-weights")),
    }
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let mut rng = stage_rng(a.seed, SIMULATE_THRESHOLDS);
    let (ct_pos, ct_neg) = sample_contrast_thresholds(&mut rng, a.ct_mean, a.ct_std)?;
    let config = SimulatorConfig {
        ct_pos,
        ct_neg,
        refractory_us: a.refractory_us,
        eps: a.eps,
        seed: a.seed,
    };
    config.validate()?;
    let frames = read_frame_manifest(&a.frames)?;
    let stream = simulate_events(&frames, &config)?;
    write_events(&stream, &a.out, EventFormat::from_path(&a.out))?;
    println!("{} events (ct_pos {ct_pos:.4}, ct_neg {ct_neg:.4}) -> {}", stream.len(), a.out.display());
    Ok(0)
}

fn synth(a: SynthArgs) -> Result<i32> {
    if a.image.is_none() && (a.landmarks.is_some() || a.groups.is_some()) {
        return Err(Error::invalid("landmarks", "--landmarks and --groups need --image"));
    }
    if a.image.is_some() && (a.landmarks.is_none() || a.groups.is_none()) {
        return Err(Error::invalid("image", "--image needs --landmarks and --groups"));
    }
    if !(a.motion_scale >= 0.0 && a.motion_scale.is_finite()) {
        return Err(Error::invalid("motion-scale", "must be finite and non-negative"));
    }
    if !(a.face_pad >= 0.0 && a.eye_pad >= 0.0) {
        return Err(Error::invalid("face-pad", "paddings must be non-negative"));
    }
    if a.duration_ms == 0 {
        return Err(Error::invalid("duration-ms", "must be positive"));
    }
    if a.image.is_none() && (a.width < 16 || a.height < 16) {
        return Err(Error::invalid("width", "procedural face needs at least 16x16 pixels"));
    }
    let (ct_pos, ct_neg) = sample_contrast_thresholds(&mut stage_rng(a.seed, SYNTH_THRESHOLDS), a.ct_mean, a.ct_std)?;
    let config = SynthConfig {
        bounds: Pose6::default_bounds().scaled(a.motion_scale),
        duration_us: a.duration_ms * 1000,
        fps: a.fps,
        padding: BoxPadding {
            face: a.face_pad,
            eye: a.eye_pad,
        },
        simulator: SimulatorConfig {
            ct_pos,
            ct_neg,
            refractory_us: a.refractory_us,
            eps: DEFAULT_EPS,
            seed: a.seed,
        },
        ..SynthConfig::default()
    };
    config.simulator.validate()?;
    let (image, landmarks, source) = match (&a.image, &a.landmarks, &a.groups) {
        (Some(img), Some(lm), Some(gr)) => (Raster::load(img)?, LandmarkSet::load(lm, gr)?, img.display().to_string()),
        _ => {
            let (img, lm) = synthetic_face(a.width, a.height);
            (img, lm, "procedural".to_string())
        }
    };
    let mut rng = stage_rng(a.seed, SYNTH_TRAJECTORY);
    let (seq, stream) = generate_sequence(&image, &landmarks, &config, &mut rng)?;
    let mut extra = BTreeMap::new();
    extra.insert("seed".to_string(), a.seed.to_string());
    extra.insert("ct_pos".to_string(), ct_pos.to_string());
    extra.insert("ct_neg".to_string(), ct_neg.to_string());
    extra.insert("fps".to_string(), a.fps.to_string());
    extra.insert("source".to_string(), source);
    let paths = write_dataset(&a.out, &seq, &stream, &extra)?;
    println!(
        "{} frames, {} events -> {}",
        seq.annotations.len(),
        stream.len(),
        paths.events.parent().unwrap_or(&a.out).display()
    );
    Ok(0)
}

fn repr(a: ReprArgs) -> Result<i32> {
    if a.bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    if !(a.clip >= 0.0) {
        return Err(Error::invalid("clip", "must be non-negative"));
    }
    let tau_us = a.tau_ms * 1000.0;
    if a.mode == ReprMode::Leaky && !(tau_us > 0.0) {
        return Err(Error::invalid("tau-ms", "must be positive"));
    }
    if let Some((w, h)) = a.input_size {
        crate::net::reset_state((w, h))?;
    }
    let window_us = a.window_ms.map(|ms| ms_to_us("window-ms", ms)).transpose()?;
    let stream = load_stream(&a.events)?;
    let windows = match window_us {
        Some(dt) => {
            let origin = stream.events().first().map_or(0, |e| e.t);
            stream.window_by_duration(dt, origin)?
        }
        None => stream.window_by_count(a.window_events.unwrap_or(DEFAULT_WINDOW_EVENTS))?,
    };
    let windows = limit(windows, a.max_windows);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let res = stream.resolution();
    let clip = (a.clip > 0.0).then_some(a.clip);
    let mut surface = None;
    let mut index = String::from("# k t_start_us t_end_us events\n");
    for (k, w) in windows.iter().enumerate() {
        let (planes, width, height, data): (usize, usize, usize, Vec<f32>) = match a.mode {
            ReprMode::Accumulate => {
                let frame = accumulate(w, clip);
                match a.input_size {
                    Some(size) => {
                        let t = frame_to_input(&frame, size)?;
                        (1, size.0, size.1, t.into_data())
                    }
                    None => (1, res.width as usize, res.height as usize, frame.values().to_vec()),
                }
            }
            ReprMode::Voxel => {
                let grid = voxel_grid(w, a.bins)?;
                match a.input_size {
                    Some(size) => {
                        let t = voxel_to_input(&grid, size)?;
                        (a.bins, size.0, size.1, t.into_data())
                    }
                    None => (
                        a.bins,
                        res.width as usize,
                        res.height as usize,
                        grid.values().iter().map(|&v| v as f32).collect(),
                    ),
                }
            }
            ReprMode::Leaky => {
                let s = surface.get_or_insert(LeakySurface::new(res, tau_us, w.t_start())?);
                s.update(w)?;
                let values: Vec<f32> = s.values().iter().map(|&v| v as f32).collect();
                let (sw, sh) = (res.width as usize, res.height as usize);
                match a.input_size {
                    Some((tw, th)) => (1, tw, th, resample_area(&values, sw, sh, tw, th)),
                    None => (1, sw, sh, values),
                }
            }
        };
        match a.format {
            RasterFormat::Evfr => {
                let p = a.out.join(format!("window_{k:05}.evfr"));
                std::fs::write(&p, encode_evfr(planes, width, height, &data)).map_err(|e| Error::io(&p, e))?;
            }
            RasterFormat::Pgm => {
                for (b, plane) in data.chunks(width * height).enumerate() {
                    let name = if planes == 1 {
                        format!("window_{k:05}.pgm")
                    } else {
                        format!("window_{k:05}_b{b}.pgm")
                    };
                    write_text(&a.out.join(name), &encode_pgm_text(width, height, plane))?;
                }
            }
        }
        index.push_str(&format!("{k} {} {} {}\n", w.t_start(), w.t_end(), w.len()));
    }
    write_text(&a.out.join("windows.txt"), &index)?;
    println!("{} windows -> {}", windows.len(), a.out.display());
    Ok(0)
}

fn detector_config(input_size: (usize, usize), clip: f32, anchors: &str, objectness: f64, iou: f64) -> Result<DetectorConfig> {
    let config = DetectorConfig {
        input_size,
        clip,
        anchors: AnchorSet::parse(anchors)?,
        objectness_threshold: objectness,
        iou_threshold: iou,
    };
    config.validate()?;
    Ok(config)
}

fn detect(a: DetectArgs) -> Result<i32> {
    let config = detector_config(a.input_size, a.clip, &a.anchors, a.objectness, a.nms_iou)?;
    if a.window_events == 0 {
        return Err(Error::invalid("window-events", "must be at least 1"));
    }
    let weights = network(&a.weights, a.random_weights)?;
    let stream = load_stream(&a.events)?;
    let res = stream.resolution();
    let (sx, sy) = (
        res.width as f64 / config.input_size.0 as f64,
        res.height as f64 / config.input_size.1 as f64,
    );
    let windows = limit(stream.window_by_count(a.window_events)?, a.max_windows);
    let mut state = config.initial_state()?;
    let mut out = Vec::new();
    for w in &windows {
        let (dets, next) = detect_window(&weights, &state, w, &config)?;
        state = next;
        out.extend(dets.into_iter().map(|mut d| {
            d.bbox = d.bbox.scaled(sx, sy);
            TimedDetection { t: w.t_end(), detection: d }
        }));
    }
    write_detections(&a.out, &out)?;
    println!("{} windows, {} detections -> {}", windows.len(), out.len(), a.out.display());
    Ok(0)
}

fn blink(a: BlinkArgs) -> Result<i32> {
    let config = BlinkConfig {
        step_us: ms_to_us("step-ms", a.step_ms)?,
        threshold: a.threshold,
        threshold_scale: a.threshold_scale,
        merge_gap: a.merge_gap,
        std_threshold: a.std_threshold,
        prominence_fraction: a.prominence,
        fusion_us: ms_to_us("fusion-ms", a.fusion_ms)?,
        origin: None,
    };
    config.validate()?;
    let rois = RoiTrack::load(&a.rois)?;
    let stream = load_stream(&a.events)?;
    let output = run_blink_detector(&stream, &rois, &config)?;
    write_text(&a.out, &format_records(&output.records))?;
    if let Some(p) = &a.dump_series {
        write_text(p, &format_series(&output.series))?;
    }
    if output.missing_roi_windows > 0 {
        eprintln!("warning: {} windows had no ROI for some eye", output.missing_roi_windows);
    }
    println!("{} blinks -> {}", output.records.len(), a.out.display());
    Ok(0)
}

/// Boxes of the annotated frame nearest to `t`, scaled into input pixels.
fn boxes_near(truth: &[GroundTruthBox], t: u64, sx: f64, sy: f64) -> Vec<(crate::detector::ObjectClass, crate::detector::BBox)> {
    let Some(nearest) = truth.iter().map(|g| g.t).min_by_key(|&f| (f.abs_diff(t), f)) else {
        return Vec::new();
    };
    truth
        .iter()
        .filter(|g| g.t == nearest)
        .map(|g| (g.label, g.bbox.scaled(sx, sy)))
        .collect()
}

fn eval_det(a: EvalDetArgs) -> Result<i32> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(Error::invalid("iou", "must lie in (0, 1]"));
    }
    let config = detector_config(a.input_size, a.clip, &a.anchors, DEFAULT_OBJECTNESS_THRESHOLD, DEFAULT_IOU_THRESHOLD)?;
    let dets = crate::detector::read_detections(&a.detections)?;
    let truth = read_annotations(&a.annotations)?;
    let summary = average_precision(&dets, &truth, a.iou, a.frame_tolerance_us);
    let mse = match &a.events {
        None => None,
        Some(path) => {
            let weights = network(&a.weights, a.random_weights)?;
            let stream = load_stream(path)?;
            let res = stream.resolution();
            let (iw, ih) = config.input_size;
            let (sx, sy) = (iw as f64 / res.width as f64, ih as f64 / res.height as f64);
            let windows = limit(stream.window_by_count(a.window_events.max(1))?, a.max_windows);
            let mut state = config.initial_state()?;
            let mut total = 0.0;
            for w in &windows {
                let input = frame_to_input(&accumulate(w, Some(config.clip)), config.input_size)?;
                let out = forward(&weights, &state, &input)?;
                let boxes = boxes_near(&truth, w.t_end(), sx, sy);
                let grid = |t: &crate::net::Tensor| (t.height(), t.width());
                let (tc, tf) = build_targets(&boxes, grid(&out.coarse), grid(&out.fine), iw, &config.anchors)?;
                total += detection_mse(&[&out.coarse, &out.fine], &[&tc, &tf])?;
                state = out.state;
            }
            (!windows.is_empty()).then(|| total / windows.len() as f64)
        }
    };
    let report = EvalReport::from_ap(&summary, mse);
    print!("{}", report.to_table());
    if let Some(p) = &a.out {
        write_text(p, &report.to_key_values())?;
    }
    Ok(0)
}

fn eval_blink(a: EvalBlinkArgs) -> Result<i32> {
    let tolerance = ms_to_us("tolerance-ms", a.tolerance_ms)?;
    let records = read_records(&a.detections)?;
    let truth = read_blink_annotations(&a.annotations)?;
    let report = EvalReport::from_blinks(match_blinks(&records, &truth, tolerance));
    print!("{}", report.to_table());
    if let Some(p) = &a.out {
        write_text(p, &report.to_key_values())?;
    }
    Ok(0)
}

fn anchors(a: AnchorsArgs) -> Result<i32> {
    if a.k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let (sx, sy) = match (a.sensor, a.input_size) {
        (Some((sw, sh)), Some((iw, ih))) if sw > 0 && sh > 0 => (iw as f64 / sw as f64, ih as f64 / sh as f64),
        (Some(_), Some(_)) => return Err(Error::invalid("sensor", "must be non-zero")),
        _ => (1.0, 1.0),
    };
    let mut boxes = Vec::new();
    for p in &a.annotations {
        boxes.extend(read_annotations(p)?.iter().map(|g| (g.bbox.w * sx, g.bbox.h * sy)));
    }
    let mut rng = stage_rng(a.seed, ANCHORS_KMEANS);
    let centroids = kmeans_anchors(&boxes, a.k, a.iterations, &mut rng)?;
    // six anchors are printed in head order, ready for --anchors
    let ordered = if a.k == 6 {
        AnchorSet::from_unsorted(centroids)?.all().to_vec()
    } else {
        centroids
    };
    let text = ordered
        .iter()
        .map(|(w, h)| format!("{w:.2},{h:.2}"))
        .collect::<Vec<_>>()
        .join(",");
    println!("{text}");
    if let Some(p) = &a.out {
        write_text(p, &format!("{text}\n"))?;
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("512x288"), Ok((512, 288)));
        assert!(parse_size("512").is_err());
    }

    #[test]
    fn config_entries_go_before_command_line_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# defaults\nct_mean = 0.3\nseed=4\n").unwrap();
        let argv: Vec<OsString> = ["evdms", "simulate", "--seed", "9", "--config", cfg.to_str().unwrap()]
            .into_iter()
            .map(OsString::from)
            .collect();
        let out = expand_config(argv).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&s[..4], ["evdms", "simulate", "--ct-mean=0.3", "--seed=4"]);
        let cli = Cli::try_parse_from(
            s.iter().cloned().chain(["--frames".into(), "f".into(), "--out".into(), "o".into()]),
        )
        .unwrap();
        match cli.command {
            Command::Simulate(a) => assert_eq!((a.seed, a.ct_mean), (9, 0.3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        let help = cmd.find_subcommand_mut("blink").unwrap().render_long_help().to_string();
        assert!(help.contains("[default: 0.15]") && help.contains("[default: 5]"));
    }
}
