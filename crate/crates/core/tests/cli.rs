use std::path::Path;
use std::process::{Command, Output};

use evdms::blink::{generate_fixture, read_records, BlinkFixtureConfig};
use evdms::events::{write_events, EventFormat};

fn evdms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evdms")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_byte_reproducible_and_config_files_apply() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let common = ["--duration-ms", "300", "--width", "128", "--height", "96"];
    for out in [&a, &b] {
        let mut args = vec!["synth", "--seed", "7", "--out", p(out)];
        args.extend(common);
        let o = evdms(&args);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    for f in ["events.evs1", "annotations.txt", "rois.txt", "manifest.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    // seed from the file, overridden back to 7 on the command line
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 8\nduration_ms = 300\nwidth = 128\nheight = 96\n").unwrap();
    let o = evdms(&["synth", "--config", p(&cfg), "--out", p(&c), "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(std::fs::read(a.join("events.evs1")).unwrap(), std::fs::read(c.join("events.evs1")).unwrap());
    let o = evdms(&["synth", "--config", p(&cfg), "--out", p(&c)]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(a.join("events.evs1")).unwrap(), std::fs::read(c.join("events.evs1")).unwrap());
}

fn schema_valid(line: &str) -> bool {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 7 || f[0].parse::<u64>().is_err() || !matches!(f[1], "face" | "eye") {
        return false;
    }
    let nums: Vec<f64> = match f[2..].iter().map(|s| s.parse::<f64>()).collect() {
        Ok(v) => v,
        Err(_) => return false,
    };
    nums.iter().all(|v| v.is_finite()) && (0.0..=1.0).contains(&nums[0]) && nums[3] > 0.0 && nums[4] > 0.0
}

#[test]
fn detect_writes_schema_valid_lines_within_the_prediction_budget() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seq");
    let o = evdms(&["synth", "--seed", "1", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let events = data.join("events.evs1");
    let det = dir.path().join("det.txt");
    let o = evdms(&[
        "detect", "--events", p(&events), "--random-weights", "3", "--input-size", "256x256", "--objectness", "0.05",
        "--out", p(&det),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let stream = evdms::events::read_events(&events, EventFormat::Evs1).unwrap().stream;
    let windows = stream.len().div_ceil(50_000);
    assert!(stream.len() >= 50_000, "fixture holds {} events", stream.len());
    let body = std::fs::read_to_string(&det).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert!(!lines.is_empty() && lines.len() <= 960 * windows, "{} lines for {windows} windows", lines.len());
    assert!(lines.iter().all(|l| schema_valid(l)), "bad line in {body}");

    let report = dir.path().join("eval.txt");
    let o = evdms(&["eval-det", "--detections", p(&det), "--annotations", p(&data.join("annotations.txt")), "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let kv = std::fs::read_to_string(&report).unwrap();
    assert!(kv.contains("map=") && kv.contains("mean_recall="), "{kv}");

    let o = evdms(&["anchors", "--annotations", p(&data.join("annotations.txt"))]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim().split(',').count(), 12);
}

#[test]
fn blink_command_finds_the_scripted_blinks() {
    let dir = tempfile::tempdir().unwrap();
    let fx = generate_fixture(&BlinkFixtureConfig::default(), 2).unwrap();
    let events = dir.path().join("eye.evs1");
    write_events(&fx.stream, &events, EventFormat::Evs1).unwrap();
    let rois = dir.path().join("rois.txt");
    std::fs::write(&rois, fx.rois.format()).unwrap();
    let out = dir.path().join("blinks.txt");
    let series = dir.path().join("series.txt");
    let o = evdms(&["blink", "--events", p(&events), "--rois", p(&rois), "--out", p(&out), "--dump-series", p(&series)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let records = read_records(&out).unwrap();
    assert_eq!(records.len(), 3);
    assert!(std::fs::read_to_string(&series).unwrap().lines().count() > 700);

    let ann = dir.path().join("ann.txt");
    let times: String = fx.blinks.iter().map(|b| format!("{} {}\n", b.t_start, b.t_end())).collect();
    std::fs::write(&ann, times).unwrap();
    let o = evdms(&["eval-blink", "--detections", p(&out), "--annotations", p(&ann)]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("TP 3  FP 0  FN 0"), "{}", text(&o));
}

#[test]
fn selftest_passes_every_suite() {
    let o = evdms(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let out = text(&o);
    for suite in ["events", "representation", "simulator", "network", "detector", "blink", "metrics"] {
        assert!(out.lines().any(|l| l.starts_with("PASS") && l.contains(suite)), "{suite} missing from\n{out}");
    }
}

#[test]
fn exit_codes_and_help() {
    assert_eq!(code(&evdms(&["frobnicate"])), 1);
    assert_eq!(code(&evdms(&["blink", "--events", "x"])), 1);
    let o = evdms(&["blink", "--events", "/nonexistent/e.evs1", "--rois", "/nonexistent/r", "--out", "/tmp/o"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let o = evdms(&["blink", "--events", "e", "--rois", "r", "--out", "o", "--step-ms", "0"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("step-ms"));
    let o = evdms(&["synth", "--out", "/tmp/unused", "--landmarks", "l.txt"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("landmarks"));
    assert_eq!(code(&evdms(&["--help"])), 0);
    for cmd in ["simulate", "synth", "repr", "detect", "blink", "eval-det", "eval-blink", "anchors", "selftest"] {
        let o = evdms(&[cmd, "--help"]);
        assert_eq!(code(&o), 0, "{cmd}");
    }
    let help = text(&evdms(&["synth", "--help"]));
    assert!(help.contains("[default: 1000]") && help.contains("[default: 0.2]") && help.contains("[default: 0.05]"));
    let help = text(&evdms(&["detect", "--help"]));
    assert!(help.contains("[default: 512x288]") && help.contains("[default: 50000]") && help.contains("[default: 0.6]"));
}

#[test]
fn simulate_and_repr_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut manifest = String::new();
    for k in 0..3u32 {
        let img = evdms::raster::Raster::from_fn(16, 8, |x, _| 0.1 + 0.05 * ((x as u32 + k) % 16) as f32);
        let name = format!("f{k}.pgm");
        img.save(&d.join(&name)).unwrap();
        manifest.push_str(&format!("{} {name}\n", k * 10_000));
    }
    std::fs::write(d.join("frames.txt"), manifest).unwrap();
    let ev = d.join("sim.csv");
    let o = evdms(&["simulate", "--frames", p(&d.join("frames.txt")), "--out", p(&ev), "--seed", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let stream = evdms::events::read_events(&ev, EventFormat::Csv).unwrap().stream;
    assert!(!stream.is_empty());

    let out = d.join("repr");
    let o = evdms(&["repr", "--events", p(&ev), "--out", p(&out), "--mode", "voxel", "--bins", "3", "--window-ms", "5"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let bytes = std::fs::read(out.join("window_00000.evfr")).unwrap();
    let (bins, w, h, planes) = evdms::representation::decode_evfr(&bytes).unwrap();
    assert_eq!((bins, w, h, planes.len()), (3, 16, 8, 3 * 16 * 8));
    let o = evdms(&["repr", "--events", p(&ev), "--out", p(&out), "--window-ms", "5", "--window-events", "10"]);
    assert_eq!(code(&o), 1);
}
