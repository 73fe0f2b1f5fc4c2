//! Small oracle fixtures run by `evdms selftest`.

use std::fmt;

use crate::blink::{generate_fixture, run_blink_detector, BlinkConfig, BlinkFixtureConfig};
use crate::detector::{decode_heads, nms, BBox, Detection, DetectorConfig, ObjectClass};
use crate::events::{encode_evs1, parse_evs1, Event, EventStream, Polarity, Resolution};
use crate::metrics::{average_precision, match_blinks, precision_recall, GroundTruthBox};
use crate::net::{forward_traced, reset_state, NetworkWeights, Tensor, TRAINING_SIZE};
use crate::raster::Raster;
use crate::representation::{accumulate, voxel_grid};
use crate::simulator::{simulate_events, SimulatorConfig, TimedFrame};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<16} {}", self.name, self.detail)
    }
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: crate::error::Error) -> String {
    e.to_string()
}

fn lcg_events(n: usize, res: Resolution) -> Vec<Event> {
    let mut s: u64 = 0x2545_f491_4f6c_dd1d;
    let mut next = || {
        s = s.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        s >> 33
    };
    let mut t = 0;
    (0..n)
        .map(|_| {
            t += next() % 20;
            let p = if next() % 2 == 0 { Polarity::Positive } else { Polarity::Negative };
            Event::new(t, (next() % res.width as u64) as u16, (next() % res.height as u64) as u16, p)
        })
        .collect()
}

fn events_suite() -> Check {
    let res = Resolution::new(64, 48);
    let stream = EventStream::new(res, lcg_events(5000, res)).map_err(err)?;
    let (r2, ev2) = parse_evs1(&encode_evs1(&stream)).map_err(err)?;
    ensure(r2 == res && ev2 == stream.events(), "EVS1 round trip changed the stream")?;
    let windows = stream.window_by_duration(1000, 0).map_err(err)?;
    let total: usize = windows.iter().map(|w| w.len()).sum();
    ensure(total == stream.len(), "duration windows lost or duplicated events")?;
    ensure(
        windows.iter().all(|w| w.events().iter().all(|e| e.t >= w.t_start() && e.t < w.t_end())),
        "event outside its half-open window",
    )?;
    Ok(format!("{} events, {} windows", stream.len(), windows.len()))
}

fn representation_suite() -> Check {
    let res = Resolution::new(32, 24);
    let stream = EventStream::new(res, lcg_events(20_000, res)).map_err(err)?;
    let w = stream.as_window();
    let frame = accumulate(&w, None);
    let grid = voxel_grid(&w, 1).map_err(err)?;
    ensure(
        grid.values().iter().zip(frame.values()).all(|(a, b)| *a == *b as f64),
        "B = 1 voxel grid differs from accumulation",
    )?;
    let polarity: i64 = stream.events().iter().map(|e| e.p.sign() as i64).sum();
    let grid5 = voxel_grid(&w, 5).map_err(err)?;
    ensure((grid5.sum() - polarity as f64).abs() < 1e-5, "voxel mass not conserved")?;
    let clipped = accumulate(&w, Some(10.0));
    ensure(clipped.values().iter().all(|v| v.abs() <= 10.0), "clip bound exceeded")?;
    Ok("B=1 equivalence, mass conservation, clip bound".into())
}

fn simulator_suite() -> Check {
    // log intensity 0 -> 1 over 100 ms at ct 0.2: crossings every 20 ms
    let eps = 1e-3;
    let px = |l: f64| Raster::new(1, 1, vec![(l.exp() - eps) as f32]);
    let frames = vec![
        TimedFrame::new(0, px(0.0).map_err(err)?),
        TimedFrame::new(100_000, px(1.0).map_err(err)?),
    ];
    let config = SimulatorConfig {
        ct_pos: 0.2,
        ct_neg: 0.2,
        refractory_us: 0,
        eps,
        seed: 0,
    };
    let stream = simulate_events(&frames, &config).map_err(err)?;
    let times: Vec<u64> = stream.events().iter().map(|e| e.t).collect();
    ensure(times.len() == 5, format!("expected 5 events, got {times:?}"))?;
    for (k, &t) in times.iter().enumerate() {
        let want = 20_000 * (k as u64 + 1);
        ensure(t.abs_diff(want) <= 1, format!("crossing {k} at {t}, expected {want}"))?;
    }
    Ok("linear ramp crossings at 20/40/60/80/100 ms".into())
}

fn network_suite() -> Check {
    let weights = NetworkWeights::random(1);
    let params = weights.parameter_count();
    let rel = (params as f64 - 12.8e6) / 12.8e6;
    ensure(rel.abs() <= 0.05, format!("{params} parameters is {:.1}% off 12.8M", 100.0 * rel))?;
    let (w, h) = TRAINING_SIZE;
    let (out, _) = forward_traced(&weights, &reset_state((w, h)).map_err(err)?, &Tensor::zeros(1, h, w)).map_err(err)?;
    let config = DetectorConfig {
        input_size: (w, h),
        ..DetectorConfig::default()
    };
    let dets = decode_heads(&out.coarse, &out.fine, &config).map_err(err)?;
    ensure(dets.len() == 960, format!("{} predictions at {w}x{h}", dets.len()))?;
    Ok(format!("{params} parameters, 960 predictions at {w}x{h}"))
}

fn detector_suite() -> Check {
    let d = |score: f64, b: BBox| Detection {
        bbox: b,
        objectness: score,
        class: ObjectClass::Face,
        class_prob: score,
    };
    let a = d(0.9, BBox::from_corners(0.0, 0.0, 10.0, 10.0));
    let b = d(0.8, BBox::from_corners(0.0, 0.0, 10.0, 7.0));
    let c = d(0.7, BBox::from_corners(6.0, 6.0, 14.0, 14.0));
    let kept = nms(&[a, b, c], 0.5);
    ensure(kept == vec![a, c], "greedy NMS trace")?;
    Ok("NMS hand trace".into())
}

fn blink_suite() -> Check {
    let config = BlinkConfig::default();
    for seed in 0..3 {
        let fx = generate_fixture(&BlinkFixtureConfig::default(), seed).map_err(err)?;
        let out = run_blink_detector(&fx.stream, &fx.rois, &config).map_err(err)?;
        ensure(out.records.len() == fx.blinks.len(), format!("seed {seed}: {} records", out.records.len()))?;
        for (r, b) in out.records.iter().zip(&fx.blinks) {
            ensure(
                r.t_start.abs_diff(b.t_start) <= config.step_us && r.t_end.abs_diff(b.t_end()) <= config.step_us,
                format!("seed {seed}: record {}..{} vs script {}..{}", r.t_start, r.t_end, b.t_start, b.t_end()),
            )?;
        }
    }
    Ok("3 fixtures, scripted blinks found, saccades rejected".into())
}

fn metrics_suite() -> Check {
    let (p, r) = precision_recall(42, 7, 1);
    ensure((p - 42.0 / 49.0).abs() < 1e-12 && (r - 42.0 / 43.0).abs() < 1e-12, "precision/recall")?;
    let bx = |x: f64| BBox::new(x, 20.0, 10.0, 10.0);
    let truth = [
        GroundTruthBox { t: 0, label: ObjectClass::Eye, bbox: bx(20.0) },
        GroundTruthBox { t: 0, label: ObjectClass::Eye, bbox: bx(80.0) },
    ];
    let det = |s: f64, x: f64| crate::detector::TimedDetection {
        t: 0,
        detection: Detection {
            bbox: bx(x),
            objectness: s,
            class: ObjectClass::Eye,
            class_prob: s,
        },
    };
    let ap = average_precision(&[det(0.9, 20.0), det(0.8, 50.0), det(0.7, 80.0)], &truth, 0.5, 0);
    ensure((ap.map - 5.0 / 6.0).abs() < 1e-12, format!("AP {}", ap.map))?;
    let m = match_blinks(&[], &[1, 2], 10);
    ensure((m.tp, m.fp, m.fn_) == (0, 0, 2), "blink matching conservation")?;
    Ok("precision/recall, AP 0.8333, blink matching".into())
}

/// Runs every suite in a fixed order.
pub fn run_selftest() -> Vec<SuiteResult> {
    let suites: [(&'static str, fn() -> Check); 7] = [
        ("events", events_suite),
        ("representation", representation_suite),
        ("simulator", simulator_suite),
        ("network", network_suite),
        ("detector", detector_suite),
        ("blink", blink_suite),
        ("metrics", metrics_suite),
    ];
    suites
        .iter()
        .map(|&(name, f)| {
            let outcome = f();
            SuiteResult {
                name,
                passed: outcome.is_ok(),
                detail: outcome.unwrap_or_else(|e| e),
            }
        })
        .collect()
}
