use evdms::blink::{generate_fixture, run_blink_detector, BlinkConfig, BlinkEye, BlinkFixtureConfig, ScriptedBlink};
use evdms::events::{Event, EventStream};

const STEP: u64 = 5_000;

fn close(a: u64, b: u64) -> bool {
    a.abs_diff(b) <= STEP
}

fn matches(r: &evdms::blink::BlinkRecord, b: &ScriptedBlink) -> bool {
    close(r.t_start, b.t_start) && close(r.t_end, b.t_end())
}

#[test]
fn scripted_blinks_are_recovered_and_saccades_rejected() {
    let cfg = BlinkFixtureConfig::default();
    for seed in 0..20 {
        let fx = generate_fixture(&cfg, seed).unwrap();
        let out = run_blink_detector(&fx.stream, &fx.rois, &BlinkConfig::default()).unwrap();
        assert_eq!(out.records.len(), 3, "seed {seed}: {:?}", out.records);
        for (r, b) in out.records.iter().zip(&fx.blinks) {
            assert!(matches(r, b), "seed {seed}: {r:?} vs {b:?}");
            assert_eq!(r.eye, BlinkEye::Both);
            assert!(!r.unimodal);
            assert!(close(r.closing_duration, b.closing_us), "seed {seed}: {r:?} vs {b:?}");
            assert!(close(r.closed_duration, b.closed_us), "seed {seed}: {r:?} vs {b:?}");
            assert!(close(r.opening_duration, b.opening_us), "seed {seed}: {r:?} vs {b:?}");
        }
        for s in &fx.saccades {
            assert!(out.records.iter().all(|r| r.t_end <= s.t_start || r.t_start >= s.t_start + s.duration_us));
        }
    }
}

#[test]
fn polarity_flip_gives_identical_records() {
    let fx = generate_fixture(&BlinkFixtureConfig::default(), 7).unwrap();
    let flipped: Vec<Event> = fx.stream.events().iter().map(|e| Event { p: e.p.flipped(), ..*e }).collect();
    let flipped = EventStream::new(fx.stream.resolution(), flipped).unwrap();
    let config = BlinkConfig::default();
    let a = run_blink_detector(&fx.stream, &fx.rois, &config).unwrap();
    let b = run_blink_detector(&flipped, &fx.rois, &config).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn whole_window_time_shift_shifts_records_exactly() {
    let fx = generate_fixture(&BlinkFixtureConfig::default(), 11).unwrap();
    let config = BlinkConfig::default();
    let base = run_blink_detector(&fx.stream, &fx.rois, &config).unwrap();
    for k in [1u64, 3, 200] {
        let dt = k * STEP;
        let moved: Vec<Event> = fx.stream.events().iter().map(|e| Event { t: e.t + dt, ..*e }).collect();
        let moved = EventStream::new(fx.stream.resolution(), moved).unwrap();
        let out = run_blink_detector(&moved, &fx.rois.shifted(dt), &config).unwrap();
        assert_eq!(out.records.len(), base.records.len());
        for (r, b) in out.records.iter().zip(&base.records) {
            let mut b = *b;
            b.t_start += dt;
            b.t_end += dt;
            assert_eq!(*r, b);
        }
    }
}

#[test]
fn stream_without_eye_activity_yields_nothing() {
    let cfg = BlinkFixtureConfig { blinks: 0, saccades: 2, ..BlinkFixtureConfig::default() };
    let fx = generate_fixture(&cfg, 3).unwrap();
    let out = run_blink_detector(&fx.stream, &fx.rois, &BlinkConfig::default()).unwrap();
    assert!(out.records.is_empty());
    let quiet = EventStream::empty(fx.stream.resolution());
    assert!(run_blink_detector(&quiet, &fx.rois, &BlinkConfig::default()).unwrap().records.is_empty());
}
