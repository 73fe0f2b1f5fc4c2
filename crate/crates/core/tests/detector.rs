use evdms::detector::{decode_heads, detect_window, filter_objectness, nms, DetectorConfig};
use evdms::events::{EventStream, EventWindow, Resolution};
use evdms::net::{forward, NetworkWeights, Tensor};
use evdms::seeds::{stage_rng, SYNTH_TRAJECTORY};
use evdms::synth::{generate_sequence, synthetic_face, SynthConfig};

fn config() -> DetectorConfig {
    DetectorConfig {
        input_size: (256, 256),
        objectness_threshold: 0.2,
        ..DetectorConfig::default()
    }
}

#[test]
fn empty_window_matches_an_all_zero_input() {
    let weights = NetworkWeights::random(11);
    let cfg = config();
    let state = cfg.initial_state().unwrap();
    let window = EventWindow::new(Resolution::new(320, 240), Vec::new(), 0, 10).unwrap();
    let (dets, next) = detect_window(&weights, &state, &window, &cfg).unwrap();

    let out = forward(&weights, &state, &Tensor::zeros(1, 256, 256)).unwrap();
    let expect = nms(
        &filter_objectness(&decode_heads(&out.coarse, &out.fine, &cfg).unwrap(), cfg.objectness_threshold),
        cfg.iou_threshold,
    );
    assert_eq!(dets, expect);
    assert_eq!(next, out.state);
}

#[test]
fn synthetic_windows_give_well_formed_detections() {
    let (img, lm) = synthetic_face(160, 120);
    let synth = SynthConfig {
        duration_us: 300_000,
        ..SynthConfig::default()
    };
    let (_, stream) = generate_sequence(&img, &lm, &synth, &mut stage_rng(3, SYNTH_TRAJECTORY)).unwrap();
    let stream: EventStream = stream;
    assert!(!stream.is_empty());
    let weights = NetworkWeights::random(5);
    let cfg = config();
    let mut state = cfg.initial_state().unwrap();
    for w in stream.window_by_count(2_000).unwrap().iter().take(3) {
        let (dets, next) = detect_window(&weights, &state, w, &cfg).unwrap();
        let (again, _) = detect_window(&weights, &state, w, &cfg).unwrap();
        assert_eq!(dets, again);
        assert!(dets.len() <= 960);
        for d in &dets {
            assert!(d.bbox.w > 0.0 && d.bbox.h > 0.0);
            assert!((0.0..=1.0).contains(&d.objectness) && (0.0..=1.0).contains(&d.class_prob));
            assert!(d.objectness >= cfg.objectness_threshold);
        }
        state = next;
    }
}
