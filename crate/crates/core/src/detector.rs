//! Head decoding, objectness filtering, NMS and the windowed detection loop.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::EventWindow;
use crate::net::{
    forward, reset_state, NetworkWeights, RecurrentState, Tensor, BOXES_PER_CELL, BOX_VALUES, HEAD_CHANNELS,
    INFERENCE_SIZE, NETWORK_STRIDE,
};
use crate::representation::{accumulate, frame_to_input, DEFAULT_CLIP};

pub const DEFAULT_OBJECTNESS_THRESHOLD: f64 = 0.6;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;

/// Sigmoid outputs are kept this far from 0 and 1 so decoded centres stay
/// strictly inside their cell even for saturated logits.
pub const SIGMOID_MARGIN: f64 = 1e-6;
/// `t_w`, `t_h` are clamped to this magnitude before exponentiation.
pub const MAX_LOG_SCALE: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Face,
    Eye,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Face, ObjectClass::Eye];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ObjectClass::Face => "face",
            ObjectClass::Eye => "eye",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(ObjectClass::Face),
            "eye" => Ok(ObjectClass::Eye),
            other => Err(Error::invalid("label", format!("unknown class `{other}` (expected face or eye)"))),
        }
    }
}

/// Centre-format box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        BBox {
            cx: self.cx * sx,
            cy: self.cy * sy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub objectness: f64,
    pub class: ObjectClass,
    pub class_prob: f64,
}

/// Six `(w, h)` priors in input pixels: 0-2 for the coarse head, 3-5 for the
/// fine head.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    anchors: [(f64, f64); 6],
}

impl AnchorSet {
    pub fn new(anchors: [(f64, f64); 6]) -> Result<Self> {
        if anchors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())) {
            return Err(Error::invalid("anchors", "every anchor needs a positive finite width and height"));
        }
        Ok(AnchorSet { anchors })
    }

    /// From any six anchors: the three largest by area go to the coarse head.
    pub fn from_unsorted(mut anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.len() != 6 {
            return Err(Error::invalid("anchors", format!("need 6 anchors, got {}", anchors.len())));
        }
        anchors.sort_by(|a, b| (b.0 * b.1).total_cmp(&(a.0 * a.1)));
        let coarse = {
            let mut c = anchors[..3].to_vec();
            c.reverse();
            c
        };
        let fine = {
            let mut f = anchors[3..].to_vec();
            f.reverse();
            f
        };
        let all: Vec<(f64, f64)> = coarse.into_iter().chain(fine).collect();
        Self::new(all.try_into().expect("six anchors"))
    }

    pub fn all(&self) -> &[(f64, f64); 6] {
        &self.anchors
    }

    pub fn coarse(&self) -> &[(f64, f64)] {
        &self.anchors[..3]
    }

    pub fn fine(&self) -> &[(f64, f64)] {
        &self.anchors[3..]
    }

    /// Parses `w,h,w,h,...` (12 numbers).
    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid("anchors", format!("`{s}` is not a number")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 12 {
            return Err(Error::invalid("anchors", format!("need 12 numbers, got {}", values.len())));
        }
        let pairs: Vec<(f64, f64)> = values.chunks(2).map(|c| (c[0], c[1])).collect();
        Self::new(pairs.try_into().expect("six pairs"))
    }

    pub fn to_text(&self) -> String {
        self.anchors
            .iter()
            .map(|(w, h)| format!("{w},{h}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl Default for AnchorSet {
    /// The tiny-YOLO priors.
    fn default() -> Self {
        AnchorSet {
            anchors: [
                (81.0, 82.0),
                (135.0, 169.0),
                (344.0, 319.0),
                (10.0, 14.0),
                (23.0, 27.0),
                (37.0, 58.0),
            ],
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn bounded_sigmoid(v: f64) -> f64 {
    sigmoid(v).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)
}

/// Decodes a `21 x Gh x Gw` head. Channel `a*7 + k` holds value `k`
/// (`t_x, t_y, t_w, t_h, t_o, p_face, p_eye`) of anchor `a`. Output is
/// cell-major (row, then column), anchor-minor.
pub fn decode_head(head: &Tensor, anchors: &[(f64, f64)], stride: f64) -> Result<Vec<Detection>> {
    let (c, gh, gw) = head.shape();
    if c != HEAD_CHANNELS {
        return Err(Error::Shape(format!("head has {c} channels, expected {HEAD_CHANNELS}")));
    }
    if anchors.len() != BOXES_PER_CELL {
        return Err(Error::Shape(format!("head needs {BOXES_PER_CELL} anchors, got {}", anchors.len())));
    }
    let mut out = Vec::with_capacity(gh * gw * BOXES_PER_CELL);
    for cy in 0..gh {
        for cx in 0..gw {
            for (a, &(pw, ph)) in anchors.iter().enumerate() {
                let v = |k: usize| head.at(a * BOX_VALUES + k, cy, cx) as f64;
                let bx = (bounded_sigmoid(v(0)) + cx as f64) * stride;
                let by = (bounded_sigmoid(v(1)) + cy as f64) * stride;
                let bw = pw * v(2).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
                let bh = ph * v(3).clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp();
                let objectness = sigmoid(v(4));
                let p_face = sigmoid(v(5));
                let p_eye = sigmoid(v(6));
                let (class, class_prob) = if p_eye > p_face {
                    (ObjectClass::Eye, p_eye)
                } else {
                    (ObjectClass::Face, p_face)
                };
                out.push(Detection {
                    bbox: BBox::new(bx, by, bw, bh),
                    objectness,
                    class,
                    class_prob,
                });
            }
        }
    }
    Ok(out)
}

/// Keeps detections with `objectness >= threshold`, order preserved.
pub fn filter_objectness(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.objectness >= threshold).copied().collect()
}

/// Greedy per-class NMS. Output is in ranking order: objectness, then class
/// probability, then area (all descending), then input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.objectness
            .total_cmp(&a.objectness)
            .then(b.class_prob.total_cmp(&a.class_prob))
            .then(b.bbox.area().total_cmp(&a.bbox.area()))
            .then(i.cmp(&j))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept.iter().all(|k| k.class != d.class || k.bbox.iou(&d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Network input `(width, height)`, both divisible by 32.
    pub input_size: (usize, usize),
    pub clip: f32,
    pub anchors: AnchorSet,
    pub objectness_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            input_size: INFERENCE_SIZE,
            clip: DEFAULT_CLIP,
            anchors: AnchorSet::default(),
            objectness_threshold: DEFAULT_OBJECTNESS_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.input_size;
        if w == 0 || h == 0 || w % NETWORK_STRIDE != 0 || h % NETWORK_STRIDE != 0 {
            return Err(Error::invalid("input-size", format!("{w}x{h} is not divisible by {NETWORK_STRIDE}")));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(Error::invalid("clip", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.objectness_threshold) {
            return Err(Error::invalid("objectness", "must lie in [0, 1]"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::invalid("nms-iou", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<RecurrentState> {
        reset_state(self.input_size)
    }
}

/// Decodes both heads (coarse first) with the configured anchors.
pub fn decode_heads(coarse: &Tensor, fine: &Tensor, config: &DetectorConfig) -> Result<Vec<Detection>> {
    let (w, _) = config.input_size;
    let coarse_stride = w as f64 / coarse.width() as f64;
    let fine_stride = w as f64 / fine.width() as f64;
    let mut dets = decode_head(coarse, config.anchors.coarse(), coarse_stride)?;
    dets.extend(decode_head(fine, config.anchors.fine(), fine_stride)?);
    Ok(dets)
}

/// One step of the detection loop. Boxes are in network-input pixels.
pub fn detect_window(
    weights: &NetworkWeights,
    state: &RecurrentState,
    window: &EventWindow<'_>,
    config: &DetectorConfig,
) -> Result<(Vec<Detection>, RecurrentState)> {
    let frame = accumulate(window, Some(config.clip));
    let input = frame_to_input(&frame, config.input_size)?;
    let out = forward(weights, state, &input)?;
    let dets = decode_heads(&out.coarse, &out.fine, config)?;
    let kept = nms(&filter_objectness(&dets, config.objectness_threshold), config.iou_threshold);
    Ok((kept, out.state))
}

/// A detection stamped with the end time of its window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedDetection {
    pub t: u64,
    pub detection: Detection,
}

/// One line per detection: `t_end_us label score cx cy w h`.
pub fn format_detections(dets: &[TimedDetection]) -> String {
    let mut out = String::new();
    for d in dets {
        let b = d.detection.bbox;
        out.push_str(&format!(
            "{} {} {:.6} {:.3} {:.3} {:.3} {:.3}\n",
            d.t,
            d.detection.class,
            d.detection.objectness,
            b.cx,
            b.cy,
            b.w,
            b.h
        ));
    }
    out
}

pub fn write_detections(path: &Path, dets: &[TimedDetection]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(format_detections(dets).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Parses the detection file format. Blank lines and `#` comments are skipped.
pub fn parse_detections(text: &str, origin: &str) -> Result<Vec<TimedDetection>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{origin}:{}", n + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(Error::format(at(), format!("expected 7 fields, found {}", f.len())));
        }
        let t = f[0]
            .parse::<u64>()
            .map_err(|_| Error::format(at(), "bad timestamp"))?;
        let class: ObjectClass = f[1].parse().map_err(|_| Error::format(at(), "bad label"))?;
        let mut nums = [0.0f64; 5];
        for (slot, s) in nums.iter_mut().zip(&f[2..]) {
            *slot = s
                .parse()
                .map_err(|_| Error::format(at(), format!("`{s}` is not a number")))?;
        }
        let [score, cx, cy, w, h] = nums;
        if !(0.0..=1.0).contains(&score) || !(w > 0.0 && h > 0.0) {
            return Err(Error::format(at(), "score outside [0, 1] or non-positive box size"));
        }
        out.push(TimedDetection {
            t,
            detection: Detection {
                bbox: BBox::new(cx, cy, w, h),
                objectness: score,
                class,
                class_prob: score,
            },
        });
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<TimedDetection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}
