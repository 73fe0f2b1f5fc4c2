//! Detection and blink evaluation: IoU, precision/recall, average precision,
//! the two-head regression loss and blink matching.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::blink::BlinkRecord;
use crate::detector::{AnchorSet, BBox, ObjectClass, TimedDetection, SIGMOID_MARGIN};
use crate::error::{Error, Result};
use crate::net::{Tensor, BOXES_PER_CELL, BOX_VALUES, HEAD_CHANNELS};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_BLINK_TOLERANCE_US: u64 = 100_000;

/// An annotated box; coordinates are centre format in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub t: u64,
    pub label: ObjectClass,
    pub bbox: BBox,
}

/// Reads `t label cx cy w h` lines, the format the generator writes.
pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<GroundTruthBox>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{origin}:{}", n + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::format(at(), format!("expected 6 fields, found {}", f.len())));
        }
        let t = f[0].parse::<u64>().map_err(|_| Error::format(at(), "bad timestamp"))?;
        let label: ObjectClass = f[1].parse().map_err(|_| Error::format(at(), format!("bad label `{}`", f[1])))?;
        let mut v = [0.0f64; 4];
        for (slot, s) in v.iter_mut().zip(&f[2..]) {
            *slot = s.parse().map_err(|_| Error::format(at(), format!("`{s}` is not a number")))?;
        }
        if !(v[2] > 0.0 && v[3] > 0.0) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(at(), "box needs positive finite size"));
        }
        out.push(GroundTruthBox {
            t,
            label,
            bbox: BBox::new(v[0], v[1], v[2], v[3]),
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// `(tp / (tp + fp), tp / (tp + fn))`, with 0/0 read as 1.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAp {
    pub class: ObjectClass,
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassAp {
    pub fn recall(&self) -> f64 {
        precision_recall(self.tp, self.fp, self.fn_).1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApSummary {
    /// Classes that occur in the detections or the ground truth.
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    pub mean_recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Area under the all-point interpolated precision-recall curve for a
/// ranked hit/miss list against `positives` ground-truth objects.
pub fn all_point_ap(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return if hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / positives as f64, tp as f64 / (i + 1) as f64));
    }
    // precision envelope from the right
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &points {
        area += (r - prev_recall) * p;
        prev_recall = r;
    }
    area
}

/// Detections are assigned to the annotated frame with the nearest
/// timestamp when it lies within `frame_tolerance_us`; otherwise they are
/// false positives. Per class, detections are ranked by score (ties keep
/// input order) and greedily matched to the best-overlapping unmatched box
/// of the same class and frame with IoU at least `iou_threshold`.
pub fn average_precision(
    detections: &[TimedDetection],
    truth: &[GroundTruthBox],
    iou_threshold: f64,
    frame_tolerance_us: u64,
) -> ApSummary {
    let mut frames: Vec<u64> = truth.iter().map(|g| g.t).collect();
    frames.sort_unstable();
    frames.dedup();
    let frame_of = |t: u64| -> Option<u64> {
        let i = frames.partition_point(|&f| f < t);
        let below = i.checked_sub(1).map(|j| frames[j]);
        let above = frames.get(i).copied();
        let best = match (below, above) {
            (Some(b), Some(a)) => Some(if t - b <= a - t { b } else { a }),
            (b, a) => b.or(a),
        };
        best.filter(|&f| f.abs_diff(t) <= frame_tolerance_us)
    };

    let mut per_class = Vec::new();
    for class in ObjectClass::ALL {
        let gts: Vec<&GroundTruthBox> = truth.iter().filter(|g| g.label == class).collect();
        let mut dets: Vec<&TimedDetection> = detections.iter().filter(|d| d.detection.class == class).collect();
        if gts.is_empty() && dets.is_empty() {
            continue;
        }
        dets.sort_by(|a, b| b.detection.objectness.total_cmp(&a.detection.objectness));
        let mut used = vec![false; gts.len()];
        let mut hits = Vec::with_capacity(dets.len());
        for d in &dets {
            let matched = frame_of(d.t).and_then(|f| {
                gts.iter()
                    .enumerate()
                    .filter(|(i, g)| !used[*i] && g.t == f)
                    .map(|(i, g)| (i, d.detection.bbox.iou(&g.bbox)))
                    .filter(|&(_, o)| o >= iou_threshold)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            });
            if let Some((i, _)) = matched {
                used[i] = true;
            }
            hits.push(matched.is_some());
        }
        let tp = hits.iter().filter(|&&h| h).count();
        per_class.push(ClassAp {
            class,
            ap: all_point_ap(&hits, gts.len()),
            tp,
            fp: hits.len() - tp,
            fn_: gts.len() - tp,
        });
    }
    let (tp, fp, fn_) = per_class
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.tp, acc.1 + c.fp, acc.2 + c.fn_));
    let map = if per_class.is_empty() {
        1.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    ApSummary {
        per_class,
        map,
        mean_recall: precision_recall(tp, fp, fn_).1,
        tp,
        fp,
        fn_,
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN);
    (p / (1.0 - p)).ln()
}

/// Regression targets for one head. Each box goes to the cell holding its
/// centre (clamped to the grid) and to the anchor of this head with the
/// highest centred IoU. Assigned slots hold the inverted decode values
/// (`logit` of the in-cell offset, `ln` of the size ratio), objectness 1
/// and a one-hot class; every other value is 0. Boxes are in network-input
/// pixels.
pub fn head_targets(
    boxes: &[(ObjectClass, BBox)],
    grid: (usize, usize),
    stride: f64,
    anchors: &[(f64, f64)],
) -> Result<Tensor> {
    if anchors.len() != BOXES_PER_CELL {
        return Err(Error::Shape(format!("head needs {BOXES_PER_CELL} anchors, got {}", anchors.len())));
    }
    if !(stride > 0.0) {
        return Err(Error::invalid("stride", "must be positive"));
    }
    let (gh, gw) = grid;
    let mut t = Tensor::zeros(HEAD_CHANNELS, gh, gw);
    for &(class, b) in boxes {
        if !(b.w > 0.0 && b.h > 0.0 && b.w.is_finite() && b.h.is_finite() && b.cx.is_finite() && b.cy.is_finite()) {
            return Err(Error::invalid("ground truth", "box with degenerate size"));
        }
        let gx = (b.cx / stride).clamp(0.0, gw as f64 - 1e-9);
        let gy = (b.cy / stride).clamp(0.0, gh as f64 - 1e-9);
        let (col, row) = (gx.floor() as usize, gy.floor() as usize);
        let a = best_anchor(b.w, b.h, anchors);
        let (pw, ph) = anchors[a];
        let base = a * BOX_VALUES;
        let values = [
            logit(gx - col as f64),
            logit(gy - row as f64),
            (b.w / pw).ln(),
            (b.h / ph).ln(),
            1.0,
            (class == ObjectClass::Face) as u8 as f64,
            (class == ObjectClass::Eye) as u8 as f64,
        ];
        for (k, v) in values.into_iter().enumerate() {
            t.set(base + k, row, col, v as f32);
        }
    }
    Ok(t)
}

fn best_anchor(w: f64, h: f64, anchors: &[(f64, f64)]) -> usize {
    let centred = |pw: f64, ph: f64| {
        let inter = w.min(pw) * h.min(ph);
        inter / (w * h + pw * ph - inter)
    };
    (0..anchors.len())
        .max_by(|&i, &j| {
            let (a, b) = (anchors[i], anchors[j]);
            centred(a.0, a.1).total_cmp(&centred(b.0, b.1)).then(j.cmp(&i))
        })
        .expect("anchors are non-empty")
}

/// Targets for both heads; strides follow from `input_width`.
pub fn build_targets(
    boxes: &[(ObjectClass, BBox)],
    coarse_grid: (usize, usize),
    fine_grid: (usize, usize),
    input_width: usize,
    anchors: &AnchorSet,
) -> Result<(Tensor, Tensor)> {
    let coarse = head_targets(boxes, coarse_grid, input_width as f64 / coarse_grid.1 as f64, anchors.coarse())?;
    let fine = head_targets(boxes, fine_grid, input_width as f64 / fine_grid.1 as f64, anchors.fine())?;
    Ok((coarse, fine))
}

/// Mean squared difference per head on raw head values, averaged over the
/// heads.
pub fn detection_mse(heads: &[&Tensor], targets: &[&Tensor]) -> Result<f64> {
    if heads.len() != targets.len() || heads.is_empty() {
        return Err(Error::Shape("need one target per head".into()));
    }
    let mut total = 0.0;
    for (h, t) in heads.iter().zip(targets) {
        if h.shape() != t.shape() {
            return Err(Error::Shape(format!("head {:?} vs target {:?}", h.shape(), t.shape())));
        }
        let sum: f64 = h
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        total += sum / h.data().len() as f64;
    }
    Ok(total / heads.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlinkMatch {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl BlinkMatch {
    pub fn precision_recall(&self) -> (f64, f64) {
        precision_recall(self.tp, self.fp, self.fn_)
    }
}

/// Greedy closest-first matching of record midpoints to annotated times.
/// Pairs further apart than `tolerance_us` never match; ties go to the
/// earlier annotation, then the earlier record.
pub fn match_blinks(detected: &[BlinkRecord], annotated: &[u64], tolerance_us: u64) -> BlinkMatch {
    let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
    for (j, &a) in annotated.iter().enumerate() {
        for (i, r) in detected.iter().enumerate() {
            let d = r.midpoint().abs_diff(a);
            if d <= tolerance_us {
                pairs.push((d, j, i));
            }
        }
    }
    pairs.sort_unstable();
    let mut ann_used = vec![false; annotated.len()];
    let mut det_used = vec![false; detected.len()];
    let mut tp = 0;
    for (_, j, i) in pairs {
        if !ann_used[j] && !det_used[i] {
            ann_used[j] = true;
            det_used[i] = true;
            tp += 1;
        }
    }
    BlinkMatch {
        tp,
        fp: detected.len() - tp,
        fn_: annotated.len() - tp,
    }
}

/// One blink per line: either `t_us` or `t_start_us t_end_us` (midpoint used).
pub fn parse_blink_annotations(text: &str, origin: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{origin}:{}", n + 1);
        let nums: Vec<u64> = line
            .split_whitespace()
            .map(|s| s.parse::<u64>().map_err(|_| Error::format(at(), format!("bad timestamp `{s}`"))))
            .collect::<Result<_>>()?;
        match nums[..] {
            [t] => out.push(t),
            [a, b] if b >= a => out.push(a + (b - a) / 2),
            [_, _] => return Err(Error::format(at(), "end precedes start")),
            _ => return Err(Error::format(at(), "expected one or two timestamps")),
        }
    }
    Ok(out)
}

pub fn read_blink_annotations(path: &Path) -> Result<Vec<u64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_blink_annotations(&text, &path.display().to_string())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassAp>,
    pub map: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mse: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl EvalReport {
    pub fn from_ap(ap: &ApSummary, mse: Option<f64>) -> Self {
        EvalReport {
            per_class: ap.per_class.clone(),
            map: Some(ap.map),
            mean_recall: Some(ap.mean_recall),
            mse,
            tp: ap.tp,
            fp: ap.fp,
            fn_: ap.fn_,
        }
    }

    pub fn from_blinks(m: BlinkMatch) -> Self {
        EvalReport {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            ..Default::default()
        }
    }

    pub fn precision_recall(&self) -> (f64, f64) {
        precision_recall(self.tp, self.fp, self.fn_)
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let (p, r) = self.precision_recall();
        m.insert("tp".into(), self.tp.to_string());
        m.insert("fp".into(), self.fp.to_string());
        m.insert("fn".into(), self.fn_.to_string());
        m.insert("precision".into(), format!("{p:.6}"));
        m.insert("recall".into(), format!("{r:.6}"));
        for c in &self.per_class {
            m.insert(format!("ap.{}", c.class), format!("{:.6}", c.ap));
            m.insert(format!("recall.{}", c.class), format!("{:.6}", c.recall()));
        }
        if let Some(v) = self.map {
            m.insert("map".into(), format!("{v:.6}"));
        }
        if let Some(v) = self.mean_recall {
            m.insert("mean_recall".into(), format!("{v:.6}"));
        }
        if let Some(v) = self.mse {
            m.insert("mse".into(), format!("{v:.6}"));
        }
        m
    }

    /// Machine-readable `key=value` lines, sorted by key.
    pub fn to_key_values(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if !self.per_class.is_empty() {
            let _ = writeln!(out, "{:<8} {:>8} {:>6} {:>6} {:>6} {:>8}", "class", "AP", "TP", "FP", "FN", "recall");
            for c in &self.per_class {
                let _ = writeln!(
                    out,
                    "{:<8} {:>8.4} {:>6} {:>6} {:>6} {:>8.4}",
                    c.class.label(),
                    c.ap,
                    c.tp,
                    c.fp,
                    c.fn_,
                    c.recall()
                );
            }
        }
        let (p, r) = self.precision_recall();
        let _ = writeln!(out, "TP {}  FP {}  FN {}", self.tp, self.fp, self.fn_);
        let _ = writeln!(out, "precision {:.1}%  recall {:.1}%", 100.0 * p, 100.0 * r);
        if let Some(v) = self.map {
            let _ = writeln!(out, "mAP {v:.4}");
        }
        if let Some(v) = self.mean_recall {
            let _ = writeln!(out, "mean recall {v:.4}");
        }
        if let Some(v) = self.mse {
            let _ = writeln!(out, "mean MSE loss {v:.6}");
        }
        out
    }
}
