//! Synthetic annotated event sequences from a single landmarked still.
//!
//! A random 6-DOF camera pose is reached smoothly from identity; each pose
//! induces a plane homography that warps the still and its landmarks. The
//! warped frames drive the event simulator and the warped landmarks give
//! per-frame face and eye boxes.

mod dataset;
mod fixture;

pub use dataset::{
    format_annotations, format_manifest, format_rois, parse_manifest, write_dataset, DatasetPaths, ANNOTATIONS_FILE,
    EVENTS_FILE, MANIFEST_FILE, ROIS_FILE,
};
pub use fixture::synthetic_face;

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use crate::detector::BBox;
use crate::error::{Error, Result};
use crate::events::{EventStream, EventWindow};
use crate::net::Tensor;
use crate::raster::Raster;
use crate::simulator::{Simulator, SimulatorConfig, TimedFrame};

pub const DEFAULT_FPS: f64 = 1000.0;
pub const DEFAULT_DURATION_US: u64 = 2_000_000;
pub const DEFAULT_FACE_PADDING: f64 = 0.05;
pub const DEFAULT_EYE_PADDING: f64 = 0.25;

/// Rotations in radians; `tx`, `ty`, `tz` relative to the plane depth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose6 {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl Pose6 {
    pub fn identity() -> Self {
        Pose6::default()
    }

    pub fn components(&self) -> [f64; 6] {
        [self.rx, self.ry, self.rz, self.tx, self.ty, self.tz]
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        Pose6 {
            rx: c[0],
            ry: c[1],
            rz: c[2],
            tx: c[3],
            ty: c[4],
            tz: c[5],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Pose6::from_components(self.components().map(|v| v * s))
    }

    /// Default motion bounds for [`pose_trajectory`].
    pub fn default_bounds() -> Self {
        Pose6 {
            rx: 0.15,
            ry: 0.15,
            rz: 0.2,
            tx: 0.08,
            ty: 0.08,
            tz: 0.15,
        }
    }

    fn validate_bounds(&self) -> Result<()> {
        let c = self.components();
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("bounds", "pose bounds must be finite and non-negative"));
        }
        if c[..3].iter().any(|&r| r > FRAC_PI_2) {
            return Err(Error::invalid("bounds", "rotation bounds may not exceed pi/2"));
        }
        if self.tz >= 1.0 {
            return Err(Error::invalid("bounds", "tz bound must stay below 1 (camera would reach the plane)"));
        }
        Ok(())
    }
}

pub fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Poses at `floor(duration * rate / 1e6) + 1` evenly spaced times, easing
/// from identity to one endpoint drawn uniformly within `±bounds`. Returns
/// `(t_us, pose)` pairs starting at `t = 0`.
pub fn pose_trajectory<R: Rng + ?Sized>(
    rng: &mut R,
    bounds: &Pose6,
    duration_us: u64,
    rate: f64,
) -> Result<Vec<(u64, Pose6)>> {
    bounds.validate_bounds()?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid("fps", "must be positive"));
    }
    let n = (duration_us as f64 * rate / 1e6).floor() as usize + 1;
    if n < 2 {
        return Err(Error::invalid("duration", "trajectory needs at least two samples"));
    }
    let end = Pose6::from_components(bounds.components().map(|b| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 }));
    Ok((0..n)
        .map(|i| {
            let t = (i as f64 * 1e6 / rate).round() as u64;
            let u = i as f64 / (n - 1) as f64;
            (t, end.scaled(smoothstep(u)))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Focal length equal to the larger image side, principal point at the
    /// image centre.
    pub fn for_image(width: usize, height: usize) -> Self {
        let f = width.max(height) as f64;
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    /// Normalizes so that `m[(2, 2)] = 1` when it is nonzero.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("homography", "non-finite entries"));
        }
        let m = if m[(2, 2)].abs() > 1e-12 { m / m[(2, 2)] } else { m };
        if m.determinant().abs() <= 1e-9 {
            return Err(Error::invalid("homography", "matrix is singular"));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography { m: Matrix3::identity() }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography {
            m: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.m.try_inverse().expect("constructor rejects singular matrices");
        Homography::new(inv).unwrap_or(Homography { m: inv })
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &Homography) -> Result<Homography> {
        Homography::new(self.m * first.m)
    }

    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let p = self.m * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            return Err(Error::invalid("landmarks", format!("({x}, {y}) maps to infinity")));
        }
        Ok((p.x / p.z, p.y / p.z))
    }
}

/// `H = K (R + t n^T / d) K^-1` with `R = Rz Ry Rx`, `t = d (tx, ty, tz)` and
/// plane normal `n = (0, 0, 1)`.
pub fn pose_to_homography(pose: &Pose6, intrinsics: &Intrinsics, plane_depth: f64) -> Result<Homography> {
    if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
        return Err(Error::invalid("intrinsics", "focal lengths must be positive"));
    }
    if !(plane_depth > 0.0) {
        return Err(Error::invalid("plane-depth", "must be positive"));
    }
    let r = Rotation3::from_euler_angles(pose.rx, pose.ry, pose.rz).into_inner();
    let t = Vector3::new(pose.tx, pose.ty, pose.tz) * plane_depth;
    let n = Vector3::new(0.0, 0.0, 1.0);
    let k = intrinsics.matrix();
    let k_inv = k.try_inverse().expect("positive focal lengths");
    Homography::new(k * (r + t * n.transpose() / plane_depth) * k_inv)
}

/// `out(x, y) = in(H^-1 (x, y, 1))`, bilinear, border-replicate outside.
pub fn warp_image(image: &Raster, h: &Homography) -> Raster {
    let inv = *h.inverse().matrix();
    Raster::from_fn(image.width(), image.height(), |x, y| {
        let p = inv * Vector3::new(x as f64, y as f64, 1.0);
        if p.z.abs() < 1e-12 {
            return image.sample_bilinear(f64::MAX, f64::MAX);
        }
        image.sample_bilinear(p.x / p.z, p.y / p.z)
    })
}

pub fn transform_landmarks(points: &[(f64, f64)], h: &Homography) -> Result<Vec<(f64, f64)>> {
    points.iter().map(|&(x, y)| h.apply(x, y)).collect()
}

/// Named landmark index groups.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkGroups {
    pub face: Vec<usize>,
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<(f64, f64)>,
    pub groups: LandmarkGroups,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>, groups: LandmarkGroups) -> Result<Self> {
        let n = points.len();
        let g = &groups;
        for (name, idx) in [("face", &g.face), ("left_eye", &g.left_eye), ("right_eye", &g.right_eye)] {
            if idx.is_empty() {
                return Err(Error::invalid("groups", format!("group `{name}` is empty")));
            }
            if let Some(bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::invalid(
                    "groups",
                    format!("group `{name}` refers to landmark {bad} but only {n} exist"),
                ));
            }
        }
        if g.left_eye.iter().any(|i| g.right_eye.contains(i)) {
            return Err(Error::invalid("groups", "eye groups overlap"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("landmarks", "non-finite coordinate"));
        }
        Ok(LandmarkSet { points, groups })
    }

    pub fn load(points_path: &Path, groups_path: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let points = parse_landmarks(&read(points_path)?, &points_path.display().to_string())?;
        let groups = parse_groups(&read(groups_path)?, &groups_path.display().to_string(), points.len())?;
        LandmarkSet::new(points, groups)
    }
}

/// One `x y` pair per line (a comma may separate them). Leading lines that
/// are not coordinate pairs, such as an image name, are skipped.
pub fn parse_landmarks(text: &str, origin: &str) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let parsed = match fields.as_slice() {
            [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(p) => points.push(p),
            None if points.is_empty() => continue,
            None => {
                return Err(Error::format(
                    format!("{origin}:{}", n + 1),
                    "expected an `x y` coordinate pair",
                ))
            }
        }
    }
    if points.is_empty() {
        return Err(Error::format(origin, "no landmarks found"));
    }
    Ok(points)
}

/// Lines of `name index...`, where an index may be a range `a-b`
/// (inclusive). Required names: `left_eye`, `right_eye`; `face` defaults to
/// every landmark.
pub fn parse_groups(text: &str, origin: &str, point_count: usize) -> Result<LandmarkGroups> {
    let mut face = None;
    let mut left = None;
    let mut right = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{origin}:{}", n + 1);
        let mut fields = line.split(|c: char| c == ',' || c == ':' || c.is_whitespace()).filter(|s| !s.is_empty());
        let name = fields.next().unwrap_or_default();
        let mut indices = Vec::new();
        for f in fields {
            let bad = || Error::format(at(), format!("bad index `{f}`"));
            match f.split_once('-') {
                Some((a, b)) => {
                    let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                    if a > b {
                        return Err(bad());
                    }
                    indices.extend(a..=b);
                }
                None => indices.push(f.parse().map_err(|_| bad())?),
            }
        }
        let slot = match name {
            "face" => &mut face,
            "left_eye" => &mut left,
            "right_eye" => &mut right,
            other => return Err(Error::format(at(), format!("unknown group `{other}`"))),
        };
        *slot = Some(indices);
    }
    let missing = |g: &str| Error::format(origin, format!("group `{g}` is missing"));
    Ok(LandmarkGroups {
        face: face.unwrap_or_else(|| (0..point_count).collect()),
        left_eye: left.ok_or_else(|| missing("left_eye"))?,
        right_eye: right.ok_or_else(|| missing("right_eye"))?,
    })
}

/// Fraction of a group's larger extent added on every side of its box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxPadding {
    pub face: f64,
    pub eye: f64,
}

impl Default for BoxPadding {
    fn default() -> Self {
        BoxPadding {
            face: DEFAULT_FACE_PADDING,
            eye: DEFAULT_EYE_PADDING,
        }
    }
}

/// Boxes of one frame; `None` marks a group that left the frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameBoxes {
    pub face: Option<BBox>,
    pub left_eye: Option<BBox>,
    pub right_eye: Option<BBox>,
}

/// Padded extremes of a group's points, clamped to `[0, width] x [0, height]`.
/// `None` when every point of the group lies outside the frame.
pub fn group_box(points: &[(f64, f64)], indices: &[usize], padding: f64, frame: (usize, usize)) -> Option<BBox> {
    let (w, h) = (frame.0 as f64, frame.1 as f64);
    let inside = |&(x, y): &(f64, f64)| x >= 0.0 && x <= w && y >= 0.0 && y <= h;
    let pts: Vec<(f64, f64)> = indices.iter().map(|&i| points[i]).collect();
    if !pts.iter().any(inside) {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let pad = padding * (x1 - x0).max(y1 - y0);
    let (x0, y0) = ((x0 - pad).max(0.0), (y0 - pad).max(0.0));
    let (x1, y1) = ((x1 + pad).min(w), (y1 + pad).min(h));
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some(BBox::from_corners(x0, y0, x1, y1))
}

pub fn landmarks_to_boxes(
    points: &[(f64, f64)],
    groups: &LandmarkGroups,
    padding: &BoxPadding,
    frame: (usize, usize),
) -> FrameBoxes {
    FrameBoxes {
        face: group_box(points, &groups.face, padding.face, frame),
        left_eye: group_box(points, &groups.left_eye, padding.eye, frame),
        right_eye: group_box(points, &groups.right_eye, padding.eye, frame),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub bounds: Pose6,
    pub duration_us: u64,
    pub fps: f64,
    /// Defaults to [`Intrinsics::for_image`].
    pub intrinsics: Option<Intrinsics>,
    pub plane_depth: f64,
    pub padding: BoxPadding,
    pub simulator: SimulatorConfig,
    /// Keep rendered frames in the returned sequence.
    pub keep_frames: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bounds: Pose6::default_bounds(),
            duration_us: DEFAULT_DURATION_US,
            fps: DEFAULT_FPS,
            intrinsics: None,
            plane_depth: 1.0,
            padding: BoxPadding::default(),
            simulator: SimulatorConfig::default(),
            keep_frames: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameAnnotation {
    pub t: u64,
    pub pose: Pose6,
    pub boxes: FrameBoxes,
    pub landmarks: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSequence {
    pub width: usize,
    pub height: usize,
    pub annotations: Vec<FrameAnnotation>,
    /// Empty unless [`SynthConfig::keep_frames`] is set.
    pub frames: Vec<TimedFrame>,
}

/// Renders, annotates and simulates one sequence. `rng` draws the endpoint
/// pose; thresholds come from `config.simulator`.
pub fn generate_sequence<R: Rng + ?Sized>(
    image: &Raster,
    landmarks: &LandmarkSet,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<(AnnotatedSequence, EventStream)> {
    let (w, h) = (image.width(), image.height());
    let intrinsics = config.intrinsics.unwrap_or_else(|| Intrinsics::for_image(w, h));
    let trajectory = pose_trajectory(rng, &config.bounds, config.duration_us, config.fps)?;
    let mut annotations = Vec::with_capacity(trajectory.len());
    let mut frames = Vec::new();
    let mut events = Vec::new();
    let mut sim: Option<Simulator> = None;
    for &(t, pose) in &trajectory {
        let hom = pose_to_homography(&pose, &intrinsics, config.plane_depth)?;
        let frame = TimedFrame::new(t, warp_image(image, &hom));
        match sim.as_mut() {
            None => sim = Some(Simulator::new(config.simulator, &frame)?),
            Some(s) => events.extend(s.push(&frame)?),
        }
        let pts = transform_landmarks(&landmarks.points, &hom)?;
        annotations.push(FrameAnnotation {
            t,
            pose,
            boxes: landmarks_to_boxes(&pts, &landmarks.groups, &config.padding, (w, h)),
            landmarks: pts,
        });
        if config.keep_frames {
            frames.push(frame);
        }
    }
    let resolution = sim.expect("trajectory has at least two samples").resolution();
    let stream = EventStream::new(resolution, events)?;
    Ok((
        AnnotatedSequence {
            width: w,
            height: h,
            annotations,
            frames,
        },
        stream,
    ))
}

/// The `dt`-long window of events leading up to and including time `t`.
pub fn window_ending_at(stream: &EventStream, t: u64, dt: u64) -> Result<EventWindow<'_>> {
    let t_end = t + 1;
    let t_start = t_end.saturating_sub(dt);
    let ev = stream.events();
    let lo = ev.partition_point(|e| e.t < t_start);
    let hi = ev.partition_point(|e| e.t < t_end);
    EventWindow::new(stream.resolution(), &ev[lo..hi], t_start, t_end)
}

/// Replaces `inputs[start..start + len]` (clipped to the sequence) by zeros.
pub fn zero_segment(inputs: &mut [Tensor], start: usize, len: usize) {
    let end = start.saturating_add(len).min(inputs.len());
    for t in inputs.iter_mut().take(end).skip(start) {
        let (c, h, w) = t.shape();
        *t = Tensor::zeros(c, h, w);
    }
}

/// At each position, with probability `probability`, zeroes a run of
/// `1..=max_len` inputs starting there and continues after it. Returns the
/// augmented sequence and a per-step mask of zeroed inputs; annotations are
/// left to the caller unchanged.
pub fn zero_segment_augment<R: Rng + ?Sized>(
    mut inputs: Vec<Tensor>,
    rng: &mut R,
    probability: f64,
    max_len: usize,
) -> Result<(Vec<Tensor>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::invalid("probability", "must lie in [0, 1]"));
    }
    if max_len == 0 {
        return Err(Error::invalid("max-len", "must be at least 1"));
    }
    let mut mask = vec![false; inputs.len()];
    let mut i = 0;
    while i < inputs.len() {
        if rng.random_bool(probability) {
            let len = rng.random_range(1..=max_len);
            zero_segment(&mut inputs, i, len);
            let end = (i + len).min(mask.len());
            mask[i..end].iter_mut().for_each(|m| *m = true);
            i = end;
        } else {
            i += 1;
        }
    }
    Ok((inputs, mask))
}

fn shared_centre_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

/// k-means over box sizes with `1 - IoU` (boxes sharing a centre) as the
/// distance. Starts from `k` distinct sizes picked by `rng`; stops early once
/// assignments settle. Result sorted by area, ascending.
pub fn kmeans_anchors<R: Rng + ?Sized>(
    boxes: &[(f64, f64)],
    k: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    if boxes.is_empty() {
        return Err(Error::invalid("boxes", "no boxes to cluster"));
    }
    if boxes.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0)) {
        return Err(Error::invalid("boxes", "box sizes must be positive"));
    }
    let mut distinct: Vec<(f64, f64)> = boxes.to_vec();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::invalid(
            "k",
            format!("k = {k} but there are {} distinct box sizes", distinct.len()),
        ));
    }
    let mut centroids: Vec<(f64, f64)> = sample(rng, distinct.len(), k).iter().map(|i| distinct[i]).collect();
    let mut assignment = vec![usize::MAX; boxes.len()];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (slot, &b) in assignment.iter_mut().zip(boxes) {
            let best = (0..k)
                .max_by(|&i, &j| {
                    shared_centre_iou(b, centroids[i])
                        .total_cmp(&shared_centre_iou(b, centroids[j]))
                        .then(j.cmp(&i))
                })
                .expect("k > 0");
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let (mut sw, mut sh, mut n) = (0.0, 0.0, 0usize);
            for (&a, &b) in assignment.iter().zip(boxes) {
                if a == c {
                    sw += b.0;
                    sh += b.1;
                    n += 1;
                }
            }
            if n > 0 {
                *centroid = (sw / n as f64, sh / n as f64);
            }
        }
    }
    centroids.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
    Ok(centroids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9
    }

    #[test]
    fn trajectory_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = pose_trajectory(&mut rng, &Pose6::default_bounds(), 100_000, 1000.0).unwrap();
        assert_eq!(traj.len(), 101);
        assert_eq!(traj[0], (0, Pose6::identity()));
        let end = traj[100].1;
        assert_eq!(traj[100].0, 100_000);
        let mid = traj[50].1;
        for (m, e) in mid.components().iter().zip(end.components()) {
            assert_eq!(*m, 0.5 * e);
        }
        let b = Pose6::default_bounds().components();
        assert!(end.components().iter().zip(b).all(|(v, b)| v.abs() <= b));

        let still = pose_trajectory(&mut rng, &Pose6::identity(), 10_000, 1000.0).unwrap();
        assert!(still.iter().all(|(_, p)| *p == Pose6::identity()));
        assert!(pose_trajectory(&mut rng, &Pose6::identity(), 500, 1000.0).is_err());
    }

    #[test]
    fn homography_closed_forms() {
        let k = Intrinsics {
            fx: 300.0,
            fy: 280.0,
            cx: 160.0,
            cy: 120.0,
        };
        let id = pose_to_homography(&Pose6::identity(), &k, 1.0).unwrap();
        assert!((id.matrix() - Matrix3::identity()).abs().max() < 1e-12);

        let approach = Pose6 { tz: -0.5, ..Default::default() };
        let h = pose_to_homography(&approach, &k, 2.0).unwrap();
        let (x, y) = h.apply(k.cx + 10.0, k.cy - 4.0).unwrap();
        assert!(close((x, y), (k.cx + 20.0, k.cy - 8.0)));

        let rz = 0.3f64;
        let spin = pose_to_homography(&Pose6 { rz, ..Default::default() }, &Intrinsics { fy: 300.0, ..k }, 1.0).unwrap();
        let p = spin.apply(k.cx + 1.0, k.cy).unwrap();
        assert!(close(p, (k.cx + rz.cos(), k.cy + rz.sin())));
    }

    #[test]
    fn planar_translations_compose() {
        let k = Intrinsics::for_image(200, 100);
        let p1 = Pose6 { tx: 0.03, ty: -0.02, ..Default::default() };
        let p2 = Pose6 { tx: -0.05, ty: 0.04, ..Default::default() };
        let both = Pose6 { tx: p1.tx + p2.tx, ty: p1.ty + p2.ty, ..Default::default() };
        let h1 = pose_to_homography(&p1, &k, 1.0).unwrap();
        let h2 = pose_to_homography(&p2, &k, 1.0).unwrap();
        let h12 = pose_to_homography(&both, &k, 1.0).unwrap();
        assert!((h2.after(&h1).unwrap().matrix() - h12.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(Homography::new(Matrix3::zeros()).is_err());
        assert!(Homography::new(Matrix3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn warp_identity_and_integer_shift() {
        let img = Raster::from_fn(20, 10, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0);
        assert_eq!(warp_image(&img, &Homography::identity()), img);
        let shifted = warp_image(&img, &Homography::translation(5.0, 0.0));
        for y in 0..10 {
            for x in 5..20 {
                assert_eq!(shifted.at(x, y), img.at(x - 5, y));
            }
            for x in 0..5 {
                assert_eq!(shifted.at(x, y), img.at(0, y));
            }
        }
    }

    #[test]
    fn warp_round_trip_on_smooth_image() {
        let img = Raster::from_fn(160, 128, |x, y| {
            (0.5 + 0.3 * (x as f64 / 14.0).sin() * (y as f64 / 11.0).cos()) as f32
        });
        let k = Intrinsics::for_image(160, 128);
        let pose = Pose6 {
            rx: 0.05,
            ry: -0.04,
            rz: 0.1,
            tx: 0.02,
            ty: 0.01,
            tz: -0.05,
        };
        let h = pose_to_homography(&pose, &k, 1.0).unwrap();
        let back = warp_image(&warp_image(&img, &h), &h.inverse());
        let mut worst = 0.0f32;
        // only pixels whose forward image stays on the sensor survive the trip
        for y in 0..128 {
            for x in 0..160 {
                let (u, v) = h.apply(x as f64, y as f64).unwrap();
                if u >= 1.0 && u <= 158.0 && v >= 1.0 && v <= 126.0 {
                    worst = worst.max((back.at(x, y) - img.at(x, y)).abs());
                }
            }
        }
        assert!(worst * 255.0 < 2.0, "max deviation {} levels", worst * 255.0);
    }

    #[test]
    fn landmark_transforms() {
        let pts = vec![(1.0, 2.0), (-3.0, 4.5)];
        assert_eq!(transform_landmarks(&pts, &Homography::identity()).unwrap(), pts);
        let moved = transform_landmarks(&pts, &Homography::translation(5.0, 7.0)).unwrap();
        assert_eq!(moved, vec![(6.0, 9.0), (2.0, 11.5)]);
        let double = Homography::new(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(transform_landmarks(&pts, &double).unwrap(), vec![(2.0, 4.0), (-6.0, 9.0)]);
        let horizon = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert!(transform_landmarks(&[(-1.0, 0.0)], &horizon).is_err());
    }

    #[test]
    fn group_boxes() {
        let square = [(10.0, 10.0), (20.0, 10.0), (10.0, 20.0), (20.0, 20.0)];
        let b = group_box(&square, &[0, 1, 2, 3], 0.0, (100, 100)).unwrap();
        assert_eq!(b, BBox::new(15.0, 15.0, 10.0, 10.0));
        let padded = group_box(&square, &[0, 1, 2, 3], 0.5, (100, 100)).unwrap();
        assert_eq!(padded.area(), 4.0 * b.area());
        assert_eq!((padded.cx, padded.cy), (15.0, 15.0));
        let off = [(-50.0, 10.0), (-40.0, 12.0)];
        assert_eq!(group_box(&off, &[0, 1], 0.25, (100, 100)), None);
        let clamped = group_box(&[(95.0, 50.0), (110.0, 60.0)], &[0, 1], 0.0, (100, 100)).unwrap();
        assert_eq!(clamped.corners(), (95.0, 50.0, 100.0, 60.0));
    }

    #[test]
    fn landmark_file_formats() {
        let pts = parse_landmarks("img_001\n1.5 , 2\n3 4\n", "mem").unwrap();
        assert_eq!(pts, vec![(1.5, 2.0), (3.0, 4.0)]);
        assert!(parse_landmarks("1 2\nnope\n", "mem").is_err());
        let g = parse_groups("left_eye 0-2\nright_eye: 3,4\n", "mem", 6).unwrap();
        assert_eq!(g.left_eye, vec![0, 1, 2]);
        assert_eq!(g.right_eye, vec![3, 4]);
        assert_eq!(g.face, (0..6).collect::<Vec<_>>());
        assert!(parse_groups("left_eye 0\n", "mem", 6).is_err());
        let overlapping = LandmarkGroups {
            face: vec![0],
            left_eye: vec![0, 1],
            right_eye: vec![1],
        };
        assert!(LandmarkSet::new(vec![(0.0, 0.0); 2], overlapping).is_err());
    }

    #[test]
    fn zero_segments() {
        let seq: Vec<Tensor> = (0..5).map(|i| Tensor::filled(1, 2, 2, i as f32 + 1.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (same, mask) = zero_segment_augment(seq.clone(), &mut rng, 0.0, 3).unwrap();
        assert_eq!(same, seq);
        assert!(mask.iter().all(|m| !m));

        let mut one = seq.clone();
        zero_segment(&mut one, 2, 1);
        for (i, t) in one.iter().enumerate() {
            assert_eq!(t.data().iter().all(|&v| v == 0.0), i == 2);
        }
        let (all, mask) = zero_segment_augment(seq.clone(), &mut rng, 1.0, 1).unwrap();
        assert!(mask.iter().all(|&m| m));
        assert!(all.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));

        let a = zero_segment_augment(seq.clone(), &mut ChaCha8Rng::seed_from_u64(5), 0.3, 2).unwrap();
        let b = zero_segment_augment(seq, &mut ChaCha8Rng::seed_from_u64(5), 0.3, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_fixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(kmeans_anchors(&[(4.0, 6.0); 5], 1, 10, &mut rng).unwrap(), vec![(4.0, 6.0)]);
        let boxes = [(10.0, 10.0), (12.0, 10.0), (10.0, 12.0), (100.0, 80.0), (90.0, 100.0), (110.0, 90.0)];
        let anchors = kmeans_anchors(&boxes, 2, 50, &mut rng).unwrap();
        assert!(close(anchors[0], (32.0 / 3.0, 32.0 / 3.0)));
        assert!(close(anchors[1], (100.0, 90.0)));
        assert!(kmeans_anchors(&[], 1, 1, &mut rng).is_err());
        assert!(kmeans_anchors(&[(1.0, 1.0)], 2, 1, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn boxes_enclose_in_frame_landmarks(
            pts in prop::collection::vec((0.0f64..200.0, 0.0f64..150.0), 1..12),
            pad in 0.0f64..0.6,
        ) {
            let idx: Vec<usize> = (0..pts.len()).collect();
            let b = group_box(&pts, &idx, pad, (200, 150));
            if let Some(b) = b {
                let (x0, y0, x1, y1) = b.corners();
                for &(x, y) in &pts {
                    prop_assert!(x >= x0 - 1e-9 && x <= x1 + 1e-9 && y >= y0 - 1e-9 && y <= y1 + 1e-9);
                }
            }
        }
    }
}
