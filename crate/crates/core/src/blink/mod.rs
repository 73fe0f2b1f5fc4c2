//! Three-stage blink detection on per-eye polarity statistics.
//!
//! 1. Per fixed-duration window, the mean positive and negative event counts
//!    per ROI pixel; runs where the larger one reaches a threshold become
//!    candidates (short dips are bridged).
//! 2. Candidates whose column profile of signed polarity sums is spread out
//!    (horizontal motion separates the polarities left/right) are dropped.
//! 3. The survivors are split at their two dominant peaks into closing,
//!    closed and opening phases.

mod fixture;

pub use fixture::{generate_fixture, BlinkFixture, BlinkFixtureConfig, ScriptedBlink, ScriptedSaccade};

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::{EventStream, EventWindow, Polarity, Roi};

pub const DEFAULT_STEP_US: u64 = 5_000;
pub const DEFAULT_THRESHOLD: f64 = 0.15;
pub const DEFAULT_MERGE_GAP: usize = 3;
pub const DEFAULT_STD_THRESHOLD: f64 = 2.0;
pub const DEFAULT_FUSION_US: u64 = 50_000;
pub const DEFAULT_PROMINENCE_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EyeSide {
    Left,
    Right,
}

impl EyeSide {
    pub const BOTH_SIDES: [EyeSide; 2] = [EyeSide::Left, EyeSide::Right];

    pub fn label(self) -> &'static str {
        match self {
            EyeSide::Left => "left",
            EyeSide::Right => "right",
        }
    }
}

impl fmt::Display for EyeSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EyeSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(EyeSide::Left),
            "right" => Ok(EyeSide::Right),
            other => Err(Error::invalid("eye", format!("unknown eye `{other}` (expected left or right)"))),
        }
    }
}

/// Eye of a reported blink; `Both` after binocular fusion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlinkEye {
    Left,
    Right,
    Both,
}

impl From<EyeSide> for BlinkEye {
    fn from(e: EyeSide) -> Self {
        match e {
            EyeSide::Left => BlinkEye::Left,
            EyeSide::Right => BlinkEye::Right,
        }
    }
}

impl fmt::Display for BlinkEye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlinkEye::Left => "left",
            BlinkEye::Right => "right",
            BlinkEye::Both => "both",
        })
    }
}

impl FromStr for BlinkEye {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(BlinkEye::Both),
            other => other.parse::<EyeSide>().map(BlinkEye::from),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiStats {
    pub t_start: u64,
    /// Window end, µs.
    pub t: u64,
    pub eye: EyeSide,
    pub mean_pos: f64,
    pub mean_neg: f64,
    pub col_std: f64,
    /// No ROI was known for this window; the statistics are zero.
    pub missing_roi: bool,
}

impl RoiStats {
    /// The step-1 signal.
    pub fn signal(&self) -> f64 {
        self.mean_pos.max(self.mean_neg)
    }

    fn empty(window: &EventWindow<'_>, eye: EyeSide, missing_roi: bool) -> Self {
        RoiStats {
            t_start: window.t_start(),
            t: window.t_end(),
            eye,
            mean_pos: 0.0,
            mean_neg: 0.0,
            col_std: 0.0,
            missing_roi,
        }
    }
}

/// Per-pixel polarity means inside `roi` and the population standard
/// deviation, across ROI columns, of each column's signed polarity sum.
pub fn roi_polarity_stats(window: &EventWindow<'_>, roi: Roi, eye: EyeSide) -> RoiStats {
    let mut stats = RoiStats::empty(window, eye, false);
    let mut columns = vec![0i64; roi.width() as usize];
    let (mut pos, mut neg) = (0usize, 0usize);
    for e in window.events() {
        if !roi.contains(e.x, e.y) {
            continue;
        }
        match e.p {
            Polarity::Positive => pos += 1,
            Polarity::Negative => neg += 1,
        }
        columns[(e.x - roi.x_min) as usize] += e.p.sign() as i64;
    }
    if pos + neg == 0 {
        return stats;
    }
    let area = roi.area() as f64;
    stats.mean_pos = pos as f64 / area;
    stats.mean_neg = neg as f64 / area;
    let n = columns.len() as f64;
    let mean = columns.iter().sum::<i64>() as f64 / n;
    let var = columns.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
    stats.col_std = var.sqrt();
    stats
}

/// An interval of consecutive windows `first..=last` of one eye's series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlinkCandidate {
    pub eye: EyeSide,
    pub t_begin: u64,
    pub t_end: u64,
    pub first: usize,
    pub last: usize,
}

impl BlinkCandidate {
    pub fn windows(&self) -> usize {
        self.last - self.first + 1
    }
}

/// Maximal supra-threshold runs of `signal >= threshold`, `first..=last`.
fn runs(signal: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in signal.iter().enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, signal.len() - 1));
    }
    out
}

/// Step 1 on one eye's series. Runs separated by fewer than `merge_gap`
/// sub-threshold windows are merged.
pub fn detect_candidates(series: &[RoiStats], threshold: f64, merge_gap: usize) -> Vec<BlinkCandidate> {
    let signal: Vec<f64> = series.iter().map(RoiStats::signal).collect();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (a, b) in runs(&signal, threshold) {
        match merged.last_mut() {
            Some(last) if a - last.1 - 1 < merge_gap => last.1 = b,
            _ => merged.push((a, b)),
        }
    }
    merged
        .into_iter()
        .map(|(first, last)| BlinkCandidate {
            eye: series[first].eye,
            t_begin: series[first].t_start,
            t_end: series[last].t,
            first,
            last,
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Step 2: drops candidates whose median `col_std` exceeds `std_threshold`.
pub fn reject_horizontal_motion(
    candidates: &[BlinkCandidate],
    series: &[RoiStats],
    std_threshold: f64,
) -> Vec<BlinkCandidate> {
    candidates
        .iter()
        .filter(|c| {
            let mut stds: Vec<f64> = series[c.first..=c.last].iter().map(|s| s.col_std).collect();
            median(&mut stds) <= std_threshold
        })
        .copied()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlinkRecord {
    pub eye: BlinkEye,
    pub t_start: u64,
    pub t_end: u64,
    pub closing_duration: u64,
    pub closed_duration: u64,
    pub opening_duration: u64,
    pub peak_close: f64,
    pub peak_open: f64,
    /// Only one peak was found; the blink is split at it and `closed` is 0.
    pub unimodal: bool,
}

impl BlinkRecord {
    pub fn total_duration(&self) -> u64 {
        self.t_end - self.t_start
    }

    pub fn midpoint(&self) -> u64 {
        self.t_start + (self.t_end - self.t_start) / 2
    }
}

fn moving_average3(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(v.len() - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Local maxima (plateaus count once, at their first index) with their
/// topographic prominence; the signal is taken as 0 outside the slice.
fn peaks_with_prominence(s: &[f64]) -> Vec<(usize, f64)> {
    let n = s.len();
    let at = |i: isize| if i < 0 || i >= n as isize { 0.0 } else { s[i as usize] };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left = at(i as isize - 1);
        let right = at(j as isize + 1);
        if s[i] > left && s[i] > right {
            let h = s[i];
            let mut left_min = h;
            let mut k = i as isize - 1;
            loop {
                let v = at(k);
                left_min = left_min.min(v);
                if k < 0 || v > h {
                    break;
                }
                k -= 1;
            }
            let mut right_min = h;
            let mut k = j as isize + 1;
            loop {
                let v = at(k);
                right_min = right_min.min(v);
                if k >= n as isize || v > h {
                    break;
                }
                k += 1;
            }
            out.push((i, h - left_min.max(right_min)));
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkConfig {
    /// Window length, µs.
    pub step_us: u64,
    /// Step-1 threshold in events per pixel per window.
    pub threshold: f64,
    /// Multiplies `threshold`; stands in for a distance-dependent threshold.
    pub threshold_scale: f64,
    pub merge_gap: usize,
    pub std_threshold: f64,
    /// Peaks need a prominence above this fraction of the threshold.
    pub prominence_fraction: f64,
    /// Left and right records starting within this span are fused.
    pub fusion_us: u64,
    /// Window grid origin; defaults to the first event time rounded down to
    /// a multiple of `step_us`.
    pub origin: Option<u64>,
}

impl Default for BlinkConfig {
    fn default() -> Self {
        BlinkConfig {
            step_us: DEFAULT_STEP_US,
            threshold: DEFAULT_THRESHOLD,
            threshold_scale: 1.0,
            merge_gap: DEFAULT_MERGE_GAP,
            std_threshold: DEFAULT_STD_THRESHOLD,
            prominence_fraction: DEFAULT_PROMINENCE_FRACTION,
            fusion_us: DEFAULT_FUSION_US,
            origin: None,
        }
    }
}

impl BlinkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_us == 0 {
            return Err(Error::invalid("step-ms", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid("threshold", "must be positive"));
        }
        if !(self.threshold_scale > 0.0 && self.threshold_scale.is_finite()) {
            return Err(Error::invalid("threshold-scale", "must be positive"));
        }
        if !(self.std_threshold >= 0.0) {
            return Err(Error::invalid("std-threshold", "must be non-negative"));
        }
        if !(self.prominence_fraction >= 0.0) {
            return Err(Error::invalid("prominence", "must be non-negative"));
        }
        Ok(())
    }

    pub fn effective_threshold(&self) -> f64 {
        self.threshold * self.threshold_scale
    }
}

/// Step 3. Peaks are picked on the 3-window moving average; phase widths
/// come from the supra-threshold runs of the raw signal. Closing runs from
/// the candidate start to the end of the first peak's run, opening from the
/// start of the second peak's run to the candidate end. When both peaks
/// share one run it is split at the lowest point between them.
pub fn decompose_blink(series: &[RoiStats], candidate: &BlinkCandidate, config: &BlinkConfig) -> Result<BlinkRecord> {
    if candidate.last >= series.len() || candidate.first > candidate.last {
        return Err(Error::invalid("candidate", "interval lies outside the series"));
    }
    if candidate.windows() < 2 {
        return Err(Error::invalid("candidate", "a blink needs at least two windows"));
    }
    let threshold = config.effective_threshold();
    let part = &series[candidate.first..=candidate.last];
    let raw: Vec<f64> = part.iter().map(RoiStats::signal).collect();
    // smooth with the neighbouring windows outside the candidate in view
    let lo = candidate.first.saturating_sub(1);
    let hi = (candidate.last + 1).min(series.len() - 1);
    let context: Vec<f64> = series[lo..=hi].iter().map(RoiStats::signal).collect();
    let smooth = moving_average3(&context)[candidate.first - lo..][..raw.len()].to_vec();
    let min_prominence = config.prominence_fraction * threshold;
    let mut peaks: Vec<(usize, f64)> = peaks_with_prominence(&smooth)
        .into_iter()
        .filter(|&(_, p)| p > min_prominence)
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(2);
    peaks.sort_by_key(|p| p.0);

    let start = |i: usize| part[i].t_start;
    let end = |i: usize| part[i].t;
    let last = part.len() - 1;
    let max_raw = |r: std::ops::RangeInclusive<usize>| raw[r].iter().copied().fold(0.0, f64::max);

    // (closing end index, opening start index), both inclusive
    let (close_last, open_first, unimodal) = if peaks.len() == 2 {
        let rs = runs(&raw, threshold);
        let run_of = |i: usize| {
            *rs.iter()
                .min_by_key(|&&(a, b)| if i < a { a - i } else { i.saturating_sub(b) })
                .expect("candidate holds a supra-threshold run")
        };
        let (p1, p2) = (peaks[0].0, peaks[1].0);
        let (r1, r2) = (run_of(p1), run_of(p2));
        if r1 != r2 {
            (r1.1, r2.0, false)
        } else {
            let valley = (p1..=p2)
                .min_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(a.cmp(&b)))
                .expect("non-empty range");
            let split = valley.clamp(p1, p2 - 1);
            (split, split + 1, false)
        }
    } else {
        let peak = peaks.first().map_or_else(
            || (0..=last).max_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(b.cmp(&a))).unwrap(),
            |p| p.0,
        );
        let split = peak.min(last - 1);
        (split, split + 1, true)
    };

    let t_start = start(0);
    let t_end = end(last);
    let closing = end(close_last) - t_start;
    let opening = t_end - start(open_first);
    Ok(BlinkRecord {
        eye: candidate.eye.into(),
        t_start,
        t_end,
        closing_duration: closing,
        closed_duration: (t_end - t_start) - closing - opening,
        opening_duration: opening,
        peak_close: max_raw(0..=close_last),
        peak_open: max_raw(open_first..=last),
        unimodal,
    })
}

/// Time-stamped eye regions; the latest entry at or before a window's end
/// applies to that window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoiTrack {
    entries: Vec<(u64, EyeSide, Roi)>,
}

impl RoiTrack {
    pub fn new(mut entries: Vec<(u64, EyeSide, Roi)>) -> Self {
        entries.sort_by_key(|e| (e.0, e.1));
        RoiTrack { entries }
    }

    /// One fixed region per eye for all time.
    pub fn fixed(left: Roi, right: Roi) -> Self {
        RoiTrack::new(vec![(0, EyeSide::Left, left), (0, EyeSide::Right, right)])
    }

    pub fn entries(&self) -> &[(u64, EyeSide, Roi)] {
        &self.entries
    }

    pub fn at(&self, t: u64, eye: EyeSide) -> Option<Roi> {
        let upto = self.entries.partition_point(|e| e.0 <= t);
        self.entries[..upto].iter().rev().find(|e| e.1 == eye).map(|e| e.2)
    }

    pub fn shifted(&self, dt: u64) -> Self {
        RoiTrack {
            entries: self.entries.iter().map(|&(t, e, r)| (t + dt, e, r)).collect(),
        }
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for (t, eye, r) in &self.entries {
            let _ = writeln!(out, "{t} {eye} {} {} {} {}", r.x_min, r.y_min, r.x_max, r.y_max);
        }
        out
    }

    /// Lines of `t_us eye x_min y_min x_max y_max` (half-open pixels).
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
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
            let t: u64 = f[0].parse().map_err(|_| Error::format(at(), "bad timestamp"))?;
            let eye: EyeSide = f[1].parse().map_err(|_| Error::format(at(), "bad eye"))?;
            let mut c = [0u16; 4];
            for (slot, s) in c.iter_mut().zip(&f[2..]) {
                *slot = s
                    .parse()
                    .map_err(|_| Error::format(at(), format!("bad coordinate `{s}`")))?;
            }
            let roi = Roi::new(c[0], c[1], c[2], c[3]).map_err(|e| Error::format(at(), e.to_string()))?;
            entries.push((t, eye, roi));
        }
        Ok(RoiTrack::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RoiTrack::parse(&text, &path.display().to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkOutput {
    pub records: Vec<BlinkRecord>,
    /// Per-window statistics, left eye series then right eye series.
    pub series: Vec<RoiStats>,
    /// Windows that had no ROI for some eye.
    pub missing_roi_windows: usize,
}

/// Runs all three stages for one eye's series.
pub fn blinks_in_series(series: &[RoiStats], config: &BlinkConfig) -> Result<Vec<BlinkRecord>> {
    let candidates = detect_candidates(series, config.effective_threshold(), config.merge_gap);
    let kept = reject_horizontal_motion(&candidates, series, config.std_threshold);
    kept.iter()
        .filter(|c| c.windows() >= 2)
        .map(|c| decompose_blink(series, c, config))
        .collect()
}

/// Fuses left and right records that start within `fusion_us` of each
/// other; the earlier-starting record's timing is kept and its eye becomes
/// `Both`. Output sorted by `t_start`.
pub fn fuse_eyes(mut records: Vec<BlinkRecord>, fusion_us: u64) -> Vec<BlinkRecord> {
    records.sort_by_key(|r| (r.t_start, r.t_end, r.eye == BlinkEye::Right));
    let mut out: Vec<BlinkRecord> = Vec::with_capacity(records.len());
    let mut used = vec![false; records.len()];
    for i in 0..records.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let mut r = records[i];
        if r.eye != BlinkEye::Both {
            let partner = (i + 1..records.len()).find(|&j| {
                !used[j]
                    && records[j].t_start - r.t_start <= fusion_us
                    && records[j].eye != r.eye
                    && records[j].eye != BlinkEye::Both
            });
            if let Some(j) = partner {
                used[j] = true;
                r.eye = BlinkEye::Both;
            }
        }
        out.push(r);
    }
    out
}

/// The full per-stream detector: fixed-duration windows, ROI crop per eye,
/// the three stages per eye, then binocular fusion.
pub fn run_blink_detector(stream: &EventStream, rois: &RoiTrack, config: &BlinkConfig) -> Result<BlinkOutput> {
    config.validate()?;
    let Some(first) = stream.events().first() else {
        return Ok(BlinkOutput {
            records: Vec::new(),
            series: Vec::new(),
            missing_roi_windows: 0,
        });
    };
    let origin = config.origin.unwrap_or(first.t / config.step_us * config.step_us);
    let windows = stream.window_by_duration(config.step_us, origin)?;
    let mut series = Vec::new();
    let mut records = Vec::new();
    let mut missing = vec![false; windows.len()];
    for eye in EyeSide::BOTH_SIDES {
        let eye_series: Vec<RoiStats> = windows
            .iter()
            .enumerate()
            .map(|(i, w)| match rois.at(w.t_end(), eye) {
                Some(roi) => roi_polarity_stats(w, roi, eye),
                None => {
                    missing[i] = true;
                    RoiStats::empty(w, eye, true)
                }
            })
            .collect();
        records.extend(blinks_in_series(&eye_series, config)?);
        series.extend(eye_series);
    }
    Ok(BlinkOutput {
        records: fuse_eyes(records, config.fusion_us),
        series,
        missing_roi_windows: missing.iter().filter(|&&m| m).count(),
    })
}

/// `t_start_us t_end_us eye closing_us closed_us opening_us peak_close peak_open unimodal_flag`
pub fn format_records(records: &[BlinkRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {:.6} {:.6} {}",
            r.t_start,
            r.t_end,
            r.eye,
            r.closing_duration,
            r.closed_duration,
            r.opening_duration,
            r.peak_close,
            r.peak_open,
            r.unimodal as u8
        );
    }
    out
}

pub fn parse_records(text: &str, origin: &str) -> Result<Vec<BlinkRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{origin}:{}", n + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(Error::format(at(), format!("expected 9 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::format(at(), format!("bad integer `{s}`")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| Error::format(at(), format!("bad number `{s}`")));
        let record = BlinkRecord {
            t_start: int(f[0])?,
            t_end: int(f[1])?,
            eye: f[2].parse().map_err(|_| Error::format(at(), "bad eye"))?,
            closing_duration: int(f[3])?,
            closed_duration: int(f[4])?,
            opening_duration: int(f[5])?,
            peak_close: real(f[6])?,
            peak_open: real(f[7])?,
            unimodal: match f[8] {
                "0" => false,
                "1" => true,
                _ => return Err(Error::format(at(), "unimodal flag must be 0 or 1")),
            },
        };
        if record.t_end < record.t_start {
            return Err(Error::format(at(), "t_end precedes t_start"));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<BlinkRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, &path.display().to_string())
}

/// `t_start_us t_end_us eye mean_pos mean_neg col_std missing_roi`
pub fn format_series(series: &[RoiStats]) -> String {
    let mut out = String::from("# t_start_us t_end_us eye mean_pos mean_neg col_std missing_roi\n");
    for s in series {
        let _ = writeln!(
            out,
            "{} {} {} {:.6} {:.6} {:.6} {}",
            s.t_start, s.t, s.eye, s.mean_pos, s.mean_neg, s.col_std, s.missing_roi as u8
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, Resolution};
    use proptest::prelude::*;

    const STEP: u64 = 5_000;

    fn series(signal: &[f64]) -> Vec<RoiStats> {
        signal
            .iter()
            .enumerate()
            .map(|(i, &v)| RoiStats {
                t_start: i as u64 * STEP,
                t: (i as u64 + 1) * STEP,
                eye: EyeSide::Left,
                mean_pos: v,
                mean_neg: v / 2.0,
                col_std: 0.0,
                missing_roi: false,
            })
            .collect()
    }

    fn window(events: &[Event]) -> EventWindow<'_> {
        EventWindow::new(Resolution::new(64, 64), events, 0, STEP).unwrap()
    }

    #[test]
    fn stats_closed_forms() {
        let roi = Roi::new(0, 0, 10, 10).unwrap();
        let s = roi_polarity_stats(&window(&[]), roi, EyeSide::Left);
        assert_eq!((s.mean_pos, s.mean_neg, s.col_std), (0.0, 0.0, 0.0));

        let ev: Vec<Event> = (0..50).map(|i| Event::new(i, (i % 10) as u16, (i / 10) as u16, Polarity::Positive)).collect();
        let s = roi_polarity_stats(&window(&ev), roi, EyeSide::Left);
        assert_eq!(s.mean_pos, 0.5);
        assert_eq!(s.mean_neg, 0.0);

        // left five columns sum to +5, right five to -5
        let mut ev = Vec::new();
        for x in 0..10u16 {
            let p = if x < 5 { Polarity::Positive } else { Polarity::Negative };
            for y in 0..5 {
                ev.push(Event::new(0, x, y, p));
            }
        }
        let s = roi_polarity_stats(&window(&ev), roi, EyeSide::Right);
        assert_eq!(s.col_std, 5.0);
        assert_eq!(s.eye, EyeSide::Right);
    }

    #[test]
    fn candidate_runs_and_merging() {
        assert!(detect_candidates(&series(&[0.0; 10]), 0.15, 3).is_empty());
        let one = detect_candidates(&series(&[0.0, 0.2, 0.3, 0.3, 0.2, 0.0]), 0.15, 3);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].t_begin, one[0].t_end), (5_000, 25_000));
        let bimodal = [0.0, 0.3, 0.4, 0.0, 0.0, 0.35, 0.3, 0.0];
        let merged = detect_candidates(&series(&bimodal), 0.15, 3);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].first, merged[0].last), (1, 6));
        let far = [0.3, 0.0, 0.0, 0.0, 0.3];
        assert_eq!(detect_candidates(&series(&far), 0.15, 3).len(), 2);
    }

    #[test]
    fn horizontal_motion_rejection() {
        let mut s = series(&[0.3, 0.3, 0.3]);
        let cands = detect_candidates(&s, 0.15, 3);
        assert_eq!(reject_horizontal_motion(&cands, &s, 2.0), cands);
        s.iter_mut().for_each(|w| w.col_std = 6.0);
        assert!(reject_horizontal_motion(&cands, &s, 2.0).is_empty());
    }

    #[test]
    fn bimodal_decomposition() {
        // closing pulse [5, 15) ms, opening pulse [35, 45) ms
        let mut signal = vec![0.0; 10];
        signal[1] = 0.4;
        signal[2] = 0.4;
        signal[7] = 0.4;
        signal[8] = 0.4;
        let s = series(&signal);
        let cand = BlinkCandidate {
            eye: EyeSide::Left,
            t_begin: 5_000,
            t_end: 45_000,
            first: 1,
            last: 8,
        };
        let r = decompose_blink(&s, &cand, &BlinkConfig::default()).unwrap();
        assert_eq!(
            (r.closing_duration, r.closed_duration, r.opening_duration, r.total_duration()),
            (10_000, 20_000, 10_000, 40_000)
        );
        assert!(!r.unimodal);
        assert!(r.peak_close >= 0.15 && r.peak_open >= 0.15);

        let mut wide = vec![0.0; 12];
        wide[1..3].iter_mut().for_each(|v| *v = 0.4);
        wide[5..8].iter_mut().for_each(|v| *v = 0.4);
        let r = decompose_blink(&series(&wide), &BlinkCandidate { first: 1, last: 7, ..cand }, &BlinkConfig::default())
            .unwrap();
        assert!(r.opening_duration > r.closing_duration);
    }

    #[test]
    fn adjacent_peaks_split_at_valley() {
        let signal = [0.0, 0.3, 0.6, 0.3, 0.2, 0.3, 0.6, 0.3, 0.0];
        let s = series(&signal);
        let c = detect_candidates(&s, 0.15, 3)[0];
        let r = decompose_blink(&s, &c, &BlinkConfig::default()).unwrap();
        assert!(!r.unimodal);
        assert_eq!(r.closed_duration, 0);
        assert_eq!(r.closing_duration + r.opening_duration, r.total_duration());
        // the valley window goes to the closing phase
        assert_eq!((r.closing_duration, r.opening_duration), (20_000, 15_000));
    }

    #[test]
    fn unimodal_is_flagged() {
        let s = series(&[0.0, 0.2, 0.5, 0.2, 0.0]);
        let c = detect_candidates(&s, 0.15, 3)[0];
        let r = decompose_blink(&s, &c, &BlinkConfig::default()).unwrap();
        assert!(r.unimodal);
        assert_eq!(r.closed_duration, 0);
        assert_eq!(r.closing_duration + r.opening_duration, 15_000);
        let short = BlinkCandidate { last: c.first, ..c };
        assert!(decompose_blink(&s, &short, &BlinkConfig::default()).is_err());
    }

    #[test]
    fn prominence_of_simple_shapes() {
        let p = peaks_with_prominence(&[0.0, 1.0, 0.5, 0.8, 0.0]);
        assert_eq!(p, vec![(1, 1.0), (3, 0.30000000000000004)]);
        assert_eq!(peaks_with_prominence(&[2.0, 2.0]), vec![(0, 2.0)]);
    }

    #[test]
    fn fusion_merges_close_pairs_only() {
        let rec = |eye, t: u64| BlinkRecord {
            eye,
            t_start: t,
            t_end: t + 100_000,
            closing_duration: 40_000,
            closed_duration: 10_000,
            opening_duration: 50_000,
            peak_close: 0.3,
            peak_open: 0.3,
            unimodal: false,
        };
        let fused = fuse_eyes(
            vec![rec(BlinkEye::Right, 10_000), rec(BlinkEye::Left, 0), rec(BlinkEye::Left, 500_000)],
            50_000,
        );
        assert_eq!(fused.len(), 2);
        assert_eq!(fused[0].eye, BlinkEye::Both);
        assert_eq!(fused[0].t_start, 0);
        assert_eq!(fused[1].eye, BlinkEye::Left);
    }

    #[test]
    fn file_formats_round_trip() {
        let r = BlinkRecord {
            eye: BlinkEye::Both,
            t_start: 5,
            t_end: 30,
            closing_duration: 10,
            closed_duration: 5,
            opening_duration: 10,
            peak_close: 0.25,
            peak_open: 0.5,
            unimodal: false,
        };
        let text = format_records(&[r]);
        assert_eq!(text, "5 30 both 10 5 10 0.250000 0.500000 0\n");
        assert_eq!(parse_records(&text, "mem").unwrap(), vec![r]);
        let track = RoiTrack::fixed(Roi::new(1, 2, 3, 4).unwrap(), Roi::new(5, 6, 7, 8).unwrap());
        assert_eq!(RoiTrack::parse(&track.format(), "mem").unwrap(), track);
        assert_eq!(track.at(0, EyeSide::Right), Some(Roi::new(5, 6, 7, 8).unwrap()));
        assert!(RoiTrack::default().at(10, EyeSide::Left).is_none());
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(signal in prop::collection::vec(0.0f64..0.5, 1..40), a in 0.01f64..0.5, b in 0.01f64..0.5) {
            // Raising the threshold can split one candidate into two, so the
            // monotone quantity is the set of covered windows.
            let s = series(&signal);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let covered = |t: f64| {
                let mut m = vec![false; s.len()];
                for c in detect_candidates(&s, t, 3) {
                    m[c.first..=c.last].iter_mut().for_each(|v| *v = true);
                }
                m
            };
            let (wide, narrow) = (covered(lo), covered(hi));
            prop_assert!(narrow.iter().zip(&wide).all(|(n, w)| !n || *w));
        }

        #[test]
        fn threshold_monotonicity_on_single_humps(peak in 0.2f64..1.0, len in 2usize..20, a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let signal: Vec<f64> = (0..len + 2)
                .map(|i| if i == 0 || i == len + 1 { 0.0 } else { peak * (std::f64::consts::PI * i as f64 / (len + 1) as f64).sin() })
                .collect();
            let s = series(&signal);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(detect_candidates(&s, hi, 3).len() <= detect_candidates(&s, lo, 3).len());
        }

        #[test]
        fn std_threshold_monotonicity(stds in prop::collection::vec(0.0f64..5.0, 12), a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let mut s = series(&[0.3, 0.3, 0.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.0, 0.0, 0.0, 0.3]);
            for (w, v) in s.iter_mut().zip(&stds) {
                w.col_std = *v;
            }
            let c = detect_candidates(&s, 0.15, 3);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(reject_horizontal_motion(&c, &s, lo).len() <= reject_horizontal_motion(&c, &s, hi).len());
        }

        #[test]
        fn phases_add_up(signal in prop::collection::vec(0.0f64..0.6, 2..30)) {
            let s = series(&signal);
            for c in detect_candidates(&s, 0.15, 3).iter().filter(|c| c.windows() >= 2) {
                let r = decompose_blink(&s, c, &BlinkConfig::default()).unwrap();
                prop_assert_eq!(r.closing_duration + r.closed_duration + r.opening_duration, r.total_duration());
                prop_assert!(r.peak_close >= 0.15 && r.peak_open >= 0.15);
            }
        }
    }
}
