//! On-disk layout of a generated sequence.
//!
//! ```text
//! <dir>/events.evs1       event stream
//! <dir>/annotations.txt   t_us label cx cy w h      (one line per box)
//! <dir>/rois.txt          t_us eye x_min y_min x_max y_max   (half-open pixels)
//! <dir>/manifest.txt      key=value
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::AnnotatedSequence;
use crate::error::{Error, Result};
use crate::events::{write_events, EventFormat};
use crate::events::{EventStream, Resolution, Roi};

pub const EVENTS_FILE: &str = "events.evs1";
pub const ANNOTATIONS_FILE: &str = "annotations.txt";
pub const ROIS_FILE: &str = "rois.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub events: PathBuf,
    pub annotations: PathBuf,
    pub rois: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            events: dir.join(EVENTS_FILE),
            annotations: dir.join(ANNOTATIONS_FILE),
            rois: dir.join(ROIS_FILE),
            manifest: dir.join(MANIFEST_FILE),
        }
    }
}

/// Face box first, then the left and right eye boxes; absent boxes are
/// skipped.
pub fn format_annotations(seq: &AnnotatedSequence) -> String {
    let mut out = String::new();
    for a in &seq.annotations {
        let labelled = [("face", a.boxes.face), ("eye", a.boxes.left_eye), ("eye", a.boxes.right_eye)];
        for (label, b) in labelled {
            if let Some(b) = b {
                let _ = writeln!(out, "{} {label} {:.3} {:.3} {:.3} {:.3}", a.t, b.cx, b.cy, b.w, b.h);
            }
        }
    }
    out
}

/// Eye boxes rounded outwards to pixel regions.
pub fn format_rois(seq: &AnnotatedSequence) -> String {
    let res = Resolution::new(seq.width as u16, seq.height as u16);
    let mut out = String::new();
    for a in &seq.annotations {
        for (eye, b) in [("left", a.boxes.left_eye), ("right", a.boxes.right_eye)] {
            let roi = b.and_then(|b| {
                let (x0, y0, x1, y1) = b.corners();
                Roi::from_corners_clamped(x0, y0, x1, y1, res)
            });
            if let Some(r) = roi {
                let _ = writeln!(out, "{} {eye} {} {} {} {}", a.t, r.x_min, r.y_min, r.x_max, r.y_max);
            }
        }
    }
    out
}

pub fn format_manifest(entries: &BTreeMap<String, String>) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("manifest:{}", n + 1), "expected key=value"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Writes the four dataset files into `dir` (created if needed). `extra`
/// entries are added to the manifest next to the computed ones.
pub fn write_dataset(
    dir: &Path,
    seq: &AnnotatedSequence,
    stream: &EventStream,
    extra: &BTreeMap<String, String>,
) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    write_events(stream, &paths.events, EventFormat::Evs1)?;
    let write = |p: &Path, text: String| std::fs::write(p, text).map_err(|e| Error::io(p, e));
    write(&paths.annotations, format_annotations(seq))?;
    write(&paths.rois, format_rois(seq))?;
    let mut manifest = extra.clone();
    let duration = seq.annotations.last().map_or(0, |a| a.t);
    for (k, v) in [
        ("width", seq.width.to_string()),
        ("height", seq.height.to_string()),
        ("frames", seq.annotations.len().to_string()),
        ("duration_us", duration.to_string()),
        ("events", stream.len().to_string()),
        ("events_file", EVENTS_FILE.to_string()),
        ("annotations_file", ANNOTATIONS_FILE.to_string()),
        ("rois_file", ROIS_FILE.to_string()),
    ] {
        manifest.insert(k.to_string(), v);
    }
    write(&paths.manifest, format_manifest(&manifest))?;
    Ok(paths)
}
