//! Contrast-threshold event simulation from timed intensity frames.
//!
//! Each pixel tracks a reference log intensity. Between two frames the log
//! intensity is interpolated linearly; every time it moves a full threshold
//! away from the reference an event fires at the exact interpolated crossing
//! time and the reference steps by that threshold. A pixel that fired less
//! than `refractory_us` ago stays silent, but its reference still steps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity, Resolution};
use crate::raster::Raster;

pub const DEFAULT_CT_MEAN: f64 = 0.2;
pub const DEFAULT_CT_STD: f64 = 0.05;
pub const DEFAULT_REFRACTORY_US: u64 = 1_000;
pub const DEFAULT_EPS: f64 = 0.001;
/// Sampled thresholds are re-drawn until they exceed this floor.
pub const CT_FLOOR: f64 = 0.01;

// Slack on threshold comparisons so that a ramp spanning an exact multiple of
// the threshold is not lost to accumulated rounding in the reference level.
const CROSSING_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TimedFrame {
    pub t: u64,
    pub image: Raster,
}

impl TimedFrame {
    pub fn new(t: u64, image: Raster) -> Self {
        TimedFrame { t, image }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulatorConfig {
    pub ct_pos: f64,
    pub ct_neg: f64,
    pub refractory_us: u64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            ct_pos: DEFAULT_CT_MEAN,
            ct_neg: DEFAULT_CT_MEAN,
            refractory_us: DEFAULT_REFRACTORY_US,
            eps: DEFAULT_EPS,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ct_pos > 0.0) {
            return Err(Error::invalid("ct_pos", "must be positive"));
        }
        if !(self.ct_neg > 0.0) {
            return Err(Error::invalid("ct_neg", "must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps", "must be positive"));
        }
        Ok(())
    }

    /// Thresholds drawn once from `N(mean, std)` with a generator seeded by
    /// `seed`; other fields take their defaults.
    pub fn sampled(seed: u64, mean: f64, std: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ct_pos, ct_neg) = sample_contrast_thresholds(&mut rng, mean, std)?;
        Ok(SimulatorConfig {
            ct_pos,
            ct_neg,
            seed,
            ..Default::default()
        })
    }
}

/// Draws a positive and a negative contrast threshold independently from
/// `N(mean, std)`, re-drawing each until it exceeds [`CT_FLOOR`].
pub fn sample_contrast_thresholds<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    std: f64,
) -> Result<(f64, f64)> {
    if !(mean > 0.0) {
        return Err(Error::invalid("ct_mean", "must be positive"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid("ct_std", "must be a finite non-negative number"));
    }
    let normal = Normal::new(mean, std).map_err(|e| Error::invalid("ct_std", e.to_string()))?;
    let mut draw = || {
        for _ in 0..10_000 {
            let v = normal.sample(rng);
            if v > CT_FLOOR {
                return Ok(v);
            }
        }
        Err(Error::invalid(
            "ct_mean",
            format!("N({mean}, {std}) almost never exceeds the {CT_FLOOR} floor"),
        ))
    };
    let pos = draw()?;
    let neg = draw()?;
    Ok((pos, neg))
}

pub fn log_intensity(image: &Raster, eps: f64) -> Vec<f64> {
    image.data().iter().map(|&v| (v as f64 + eps).ln()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelState {
    pub l_ref: f64,
    pub t_last_event: Option<u64>,
}

/// Incremental simulator: feed frames in time order, collect events.
#[derive(Clone, Debug)]
pub struct Simulator {
    config: SimulatorConfig,
    width: usize,
    height: usize,
    pixels: Vec<PixelState>,
    prev_log: Vec<f64>,
    prev_t: u64,
}

impl Simulator {
    /// Initializes every pixel reference from the first frame. No events are
    /// produced for it.
    pub fn new(config: SimulatorConfig, first: &TimedFrame) -> Result<Self> {
        config.validate()?;
        let (width, height) = (first.image.width(), first.image.height());
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(Error::invalid("frames", format!("unsupported frame size {width}x{height}")));
        }
        let prev_log = log_intensity(&first.image, config.eps);
        let pixels = prev_log
            .iter()
            .map(|&l| PixelState {
                l_ref: l,
                t_last_event: None,
            })
            .collect();
        Ok(Simulator {
            config,
            width,
            height,
            pixels,
            prev_log,
            prev_t: first.t,
        })
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.width as u16, self.height as u16)
    }

    pub fn pixels(&self) -> &[PixelState] {
        &self.pixels
    }

    /// Advances to `frame` and returns the events in `(prev_t, frame.t]`,
    /// sorted by time (ties keep row-major pixel order).
    pub fn push(&mut self, frame: &TimedFrame) -> Result<Vec<Event>> {
        if frame.image.width() != self.width || frame.image.height() != self.height {
            return Err(Error::invalid(
                "frames",
                format!(
                    "frame at t={} is {}x{}, expected {}x{}",
                    frame.t,
                    frame.image.width(),
                    frame.image.height(),
                    self.width,
                    self.height
                ),
            ));
        }
        if frame.t <= self.prev_t {
            return Err(Error::invalid(
                "frames",
                format!("frame times must increase ({} after {})", frame.t, self.prev_t),
            ));
        }
        let cfg = self.config;
        let (t0, t1) = (self.prev_t, frame.t);
        let span = (t1 - t0) as f64;
        let next_log = log_intensity(&frame.image, cfg.eps);
        let mut events = Vec::new();
        for (i, (state, (&l0, &l1))) in self
            .pixels
            .iter_mut()
            .zip(self.prev_log.iter().zip(&next_log))
            .enumerate()
        {
            if l0 == l1 {
                continue;
            }
            let x = (i % self.width) as u16;
            let y = (i / self.width) as u16;
            let (polarity, ct) = if l1 > l0 {
                (Polarity::Positive, cfg.ct_pos)
            } else {
                (Polarity::Negative, -cfg.ct_neg)
            };
            loop {
                let level = state.l_ref + ct;
                let reached = if ct > 0.0 {
                    l1 - level >= -CROSSING_TOLERANCE
                } else {
                    level - l1 >= -CROSSING_TOLERANCE
                };
                if !reached {
                    break;
                }
                state.l_ref = level;
                let frac = ((level - l0) / (l1 - l0)).clamp(0.0, 1.0);
                let t = t0 + (frac * span).round() as u64;
                let silent = matches!(state.t_last_event, Some(prev) if t - prev < cfg.refractory_us);
                if !silent {
                    state.t_last_event = Some(t);
                    events.push(Event::new(t, x, y, polarity));
                }
            }
        }
        events.sort_by_key(|e| e.t);
        self.prev_log = next_log;
        self.prev_t = t1;
        Ok(events)
    }
}

/// Simulates a whole frame sequence into a time-ordered stream.
pub fn simulate_events(frames: &[TimedFrame], config: &SimulatorConfig) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(Error::invalid("frames", "at least two frames are required"));
    }
    let mut sim = Simulator::new(*config, &frames[0])?;
    let mut events = Vec::new();
    for frame in &frames[1..] {
        events.extend(sim.push(frame)?);
    }
    EventStream::new(sim.resolution(), events)
}

/// Reads a frame manifest: one `<t_us> <filename>` per line, file names
/// relative to the manifest's directory. Blank lines and `#` comments are
/// skipped.
pub fn read_frame_manifest(path: &Path) -> Result<Vec<TimedFrame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{} line {}", path.display(), i + 1);
        let (t, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format(at(), "expected `<t_us> <filename>`"))?;
        let t: u64 = t
            .parse()
            .map_err(|_| Error::format(at(), format!("bad timestamp `{t}`")))?;
        let image = Raster::load(&base.join(name.trim()))?;
        frames.push(TimedFrame::new(t, image));
    }
    Ok(frames)
}
