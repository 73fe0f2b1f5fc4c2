//! Scripted eye-region event streams with known blinks and saccades.
//!
//! Blinks are eyelid sweeps: every positive event has a negative partner in
//! the same column one or two rows away, so column sums cancel. Saccades put
//! positive events in the left half of each eye region and negative events
//! in the right half. Phase boundaries sit on the window grid.

use rand::seq::SliceRandom;
use rand::Rng;

use super::RoiTrack;
use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity, Resolution, Roi};
use crate::seeds::{stage_rng, BLINK_FIXTURE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScriptedBlink {
    pub t_start: u64,
    pub closing_us: u64,
    pub closed_us: u64,
    pub opening_us: u64,
}

impl ScriptedBlink {
    pub fn t_end(&self) -> u64 {
        self.t_start + self.closing_us + self.closed_us + self.opening_us
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScriptedSaccade {
    pub t_start: u64,
    pub duration_us: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkFixtureConfig {
    pub resolution: Resolution,
    pub left_roi: Roi,
    pub right_roi: Roi,
    pub duration_us: u64,
    pub step_us: u64,
    pub blinks: usize,
    pub saccades: usize,
    /// Detection threshold the event rates are scaled to.
    pub threshold: f64,
    /// Background events per sensor pixel per window.
    pub noise_rate: f64,
}

impl Default for BlinkFixtureConfig {
    fn default() -> Self {
        BlinkFixtureConfig {
            resolution: Resolution::new(128, 64),
            left_roi: Roi {
                x_min: 16,
                y_min: 20,
                x_max: 56,
                y_max: 44,
            },
            right_roi: Roi {
                x_min: 72,
                y_min: 20,
                x_max: 112,
                y_max: 44,
            },
            duration_us: 2_000_000,
            step_us: super::DEFAULT_STEP_US,
            blinks: 3,
            saccades: 2,
            threshold: super::DEFAULT_THRESHOLD,
            noise_rate: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlinkFixture {
    pub stream: EventStream,
    pub rois: RoiTrack,
    pub blinks: Vec<ScriptedBlink>,
    pub saccades: Vec<ScriptedSaccade>,
}

const MARGIN_WINDOWS: u64 = 10;

/// Events per ROI pixel and polarity in window `k` of an `n`-window phase.
fn hump(threshold: f64, k: u64, n: u64) -> f64 {
    threshold * (1.5 + 3.0 * (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).sin())
}

fn sweep<R: Rng + ?Sized>(
    rng: &mut R,
    out: &mut Vec<Event>,
    roi: Roi,
    t0: u64,
    step: u64,
    windows: u64,
    threshold: f64,
    closing: bool,
) {
    let h = roi.height() as f64;
    for k in 0..windows {
        let pairs = (hump(threshold, k, windows) * roi.area() as f64).round() as usize;
        for _ in 0..pairs {
            let dt = rng.random_range(0..step);
            let progress = (k * step + dt) as f64 / (windows * step) as f64;
            let travel = if closing { progress } else { 1.0 - progress };
            let lid = roi.y_min + 1 + (travel * (h - 3.0)).round() as u16;
            let x = rng.random_range(roi.x_min..roi.x_max);
            let d: u16 = rng.random_range(0..2);
            let above = lid.saturating_sub(1 + d).max(roi.y_min);
            let below = (lid + d).min(roi.y_max - 1);
            let (p_above, p_below) = if closing {
                (Polarity::Negative, Polarity::Positive)
            } else {
                (Polarity::Positive, Polarity::Negative)
            };
            let t = t0 + k * step + dt;
            out.push(Event::new(t, x, above, p_above));
            out.push(Event::new(t, x, below, p_below));
        }
    }
}

fn saccade<R: Rng + ?Sized>(rng: &mut R, out: &mut Vec<Event>, roi: Roi, t0: u64, step: u64, windows: u64, threshold: f64) {
    let mid = roi.x_min + roi.width() / 2;
    let count = (3.0 * threshold * roi.area() as f64).round() as usize;
    for k in 0..windows {
        for _ in 0..count {
            let t = t0 + k * step + rng.random_range(0..step);
            let y = rng.random_range(roi.y_min..roi.y_max);
            out.push(Event::new(t, rng.random_range(roi.x_min..mid), y, Polarity::Positive));
            out.push(Event::new(t, rng.random_range(mid..roi.x_max), y, Polarity::Negative));
        }
    }
}

/// Blinks and saccades are spread over equal time slots in random order;
/// phase lengths are whole windows (closing 4-10, closed 0-2, opening about
/// 1.5 times closing, saccades 4-8).
pub fn generate_fixture(config: &BlinkFixtureConfig, seed: u64) -> Result<BlinkFixture> {
    let step = config.step_us;
    let episodes = config.blinks + config.saccades;
    if step == 0 || episodes == 0 {
        return Err(Error::invalid("fixture", "needs a positive step and at least one episode"));
    }
    let slot = config.duration_us / episodes as u64 / step * step;
    let longest = 10 + 2 + 16;
    if slot < (longest + 2 * MARGIN_WINDOWS) * step {
        return Err(Error::invalid("fixture", "duration too short for the scripted episodes"));
    }
    for roi in [config.left_roi, config.right_roi] {
        if roi.x_max > config.resolution.width || roi.y_max > config.resolution.height || roi.height() < 4 {
            return Err(Error::invalid("fixture", "eye regions must fit the sensor and be at least 4 rows high"));
        }
    }
    let mut rng = stage_rng(seed, BLINK_FIXTURE);
    let mut kinds: Vec<bool> = (0..episodes).map(|i| i < config.blinks).collect();
    kinds.shuffle(&mut rng);

    let mut events = Vec::new();
    let mut blinks = Vec::new();
    let mut saccades = Vec::new();
    let eyes = [config.left_roi, config.right_roi];
    for (i, &is_blink) in kinds.iter().enumerate() {
        let slot_start = i as u64 * slot;
        if is_blink {
            let closing = rng.random_range(4..=10u64);
            let closed = rng.random_range(0..=2u64);
            let opening = (closing * 3).div_ceil(2) + rng.random_range(0..=1u64);
            let total = closing + closed + opening;
            let free = slot / step - total - 2 * MARGIN_WINDOWS;
            let t0 = slot_start + (MARGIN_WINDOWS + rng.random_range(0..=free)) * step;
            for roi in eyes {
                sweep(&mut rng, &mut events, roi, t0, step, closing, config.threshold, true);
                let t_open = t0 + (closing + closed) * step;
                sweep(&mut rng, &mut events, roi, t_open, step, opening, config.threshold, false);
            }
            blinks.push(ScriptedBlink {
                t_start: t0,
                closing_us: closing * step,
                closed_us: closed * step,
                opening_us: opening * step,
            });
        } else {
            let n = rng.random_range(4..=8u64);
            let free = slot / step - n - 2 * MARGIN_WINDOWS;
            let t0 = slot_start + (MARGIN_WINDOWS + rng.random_range(0..=free)) * step;
            for roi in eyes {
                saccade(&mut rng, &mut events, roi, t0, step, n, config.threshold);
            }
            saccades.push(ScriptedSaccade {
                t_start: t0,
                duration_us: n * step,
            });
        }
    }

    let res = config.resolution;
    let per_window = (config.noise_rate * res.pixel_count() as f64).round() as usize;
    for w in 0..config.duration_us / step {
        for _ in 0..per_window {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            events.push(Event::new(
                w * step + rng.random_range(0..step),
                rng.random_range(0..res.width),
                rng.random_range(0..res.height),
                p,
            ));
        }
    }
    events.sort_by_key(|e| e.t);
    Ok(BlinkFixture {
        stream: EventStream::new(res, events)?,
        rois: RoiTrack::fixed(config.left_roi, config.right_roi),
        blinks,
        saccades,
    })
}
