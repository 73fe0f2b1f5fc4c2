//! Event data model, time-ordered streams and windowing.
//!
//! Timestamps are integer microseconds. Duration windows are half-open
//! `[t_start, t_end)`; an event sitting exactly on a boundary belongs to the
//! later window.

mod io;

use std::borrow::Cow;

pub use io::{
    encode_evs1, parse_evs1, read_events, write_events, EventFormat, LoadedStream, EVS1_HEADER_LEN, EVS1_MAGIC, EVS1_RECORD_LEN,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    #[inline]
    pub fn as_f32(self) -> f32 {
        self.sign() as f32
    }

    pub fn from_sign(value: i64) -> Option<Self> {
        match value {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// One polarity change reported by a pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Event { t, x, y, p }
    }
}

/// Sensor size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub width: u16,
    pub height: u16,
}

impl Resolution {
    pub fn new(width: u16, height: u16) -> Self {
        Resolution { width, height }
    }

    pub fn pixel_count(self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

/// A validated, time-ordered event stream. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    resolution: Resolution,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream from events that must already be time-ordered.
    pub fn new(resolution: Resolution, events: Vec<Event>) -> Result<Self> {
        check_bounds(resolution, &events)?;
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::invalid(
                "events",
                format!(
                    "timestamps decrease at index {} ({} -> {})",
                    i + 1,
                    events[i].t,
                    events[i + 1].t
                ),
            ));
        }
        Ok(EventStream { resolution, events })
    }

    /// Builds a stream, stably sorting by timestamp when needed. The flag is
    /// true when the input was out of order.
    pub fn from_unsorted(resolution: Resolution, mut events: Vec<Event>) -> Result<(Self, bool)> {
        check_bounds(resolution, &events)?;
        let reordered = events.windows(2).any(|w| w[1].t < w[0].t);
        if reordered {
            events.sort_by_key(|e| e.t);
        }
        Ok((EventStream { resolution, events }, reordered))
    }

    pub fn empty(resolution: Resolution) -> Self {
        EventStream {
            resolution,
            events: Vec::new(),
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// The whole stream as a single window spanning first to last timestamp.
    pub fn as_window(&self) -> EventWindow<'_> {
        let (t_start, t_end) = match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => (0, 0),
        };
        EventWindow {
            events: Cow::Borrowed(&self.events),
            t_start,
            t_end,
            resolution: self.resolution,
        }
    }

    /// Splits into windows of exactly `n` events (the last may be shorter).
    pub fn window_by_count(&self, n: usize) -> Result<Vec<EventWindow<'_>>> {
        if n == 0 {
            return Err(Error::invalid("n", "window event count must be at least 1"));
        }
        Ok(self
            .events
            .chunks(n)
            .map(|chunk| EventWindow {
                events: Cow::Borrowed(chunk),
                t_start: chunk[0].t,
                t_end: chunk[chunk.len() - 1].t,
                resolution: self.resolution,
            })
            .collect())
    }

    /// Splits into consecutive `[t_origin + k*dt, t_origin + (k+1)*dt)` windows
    /// up to the window holding the last event. Empty windows are kept.
    pub fn window_by_duration(&self, dt: u64, t_origin: u64) -> Result<Vec<EventWindow<'_>>> {
        let t_stop = match self.events.last() {
            Some(last) => last.t + 1,
            None => t_origin,
        };
        self.window_by_duration_until(dt, t_origin, t_stop)
    }

    /// Like [`window_by_duration`](Self::window_by_duration) but covers
    /// `[t_origin, t_stop)` exactly (rounded up to whole windows). Events at or
    /// after `t_stop` must not exist.
    pub fn window_by_duration_until(
        &self,
        dt: u64,
        t_origin: u64,
        t_stop: u64,
    ) -> Result<Vec<EventWindow<'_>>> {
        if dt == 0 {
            return Err(Error::invalid("dt", "window duration must be at least 1 us"));
        }
        if let Some(first) = self.events.first() {
            if first.t < t_origin {
                return Err(Error::invalid(
                    "t_origin",
                    format!("origin {} is after the first event at {}", t_origin, first.t),
                ));
            }
        }
        if let Some(last) = self.events.last() {
            if last.t >= t_stop {
                return Err(Error::invalid(
                    "t_stop",
                    format!("stop {} does not cover the last event at {}", t_stop, last.t),
                ));
            }
        }
        let span = t_stop.saturating_sub(t_origin);
        let count = span.div_ceil(dt) as usize;
        let mut windows = Vec::with_capacity(count);
        let mut cursor = 0;
        for k in 0..count as u64 {
            let t_start = t_origin + k * dt;
            let t_end = t_start + dt;
            let begin = cursor;
            while cursor < self.events.len() && self.events[cursor].t < t_end {
                cursor += 1;
            }
            windows.push(EventWindow {
                events: Cow::Borrowed(&self.events[begin..cursor]),
                t_start,
                t_end,
                resolution: self.resolution,
            });
        }
        Ok(windows)
    }
}

fn check_bounds(resolution: Resolution, events: &[Event]) -> Result<()> {
    if let Some((i, e)) = events
        .iter()
        .enumerate()
        .find(|(_, e)| !resolution.contains(e.x, e.y))
    {
        return Err(Error::invalid(
            "events",
            format!(
                "event {} at ({}, {}) lies outside {}x{}",
                i, e.x, e.y, resolution.width, resolution.height
            ),
        ));
    }
    Ok(())
}

/// A contiguous slice of a stream together with its time bounds.
///
/// Count windows use the first and last contained timestamps as bounds, so a
/// window whose events share one timestamp has `t_start == t_end`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventWindow<'a> {
    events: Cow<'a, [Event]>,
    t_start: u64,
    t_end: u64,
    resolution: Resolution,
}

impl<'a> EventWindow<'a> {
    pub fn new(
        resolution: Resolution,
        events: impl Into<Cow<'a, [Event]>>,
        t_start: u64,
        t_end: u64,
    ) -> Result<Self> {
        let events = events.into();
        if t_end < t_start {
            return Err(Error::invalid("t_end", "window ends before it starts"));
        }
        check_bounds(resolution, &events)?;
        if events.iter().any(|e| e.t < t_start || e.t > t_end) {
            return Err(Error::invalid("events", "event outside window bounds"));
        }
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::invalid("events", "window events are not time-ordered"));
        }
        Ok(EventWindow {
            events,
            t_start,
            t_end,
            resolution,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn t_start(&self) -> u64 {
        self.t_start
    }

    pub fn t_end(&self) -> u64 {
        self.t_end
    }

    pub fn duration(&self) -> u64 {
        self.t_end - self.t_start
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_owned(self) -> EventWindow<'static> {
        EventWindow {
            events: Cow::Owned(self.events.into_owned()),
            t_start: self.t_start,
            t_end: self.t_end,
            resolution: self.resolution,
        }
    }

    /// Keeps the events inside `roi`, re-based to the roi origin.
    pub fn crop_roi(&self, roi: Roi) -> Result<EventWindow<'static>> {
        if roi.x_max > self.resolution.width || roi.y_max > self.resolution.height {
            return Err(Error::invalid(
                "roi",
                format!(
                    "{:?} exceeds {}x{}",
                    roi, self.resolution.width, self.resolution.height
                ),
            ));
        }
        let events: Vec<Event> = self
            .events
            .iter()
            .filter(|e| roi.contains(e.x, e.y))
            .map(|e| Event::new(e.t, e.x - roi.x_min, e.y - roi.y_min, e.p))
            .collect();
        Ok(EventWindow {
            events: Cow::Owned(events),
            t_start: self.t_start,
            t_end: self.t_end,
            resolution: Resolution::new(roi.width(), roi.height()),
        })
    }
}

/// Axis-aligned pixel region, half-open on the max edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Roi {
    pub x_min: u16,
    pub y_min: u16,
    pub x_max: u16,
    pub y_max: u16,
}

impl Roi {
    pub fn new(x_min: u16, y_min: u16, x_max: u16, y_max: u16) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(
                "roi",
                format!("degenerate region [{x_min}, {x_max}) x [{y_min}, {y_max})"),
            ));
        }
        Ok(Roi {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn full(resolution: Resolution) -> Self {
        Roi {
            x_min: 0,
            y_min: 0,
            x_max: resolution.width,
            y_max: resolution.height,
        }
    }

    /// Rounds a floating-point box (corners in pixels) outwards and clamps it
    /// to the sensor. Returns `None` when nothing of it remains on the sensor.
    pub fn from_corners_clamped(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        resolution: Resolution,
    ) -> Option<Self> {
        let clamp = |v: f64, hi: u16| v.clamp(0.0, hi as f64);
        let x_min = clamp(x0.floor(), resolution.width) as u16;
        let y_min = clamp(y0.floor(), resolution.height) as u16;
        let x_max = clamp(x1.ceil(), resolution.width) as u16;
        let y_max = clamp(y1.ceil(), resolution.height) as u16;
        Roi::new(x_min, y_min, x_max, y_max).ok()
    }

    pub fn width(&self) -> u16 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u16 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u64, x: u16, y: u16, p: i64) -> Event {
        Event::new(t, x, y, Polarity::from_sign(p).unwrap())
    }

    fn ramp(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| ev(i as u64 * 10, (i % 8) as u16, (i % 4) as u16, 1))
            .collect();
        EventStream::new(Resolution::new(8, 4), events).unwrap()
    }

    #[test]
    fn count_windows_exact_and_remainder() {
        let s = ramp(10);
        let w5: Vec<usize> = s.window_by_count(5).unwrap().iter().map(|w| w.len()).collect();
        assert_eq!(w5, vec![5, 5]);
        let w4: Vec<usize> = s.window_by_count(4).unwrap().iter().map(|w| w.len()).collect();
        assert_eq!(w4, vec![4, 4, 2]);
        let w = &s.window_by_count(4).unwrap()[1];
        assert_eq!((w.t_start(), w.t_end()), (40, 70));
    }

    #[test]
    fn count_window_rejects_zero() {
        assert!(ramp(3).window_by_count(0).is_err());
    }

    #[test]
    fn inference_default_window_count() {
        let s = ramp(150_000);
        assert_eq!(s.window_by_count(50_000).unwrap().len(), 3);
    }

    #[test]
    fn one_second_at_5ms_gives_200_windows() {
        let events = (0..1000).map(|i| ev(i * 1000, 0, 0, 1)).collect();
        let s = EventStream::new(Resolution::new(1, 1), events).unwrap();
        let windows = s.window_by_duration(5000, 0).unwrap();
        assert_eq!(windows.len(), 200);
        assert!(windows.iter().all(|w| w.len() == 5));
    }

    #[test]
    fn empty_duration_window_is_kept() {
        let events = vec![ev(1_000, 0, 0, 1), ev(9_999, 0, 0, 1), ev(15_000, 0, 0, -1)];
        let s = EventStream::new(Resolution::new(1, 1), events).unwrap();
        let windows = s.window_by_duration(5_000, 0).unwrap();
        assert_eq!(windows.len(), 4);
        assert!(windows[2].is_empty());
        assert_eq!((windows[2].t_start(), windows[2].t_end()), (10_000, 15_000));
    }

    #[test]
    fn boundary_event_goes_to_next_window() {
        let s = EventStream::new(Resolution::new(1, 1), vec![ev(100, 0, 0, 1)]).unwrap();
        let windows = s.window_by_duration(100, 0).unwrap();
        assert_eq!(windows.len(), 2);
        assert!(windows[0].is_empty());
        assert_eq!(windows[1].len(), 1);
    }

    #[test]
    fn origin_after_first_event_rejected() {
        let s = ramp(3);
        assert!(s.window_by_duration(5, 1).is_err());
        assert!(s.window_by_duration(0, 0).is_err());
    }

    #[test]
    fn crop_full_frame_is_identity() {
        let s = ramp(20);
        let w = s.as_window();
        let cropped = w.crop_roi(Roi::full(s.resolution())).unwrap();
        assert_eq!(cropped.events(), w.events());
        assert_eq!(cropped.resolution(), w.resolution());
    }

    #[test]
    fn crop_matches_brute_force_membership() {
        let events = vec![
            ev(1, 0, 0, 1),
            ev(2, 3, 2, -1),
            ev(3, 5, 5, 1),
            ev(4, 4, 3, 1),
            ev(5, 9, 9, -1),
        ];
        let s = EventStream::new(Resolution::new(10, 10), events.clone()).unwrap();
        let roi = Roi::new(3, 2, 5, 4).unwrap();
        let got = s.as_window().crop_roi(roi).unwrap();
        let mut expected = Vec::new();
        for e in &events {
            if e.x >= 3 && e.x < 5 && e.y >= 2 && e.y < 4 {
                expected.push(Event::new(e.t, e.x - 3, e.y - 2, e.p));
            }
        }
        assert_eq!(expected.len(), 2);
        assert_eq!(got.events(), expected.as_slice());
        assert_eq!(got.resolution(), Resolution::new(2, 2));
    }

    #[test]
    fn crop_disjoint_is_empty_and_bad_roi_rejected() {
        let s = ramp(20);
        let roi = Roi::new(0, 0, 1, 1).unwrap();
        let only_origin = s.as_window().crop_roi(roi).unwrap();
        assert!(only_origin.events().iter().all(|e| e.x == 0 && e.y == 0));
        let events = vec![ev(1, 7, 3, 1)];
        let s = EventStream::new(Resolution::new(8, 4), events).unwrap();
        assert!(s.as_window().crop_roi(roi).unwrap().is_empty());
        assert!(s.as_window().crop_roi(Roi::new(0, 0, 9, 4).unwrap()).is_err());
        assert!(Roi::new(3, 0, 3, 4).is_err());
    }

    #[test]
    fn unsorted_input_is_stably_sorted() {
        let events = vec![ev(5, 0, 0, 1), ev(3, 1, 0, 1), ev(9, 2, 0, -1), ev(3, 3, 0, -1)];
        let (s, reordered) = EventStream::from_unsorted(Resolution::new(4, 1), events).unwrap();
        assert!(reordered);
        let xs: Vec<u16> = s.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![1, 3, 0, 2]);
        assert!(EventStream::new(Resolution::new(4, 1), vec![ev(2, 0, 0, 1), ev(1, 0, 0, 1)]).is_err());
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0u64..50, 0u16..6, 0u16..5, any::<bool>()), 0..200).prop_map(|raw| {
            let mut t = 0;
            let events = raw
                .into_iter()
                .map(|(dt, x, y, pos)| {
                    t += dt;
                    Event::new(t, x, y, if pos { Polarity::Positive } else { Polarity::Negative })
                })
                .collect();
            EventStream::new(Resolution::new(6, 5), events).unwrap()
        })
    }

    proptest! {
        #[test]
        fn windows_partition_the_stream(s in arb_stream(), n in 1usize..40, dt in 1u64..300) {
            let by_count: Vec<Event> = s.window_by_count(n).unwrap()
                .iter().flat_map(|w| w.events().to_vec()).collect();
            prop_assert_eq!(&by_count, &s.events().to_vec());
            let windows = s.window_by_duration(dt, 0).unwrap();
            for w in &windows {
                prop_assert!(w.events().iter().all(|e| e.t >= w.t_start() && e.t < w.t_end()));
                prop_assert_eq!(w.duration(), dt);
            }
            let by_dur: Vec<Event> = windows.iter().flat_map(|w| w.events().to_vec()).collect();
            prop_assert_eq!(&by_dur, &s.events().to_vec());
        }

        #[test]
        fn crop_is_idempotent(s in arb_stream(), x0 in 0u16..5, y0 in 0u16..4, w in 1u16..6, h in 1u16..5) {
            let roi = Roi::new(x0, y0, (x0 + w).min(6), (y0 + h).min(5)).unwrap();
            let once = s.as_window().crop_roi(roi).unwrap();
            let twice = once.crop_roi(Roi::full(once.resolution())).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
