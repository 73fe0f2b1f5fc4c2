//! Dense representations of event windows: signed accumulation frames,
//! B-bin voxel grids with a triangular temporal kernel, and leaky surfaces.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::events::{EventWindow, Resolution};
use crate::net::Tensor;

/// Clip bound applied to accumulated frames at inference.
pub const DEFAULT_CLIP: f32 = 10.0;

/// Per-pixel signed event count, optionally clipped to `[-clip, clip]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventFrame {
    resolution: Resolution,
    values: Vec<f32>,
    clip: Option<f32>,
}

impl EventFrame {
    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn clip(&self) -> Option<f32> {
        self.clip
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.resolution.width as usize + x]
    }
}

pub fn accumulate(window: &EventWindow<'_>, clip: Option<f32>) -> EventFrame {
    let res = window.resolution();
    let width = res.width as usize;
    let mut counts = vec![0i32; res.pixel_count()];
    for e in window.events() {
        counts[e.y as usize * width + e.x as usize] += e.p.sign() as i32;
    }
    let values = match clip {
        Some(c) => counts.iter().map(|&v| (v as f32).clamp(-c, c)).collect(),
        None => counts.iter().map(|&v| v as f32).collect(),
    };
    EventFrame {
        resolution: res,
        values,
        clip,
    }
}

/// `B x H x W` grid where each event splits its polarity between the two
/// temporal bins adjacent to its normalized timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    resolution: Resolution,
    values: Vec<f64>,
    t0: u64,
    span: u64,
}

impl VoxelGrid {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t0(&self) -> u64 {
        self.t0
    }

    pub fn span(&self) -> u64 {
        self.span
    }

    pub fn at(&self, bin: usize, x: usize, y: usize) -> f64 {
        let w = self.resolution.width as usize;
        let h = self.resolution.height as usize;
        self.values[(bin * h + y) * w + x]
    }

    pub fn plane(&self, bin: usize) -> &[f64] {
        let n = self.resolution.pixel_count();
        &self.values[bin * n..(bin + 1) * n]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn voxel_grid(window: &EventWindow<'_>, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::invalid("bins", "voxel grid needs at least one bin"));
    }
    let span = window.duration();
    if span == 0 {
        return Err(Error::invalid("window", "zero-duration window has no time axis"));
    }
    let res = window.resolution();
    let plane = res.pixel_count();
    let width = res.width as usize;
    let mut values = vec![0.0f64; bins * plane];
    let last_bin = (bins - 1) as f64;
    for e in window.events() {
        let p = e.p.sign() as f64;
        let pixel = e.y as usize * width + e.x as usize;
        let t_norm = (e.t - window.t_start()) as f64 * last_bin / span as f64;
        let lower = t_norm.floor();
        let frac = t_norm - lower;
        let lower = lower as usize;
        if lower < bins {
            values[lower * plane + pixel] += p * (1.0 - frac);
        }
        if frac > 0.0 && lower + 1 < bins {
            values[(lower + 1) * plane + pixel] += p * frac;
        }
    }
    Ok(VoxelGrid {
        bins,
        resolution: res,
        values,
        t0: window.t_start(),
        span,
    })
}

/// Exponentially decaying event surface.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakySurface {
    resolution: Resolution,
    values: Vec<f64>,
    tau: f64,
    t_last: u64,
}

impl LeakySurface {
    pub fn new(resolution: Resolution, tau_us: f64, t_start: u64) -> Result<Self> {
        if !(tau_us > 0.0) {
            return Err(Error::invalid("tau", "decay constant must be positive"));
        }
        Ok(LeakySurface {
            resolution,
            values: vec![0.0; resolution.pixel_count()],
            tau: tau_us,
            t_last: t_start,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_last(&self) -> u64 {
        self.t_last
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Decays to the window end and adds the window's events, each weighted
    /// by its own decay to the window end.
    pub fn update(&mut self, window: &EventWindow<'_>) -> Result<()> {
        if window.t_start() < self.t_last {
            return Err(Error::invalid(
                "window",
                format!(
                    "window starts at {} before the surface time {}",
                    window.t_start(),
                    self.t_last
                ),
            ));
        }
        if window.resolution() != self.resolution {
            return Err(Error::Shape("window resolution differs from surface".into()));
        }
        let t_end = window.t_end();
        let decay = (-((t_end - self.t_last) as f64) / self.tau).exp();
        self.values.iter_mut().for_each(|v| *v *= decay);
        let width = self.resolution.width as usize;
        for e in window.events() {
            let weight = (-((t_end - e.t) as f64) / self.tau).exp();
            self.values[e.y as usize * width + e.x as usize] += e.p.sign() as f64 * weight;
        }
        self.t_last = t_end;
        Ok(())
    }
}

pub fn leaky_update(mut surface: LeakySurface, window: &EventWindow<'_>) -> Result<LeakySurface> {
    surface.update(window)?;
    Ok(surface)
}

/// Source spans covered by each destination cell, with overlap fractions
/// normalized to sum to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if src == dst {
        return (0..src).map(|i| vec![(i, 1.0)]).collect();
    }
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut cell = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cell.push((i, overlap / scale));
                }
                i += 1;
            }
            cell
        })
        .collect()
}

/// Area-weighted (box filter) resampling of one row-major plane.
pub fn resample_area(values: &[f32], width: usize, height: usize, to_w: usize, to_h: usize) -> Vec<f32> {
    if width == to_w && height == to_h {
        return values.to_vec();
    }
    let cols = area_weights(width, to_w);
    let rows = area_weights(height, to_h);
    // horizontal pass, then vertical
    let mut tmp = vec![0.0f64; height * to_w];
    for y in 0..height {
        let src = &values[y * width..(y + 1) * width];
        for (ox, cell) in cols.iter().enumerate() {
            tmp[y * to_w + ox] = cell.iter().map(|&(i, w)| src[i] as f64 * w).sum();
        }
    }
    let mut out = vec![0.0f32; to_h * to_w];
    for (oy, cell) in rows.iter().enumerate() {
        for ox in 0..to_w {
            let v: f64 = cell.iter().map(|&(i, w)| tmp[i * to_w + ox] * w).sum();
            out[oy * to_w + ox] = v as f32;
        }
    }
    out
}

fn check_network_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % 32 != 0 || height % 32 != 0 {
        return Err(Error::invalid(
            "target",
            format!("{width}x{height} is not divisible by 32 in both directions"),
        ));
    }
    Ok(())
}

/// Resamples a frame to the network input size and rescales clipped frames
/// to `[-1, 1]`. `target` is `(width, height)`.
pub fn frame_to_input(frame: &EventFrame, target: (usize, usize)) -> Result<Tensor> {
    let (to_w, to_h) = target;
    check_network_size(to_w, to_h)?;
    let res = frame.resolution;
    let mut data = resample_area(&frame.values, res.width as usize, res.height as usize, to_w, to_h);
    if let Some(c) = frame.clip.filter(|c| *c > 0.0) {
        data.iter_mut().for_each(|v| *v /= c);
    }
    Tensor::from_vec(1, to_h, to_w, data)
}

/// Resamples every bin of a voxel grid to a `B x H x W` input tensor.
pub fn voxel_to_input(grid: &VoxelGrid, target: (usize, usize)) -> Result<Tensor> {
    let (to_w, to_h) = target;
    check_network_size(to_w, to_h)?;
    let res = grid.resolution;
    let mut data = Vec::with_capacity(grid.bins * to_w * to_h);
    for b in 0..grid.bins {
        let plane: Vec<f32> = grid.plane(b).iter().map(|&v| v as f32).collect();
        data.extend(resample_area(&plane, res.width as usize, res.height as usize, to_w, to_h));
    }
    Tensor::from_vec(grid.bins, to_h, to_w, data)
}

pub const EVFR_MAGIC: &[u8; 4] = b"EVFR";

/// Raw planes: magic `EVFR`, bins `u32`, width `u32`, height `u32`, then
/// `bins * height * width` little-endian `f32` values.
pub fn encode_evfr(bins: usize, width: usize, height: usize, planes: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + planes.len() * 4);
    buf.extend_from_slice(EVFR_MAGIC);
    buf.extend_from_slice(&(bins as u32).to_le_bytes());
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    for v in planes {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Inverse of [`encode_evfr`]: `(bins, width, height, values)`.
pub fn decode_evfr(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..4] != EVFR_MAGIC {
        return Err(Error::format("byte 0", "missing EVFR header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (bins, width, height) = (word(4), word(8), word(12));
    let n = bins * width * height;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::format(
            "byte 16",
            format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 16),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((bins, width, height, values))
}

/// Plain-text greyscale raster (`P2`), mapping `[-m, m]` onto `[0, 255]`
/// where `m` is the largest magnitude in the plane (mid-grey is zero).
pub fn encode_pgm_text(width: usize, height: usize, values: &[f32]) -> String {
    let m = values.iter().fold(0.0f32, |a, v| a.max(v.abs()));
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let g = if m > 0.0 { 127.5 + 127.5 * v / m } else { 127.5 };
                (g.round() as i32).clamp(0, 255).to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_evfr(path: &Path, bins: usize, width: usize, height: usize, planes: &[f32]) -> Result<()> {
    std::fs::write(path, encode_evfr(bins, width, height, planes)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm_text(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(encode_pgm_text(width, height, values).as_bytes())
        .map_err(|e| Error::io(path, e))
}
