//! Procedural face still with landmarks, used when no real image is given.

use std::f64::consts::TAU;

use super::{LandmarkGroups, LandmarkSet};
use crate::raster::Raster;

const BACKGROUND: f64 = 0.25;
const SKIN: f64 = 0.7;
const SCLERA: f64 = 0.95;
const IRIS: f64 = 0.12;
const BROW: f64 = 0.3;
const MOUTH: f64 = 0.35;
/// Edge softness in pixels.
const SOFT: f64 = 1.5;

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    /// Approximate signed distance in pixels, negative inside.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        let r = (dx * dx + dy * dy).sqrt();
        (r - 1.0) * self.rx.min(self.ry)
    }

    fn point(&self, angle: f64) -> (f64, f64) {
        (self.cx + self.rx * angle.cos(), self.cy + self.ry * angle.sin())
    }

    fn ring(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| self.point(TAU * i as f64 / n as f64)).collect()
    }
}

fn coverage(distance: f64) -> f64 {
    let u = (0.5 - distance / (2.0 * SOFT)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// A frontal cartoon face on a flat background: face oval, two eyes with
/// irises, brows and a mouth, all with soft edges. Landmarks: 24 on the
/// face outline, 8 per eye outline, 5 per brow, 8 on the mouth. The left
/// eye is the one with the smaller x.
pub fn synthetic_face(width: usize, height: usize) -> (Raster, LandmarkSet) {
    let (w, h) = (width as f64, height as f64);
    let s = w.min(h);
    let face = Ellipse {
        cx: w / 2.0,
        cy: h / 2.0,
        rx: 0.30 * s,
        ry: 0.40 * s,
    };
    let eye = |side: f64| Ellipse {
        cx: face.cx + side * 0.13 * s,
        cy: face.cy - 0.08 * s,
        rx: 0.075 * s,
        ry: 0.04 * s,
    };
    let eyes = [eye(-1.0), eye(1.0)];
    let irises: Vec<Ellipse> = eyes
        .iter()
        .map(|e| Ellipse {
            cx: e.cx,
            cy: e.cy,
            rx: 0.03 * s,
            ry: 0.03 * s,
        })
        .collect();
    let brows: Vec<Ellipse> = eyes
        .iter()
        .map(|e| Ellipse {
            cx: e.cx,
            cy: e.cy - 0.08 * s,
            rx: 0.08 * s,
            ry: 0.015 * s,
        })
        .collect();
    let mouth = Ellipse {
        cx: face.cx,
        cy: face.cy + 0.2 * s,
        rx: 0.11 * s,
        ry: 0.03 * s,
    };

    let image = Raster::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let mut v = BACKGROUND;
        let mut paint = |shape: &Ellipse, value: f64| {
            let a = coverage(shape.distance(x, y));
            v = v * (1.0 - a) + value * a;
        };
        paint(&face, SKIN);
        for b in &brows {
            paint(b, BROW);
        }
        for e in &eyes {
            paint(e, SCLERA);
        }
        for i in &irises {
            paint(i, IRIS);
        }
        paint(&mouth, MOUTH);
        v as f32
    });

    let mut points = face.ring(24);
    let left_eye: Vec<usize> = (points.len()..points.len() + 8).collect();
    points.extend(eyes[0].ring(8));
    let right_eye: Vec<usize> = (points.len()..points.len() + 8).collect();
    points.extend(eyes[1].ring(8));
    for b in &brows {
        points.extend((0..5).map(|i| {
            let x = b.cx - b.rx + 2.0 * b.rx * i as f64 / 4.0;
            (x, b.cy)
        }));
    }
    points.extend(mouth.ring(8));
    let groups = LandmarkGroups {
        face: (0..points.len()).collect(),
        left_eye,
        right_eye,
    };
    let landmarks = LandmarkSet::new(points, groups).expect("fixture groups are valid");
    (image, landmarks)
}
