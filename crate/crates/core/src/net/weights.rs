//! Parameter store and the GRWT weight file.
//!
//! GRWT layout (little-endian): magic `GRWT`, version `u32` (= 1), layer
//! count `u32`, then per weighted layer in table order:
//!
//! | field  | type     | notes                                              |
//! |--------|----------|----------------------------------------------------|
//! | id     | `u32`    | table layer index                                  |
//! | kind   | `u8`     | 0 = conv, 1 = GRU without bias, 2 = GRU with bias  |
//! | dims   | `u32 x4` | `c_out, c_in, k, k`                                |
//! | kernel | `f32 ..` | conv: `c_out*c_in*k*k`; GRU: six such kernels in `W_z, U_z, W_r, U_r, W, U` order |
//! | bias   | `f32 ..` | conv: `c_out`; GRU kind 1: none; kind 2: `3*c_out` (`b_z, b_r, b_h`) |
//!
//! Batch normalization is expected to be folded into conv kernels and biases.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{gr_yolo_spec, weight_shapes, LayerSpec, WeightShape};
use super::gru::GruWeights;
use super::layers::ConvWeights;
use crate::error::{Error, Result};

pub const GRWT_MAGIC: &[u8; 4] = b"GRWT";
pub const GRWT_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_GRU: u8 = 1;
const KIND_GRU_BIAS: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    Conv(ConvWeights),
    Gru(GruWeights),
}

impl LayerWeights {
    pub fn parameter_count(&self) -> usize {
        match self {
            LayerWeights::Conv(c) => c.parameter_count(),
            LayerWeights::Gru(g) => g.parameter_count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    spec: Vec<LayerSpec>,
    layers: Vec<(usize, LayerWeights)>,
}

impl NetworkWeights {
    /// Validates `layers` against the graph's weight shapes.
    pub fn new(layers: Vec<(usize, LayerWeights)>) -> Result<Self> {
        let spec = gr_yolo_spec();
        let shapes = weight_shapes(&spec, 1)?;
        if layers.len() != shapes.len() {
            return Err(Error::Weights(format!(
                "graph needs {} weighted layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (shape, (id, layer)) in shapes.iter().zip(&layers) {
            if shape.id != *id {
                return Err(Error::Weights(format!("expected layer {} but found layer {id}", shape.id)));
            }
            check_layer(shape, layer)?;
        }
        Ok(NetworkWeights { spec, layers })
    }

    pub fn zeros() -> Self {
        Self::build(|_| 0.0, |_| 0.0)
    }

    /// He-uniform kernels, zero biases, deterministic in `seed`. GRU kernels
    /// use Xavier-uniform so the gates start unsaturated.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = weight_shapes(&gr_yolo_spec(), 1).expect("static graph is consistent");
        let layers = shapes
            .iter()
            .map(|s| {
                let fan_in = (s.c_in * s.k * s.k) as f32;
                let n = s.c_out * s.c_in * s.k * s.k;
                if s.gru {
                    let limit = (6.0 / (2.0 * fan_in)).sqrt();
                    let mut draw = || (0..3 * n).map(|_| rng.random_range(-limit..limit)).collect::<Vec<f32>>();
                    let input = draw();
                    let state = draw();
                    let w = GruWeights {
                        channels: s.c_out,
                        k: s.k,
                        input,
                        state,
                        bias: Vec::new(),
                    };
                    (s.id, LayerWeights::Gru(w))
                } else {
                    let limit = (6.0 / fan_in).sqrt();
                    let kernel = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    let w = ConvWeights {
                        c_out: s.c_out,
                        c_in: s.c_in,
                        k: s.k,
                        kernel,
                        bias: vec![0.0; s.c_out],
                    };
                    (s.id, LayerWeights::Conv(w))
                }
            })
            .collect();
        NetworkWeights {
            spec: gr_yolo_spec(),
            layers,
        }
    }

    fn build(kernel: impl Fn(usize) -> f32, bias: impl Fn(usize) -> f32) -> Self {
        let shapes = weight_shapes(&gr_yolo_spec(), 1).expect("static graph is consistent");
        let layers = shapes
            .iter()
            .map(|s| {
                let n = s.c_out * s.c_in * s.k * s.k;
                if s.gru {
                    let mut w = GruWeights::zeros(s.c_out, s.k);
                    w.input = (0..3 * n).map(&kernel).collect();
                    w.state = (0..3 * n).map(&kernel).collect();
                    (s.id, LayerWeights::Gru(w))
                } else {
                    let w = ConvWeights {
                        c_out: s.c_out,
                        c_in: s.c_in,
                        k: s.k,
                        kernel: (0..n).map(&kernel).collect(),
                        bias: (0..s.c_out).map(&bias).collect(),
                    };
                    (s.id, LayerWeights::Conv(w))
                }
            })
            .collect();
        NetworkWeights {
            spec: gr_yolo_spec(),
            layers,
        }
    }

    pub fn spec(&self) -> &[LayerSpec] {
        &self.spec
    }

    pub fn layers(&self) -> &[(usize, LayerWeights)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = (usize, &mut LayerWeights)> {
        self.layers.iter_mut().map(|(id, l)| (*id, l))
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.parameter_count()).sum()
    }

    pub fn conv(&self, id: usize) -> Result<&ConvWeights> {
        match self.layers.iter().find(|(i, _)| *i == id) {
            Some((_, LayerWeights::Conv(c))) => Ok(c),
            _ => Err(Error::Weights(format!("no conv weights for layer {id}"))),
        }
    }

    pub fn gru(&self, id: usize) -> Result<&GruWeights> {
        match self.layers.iter().find(|(i, _)| *i == id) {
            Some((_, LayerWeights::Gru(g))) => Ok(g),
            _ => Err(Error::Weights(format!("no GRU weights for layer {id}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.parameter_count() + 21 * self.layers.len());
        buf.extend_from_slice(GRWT_MAGIC);
        buf.extend_from_slice(&GRWT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        let put_f32s = |buf: &mut Vec<u8>, values: &[f32]| {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (id, layer) in &self.layers {
            buf.extend_from_slice(&(*id as u32).to_le_bytes());
            let (kind, c_out, c_in, k) = match layer {
                LayerWeights::Conv(c) => (KIND_CONV, c.c_out, c.c_in, c.k),
                LayerWeights::Gru(g) => (
                    if g.bias.is_empty() { KIND_GRU } else { KIND_GRU_BIAS },
                    g.channels,
                    g.channels,
                    g.k,
                ),
            };
            buf.push(kind);
            for d in [c_out, c_in, k, k] {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match layer {
                LayerWeights::Conv(c) => {
                    put_f32s(&mut buf, &c.kernel);
                    put_f32s(&mut buf, &c.bias);
                }
                LayerWeights::Gru(g) => {
                    for kernel in g.kernels() {
                        put_f32s(&mut buf, kernel);
                    }
                    put_f32s(&mut buf, &g.bias);
                }
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| Error::Weights("file shorter than the header".into()))?;
        if magic != GRWT_MAGIC {
            return Err(Error::Weights("magic mismatch (expected GRWT)".into()));
        }
        let header = |r: &mut Reader| r.u32().map_err(|_| Error::Weights("truncated header".into()));
        let version = header(&mut r)?;
        if version != GRWT_VERSION {
            return Err(Error::Weights(format!("unsupported version {version}")));
        }
        let count = header(&mut r)? as usize;
        if count == 0 {
            return Err(Error::Weights("file holds no layers".into()));
        }
        let shapes = weight_shapes(&gr_yolo_spec(), 1)?;
        if count != shapes.len() {
            return Err(Error::Weights(format!(
                "file holds {count} layers, graph needs {}",
                shapes.len()
            )));
        }
        let mut layers = Vec::with_capacity(count);
        for (index, shape) in shapes.iter().enumerate() {
            let truncated = |what: &str| {
                let id = layers_seen_id(&shapes, index);
                Error::Weights(format!("truncated in layer {id} ({what})"))
            };
            let id = r.u32().map_err(|_| truncated("id"))? as usize;
            if id != shape.id {
                return Err(Error::Weights(format!("expected layer {} but found layer {id}", shape.id)));
            }
            let kind = r.take(1).map_err(|_| truncated("kind"))?[0];
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u32().map_err(|_| truncated("dims"))? as usize;
            }
            let expected = [shape.c_out, shape.c_in, shape.k, shape.k];
            let kind_matches = matches!((kind, shape.gru), (KIND_CONV, false) | (KIND_GRU | KIND_GRU_BIAS, true));
            if !kind_matches || dims != expected {
                return Err(Error::Weights(format!(
                    "shape mismatch in layer {id}: kind {kind} dims {dims:?}, expected {expected:?}"
                )));
            }
            let n = dims.iter().product::<usize>();
            let layer = if shape.gru {
                let mut kernels: [Vec<f32>; 6] = Default::default();
                for kernel in kernels.iter_mut() {
                    *kernel = r.f32s(n).map_err(|_| truncated("kernel"))?;
                }
                let bias = if kind == KIND_GRU_BIAS {
                    r.f32s(3 * shape.c_out).map_err(|_| truncated("bias"))?
                } else {
                    Vec::new()
                };
                LayerWeights::Gru(GruWeights::from_kernels(shape.c_out, shape.k, kernels, bias)?)
            } else {
                let kernel = r.f32s(n).map_err(|_| truncated("kernel"))?;
                let bias = r.f32s(shape.c_out).map_err(|_| truncated("bias"))?;
                LayerWeights::Conv(ConvWeights {
                    c_out: shape.c_out,
                    c_in: shape.c_in,
                    k: shape.k,
                    kernel,
                    bias,
                })
            };
            layers.push((id, layer));
        }
        if r.pos != bytes.len() {
            return Err(Error::Weights(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        NetworkWeights::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    NetworkWeights::from_bytes(&bytes)
}

pub fn save_weights(weights: &NetworkWeights, path: &Path) -> Result<()> {
    weights.save(path)
}

fn layers_seen_id(shapes: &[WeightShape], index: usize) -> usize {
    shapes[index].id
}

fn check_layer(shape: &WeightShape, layer: &LayerWeights) -> Result<()> {
    let ok = match layer {
        LayerWeights::Conv(c) => {
            !shape.gru && c.c_out == shape.c_out && c.c_in == shape.c_in && c.k == shape.k && c.check().is_ok()
        }
        LayerWeights::Gru(g) => shape.gru && g.channels == shape.c_out && g.k == shape.k && g.check().is_ok(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Weights(format!("shape mismatch in layer {}", shape.id)))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ()> {
        let end = self.pos.checked_add(n).ok_or(())?;
        let out = self.bytes.get(self.pos..end).ok_or(())?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, ()> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, ()> {
        let raw = self.take(n.checked_mul(4).ok_or(())?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let w = NetworkWeights::random(42);
        let bytes = w.to_bytes();
        let back = NetworkWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn gru_bias_variant_round_trips() {
        let mut w = NetworkWeights::zeros();
        for (_, layer) in w.layers_mut() {
            if let LayerWeights::Gru(g) = layer {
                g.bias = (0..3 * g.channels).map(|i| i as f32).collect();
            }
        }
        assert_eq!(NetworkWeights::from_bytes(&w.to_bytes()).unwrap(), w);
    }

    #[test]
    fn truncated_file_names_the_layer() {
        let bytes = NetworkWeights::zeros().to_bytes();
        // header (12) + layer 0: 21 + 4*(144 + 16) = 661 bytes; cut inside layer 2
        let err = NetworkWeights::from_bytes(&bytes[..12 + 661 + 30]).unwrap_err().to_string();
        assert!(err.contains("truncated in layer 2"), "{err}");
    }

    #[test]
    fn header_errors() {
        let mut bytes = NetworkWeights::zeros().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NetworkWeights::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut empty = b"GRWT".to_vec();
        empty.extend_from_slice(&1u32.to_le_bytes());
        empty.extend_from_slice(&0u32.to_le_bytes());
        assert!(NetworkWeights::from_bytes(&empty).unwrap_err().to_string().contains("no layers"));
        // layer 0 claims 8 filters instead of 16
        bytes[17..21].copy_from_slice(&8u32.to_le_bytes());
        let err = NetworkWeights::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn random_is_deterministic() {
        assert_eq!(NetworkWeights::random(1), NetworkWeights::random(1));
        assert_ne!(NetworkWeights::random(1), NetworkWeights::random(2));
    }
}
