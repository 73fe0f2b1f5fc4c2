//! The recurrent YOLO graph: layer table, shape chain and forward pass.

use std::collections::BTreeSet;

use super::gru::conv_gru_step;
use super::layers::{concat_channels, conv2d, maxpool, upsample2x, Activation};
use super::weights::NetworkWeights;
use super::Tensor;
use crate::error::{Error, Result};

/// Anchors per cell.
pub const BOXES_PER_CELL: usize = 3;
/// Face and eye.
pub const CLASS_COUNT: usize = 2;
/// Values predicted per box: `t_x, t_y, t_w, t_h, t_o, p_1, p_2`.
pub const BOX_VALUES: usize = 5 + CLASS_COUNT;
/// Channels of each detection head.
pub const HEAD_CHANNELS: usize = BOXES_PER_CELL * BOX_VALUES;
pub const GRU_CHANNELS: usize = 256;
/// Total down-sampling of the backbone.
pub const NETWORK_STRIDE: usize = 32;
/// Inference input size as `(width, height)`.
pub const INFERENCE_SIZE: (usize, usize) = (512, 288);
/// Training input size as `(width, height)`.
pub const TRAINING_SIZE: (usize, usize) = (256, 256);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadScale {
    /// `H/32 x W/32`, fed by anchors 0-2.
    Coarse,
    /// `H/16 x W/16`, fed by anchors 3-5.
    Fine,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Gru {
        filters: usize,
        kernel: usize,
    },
    Upsample,
    Route(Vec<usize>),
    Yolo(HeadScale),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub id: usize,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv { .. } => "conv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Gru { .. } => "gru",
            LayerKind::Upsample => "upsample",
            LayerKind::Route(_) => "route",
            LayerKind::Yolo(_) => "yolo",
        }
    }
}

fn conv(id: usize, filters: usize, kernel: usize, activation: Activation) -> LayerSpec {
    LayerSpec {
        id,
        kind: LayerKind::Conv {
            filters,
            kernel,
            stride: 1,
            activation,
        },
    }
}

fn pool(id: usize, stride: usize) -> LayerSpec {
    LayerSpec {
        id,
        kind: LayerKind::MaxPool { size: 2, stride },
    }
}

/// Layers 0-24 in execution order.
pub fn gr_yolo_spec() -> Vec<LayerSpec> {
    use Activation::{Leaky, Linear};
    vec![
        conv(0, 16, 3, Leaky),
        pool(1, 2),
        conv(2, 32, 3, Leaky),
        pool(3, 2),
        conv(4, 64, 3, Leaky),
        pool(5, 2),
        conv(6, 128, 3, Leaky),
        pool(7, 2),
        conv(8, 256, 3, Leaky),
        pool(9, 2),
        conv(10, 512, 3, Leaky),
        pool(11, 1),
        conv(12, 1024, 3, Leaky),
        conv(13, 256, 1, Leaky),
        LayerSpec {
            id: 14,
            kind: LayerKind::Gru {
                filters: GRU_CHANNELS,
                kernel: 3,
            },
        },
        conv(15, 512, 3, Leaky),
        conv(16, HEAD_CHANNELS, 1, Linear),
        LayerSpec {
            id: 17,
            kind: LayerKind::Yolo(HeadScale::Coarse),
        },
        LayerSpec {
            id: 18,
            kind: LayerKind::Route(vec![14]),
        },
        conv(19, 128, 1, Leaky),
        LayerSpec {
            id: 20,
            kind: LayerKind::Upsample,
        },
        LayerSpec {
            id: 21,
            kind: LayerKind::Route(vec![20, 8]),
        },
        conv(22, 256, 3, Leaky),
        conv(23, HEAD_CHANNELS, 1, Linear),
        LayerSpec {
            id: 24,
            kind: LayerKind::Yolo(HeadScale::Fine),
        },
    ]
}

/// Parameter tensor shape of one weighted layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightShape {
    pub id: usize,
    pub gru: bool,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
}

impl WeightShape {
    pub fn parameter_count(&self) -> usize {
        let kernel = self.c_out * self.c_in * self.k * self.k;
        if self.gru {
            6 * kernel
        } else {
            kernel + self.c_out
        }
    }
}

/// Output channel count of every layer, indexed by layer id.
fn channel_chain(spec: &[LayerSpec], input_channels: usize) -> Result<Vec<usize>> {
    let mut channels: Vec<usize> = Vec::with_capacity(spec.len());
    let mut current = input_channels;
    for (i, layer) in spec.iter().enumerate() {
        if layer.id != i {
            return Err(Error::Shape(format!("layer {} listed at position {i}", layer.id)));
        }
        current = match &layer.kind {
            LayerKind::Conv { filters, .. } => *filters,
            LayerKind::Gru { filters, .. } => {
                if *filters != current {
                    return Err(Error::Shape(format!(
                        "layer {i}: GRU with {filters} channels fed {current}"
                    )));
                }
                *filters
            }
            LayerKind::MaxPool { .. } | LayerKind::Upsample | LayerKind::Yolo(_) => current,
            LayerKind::Route(sources) => {
                let mut total = 0;
                for &s in sources {
                    total += channels
                        .get(s)
                        .ok_or_else(|| Error::Shape(format!("layer {i} routes from later layer {s}")))?;
                }
                total
            }
        };
        channels.push(current);
    }
    Ok(channels)
}

/// Shapes of every weighted layer for a given input channel count.
pub fn weight_shapes(spec: &[LayerSpec], input_channels: usize) -> Result<Vec<WeightShape>> {
    let channels = channel_chain(spec, input_channels)?;
    let mut shapes = Vec::new();
    for (i, layer) in spec.iter().enumerate() {
        let c_in = if i == 0 { input_channels } else { channels[i - 1] };
        match layer.kind {
            LayerKind::Conv { filters, kernel, .. } => shapes.push(WeightShape {
                id: layer.id,
                gru: false,
                c_out: filters,
                c_in,
                k: kernel,
            }),
            LayerKind::Gru { filters, kernel } => shapes.push(WeightShape {
                id: layer.id,
                gru: true,
                c_out: filters,
                c_in: filters,
                k: kernel,
            }),
            _ => {}
        }
    }
    Ok(shapes)
}

/// Multiply-accumulate count per weighted layer at the given input size
/// `(width, height)`.
pub fn multiply_accumulates(spec: &[LayerSpec], input: (usize, usize)) -> Result<Vec<(usize, u64)>> {
    let traces = trace_shapes(spec, 1, input)?;
    let shapes = weight_shapes(spec, 1)?;
    Ok(shapes
        .iter()
        .map(|s| {
            let (_, h, w) = traces[s.id].output;
            let per_pixel = (s.c_out * s.c_in * s.k * s.k) as u64;
            let gates = if s.gru { 6 } else { 1 };
            (s.id, gates * per_pixel * (h * w) as u64)
        })
        .collect())
}

/// Shape of one executed layer. `input` is the tensor fed to the layer (for
/// routes, the first source); `predictions` is set on YOLO layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub id: usize,
    pub name: &'static str,
    pub input: Option<(usize, usize, usize)>,
    pub output: (usize, usize, usize),
    pub predictions: Option<(usize, usize)>,
}

/// Shape arithmetic only, without running any layer.
pub fn trace_shapes(spec: &[LayerSpec], input_channels: usize, input: (usize, usize)) -> Result<Vec<LayerTrace>> {
    let (width, height) = input;
    check_input_size(width, height)?;
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(spec.len());
    let mut current = (input_channels, height, width);
    for layer in spec {
        let fed = current;
        let mut predictions = None;
        let mut layer_input = Some(fed);
        current = match &layer.kind {
            LayerKind::Conv { filters, stride, .. } => (*filters, fed.1.div_ceil(*stride), fed.2.div_ceil(*stride)),
            LayerKind::MaxPool { stride, .. } => (fed.0, fed.1 / stride, fed.2 / stride),
            LayerKind::Gru { filters, .. } => (*filters, fed.1, fed.2),
            LayerKind::Upsample => (fed.0, fed.1 * 2, fed.2 * 2),
            LayerKind::Route(sources) => {
                let first = traces[sources[0]].output;
                layer_input = None;
                let c = sources.iter().map(|&s| traces[s].output.0).sum();
                (c, first.1, first.2)
            }
            LayerKind::Yolo(_) => {
                predictions = Some((fed.1 * fed.2 * BOXES_PER_CELL, BOX_VALUES));
                fed
            }
        };
        traces.push(LayerTrace {
            id: layer.id,
            name: layer.name(),
            input: layer_input,
            output: current,
            predictions,
        });
    }
    Ok(traces)
}

fn check_input_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % NETWORK_STRIDE != 0 || height % NETWORK_STRIDE != 0 {
        return Err(Error::invalid(
            "input",
            format!("{width}x{height} is not divisible by {NETWORK_STRIDE} in both directions"),
        ));
    }
    Ok(())
}

/// Hidden state of the GRU layer, `256 x H/32 x W/32`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Tensor,
}

/// Zero state for an input of `(width, height)` pixels.
pub fn reset_state(input: (usize, usize)) -> Result<RecurrentState> {
    let (width, height) = input;
    check_input_size(width, height)?;
    Ok(RecurrentState {
        h: Tensor::zeros(GRU_CHANNELS, height / NETWORK_STRIDE, width / NETWORK_STRIDE),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `21 x H/32 x W/32` raw head values.
    pub coarse: Tensor,
    /// `21 x H/16 x W/16` raw head values.
    pub fine: Tensor,
    pub state: RecurrentState,
}

pub fn forward(weights: &NetworkWeights, state: &RecurrentState, input: &Tensor) -> Result<ForwardOutput> {
    run(weights, state, input, None)
}

/// Like [`forward`], also recording the shape of every layer.
pub fn forward_traced(
    weights: &NetworkWeights,
    state: &RecurrentState,
    input: &Tensor,
) -> Result<(ForwardOutput, Vec<LayerTrace>)> {
    let mut traces = Vec::new();
    let out = run(weights, state, input, Some(&mut traces))?;
    Ok((out, traces))
}

fn run(
    weights: &NetworkWeights,
    state: &RecurrentState,
    input: &Tensor,
    mut traces: Option<&mut Vec<LayerTrace>>,
) -> Result<ForwardOutput> {
    let spec = weights.spec();
    let (_, height, width) = input.shape();
    check_input_size(width, height)?;
    let expected_state = (GRU_CHANNELS, height / NETWORK_STRIDE, width / NETWORK_STRIDE);
    if state.h.shape() != expected_state {
        return Err(Error::Shape(format!(
            "recurrent state {:?} does not match input {width}x{height} (expected {:?})",
            state.h.shape(),
            expected_state
        )));
    }

    let routed: BTreeSet<usize> = spec
        .iter()
        .filter_map(|l| match &l.kind {
            LayerKind::Route(s) => Some(s.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    let mut kept: Vec<Option<Tensor>> = vec![None; spec.len()];
    let mut current = input.clone();
    let mut new_state = None;
    let mut coarse = None;
    let mut fine = None;

    for layer in spec {
        let fed = current.shape();
        let mut predictions = None;
        let mut layer_input = Some(fed);
        let out = match &layer.kind {
            LayerKind::Conv {
                stride, activation, ..
            } => conv2d(&current, weights.conv(layer.id)?, *stride, *activation)
                .map_err(|e| Error::Shape(format!("layer {}: {e}", layer.id)))?,
            LayerKind::MaxPool { size, stride } => maxpool(&current, *size, *stride)?,
            LayerKind::Gru { .. } => {
                let h = conv_gru_step(&state.h, &current, weights.gru(layer.id)?)?;
                new_state = Some(h.clone());
                h
            }
            LayerKind::Upsample => upsample2x(&current),
            LayerKind::Route(sources) => {
                layer_input = None;
                let source = |s: usize| {
                    kept[s]
                        .as_ref()
                        .ok_or_else(|| Error::Shape(format!("layer {} routes from unavailable layer {s}", layer.id)))
                };
                let mut acc = source(sources[0])?.clone();
                for &s in &sources[1..] {
                    acc = concat_channels(&acc, source(s)?)?;
                }
                acc
            }
            LayerKind::Yolo(scale) => {
                predictions = Some((fed.1 * fed.2 * BOXES_PER_CELL, BOX_VALUES));
                match scale {
                    HeadScale::Coarse => coarse = Some(current.clone()),
                    HeadScale::Fine => fine = Some(current.clone()),
                }
                current.clone()
            }
        };
        if let Some(t) = traces.as_deref_mut() {
            t.push(LayerTrace {
                id: layer.id,
                name: layer.name(),
                input: layer_input,
                output: out.shape(),
                predictions,
            });
        }
        if routed.contains(&layer.id) {
            kept[layer.id] = Some(out.clone());
        }
        current = out;
    }

    match (coarse, fine, new_state) {
        (Some(coarse), Some(fine), Some(h)) => Ok(ForwardOutput {
            coarse,
            fine,
            state: RecurrentState { h },
        }),
        _ => Err(Error::Shape("graph is missing a detection head or the GRU".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_state_shapes() {
        assert_eq!(reset_state((256, 256)).unwrap().h.shape(), (256, 8, 8));
        assert_eq!(reset_state((512, 288)).unwrap().h.shape(), (256, 9, 16));
        assert_eq!(reset_state((256, 256)).unwrap(), reset_state((256, 256)).unwrap());
        assert!(reset_state((250, 256)).is_err());
    }

    #[test]
    fn shape_arithmetic_at_inference_size() {
        let traces = trace_shapes(&gr_yolo_spec(), 1, INFERENCE_SIZE).unwrap();
        assert_eq!(traces[16].output, (21, 9, 16));
        assert_eq!(traces[23].output, (21, 18, 32));
        assert_eq!(traces[17].predictions, Some((432, 7)));
        assert_eq!(traces[24].predictions, Some((1728, 7)));
    }

    #[test]
    fn parameter_total() {
        let total: usize = weight_shapes(&gr_yolo_spec(), 1)
            .unwrap()
            .iter()
            .map(|s| s.parameter_count())
            .sum();
        assert_eq!(total, 12_207_658);
    }

    #[test]
    fn gru_mac_count_at_training_size() {
        let macs = multiply_accumulates(&gr_yolo_spec(), TRAINING_SIZE).unwrap();
        let gru = macs.iter().find(|(id, _)| *id == 14).unwrap().1;
        assert_eq!(gru, 6 * 256 * 256 * 9 * 64);
    }
}
