//! Minimal inference engine for the recurrent YOLO detector.

mod graph;
mod gru;
mod layers;
mod tensor;
mod weights;

pub use graph::{
    forward, forward_traced, gr_yolo_spec, multiply_accumulates, reset_state, trace_shapes, weight_shapes,
    ForwardOutput, HeadScale, LayerKind, LayerSpec, LayerTrace, RecurrentState, WeightShape, BOXES_PER_CELL,
    BOX_VALUES, CLASS_COUNT, GRU_CHANNELS, HEAD_CHANNELS, INFERENCE_SIZE, NETWORK_STRIDE, TRAINING_SIZE,
};
pub use gru::{conv_gru_step, GruWeights, STATE_BOUND};
pub use layers::{concat_channels, conv2d, maxpool, upsample2x, Activation, ConvWeights, LEAKY_SLOPE};
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights, LayerWeights, NetworkWeights, GRWT_MAGIC, GRWT_VERSION};
