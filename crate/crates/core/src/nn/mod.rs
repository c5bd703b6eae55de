//! Transformer encoder, classification head, exact gradients and
//! checkpoints.

mod checkpoint;
pub(crate) mod checkpoint_io {
    pub(crate) use super::checkpoint::{decode_tensors, encode_tensors};
}
mod model;
mod ops;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use model::{
    backward, batch_loss, encoder_forward, forward, model_backward, model_forward, predict_batch,
    stack_batch, ForwardOutput, Mode, Prediction, Tape,
};
pub use ops::{
    classify, gelu, gelu_grad, head_logits, layer_norm, mean_pool, multi_head_attention,
    positional_encoding, softmax, LAYER_NORM_EPS,
};
pub use params::{
    init_head, init_params, is_head_param, EncoderConfig, GradStore, LayerParams, ParamStore,
};
pub use scalar::{gemm, MatMut, MatRef, Scalar};
pub use tensor::Tensor;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
