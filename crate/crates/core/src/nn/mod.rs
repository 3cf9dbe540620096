//! Minimal dense-network machinery: tensors, layers, backpropagation and SGD.

mod dense;
mod tensor;

pub use dense::{sgd_step, Activation, Dense, DenseNet, ForwardTrace, LayerGrads, NetGrads, SgdConfig};
pub use tensor::{l2_normalize, l2_normalize_backward, Tensor};
