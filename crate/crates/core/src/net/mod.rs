//! Small dense-matrix autodiff used by the encoders and the prototype model.

mod adam;
mod encoder;
mod features;
mod graph;
mod matrix;
mod params;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use encoder::{
    xavier, Encoder, EncoderInput, EncoderKind, FfnEncoder, RnnEncoder, SequenceBatch,
    DEFAULT_HIDDEN,
};
pub use features::{ContextEncoding, History, InputFeaturizer};
pub use graph::{softmax_rows, Gradients, Graph, NodeId};
pub use matrix::Matrix;
pub use params::{loss_and_grad, BoundParams, ParamSet};
