//! Reverse-mode automatic differentiation over dense `f64` matrices, the
//! radiance-field MLP built on it, and the Adam optimizer.

mod adam;
mod checkpoint;
mod encoding;
mod mlp;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use encoding::PositionalEncoding;
pub use mlp::{MlpConfig, MlpWeights, SigmaActivation};
pub use tape::{sigmoid, softplus, Gradients, GridAxis, Tape, Var};
pub use tensor::Tensor;
