//! Dense `f64` matrices, small MLPs with reverse-mode gradients, and Adam.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use mlp::{Activation, Layer, LayerGrads, Mode, MlpNet, Tape};
pub use tensor::Tensor2;
