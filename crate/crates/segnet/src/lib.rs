//! A small fully convolutional 3D segmentation network with hand-written
//! reverse-mode gradients, a Dice + cross-entropy loss, SGD and
//! sliding-window inference.
//!
//! One parameter set serves every input size whose axes divide by
//! `2^pools`, which is what lets a curriculum change patch size mid-training.

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod loss;
pub mod net;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use infer::sliding_window_predict;
pub use loss::{loss_dice_ce, LossOutput};
pub use net::{SegNet, SegNetConfig};
pub use optim::{clip_grad_norm, poly_lr, sgd_step, Sgd};
pub use tensor::Tensor;
