//! DUCK-Net for binary image segmentation, built on a small dense-tensor
//! engine with hand-written reverse-mode gradients.

pub mod blocks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod seed;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Mode, Scalar, Shape4, Tensor4};
