//! Detection and elimination of checkerboard artifacts in CNN upsampling
//! layers.

pub mod analysis;
pub mod bench;
pub mod error;
pub mod image_io;
pub mod multirate;
pub mod srnet;
pub mod tensor;
pub mod upsample;

pub use error::{Error, Result};
pub use tensor::Tensor;
