//! Part-wise motion style transfer: pose features, skeletal graph convolutions,
//! an encoder/decoder network with per-body-part style injection, training and
//! evaluation utilities.

pub mod error;
pub mod eval;
pub mod motion;
pub mod net;
pub mod skeletal;
pub mod stylize;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
