pub mod cli;
mod codec;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
