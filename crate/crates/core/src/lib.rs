pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalmetrics;
pub mod lda;
pub mod projection;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
