//! Joint image captioning and anomaly classification: text preprocessing,
//! an LSTM caption decoder with an MLP classifier head, a METEOR scorer and
//! the dataset formats that tie them together.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod meteor;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod pipeline;
pub mod text;

pub use error::{Error, ErrorKind, Result};
