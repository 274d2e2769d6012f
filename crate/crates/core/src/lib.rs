pub mod classifiers;
pub mod efa;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod hierarchy;
pub mod linalg;
pub mod outline;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
