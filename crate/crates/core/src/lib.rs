pub mod cli;
pub mod data;
pub mod distant_label;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod prior;
pub mod risk;
pub mod synth;

pub use error::{Error, Result};
