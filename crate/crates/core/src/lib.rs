pub mod cli;
pub mod cutoff;
pub mod error;
pub mod fixedpoint;
pub mod glue;
pub mod linearized;
pub mod monitors;
pub mod noise;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
