pub mod analysis;
pub mod attribution;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod io;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
