pub mod error;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objective;
pub mod params;
pub mod sampler;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
