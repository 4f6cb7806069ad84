pub mod error;
pub mod graph;
pub mod real;
pub mod rng;

pub use error::{Error, Result};
pub mod sampler;
pub mod spectral;
pub mod condition;
pub mod nn;
pub mod cache;
pub mod pretrain;
pub mod adapt;
