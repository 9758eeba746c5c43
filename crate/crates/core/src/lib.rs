pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod dcor;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod image;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
