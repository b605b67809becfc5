pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
