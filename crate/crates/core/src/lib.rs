pub mod autograd;
pub mod balancing;
pub mod bounds;
pub mod datasets;
pub mod density;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod runner;
pub mod sensitivity;
pub mod training;

pub use error::{Error, Result};
