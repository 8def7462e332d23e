pub mod control;
pub mod dataset;
pub mod error;
pub mod integrator;
pub mod io;
pub mod neural;
pub mod training;
pub mod well;

pub use error::{Error, Result};
