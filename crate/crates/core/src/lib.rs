pub mod error;
pub mod genetics;
pub mod io;
pub mod linalg;
pub mod model;
pub mod reml;

pub use error::{Error, Result};
pub mod penalties;
pub mod whitening;
pub mod solver;
pub mod prediction;
pub mod simulation;
pub mod cli;
