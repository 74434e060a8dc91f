pub mod abreu;
pub mod config;
pub mod error;
pub mod estimates;
pub mod experiments;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod linop;
pub mod lorentz;
pub mod potentials;
pub mod report;
pub mod sections;

pub use error::{Error, Result};
