pub mod aic;
pub mod analytic;
pub mod data;
pub mod dist;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod quadrature;
pub mod radon;
pub mod run;
pub mod simulation;
pub mod smc;

pub use error::{Error, Result};
