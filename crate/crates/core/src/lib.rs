pub mod error;
pub mod lhv;
pub mod measurement;
pub mod protocol;
pub mod qmath;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
