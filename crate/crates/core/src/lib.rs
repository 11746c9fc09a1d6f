pub mod baseline;
pub mod bench;
pub mod coarray;
pub mod conic;
pub mod error;
pub mod geometry;
pub mod order;
pub mod sim;
pub mod stats;
pub mod superres;

pub type C64 = num_complex::Complex64;

pub use error::{Error, Result};
