pub mod error;
pub mod identification;
pub mod linalg;
pub mod recovery;
pub mod sampling;
pub mod tensor;
pub mod volterra;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
