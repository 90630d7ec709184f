pub mod error;
pub mod experiment;
pub mod mmap;
pub mod objects;
pub mod rng;
pub mod scenarios;
pub mod tensor;
pub mod textio;
pub mod tomography;

pub use error::{Error, Result};
