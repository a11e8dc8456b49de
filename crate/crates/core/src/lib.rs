pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod math;
pub mod kv;
pub mod model;
pub mod runtime;
pub mod train;
pub mod verify;
pub mod wave;

pub use error::{Error, Result};
