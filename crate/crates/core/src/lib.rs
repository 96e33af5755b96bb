pub mod augment;
pub mod backend;
pub mod data;
pub mod error;
pub mod fewshot;
pub mod fusion;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod model_io;
pub mod optim;
pub mod pipeline;
pub mod pooling;
mod serde_matrix;
pub mod synthetic;

pub use error::{Error, Result};
