pub mod cli;
pub mod config;
pub mod controls;
pub mod error;
pub mod ism;
pub mod linalg;
pub mod models;
pub mod objective;
pub mod optimizers;
pub mod propagation;
pub mod runtime;
pub mod wire;

pub use error::{IsmError, Result};
