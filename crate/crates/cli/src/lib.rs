//! Command-line driver and HTTP service for transfer function optimization.

pub mod cli;
pub mod error;
pub mod pipeline;
pub mod service;

pub use error::{AppError, AppResult, ErrorKind};
