//! File formats, dataset storage and the command-line driver around
//! `mdrum-core`.

pub mod ckpt;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsio;
pub mod kv;
pub mod tables;

pub use cli::run;
pub use error::{AppError, AppResult};
