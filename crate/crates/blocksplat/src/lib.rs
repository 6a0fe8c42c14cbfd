//! File formats, dataset folders and the command-line pipeline around
//! `blocksplat-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod export;
pub mod image_io;

pub use blocksplat_core as core;
pub use error::{IoError, Result};
