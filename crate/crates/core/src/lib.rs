//! Part-aware reconstruction with superquadric blocks carrying 2D Gaussian
//! splats.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature; `std` only adds thread-parallel rasterization and loss
//! evaluation. All file formats and the command line live in the companion
//! `blocksplat` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bound;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod free;
pub mod hybrid;
pub mod image;
pub mod losses;
pub mod math;
pub mod optimize;
mod par;
pub mod real;
pub mod render;
pub mod sh;
pub mod sq;
pub mod synth;

pub use error::{Error, Result};
