//! Allocation-only core of the multimodal fake-news detection and
//! manipulation-reasoning pipeline.
//!
//! Everything here is pure computation over owned buffers: the benchmark
//! forge, the toy encoders, cross-modal fusion, the prompt learner with its
//! prediction head and decoder, the losses and two-stage trainer, and the
//! evaluation kit. File formats, images on disk and the command line live in
//! the `mdrum` companion crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod forge;
pub mod fusion;
pub mod loss;
pub mod math;
pub mod model;
pub mod params;
pub mod prompt;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
