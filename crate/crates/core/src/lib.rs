//! Appearance-aware 3D Gaussian splatting on the CPU.
//!
//! The crate is organized around a small reverse-mode tape ([`diff`]), an
//! explicit Gaussian scene with a differentiable rasterizer ([`gauss`]), a
//! hierarchical appearance model built on triplane feature grids
//! ([`appearance`]), unsupervised transient masking ([`transient`]), the
//! training loop ([`train`]), a synthetic multi-view benchmark generator
//! ([`scenegen`]) and dataset/checkpoint IO ([`dataset`]).

pub mod diff;
pub mod error;

pub mod appearance;
pub mod dataset;
pub mod gauss;
pub mod nn;
pub mod scenegen;
pub mod train;
pub mod transient;

pub use diff::{grad_check, Tape, TensorId};
pub use error::{Error, Result};
