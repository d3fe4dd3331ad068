//! Depth from binocular focal stacks.
//!
//! The crate bundles a thin-lens focal-stack renderer, a procedural stereo
//! dataset generator, a small CPU convolutional network engine with the
//! FocusNet / EDoFNet / FocusNet-v2 / StereoNet / BDfFNet graphs, a training
//! and evaluation harness, and light-field refocusing with a classical
//! depth-from-focus baseline.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod image;
pub mod infer;
pub mod lightfield;
pub mod networks;
pub mod nn;
pub mod optics;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
