//! Minimal CNN engine: layers with analytic backward passes, a graph
//! executor, Adam, He initialisation and a finite-difference checker.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod centre;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod loss;
pub mod model;
pub mod pool;
pub mod shift;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use graph::{GraphBuilder, LayerKind, LayerSpec, NetworkGraph, Op};
pub use model::{Gradients, Mode, Model};
