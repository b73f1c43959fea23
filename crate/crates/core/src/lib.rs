//! Core of the vision-GNN classifier.
//!
//! Dense tensors with reverse-mode gradients ([`tensor`]), dynamic KNN patch
//! graphs ([`graph`]), max-relative Grapher and FFN blocks ([`grapher`]), the
//! three-stage pyramid encoder ([`model`]), training ([`train`]), evaluation
//! metrics ([`metrics`]) and the on-disk formats and datasets ([`data`]).

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod grapher;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod data;
pub mod metrics;

pub use error::{Result, VigError};
pub use tensor::{Activation, BatchNormState, Conv2dSpec, Mode, OpTrace, Real, Tensor};
pub use model::{ModelConfig, Task, VigModel};
pub use nn::Parameterized;
