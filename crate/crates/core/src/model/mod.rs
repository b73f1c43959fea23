//! Three-stage pyramid vision-GNN encoder and classification head.

pub(crate) mod config;
mod vig;

pub use config::{ModelConfig, Task, NUM_STAGES};
pub use vig::{add_positional_encoding, Downsample, EncoderBlock, ForwardTrace, Head, StageTrace, Stem, VigModel};
