//! Tensor container format, manifests, datasets and synthetic data.

pub mod dataset;
pub mod manifest;
pub mod synth;
pub mod tensor_file;

pub use dataset::{assemble_image, load_dataset, load_manifest, plan_batches, split_dataset, split_sizes, Dataset, Sample};
pub use manifest::{Manifest, ManifestHeader, ManifestRecord};
pub use synth::{generate, synthesize_dataset, write_dataset, SynthSpec};
pub use tensor_file::{read_tensors, write_tensors, NamedTensor, TensorData};
