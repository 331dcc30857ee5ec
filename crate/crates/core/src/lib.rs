//! Multi-channel neural networks (MC-NN) for joint prediction of influenza A
//! host, HA subtype and NA subtype from paired HA/NA protein sequences.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`tape`]: dense float64 tensors and a reverse-mode
//!   gradient tape.
//! - [`layers`]: embedding, 1-D convolution, GRU/BiGRU, positional encoding,
//!   multi-head self-attention, transformer encoder block, pooling, dense.
//! - [`tokenizer`]: overlapping amino-acid trigrams and vocabularies.
//! - [`data`]: FASTA/metadata ingestion, curation, era splits, nested folds.
//! - [`model`]: the two-input, three-head network and its checkpoint format.
//! - [`train`]: Adam, the training loop, metrics, nested CV and the
//!   nearest-neighbour baseline.
//! - [`synth`]: a synthetic strain generator with motif-determined labels.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod tokenizer;
pub mod train;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use tape::{Graph, Var};
pub use tensor::Tensor;

/// Version of the newline-delimited JSON dataset records.
pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Version of the label schema file.
pub const SCHEMA_FORMAT_VERSION: u32 = 1;
