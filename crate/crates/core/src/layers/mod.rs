//! Neural building blocks. Every layer keeps [`ParamId`](crate::params::ParamId)
//! handles into a shared [`ParamStore`](crate::params::ParamStore) and runs its
//! forward pass on a [`Graph`](crate::tape::Graph).

pub mod attention;
pub mod conv;
pub mod dense;
pub mod embedding;
pub mod encoder;
pub mod gru;
pub mod pool;

pub use attention::{positional_encoding, MultiHeadAttention, TransformerBlock};
pub use conv::Conv1d;
pub use dense::Dense;
pub use embedding::EmbeddingTable;
pub use encoder::{ChannelEncoder, EncoderBlock, EncoderSettings, Variant};
pub use gru::{bigru_encode, GruCell};
pub use pool::pool_mean;

/// Layer-norm epsilon used by the transformer blocks.
pub const LAYER_NORM_EPS: f64 = 1e-5;
