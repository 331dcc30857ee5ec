//! One input channel: embedding followed by a sequence encoder that reduces
//! a token sequence to a fixed-width row vector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{positional_encoding, TransformerBlock};
use super::conv::Conv1d;
use super::embedding::EmbeddingTable;
use super::gru::{bigru_encode, GruCell};
use super::pool::pool_mean;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::tape::{Graph, Var};
use crate::tokenizer::PAD_ID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cnn,
    Bigru,
    Transformer,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Cnn, Variant::Bigru, Variant::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::Bigru => "bigru",
            Variant::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Variant::Cnn),
            "bigru" => Ok(Variant::Bigru),
            "transformer" => Ok(Variant::Transformer),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture knobs for one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderSettings {
    pub variant: Variant,
    pub embedding_size: usize,
    pub kernel_size: usize,
    pub num_heads: usize,
    pub filters: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub enum EncoderBlock {
    Cnn(Conv1d),
    Bigru { forward: GruCell, backward: GruCell },
    Transformer(Vec<TransformerBlock>),
}

#[derive(Clone, Debug)]
pub struct ChannelEncoder {
    pub embedding: EmbeddingTable,
    pub block: EncoderBlock,
    pub output_width: usize,
}

impl ChannelEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        s: &EncoderSettings,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let embedding = EmbeddingTable::new(store, &format!("{name}.embedding"), vocab_size, s.embedding_size, rng);
        let (block, output_width) = match s.variant {
            Variant::Cnn => (
                EncoderBlock::Cnn(Conv1d::new(
                    store,
                    &format!("{name}.conv"),
                    s.kernel_size,
                    s.embedding_size,
                    s.filters,
                    rng,
                )),
                s.filters,
            ),
            Variant::Bigru => (
                EncoderBlock::Bigru {
                    forward: GruCell::new(store, &format!("{name}.gru_fwd"), s.embedding_size, s.hidden, rng),
                    backward: GruCell::new(store, &format!("{name}.gru_bwd"), s.embedding_size, s.hidden, rng),
                },
                2 * s.hidden,
            ),
            Variant::Transformer => {
                if !s.embedding_size.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "transformer embedding size must be even, got {}",
                        s.embedding_size
                    )));
                }
                let blocks = (0..s.depth)
                    .map(|i| {
                        TransformerBlock::new(
                            store,
                            &format!("{name}.block{i}"),
                            s.embedding_size,
                            s.num_heads,
                            s.ff_dim,
                            rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                (EncoderBlock::Transformer(blocks), s.embedding_size)
            }
        };
        Ok(ChannelEncoder {
            embedding,
            block,
            output_width,
        })
    }

    /// Encodes one token id sequence into a `[1 × output_width]` row.
    ///
    /// Padding ids are masked out; trailing padding is trimmed first, which
    /// does not change the result.
    pub fn encode(&self, g: &mut Graph<'_>, p: &Bound, ids: &[u32]) -> Result<Var> {
        let end = ids.iter().rposition(|&id| id != PAD_ID).map_or(0, |i| i + 1);
        if end == 0 {
            return Err(Error::EmptySequence);
        }
        let ids = &ids[..end];
        let mask: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
        let x = self.embedding.embed(g, p, ids)?;
        match &self.block {
            EncoderBlock::Cnn(conv) => {
                let k = conv.kernel_size;
                if ids.len() < k {
                    return Err(Error::SequenceTooShort {
                        len: ids.len(),
                        required: k,
                    });
                }
                let y = conv.forward(g, p, x)?;
                let y = g.relu(y);
                let windows: Vec<bool> = (0..ids.len() - k + 1).map(|t| mask[t..t + k].iter().all(|&m| m)).collect();
                pool_mean(g, y, &windows)
            }
            EncoderBlock::Bigru { forward, backward } => bigru_encode(g, p, forward, backward, x, &mask),
            EncoderBlock::Transformer(blocks) => {
                let pe = positional_encoding(ids.len(), self.embedding.dim)?;
                let pe = g.constant(pe);
                let mut h = g.add(x, pe)?;
                for b in blocks {
                    h = b.forward(g, p, h, &mask)?;
                }
                pool_mean(g, h, &mask)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn settings(variant: Variant) -> EncoderSettings {
        EncoderSettings {
            variant,
            embedding_size: 4,
            kernel_size: 3,
            num_heads: 2,
            filters: 5,
            hidden: 3,
            ff_dim: 6,
            depth: 1,
        }
    }

    #[test]
    fn output_width_is_fixed_and_padding_invariant() {
        for v in Variant::ALL {
            let mut store = ParamStore::new();
            let mut r = rng::stream(1, "enc");
            let enc = ChannelEncoder::new(&mut store, "ch", 12, &settings(v), &mut r).unwrap();
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let short = enc.encode(&mut g, &p, &[3, 5, 7, 2, 9]).unwrap();
            let padded = enc.encode(&mut g, &p, &[3, 5, 7, 2, 9, 0, 0, 0, 0]).unwrap();
            let longer = enc.encode(&mut g, &p, &[3, 5, 7, 2, 9, 4, 4, 11, 10, 6]).unwrap();
            assert_eq!(g.value(short).shape(), &[1, enc.output_width]);
            assert_eq!(g.value(longer).shape(), &[1, enc.output_width]);
            for (a, b) in g.value(short).data().iter().zip(g.value(padded).data()) {
                assert!((a - b).abs() < 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn all_padding_is_empty_sequence() {
        for v in Variant::ALL {
            let mut store = ParamStore::new();
            let mut r = rng::stream(1, "enc");
            let enc = ChannelEncoder::new(&mut store, "ch", 12, &settings(v), &mut r).unwrap();
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            assert!(matches!(enc.encode(&mut g, &p, &[0, 0, 0]), Err(Error::EmptySequence)));
        }
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("lstm".parse::<Variant>().is_err());
    }
}
