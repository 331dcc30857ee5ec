//! The multi-channel network: HA and NA channels, concatenation, and three
//! softmax heads (host, HA subtype, NA subtype).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelSchema, StrainRecord};
use crate::error::{Error, Result};
use crate::layers::{ChannelEncoder, Dense, EncoderSettings, Variant};
use crate::params::{Bound, ParamStore};
use crate::rng;
use crate::tape::{softmax, Graph, Var};
use crate::tensor::Tensor;
use crate::tokenizer::{
    tokenize, TrigramVocab, DEFAULT_MAX_LEN_HA, DEFAULT_MAX_LEN_NA, NGRAM, PAD_ID,
};

/// Unpadded token ids of one sequence.
pub type Ids = Vec<u32>;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MCNNCKPT";

/// Head order used throughout: host, HA subtype, NA subtype.
pub const HEADS: [&str; 3] = ["host", "ha_subtype", "na_subtype"];

fn default_filters() -> usize {
    64
}
fn default_hidden() -> usize {
    64
}
fn default_ff_dim() -> usize {
    128
}
fn default_depth() -> usize {
    1
}
fn default_max_len_ha() -> usize {
    DEFAULT_MAX_LEN_HA
}
fn default_max_len_na() -> usize {
    DEFAULT_MAX_LEN_NA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McnnConfig {
    pub variant: Variant,
    pub embedding_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_heads: Option<usize>,
    pub learning_rate: f64,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_ff_dim")]
    pub ff_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_len_ha")]
    pub max_len_ha: usize,
    #[serde(default = "default_max_len_na")]
    pub max_len_na: usize,
}

impl McnnConfig {
    /// Smallest point of the variant's hyperparameter grid.
    pub fn new(variant: Variant) -> Self {
        McnnConfig {
            variant,
            embedding_size: if variant == Variant::Transformer { 32 } else { 50 },
            kernel_size: (variant == Variant::Cnn).then_some(3),
            num_heads: (variant == Variant::Transformer).then_some(1),
            learning_rate: 0.001,
            filters: default_filters(),
            hidden: default_hidden(),
            ff_dim: default_ff_dim(),
            depth: default_depth(),
            seed: 0,
            max_len_ha: DEFAULT_MAX_LEN_HA,
            max_len_na: DEFAULT_MAX_LEN_NA,
        }
    }

    /// Every rule the configuration breaks, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("embedding_size", self.embedding_size),
            ("filters", self.filters),
            ("hidden", self.hidden),
            ("ff_dim", self.ff_dim),
            ("depth", self.depth),
            ("max_len_ha", self.max_len_ha),
            ("max_len_na", self.max_len_na),
        ];
        for (name, value) in positive {
            if value == 0 {
                v.push(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        match (self.variant, self.kernel_size) {
            (Variant::Cnn, None) => v.push("kernel_size is required for the cnn variant".into()),
            (Variant::Cnn, Some(0)) => v.push("kernel_size must be positive".into()),
            (Variant::Cnn, Some(_)) => {}
            (other, Some(_)) => v.push(format!("kernel_size does not apply to the {other} variant")),
            (_, None) => {}
        }
        match (self.variant, self.num_heads) {
            (Variant::Transformer, None) => v.push("num_heads is required for the transformer variant".into()),
            (Variant::Transformer, Some(h)) => {
                if h == 0 || !self.embedding_size.is_multiple_of(h) {
                    v.push(format!(
                        "embedding_size {} is not divisible by num_heads {h}",
                        self.embedding_size
                    ));
                }
                if !self.embedding_size.is_multiple_of(2) {
                    v.push(format!(
                        "transformer embedding_size must be even, got {}",
                        self.embedding_size
                    ));
                }
            }
            (other, Some(_)) => v.push(format!("num_heads does not apply to the {other} variant")),
            (_, None) => {}
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    fn encoder_settings(&self) -> EncoderSettings {
        EncoderSettings {
            variant: self.variant,
            embedding_size: self.embedding_size,
            kernel_size: self.kernel_size.unwrap_or(0),
            num_heads: self.num_heads.unwrap_or(1),
            filters: self.filters,
            hidden: self.hidden,
            ff_dim: self.ff_dim,
            depth: self.depth,
        }
    }
}

/// One encoded example. Id sequences carry no padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub ha: Option<Vec<u32>>,
    pub na: Option<Vec<u32>>,
    pub labels: [usize; 3],
}

/// Argmax classes and their probabilities, one per head.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub classes: [usize; 3],
    pub confidences: [f64; 3],
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct McnnModel {
    pub config: McnnConfig,
    pub schema: LabelSchema,
    pub ha_vocab: TrigramVocab,
    pub na_vocab: TrigramVocab,
    pub params: ParamStore,
    pub ha_channel: ChannelEncoder,
    pub na_channel: ChannelEncoder,
    pub heads: [Dense; 3],
}

impl McnnModel {
    /// Fresh model with parameters drawn from the config seed.
    pub fn new(config: McnnConfig, schema: LabelSchema, ha_vocab: TrigramVocab, na_vocab: TrigramVocab) -> Result<Self> {
        config.validate()?;
        if ha_vocab.n() != NGRAM || na_vocab.n() != NGRAM {
            return Err(Error::Contract(format!("vocabularies must use n = {NGRAM}")));
        }
        let mut r = rng::stream(config.seed, "model/init");
        let mut params = ParamStore::new();
        let settings = config.encoder_settings();
        let ha_channel = ChannelEncoder::new(&mut params, "ha", ha_vocab.size(), &settings, &mut r)?;
        let na_channel = ChannelEncoder::new(&mut params, "na", na_vocab.size(), &settings, &mut r)?;
        let width = ha_channel.output_width + na_channel.output_width;
        let [h, a, n] = schema.class_counts();
        let heads = [
            Dense::new(&mut params, "head.host", width, h, &mut r),
            Dense::new(&mut params, "head.ha", width, a, &mut r),
            Dense::new(&mut params, "head.na", width, n, &mut r),
        ];
        Ok(McnnModel {
            config,
            schema,
            ha_vocab,
            na_vocab,
            params,
            ha_channel,
            na_channel,
            heads,
        })
    }

    /// Builds both vocabularies from `train` only, then initialises a model.
    pub fn for_training(config: McnnConfig, schema: LabelSchema, train: &[StrainRecord]) -> Result<Self> {
        let (ha_vocab, na_vocab) = build_vocabs(train)?;
        Self::new(config, schema, ha_vocab, na_vocab)
    }

    /// Token ids for raw HA/NA sequences, unpadded and truncated to the configured maxima.
    pub fn encode_inputs(&self, ha: Option<&str>, na: Option<&str>) -> Result<(Option<Ids>, Option<Ids>)> {
        let enc = |seq: Option<&str>, vocab: &TrigramVocab, max_len: usize| -> Result<Option<Vec<u32>>> {
            seq.map(|s| {
                let toks = tokenize(s, NGRAM)?;
                let mut ids = vocab.encode(&toks, max_len);
                ids.truncate(toks.len().min(max_len));
                Ok(ids)
            })
            .transpose()
        };
        Ok((
            enc(ha, &self.ha_vocab, self.config.max_len_ha)?,
            enc(na, &self.na_vocab, self.config.max_len_na)?,
        ))
    }

    pub fn labels_of(&self, r: &StrainRecord) -> Result<[usize; 3]> {
        let missing = |what: &str, v: &str| Error::Label(format!("{}: {what} {v:?} is not in the label schema", r.strain_id));
        Ok([
            self.schema.host_index(&r.host_class).ok_or_else(|| missing("host", &r.host_class))?,
            self.schema.ha_index(&r.ha_subtype).ok_or_else(|| missing("HA subtype", &r.ha_subtype))?,
            self.schema.na_index(&r.na_subtype).ok_or_else(|| missing("NA subtype", &r.na_subtype))?,
        ])
    }

    pub fn sample(&self, r: &StrainRecord) -> Result<Sample> {
        let (ha, na) = self.encode_inputs(r.ha_seq.as_deref(), r.na_seq.as_deref())?;
        Ok(Sample {
            ha,
            na,
            labels: self.labels_of(r)?,
        })
    }

    pub fn samples(&self, records: &[StrainRecord]) -> Result<Vec<Sample>> {
        records.iter().map(|r| self.sample(r)).collect()
    }

    /// Concatenated channel features `[1 × width]`; an absent channel
    /// contributes zeros.
    fn features(&self, g: &mut Graph<'_>, p: &Bound, ha: Option<&[u32]>, na: Option<&[u32]>) -> Result<Var> {
        if ha.is_none() && na.is_none() {
            return Err(Error::Contract("at least one of the HA and NA channels must be present".into()));
        }
        let mut channel = |enc: &ChannelEncoder, ids: Option<&[u32]>| match ids {
            Some(ids) => enc.encode(g, p, ids),
            None => Ok(g.constant(Tensor::zeros(&[1, enc.output_width]))),
        };
        let h = channel(&self.ha_channel, ha)?;
        let n = channel(&self.na_channel, na)?;
        g.concat_cols(&[h, n])
    }

    /// Logits `[batch × classes]` for each head.
    pub fn logits(&self, g: &mut Graph<'_>, p: &Bound, batch: &[&Sample]) -> Result<[Var; 3]> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let rows = batch
            .iter()
            .map(|s| self.features(g, p, s.ha.as_deref(), s.na.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        let x = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
        Ok([
            self.heads[0].forward(g, p, x)?,
            self.heads[1].forward(g, p, x)?,
            self.heads[2].forward(g, p, x)?,
        ])
    }

    /// Sum of the three heads' cross-entropies, each averaged over the batch.
    pub fn loss(&self, g: &mut Graph<'_>, p: &Bound, batch: &[&Sample]) -> Result<Var> {
        let logits = self.logits(g, p, batch)?;
        let mut total = None;
        for (h, l) in logits.into_iter().enumerate() {
            let targets: Vec<usize> = batch.iter().map(|s| s.labels[h]).collect();
            let ce = g.softmax_cross_entropy(l, &targets).map_err(|e| match e {
                Error::LabelIndex { row, target, classes } => Error::Label(format!(
                    "{} label {target} of batch row {row} exceeds {classes} classes",
                    HEADS[h]
                )),
                other => other,
            })?;
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce)?,
            });
        }
        Ok(total.expect("three heads"))
    }

    /// Batch loss and its gradient with respect to every parameter, in
    /// declaration order.
    pub fn loss_and_grads(&self, batch: &[&Sample]) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let loss = self.loss(&mut g, &p, batch)?;
        g.backward(loss)?;
        let value = g.value(loss).item();
        let grads = self
            .params
            .tensors()
            .iter()
            .zip(p.vars())
            .map(|(t, &v)| match g.take_grad(v) {
                Some(d) => Tensor::new(t.shape().to_vec(), d).expect("gradient shape"),
                None => Tensor::zeros(t.shape()),
            })
            .collect();
        Ok((value, grads))
    }

    /// Per-head class probabilities for one input.
    pub fn forward(&self, ha: Option<&[u32]>, na: Option<&[u32]>) -> Result<[Vec<f64>; 3]> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = self.features(&mut g, &p, ha, na)?;
        let mut out: [Vec<f64>; 3] = Default::default();
        for (h, head) in self.heads.iter().enumerate() {
            let l = head.forward(&mut g, &p, x)?;
            out[h] = softmax(g.value(l).data());
        }
        Ok(out)
    }

    pub fn forward_sample(&self, s: &Sample) -> Result<[Vec<f64>; 3]> {
        self.forward(s.ha.as_deref(), s.na.as_deref())
    }

    pub fn predict(&self, ha: Option<&[u32]>, na: Option<&[u32]>) -> Result<Prediction> {
        let probs = self.forward(ha, na)?;
        Ok(prediction_from(&probs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            schema_toml: self.schema.to_toml(),
            ha_vocab: self.ha_vocab.to_json(),
            na_vocab: self.na_vocab.to_json(),
            ha_vocab_sha256: self.ha_vocab.fingerprint(),
            na_vocab_sha256: self.na_vocab.fingerprint(),
            params: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(n, t)| ParamEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an MC-NN checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let body = &bytes[20..];
        if hlen > body.len() as u64 {
            return Err(bad("truncated header"));
        }
        let (head, mut data) = body.split_at(hlen as usize);
        let header: CheckpointHeader =
            serde_json::from_slice(head).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let schema = LabelSchema::from_toml_str(&header.schema_toml).map_err(|e| Error::Checkpoint(format!("schema: {e}")))?;
        let ha_vocab = TrigramVocab::from_json(&header.ha_vocab).map_err(|e| Error::Checkpoint(format!("HA vocabulary: {e}")))?;
        let na_vocab = TrigramVocab::from_json(&header.na_vocab).map_err(|e| Error::Checkpoint(format!("NA vocabulary: {e}")))?;
        if ha_vocab.fingerprint() != header.ha_vocab_sha256 || na_vocab.fingerprint() != header.na_vocab_sha256 {
            return Err(bad("vocabulary does not match its recorded hash"));
        }
        let mut model = Self::new(header.config, schema, ha_vocab, na_vocab).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        if header.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint lists {} parameters, config builds {}",
                header.params.len(),
                model.params.len()
            )));
        }
        for (i, entry) in header.params.iter().enumerate() {
            let name = &model.params.names()[i];
            let t = &model.params.tensors()[i];
            if &entry.name != name || entry.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match config ({} {:?})",
                    entry.name,
                    entry.shape,
                    name,
                    t.shape()
                )));
            }
        }
        for t in model.params.tensors_mut() {
            let need = t.numel() * 8;
            if data.len() < need {
                return Err(bad("truncated parameter data"));
            }
            let (chunk, rest) = data.split_at(need);
            for (x, b) in t.data_mut().iter_mut().zip(chunk.chunks_exact(8)) {
                *x = f64::from_le_bytes(b.try_into().unwrap());
            }
            data = rest;
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(model)
    }

    /// Fails unless the model's vocabularies hash to the given fingerprints.
    pub fn check_vocabs(&self, ha_sha256: &str, na_sha256: &str) -> Result<()> {
        if self.ha_vocab.fingerprint() != ha_sha256 || self.na_vocab.fingerprint() != na_sha256 {
            return Err(Error::Checkpoint("vocabulary mismatch".into()));
        }
        Ok(())
    }
}

pub fn prediction_from(probs: &[Vec<f64>; 3]) -> Prediction {
    let classes = [argmax(&probs[0]), argmax(&probs[1]), argmax(&probs[2])];
    Prediction {
        classes,
        confidences: [probs[0][classes[0]], probs[1][classes[1]], probs[2][classes[2]]],
    }
}

/// HA and NA vocabularies over the sequences in `records`.
pub fn build_vocabs(records: &[StrainRecord]) -> Result<(TrigramVocab, TrigramVocab)> {
    let mut ha = Vec::new();
    let mut na = Vec::new();
    for r in records {
        if let Some(s) = &r.ha_seq {
            ha.push(tokenize(s, NGRAM)?);
        }
        if let Some(s) = &r.na_seq {
            na.push(tokenize(s, NGRAM)?);
        }
    }
    Ok((TrigramVocab::build(&ha)?, TrigramVocab::build(&na)?))
}

/// Drops padding from an id sequence.
pub fn strip_padding(ids: &[u32]) -> Vec<u32> {
    ids.iter().copied().filter(|&i| i != PAD_ID).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: McnnConfig,
    schema_toml: String,
    ha_vocab: String,
    na_vocab: String,
    ha_vocab_sha256: String,
    na_vocab_sha256: String,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}
