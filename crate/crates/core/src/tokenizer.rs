//! Overlapping amino-acid n-grams (trigrams by default) and the vocabulary
//! that maps them to embedding ids.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// Window length used throughout.
pub const NGRAM: usize = 3;
pub const VOCAB_FORMAT_VERSION: u32 = 1;

/// The 20 standard residues plus the ambiguity codes B, J, X and Z.
pub const ALPHABET: &[u8] = b"ACDEFGHIKLMNPQRSTVWYBJXZ";

pub const DEFAULT_MAX_LEN_HA: usize = 600;
pub const DEFAULT_MAX_LEN_NA: usize = 500;

pub fn is_residue(c: char) -> bool {
    c.is_ascii() && ALPHABET.contains(&(c as u8))
}

/// Uppercases and drops stop symbols (`*`), gaps (`-`) and whitespace.
pub fn normalize_sequence(raw: &str) -> String {
    raw.chars()
        .filter(|c| !matches!(c, '*' | '-') && !c.is_whitespace())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

pub fn validate_sequence(seq: &str) -> Result<()> {
    match seq.chars().enumerate().find(|(_, c)| !is_residue(c.to_ascii_uppercase())) {
        Some((offset, residue)) => Err(Error::Alphabet { residue, offset }),
        None => Ok(()),
    }
}

/// All `len − n + 1` overlapping windows of `seq`, stride one, in order.
pub fn extract_ngrams(seq: &str, n: usize) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Contract("n-gram length must be positive".into()));
    }
    validate_sequence(seq)?;
    let residues: Vec<char> = seq.chars().map(|c| c.to_ascii_uppercase()).collect();
    if residues.len() < n {
        return Err(Error::SequenceTooShort {
            len: residues.len(),
            required: n,
        });
    }
    Ok(residues.windows(n).map(|w| w.iter().collect()).collect())
}

/// Normalizes then windows a raw sequence.
pub fn tokenize(raw: &str, n: usize) -> Result<Vec<String>> {
    extract_ngrams(&normalize_sequence(raw), n)
}

/// Bijection between observed n-grams and contiguous ids starting at 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrigramVocab {
    n: usize,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    n: usize,
    tokens: Vec<String>,
}

impl TrigramVocab {
    /// Assigns ids in order of first occurrence across `corpus`.
    pub fn build(corpus: &[Vec<String>]) -> Result<Self> {
        Self::build_n(NGRAM, corpus)
    }

    pub fn build_n(n: usize, corpus: &[Vec<String>]) -> Result<Self> {
        if corpus.iter().all(Vec::is_empty) {
            return Err(Error::Contract("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut v = TrigramVocab {
            n,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for tok in corpus.iter().flatten() {
            if !v.index.contains_key(tok) {
                v.check_token(tok)?;
                v.index.insert(tok.clone(), v.tokens.len() as u32 + 2);
                v.tokens.push(tok.clone());
            }
        }
        Ok(v)
    }

    fn check_token(&self, tok: &str) -> Result<()> {
        if tok.chars().count() != self.n {
            return Err(Error::Contract(format!(
                "token {tok:?} does not have length {}",
                self.n
            )));
        }
        if let Some((offset, residue)) = tok.chars().enumerate().find(|(_, c)| !is_residue(*c)) {
            return Err(Error::Alphabet { residue, offset });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of embedding rows: reserved ids plus tokens.
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Known tokens map to their id, unseen ones to [`UNK_ID`]; the result is
    /// right-padded with [`PAD_ID`] or truncated to `max_len`.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<u32> {
        if tokens.len() > max_len {
            log::debug!("truncating {} tokens to {max_len}", tokens.len());
        }
        let mut ids: Vec<u32> = tokens
            .iter()
            .take(max_len)
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect();
        ids.resize(max_len, PAD_ID);
        ids
    }

    /// Inverse of [`encode`](Self::encode) with padding stripped; unknown ids decode as `"<unk>"`.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD_ID)
            .map(|&id| match id {
                UNK_ID => "<unk>".to_string(),
                _ => self
                    .tokens
                    .get(id as usize - 2)
                    .cloned()
                    .unwrap_or_else(|| "<unk>".to_string()),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile {
            version: VOCAB_FORMAT_VERSION,
            n: self.n,
            tokens: self.tokens.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text)?;
        if f.version != VOCAB_FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported vocabulary version {}",
                f.version
            )));
        }
        let mut v = TrigramVocab {
            n: f.n,
            tokens: Vec::with_capacity(f.tokens.len()),
            index: HashMap::with_capacity(f.tokens.len()),
        };
        for tok in f.tokens {
            v.check_token(&tok)?;
            if v.index.insert(tok.clone(), v.tokens.len() as u32 + 2).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token {tok:?}")));
            }
            v.tokens.push(tok);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
