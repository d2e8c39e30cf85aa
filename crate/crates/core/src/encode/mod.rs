//! Semantic inputs: token-index sequences and precomputed embedding vectors.
//!
//! Both kinds end up as one real-valued channel per sample, which is what
//! the convolutional stack consumes.

mod embedding;
mod lexer;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embedding::{aggregate_mean, aggregate_sum, load_embedding_file, read_embedding_csv, Aggregation, EmbeddingTable};
pub use lexer::tokenize_java;

/// Which upstream representation feeds the semantic branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    TokenIndex,
    Code2vec,
    Cubert,
    Codebert,
}

impl Encoder {
    /// How unit vectors sharing a sample prefix are combined.
    pub fn aggregation(self) -> Option<Aggregation> {
        match self {
            Encoder::TokenIndex => None,
            Encoder::Code2vec => Some(Aggregation::Mean),
            Encoder::Cubert => Some(Aggregation::Sum),
            Encoder::Codebert => Some(Aggregation::Single),
        }
    }
}

impl std::str::FromStr for Encoder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "token_index" | "tokens" => Ok(Encoder::TokenIndex),
            "code2vec" => Ok(Encoder::Code2vec),
            "cubert" => Ok(Encoder::Cubert),
            "codebert" => Ok(Encoder::Codebert),
            other => Err(format!("unknown encoder `{other}`")),
        }
    }
}

/// Token vocabulary. Ids are dense from 1; 0 is padding and `len + 1` is
/// the out-of-vocabulary id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocab {
    fn from(f: VocabFile) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in f.tokens {
            v.insert(t);
        }
        v
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile { tokens: v.tokens }
    }
}

impl Vocab {
    fn insert(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.tokens.push(token.clone());
            self.index.insert(token, self.tokens.len() as u32);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.tokens.len() as u32 + 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.unk_id())
    }
}

/// Assigns ids in first-seen order over the training token lists.
pub fn build_vocab<S: AsRef<str>>(token_lists: &[Vec<S>]) -> Result<Vocab> {
    if token_lists.is_empty() {
        return Err(Error::EmptyCorpus("cannot build a vocabulary from zero samples".into()));
    }
    let mut v = Vocab {
        tokens: Vec::new(),
        index: HashMap::new(),
    };
    for list in token_lists {
        for t in list {
            v.insert(t.as_ref().to_string());
        }
    }
    Ok(v)
}

/// Padded length: the longest length within one population standard
/// deviation of the mean. Falls back to the overall maximum if nothing is
/// retained.
pub fn compute_padded_length(lengths: &[usize]) -> usize {
    if lengths.is_empty() {
        return 0;
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().map(|&l| l as f64).sum::<f64>() / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    lengths
        .iter()
        .copied()
        .filter(|&l| (l as f64 - mean).abs() <= std)
        .max()
        .or_else(|| lengths.iter().copied().max())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub sample_id: String,
    pub indices: Vec<u32>,
    pub true_length: usize,
}

/// Maps tokens to ids, truncating at the tail and right-padding with 0.
pub fn index_and_pad<S: AsRef<str>>(sample_id: &str, tokens: &[S], vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::Config("padded length must be at least 1".into()));
    }
    let mut indices: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.id(t.as_ref())).collect();
    let true_length = indices.len();
    indices.resize(max_len, 0);
    Ok(TokenSequence {
        sample_id: sample_id.to_string(),
        indices,
        true_length,
    })
}

/// Fitted token-index encoding: vocabulary plus padded length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenState {
    pub vocab: Vocab,
    pub padded_length: usize,
}

impl TokenState {
    pub fn fit<S: AsRef<str>>(train_tokens: &[Vec<S>]) -> Result<Self> {
        let vocab = build_vocab(train_tokens)?;
        let lengths: Vec<usize> = train_tokens.iter().map(Vec::len).collect();
        let padded_length = compute_padded_length(&lengths).max(1);
        Ok(Self { vocab, padded_length })
    }

    pub fn encode<S: AsRef<str>>(&self, sample_id: &str, tokens: &[S]) -> Result<TokenSequence> {
        index_and_pad(sample_id, tokens, &self.vocab, self.padded_length)
    }
}

/// Uniform semantic input for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedInput {
    Tokens(TokenSequence),
    Vector(Vec<f64>),
}

impl EncodedInput {
    /// The single input channel: token ids cast to reals, or the vector itself.
    pub fn channel(&self) -> Vec<f64> {
        match self {
            EncodedInput::Tokens(t) => t.indices.iter().map(|&i| f64::from(i)).collect(),
            EncodedInput::Vector(v) => v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EncodedInput::Tokens(t) => t.indices.len(),
            EncodedInput::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Writes padded sequences as `sample_id,t0,t1,...`.
pub fn write_token_csv<W: std::io::Write>(seqs: &[TokenSequence], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for s in seqs {
        let mut rec = vec![s.sample_id.clone()];
        rec.extend(s.indices.iter().map(u32::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<tokens>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocab_first_seen_with_unk() {
        let v = build_vocab(&[vec!["a", "b", "a", "c"]]).unwrap();
        assert_eq!((v.id("a"), v.id("b"), v.id("c")), (1, 2, 3));
        assert_eq!(v.id("d"), 4);
        assert!(build_vocab::<&str>(&[]).is_err());
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"tokens":["a","b","c"]}"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn padded_length_examples() {
        assert_eq!(compute_padded_length(&[10, 12, 11, 50]), 12);
        assert_eq!(compute_padded_length(&[7, 7, 7, 7]), 7);
        // mean 28.75, std 41.14: 100 deviates by 71.25 and is excluded
        assert_eq!(compute_padded_length(&[5, 5, 5, 100]), 5);
    }

    #[test]
    fn index_and_pad_cases() {
        let v = build_vocab(&[vec!["a", "b"]]).unwrap();
        let s = index_and_pad("s", &["a", "b"], &v, 4).unwrap();
        assert_eq!(s.indices, vec![1, 2, 0, 0]);
        assert_eq!(s.true_length, 2);
        let s = index_and_pad("s", &["a", "b", "a", "b", "a", "b"], &v, 4).unwrap();
        assert_eq!(s.indices, vec![1, 2, 1, 2]);
        assert_eq!(s.true_length, 4);
        let s = index_and_pad::<&str>("s", &[], &v, 4).unwrap();
        assert_eq!(s.indices, vec![0; 4]);
        assert!(index_and_pad("s", &["a"], &v, 0).is_err());
    }

    #[test]
    fn encoder_names() {
        assert_eq!("CuBERT".parse::<Encoder>().unwrap(), Encoder::Cubert);
        assert_eq!("token-index".parse::<Encoder>().unwrap(), Encoder::TokenIndex);
        assert!("word2vec".parse::<Encoder>().is_err());
    }

    proptest! {
        #[test]
        fn padding_invariants(lists in prop::collection::vec(prop::collection::vec("[a-e]", 0..30), 2..20)) {
            let state = TokenState::fit(&lists).unwrap();
            for (i, l) in lists.iter().enumerate() {
                let s = state.encode(&i.to_string(), l).unwrap();
                prop_assert_eq!(s.indices.len(), state.padded_length);
                prop_assert!(s.indices[s.true_length..].iter().all(|&x| x == 0));
                prop_assert!(s.indices[..s.true_length].iter().all(|&x| x >= 1));
            }
        }

        #[test]
        fn vocab_stable_when_encoding_test(train in prop::collection::vec(prop::collection::vec("[a-f]", 1..10), 1..8),
                                          test in prop::collection::vec("[a-z]", 1..20)) {
            let state = TokenState::fit(&train).unwrap();
            let before = state.vocab.clone();
            let _ = state.encode("t", &test).unwrap();
            prop_assert_eq!(&state.vocab, &before);
        }
    }
}
