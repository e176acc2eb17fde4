//! Product-name sentence embeddings and the combined product+name embedding.
//!
//! Each product name is treated as a basket of its tokens and fed to the same
//! trainer as shopping trips; a name's sentence vector is the mean of its
//! token `rho` rows.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Catalog;
use crate::efemb::{self, EmbeddingPair, TrainConfig, TrainReport, TrainingSet};
use crate::linalg::{axpy, normalize};
use crate::store::EmbeddingTable;
use crate::{Error, Result};

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(name: &str) -> Vec<String> {
    name.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token strings with dense ids `0..len`, assigned in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, u64>,
}

impl TokenVocab {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = tokens.into_iter().collect();
        tokens.sort();
        tokens.dedup();
        if tokens.iter().any(String::is_empty) {
            return Err(Error::InvalidArgument("empty token in vocabulary".into()));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u64)).collect();
        Ok(TokenVocab { tokens, index })
    }

    /// Tokens that occur in at least `min_count` distinct product names.
    pub fn build(catalog: &Catalog, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for p in catalog.values() {
            let mut toks = tokenize(&p.name);
            toks.sort();
            toks.dedup();
            for t in toks {
                *counts.entry(t).or_default() += 1;
            }
        }
        counts.retain(|_, c| *c >= min_count);
        Self::from_tokens(counts.into_keys()).expect("tokenizer never yields empty tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u64> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u64) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// In-vocabulary token ids of `name`, duplicates removed, ascending.
    pub fn encode(&self, name: &str) -> Vec<u64> {
        let mut ids: Vec<u64> = tokenize(name).iter().filter_map(|t| self.id(t)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        for (i, w) in tokens.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: "tokens must be unique and sorted".into(),
                });
            }
        }
        Self::from_tokens(tokens).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Token-level embeddings; rows of `pair` are keyed by token id.
#[derive(Debug, Clone)]
pub struct TokenEmbeddings {
    pub vocab: TokenVocab,
    pub pair: EmbeddingPair,
}

/// Trains token embeddings with every product name as one basket of tokens.
/// Names with fewer than two in-vocabulary tokens provide no context and are dropped.
pub fn train_name_embeddings(catalog: &Catalog, config: &TrainConfig) -> Result<(TokenEmbeddings, TrainReport)> {
    config.validate()?;
    let vocab = TokenVocab::build(catalog, config.min_count);
    if vocab.len() < 2 {
        return Err(Error::Empty(format!(
            "product names contain {} distinct tokens with min_count {}; need at least 2",
            vocab.len(),
            config.min_count
        )));
    }
    let mut counts = vec![0usize; vocab.len()];
    let mut baskets = Vec::new();
    for p in catalog.values() {
        let ids = vocab.encode(&p.name);
        ids.iter().for_each(|&t| counts[t as usize] += 1);
        if ids.len() >= 2 {
            baskets.push(ids.into_iter().map(|t| t as usize).collect::<Vec<_>>());
        }
    }
    if baskets.is_empty() {
        return Err(Error::Empty(
            "no product name has two or more in-vocabulary tokens to train on".into(),
        ));
    }
    let dropped = catalog.len() - baskets.len();
    if dropped > 0 {
        log::info!("{dropped} product names have fewer than two tokens and give no context");
    }
    let set = TrainingSet {
        ids: (0..vocab.len() as u64).collect(),
        counts,
        baskets,
    };
    let (pair, report) = efemb::train_on(&set, config)?;
    Ok((TokenEmbeddings { vocab, pair }, report))
}

/// Sentence vectors for many names; counts names with no known token.
#[derive(Debug)]
pub struct SentenceEncoder<'a> {
    tokens: &'a TokenEmbeddings,
    all_oov: usize,
}

impl<'a> SentenceEncoder<'a> {
    pub fn new(tokens: &'a TokenEmbeddings) -> Self {
        SentenceEncoder { tokens, all_oov: 0 }
    }

    pub fn dim(&self) -> usize {
        self.tokens.pair.dim()
    }

    /// Mean of the `rho` rows of the name's in-vocabulary tokens (each
    /// distinct token once); zero when none are known.
    pub fn encode(&mut self, name: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        let mut used = 0usize;
        for id in self.tokens.vocab.encode(name) {
            if let Some(r) = self.tokens.pair.rho_of(id) {
                axpy(1.0, r, &mut acc);
                used += 1;
            }
        }
        if used == 0 {
            self.all_oov += 1;
            return acc;
        }
        let inv = 1.0 / used as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
        acc
    }

    /// Names encoded so far that had no in-vocabulary token.
    pub fn oov_names(&self) -> usize {
        self.all_oov
    }
}

/// Sentence vector for every catalog product, keyed by product id.
pub fn sentence_table(catalog: &Catalog, tokens: &TokenEmbeddings) -> Result<(EmbeddingTable, usize)> {
    let mut enc = SentenceEncoder::new(tokens);
    let rows: Vec<(u64, Vec<f64>)> = catalog.values().map(|p| (p.product_id, enc.encode(&p.name))).collect();
    if enc.oov_names() > 0 {
        log::warn!("{} product names have no known token; their sentence vector is zero", enc.oov_names());
    }
    Ok((EmbeddingTable::from_rows(rows)?, enc.oov_names()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedMeta {
    pub product_dim: usize,
    pub sentence_dim: usize,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEmbedding {
    pub product_id: u64,
    pub vector: Vec<f64>,
    pub meta: CombinedMeta,
}

impl CombinedEmbedding {
    pub fn product_block(&self) -> &[f64] {
        &self.vector[..self.meta.product_dim]
    }

    pub fn sentence_block(&self) -> &[f64] {
        &self.vector[self.meta.product_dim..]
    }
}

/// `[rho || sentence]`, each block scaled to unit length first when `normalize`.
pub fn combine(product_id: u64, pair: &EmbeddingPair, sentence: &[f64], normalize_blocks: bool) -> Result<CombinedEmbedding> {
    let rho = pair
        .rho_of(product_id)
        .ok_or_else(|| Error::UnknownId {
            id: product_id.to_string(),
            suggestions: Vec::new(),
        })?;
    let mut p = rho.to_vec();
    let mut s = sentence.to_vec();
    if normalize_blocks {
        normalize(&mut p);
        normalize(&mut s);
    }
    let meta = CombinedMeta {
        product_dim: p.len(),
        sentence_dim: s.len(),
        normalized: normalize_blocks,
    };
    p.extend_from_slice(&s);
    Ok(CombinedEmbedding {
        product_id,
        vector: p,
        meta,
    })
}

/// Combined embeddings of every product that has both a `rho` row and a
/// sentence vector.
pub fn combine_all(pair: &EmbeddingPair, sentences: &EmbeddingTable, normalize_blocks: bool) -> Result<(EmbeddingTable, CombinedMeta)> {
    let mut rows = Vec::new();
    let mut missing = 0usize;
    for &id in pair.ids() {
        match sentences.get(id) {
            Some(s) => rows.push(combine(id, pair, s, normalize_blocks)?.vector),
            None => {
                missing += 1;
                continue;
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} products have no sentence vector and were left out");
    }
    let ids: Vec<u64> = pair.ids().iter().copied().filter(|id| sentences.get(*id).is_some()).collect();
    if ids.is_empty() {
        return Err(Error::Empty("no product has both a rho row and a sentence vector".into()));
    }
    let meta = CombinedMeta {
        product_dim: pair.dim(),
        sentence_dim: sentences.dim(),
        normalized: normalize_blocks,
    };
    Ok((EmbeddingTable::from_rows(ids.into_iter().zip(rows))?, meta))
}

pub fn save_meta(path: &Path, meta: &CombinedMeta) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).expect("plain struct serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_meta(path: &Path) -> Result<CombinedMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Product;
    use crate::linalg::{cosine_similarity, Matrix};

    fn product_pair(rows: &[(u64, &[f64])]) -> EmbeddingPair {
        let d = rows[0].1.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
        EmbeddingPair::new(
            rows.iter().map(|r| r.0).collect(),
            Matrix::from_vec(rows.len(), d, flat),
            Matrix::zeros(rows.len(), d),
        )
        .unwrap()
    }

    fn token_embeddings(tokens: &[&str], rho: &[&[f64]]) -> TokenEmbeddings {
        let vocab = TokenVocab::from_tokens(tokens.iter().map(|t| t.to_string())).unwrap();
        let rows: Vec<(u64, &[f64])> = tokens
            .iter()
            .zip(rho)
            .map(|(t, r)| (vocab.id(t).unwrap(), *r))
            .collect();
        let mut sorted = rows.clone();
        sorted.sort_by_key(|r| r.0);
        TokenEmbeddings {
            vocab,
            pair: product_pair(&sorted),
        }
    }

    #[test]
    fn tokenizer_cases() {
        assert_eq!(tokenize("Lay's sour"), ["lay", "s", "sour"]);
        assert_eq!(tokenize("Coke"), ["coke"]);
        assert!(tokenize("---").is_empty());
        assert_eq!(tokenize("  Diet--COKE 12oz "), ["diet", "coke", "12oz"]);
    }

    #[test]
    fn vocab_ids_are_dense_and_sorted() {
        let v = TokenVocab::from_tokens(["b", "a", "c", "a"].map(String::from)).unwrap();
        assert_eq!(v.tokens(), ["a", "b", "c"]);
        assert_eq!(v.id("c"), Some(2));
        assert_eq!(v.token(1), Some("b"));
        assert_eq!(v.encode("C b x B"), vec![1, 2]);
    }

    #[test]
    fn sentence_means() {
        let te = token_embeddings(&["x", "y"], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut enc = SentenceEncoder::new(&te);
        assert_eq!(enc.encode("X"), vec![1.0, 0.0]);
        assert_eq!(enc.encode("x y"), vec![0.5, 0.5]);
        assert_eq!(enc.encode("y x"), enc.encode("x y"));
        assert_eq!(enc.oov_names(), 0);
        assert_eq!(enc.encode("zzz"), vec![0.0, 0.0]);
        assert_eq!(enc.oov_names(), 1);
    }

    #[test]
    fn combine_concatenates() {
        let pair = product_pair(&[(7, &[1.0, 0.0])]);
        let c = combine(7, &pair, &[0.0, 2.0], false).unwrap();
        assert_eq!(c.vector, vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(c.product_block(), &[1.0, 0.0]);
        assert_eq!(c.sentence_block(), &[0.0, 2.0]);
        let n = combine(7, &pair, &[0.0, 2.0], true).unwrap();
        assert_eq!(n.vector, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(n.meta.normalized);
        let z = combine(7, &pair, &[0.0, 0.0], true).unwrap();
        assert_eq!(z.sentence_block(), &[0.0, 0.0]);
        assert!(combine(8, &pair, &[0.0, 2.0], false).is_err());
    }

    #[test]
    fn normalized_cosine_is_mean_of_block_cosines() {
        let pair = product_pair(&[(1, &[1.0, 2.0, -1.0]), (2, &[0.5, -1.0, 3.0])]);
        let (s1, s2) = ([0.3, 4.0], [-2.0, 1.0]);
        let a = combine(1, &pair, &s1, true).unwrap();
        let b = combine(2, &pair, &s2, true).unwrap();
        let expected = 0.5
            * (cosine_similarity(pair.rho_of(1).unwrap(), pair.rho_of(2).unwrap())
                + cosine_similarity(&s1, &s2));
        assert!((cosine_similarity(&a.vector, &b.vector) - expected).abs() < 1e-12);
    }

    #[test]
    fn single_token_names_cannot_train() {
        let catalog: Catalog = (0..20)
            .map(|i| {
                (
                    i,
                    Product {
                        product_id: i,
                        name: format!("item{}", i % 4),
                        department: "D".into(),
                    },
                )
            })
            .collect();
        let cfg = TrainConfig {
            dim: 4,
            epochs: 1,
            n_negative: 1,
            min_count: 1,
            ..Default::default()
        };
        assert!(matches!(train_name_embeddings(&catalog, &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.txt");
        let v = TokenVocab::from_tokens(["milk", "2pct", "coke"].map(String::from)).unwrap();
        v.save(&path).unwrap();
        assert_eq!(TokenVocab::load(&path).unwrap(), v);
        fs::write(&path, "b\na\n").unwrap();
        assert!(TokenVocab::load(&path).is_err());
    }
}
