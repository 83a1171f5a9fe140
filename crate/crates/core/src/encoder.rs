// SPDX-License-Identifier: Apache-2.0

//! Base column encoder: token vectors averaged into cells, cells averaged
//! into a column.
//!
//! Two token backends are available. The hashing backend derives a
//! pseudo-random unit vector from each token and needs no external files;
//! the vector-file backend looks tokens up in a pretrained word-vector
//! table and falls back to hashing for out-of-vocabulary tokens.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::util::{combine, fnv1a};

pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Hashing,
    VectorFile,
}

/// How a cell is split into tokens before embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    /// Word-level tokens from [`tokenize`].
    Word,
    /// The whole cell is one token, its words joined by underscores.
    Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub backend: Backend,
    pub dim: usize,
    pub vector_file_path: Option<PathBuf>,
    pub hash_seed: u64,
    pub token_mode: TokenMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Hashing,
            dim: 128,
            vector_file_path: None,
            hash_seed: 0,
            token_mode: TokenMode::Word,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbedding {
    pub vector: Vec<f64>,
    /// Set when the input had no tokens; `vector` is then all zeros.
    pub empty: bool,
}

/// Pretrained token vectors loaded from a `word v1 ... vD` text file.
#[derive(Debug, Clone, Default)]
pub struct VectorTable {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    /// Number of words that appeared more than once (last occurrence kept).
    pub duplicates: usize,
}

impl VectorTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

pub fn load_vectors(path: &Path) -> Result<VectorTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&text)
}

pub fn parse_vectors(text: &str) -> Result<VectorTable> {
    let mut table = VectorTable::default();
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        // fastText-style "count dim" header line
        if lineno == 0 && rest.len() == 1 && word.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
            continue;
        }
        let vector = rest
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Malformed(format!("vector line {}: {e}", lineno + 1)))?;
        if vector.is_empty() {
            return Err(Error::Malformed(format!("vector line {}: no components", lineno + 1)));
        }
        if table.dim == 0 {
            table.dim = vector.len();
        } else if vector.len() != table.dim {
            return Err(Error::Malformed(format!(
                "vector line {}: dimension {} differs from {}",
                lineno + 1,
                vector.len(),
                table.dim
            )));
        }
        if table.vectors.insert(word.to_string(), vector).is_some() {
            table.duplicates += 1;
        }
    }
    if table.vectors.is_empty() {
        return Err(Error::Malformed("vector file has no entries".into()));
    }
    Ok(table)
}

/// A configured encoder. Stateless apart from the read-only vector table.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    vectors: Option<Arc<VectorTable>>,
}

impl Encoder {
    /// Builds an encoder, loading the vector file for the vector-file backend.
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        match cfg.backend {
            Backend::Hashing => Self::with_vectors(cfg, None),
            Backend::VectorFile => {
                let path = cfg
                    .vector_file_path
                    .clone()
                    .ok_or_else(|| Error::Config("vector-file backend needs a vector file path".into()))?;
                let table = load_vectors(&path)?;
                Self::with_vectors(cfg, Some(Arc::new(table)))
            }
        }
    }

    /// Builds an encoder around an already-loaded vector table; its dimension
    /// overrides `cfg.dim`.
    pub fn with_vectors(mut cfg: EncoderConfig, vectors: Option<Arc<VectorTable>>) -> Result<Self> {
        match (&vectors, cfg.backend) {
            (Some(v), Backend::VectorFile) => cfg.dim = v.dim,
            (None, Backend::VectorFile) => return Err(Error::Config("vector-file backend without vectors".into())),
            (_, Backend::Hashing) => {}
        }
        let vectors = if cfg.backend == Backend::Hashing { None } else { vectors };
        if cfg.dim < MIN_DIM {
            return Err(Error::Config(format!(
                "embedding dimension {} below minimum {MIN_DIM}",
                cfg.dim
            )));
        }
        Ok(Self { cfg, vectors })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.as_ref().and_then(|t| t.get(token)) {
            return v.to_vec();
        }
        hashed_unit_vector(token, self.cfg.hash_seed, self.cfg.dim)
    }

    fn cell_tokens(&self, cell: &str) -> Vec<String> {
        let tokens = tokenize(cell);
        match self.cfg.token_mode {
            TokenMode::Word => tokens,
            TokenMode::Cell if tokens.is_empty() => tokens,
            TokenMode::Cell => vec![tokens.join("_")],
        }
    }

    pub fn embed_cell(&self, cell: &str) -> BaseEmbedding {
        let tokens = self.cell_tokens(cell);
        let mut vector = vec![0.0; self.cfg.dim];
        if tokens.is_empty() {
            return BaseEmbedding { vector, empty: true };
        }
        for t in &tokens {
            for (acc, x) in vector.iter_mut().zip(self.embed_token(t)) {
                *acc += x;
            }
        }
        let n = tokens.len() as f64;
        vector.iter_mut().for_each(|x| *x /= n);
        BaseEmbedding { vector, empty: false }
    }

    /// Mean of the non-empty cell embeddings.
    pub fn embed_column<S: AsRef<str>>(&self, values: &[S]) -> Result<BaseEmbedding> {
        self.embed_column_with(values, &mut CellCache::default())
    }

    /// As [`Encoder::embed_column`], memoizing cell embeddings in `cache`.
    /// The cache must only ever be used with this encoder.
    pub fn embed_column_with<S: AsRef<str>>(&self, values: &[S], cache: &mut CellCache) -> Result<BaseEmbedding> {
        let mut sum = vec![0.0; self.cfg.dim];
        let mut count = 0usize;
        for v in values {
            let v = v.as_ref();
            if v.is_empty() {
                continue;
            }
            let cell = cache.cells.entry(v.to_string()).or_insert_with(|| self.embed_cell(v));
            if cell.empty {
                continue;
            }
            count += 1;
            for (acc, x) in sum.iter_mut().zip(&cell.vector) {
                *acc += x;
            }
        }
        if count == 0 {
            return Err(Error::EmptyColumn("all cells empty".into()));
        }
        let n = count as f64;
        sum.iter_mut().for_each(|x| *x /= n);
        Ok(BaseEmbedding {
            vector: sum,
            empty: false,
        })
    }
}

/// Memo of cell text → cell embedding.
#[derive(Debug, Default)]
pub struct CellCache {
    cells: HashMap<String, BaseEmbedding>,
}

impl CellCache {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Deterministic pseudo-random unit vector for `token`.
pub fn hashed_unit_vector(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(combine(fnv1a(token.as_bytes()), seed));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = crate::util::norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{cosine, norm};
    use proptest::prelude::*;

    fn enc() -> Encoder {
        Encoder::new(EncoderConfig::default()).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn token_vectors_are_deterministic_unit_vectors() {
        let e = enc();
        let a = e.embed_token("year");
        assert_eq!(a, e.embed_token("year"));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, e.embed_token("years"));
    }

    #[test]
    fn hash_seed_changes_vectors() {
        let other = Encoder::new(EncoderConfig {
            hash_seed: 9,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(enc().embed_token("year"), other.embed_token("year"));
    }

    #[test]
    fn random_token_pairs_are_nearly_orthogonal() {
        let e = enc();
        let mean_abs: f64 = (0..1000)
            .map(|i| {
                let a = e.embed_token(&format!("tok{i}a"));
                let b = e.embed_token(&format!("tok{i}b"));
                cosine(&a, &b).unwrap().abs()
            })
            .sum::<f64>()
            / 1000.0;
        assert!(mean_abs <= 0.15, "mean |cos| {mean_abs}");
    }

    #[test]
    fn cell_embedding_is_token_mean() {
        let e = enc();
        assert_eq!(e.embed_cell("2007").vector, e.embed_token("2007"));
        let expect: Vec<f64> = e
            .embed_token("a")
            .iter()
            .zip(e.embed_token("b"))
            .map(|(x, y)| (x + y) / 2.0)
            .collect();
        assert_close(&e.embed_cell("a b").vector, &expect, 1e-15);
        let empty = e.embed_cell("");
        assert!(empty.empty);
        assert!(empty.vector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cell_token_mode_joins_words() {
        let e = Encoder::new(EncoderConfig {
            token_mode: TokenMode::Cell,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(e.embed_cell("New York").vector, e.embed_token("new_york"));
    }

    #[test]
    fn column_embedding_means() {
        let e = enc();
        let x = e.embed_cell("Very Large Data Bases").vector;
        assert_eq!(e.embed_column(&["Very Large Data Bases"]).unwrap().vector, x);
        assert_close(
            &e.embed_column(&["Very Large Data Bases"; 3]).unwrap().vector,
            &x,
            1e-15,
        );
        assert!(matches!(e.embed_column(&["", ""]), Err(Error::EmptyColumn(_))));
        // empty cells do not pull the mean towards zero
        assert_eq!(e.embed_column(&["Very Large Data Bases", ""]).unwrap().vector, x);
    }

    #[test]
    fn column_of_two_halves_is_midpoint() {
        let e = enc();
        let left = ["alpha beta", "gamma"];
        let right = ["delta", "eps zeta", "eta theta iota"];
        // arithmetic oracle: recompute the two half-means by hand
        let mean_cells = |cells: &[&str]| -> Vec<f64> {
            let mut acc = vec![0.0; 128];
            for c in cells {
                let toks: Vec<_> = c.split(' ').collect();
                for t in &toks {
                    for (a, x) in acc.iter_mut().zip(e.embed_token(t)) {
                        *a += x / toks.len() as f64;
                    }
                }
            }
            acc.iter().map(|a| a / cells.len() as f64).collect()
        };
        let l = mean_cells(&left);
        let r = mean_cells(&right);
        let all: Vec<&str> = left.iter().chain(&right).copied().collect();
        let expect: Vec<f64> = l.iter().zip(&r).map(|(a, b)| (2.0 * a + 3.0 * b) / 5.0).collect();
        assert_close(&e.embed_column(&all).unwrap().vector, &expect, 1e-12);
        // equal-size halves: exact midpoint
        let all4 = ["alpha beta", "gamma", "delta", "eps zeta"];
        let l = mean_cells(&all4[..2]);
        let r = mean_cells(&all4[2..]);
        let mid: Vec<f64> = l.iter().zip(&r).map(|(a, b)| (a + b) / 2.0).collect();
        assert_close(&e.embed_column(&all4).unwrap().vector, &mid, 1e-12);
    }

    #[test]
    fn disjoint_columns_concentrate_near_orthogonal() {
        let e = Encoder::new(EncoderConfig {
            dim: 512,
            ..Default::default()
        })
        .unwrap();
        let mean: f64 = (0..500)
            .map(|i| {
                let a: Vec<String> = (0..5).map(|j| format!("a{i}x{j}")).collect();
                let b: Vec<String> = (0..5).map(|j| format!("b{i}y{j}")).collect();
                cosine(&e.embed_column(&a).unwrap().vector, &e.embed_column(&b).unwrap().vector).unwrap()
            })
            .sum::<f64>()
            / 500.0;
        assert!(mean.abs() < 0.05, "mean cos {mean}");
    }

    #[test]
    fn vector_file_parsing() {
        let t = parse_vectors("foo 1 2 3\nbar 4 5 6\n").unwrap();
        assert_eq!((t.len(), t.dim), (2, 3));
        let t = parse_vectors("2 3\nfoo 1 2 3\nfoo 4 5 6\n").unwrap();
        assert_eq!(t.duplicates, 1);
        assert_eq!(t.get("foo").unwrap(), &[4.0, 5.0, 6.0]);
        assert!(parse_vectors("foo 1 2\nbar 1 2 3\n").is_err());
        assert!(parse_vectors("").is_err());
    }

    #[test]
    fn vector_backend_lookup_and_fallback() {
        let text: String = ["foo", "bar"]
            .iter()
            .map(|w| format!("{w} {}\n", ["0.5"; 8].join(" ")))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, text).unwrap();
        let e = Encoder::new(EncoderConfig {
            backend: Backend::VectorFile,
            vector_file_path: Some(p),
            dim: 999,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(e.dim(), 8);
        assert_eq!(e.embed_token("foo"), vec![0.5; 8]);
        let oov = e.embed_token("absent");
        assert_eq!(oov, e.embed_token("absent"));
        assert!((norm(&oov) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_dimension_rejected() {
        assert!(Encoder::new(EncoderConfig {
            dim: 4,
            ..Default::default()
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn column_embedding_is_permutation_invariant(
            mut cells in prop::collection::vec("[a-e ]{0,6}", 1..8),
            rot in 0usize..8,
        ) {
            let e = enc();
            prop_assume!(cells.iter().any(|c| !tokenize(c).is_empty()));
            let a = e.embed_column(&cells).unwrap();
            let n = cells.len();
            cells.rotate_left(rot % n);
            cells.reverse();
            let b = e.embed_column(&cells).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
