// SPDX-License-Identifier: Apache-2.0

//! Binary model and index files.
//!
//! A model file holds everything needed to embed a column: encoder settings,
//! tokenizer and format-alphabet identifiers, the projection head (and its
//! optimizer velocity), and the training hyper-parameters. Parameters are
//! stored as little-endian f32 in row-major order. An index file is a model
//! section followed by the search index section, so a query needs only the
//! index file.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{Column, Corpus, Table};
use crate::encoder::{Backend, Encoder, EncoderConfig, TokenMode};
use crate::error::{Error, Result};
use crate::projection::{HeadGradients, ProjectionHead, TrainConfig, Velocity};
use crate::search::{IndexConfig, IndexEntry, QueryColumn, QueryTable, SearchIndex, TableInfo};
use crate::syntactic::{SyntacticProfile, TfidfModel, FORMAT_ALPHABET};
use crate::util::{write_atomic, ByteReader, ByteWriter};

const MODEL_MAGIC: &[u8; 4] = b"TUSM";
const INDEX_MAGIC: &[u8; 4] = b"TUSX";
const VERSION: u8 = 1;

/// Identifies the cell tokenizer; changing tokenization must change this.
pub const TOKENIZER_ID: &str = "lowercase-split-nonalnum/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Untrained,
    Online,
    Offline,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Untrained => "untrained",
            StrategyKind::Online => "online",
            StrategyKind::Offline => "offline",
        }
    }

    fn code(self) -> u8 {
        match self {
            StrategyKind::Untrained => 0,
            StrategyKind::Online => 1,
            StrategyKind::Offline => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(StrategyKind::Untrained),
            1 => Ok(StrategyKind::Online),
            2 => Ok(StrategyKind::Offline),
            _ => Err(Error::Format(format!("unknown strategy code {c}"))),
        }
    }
}

/// A (possibly trained) column embedding model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub head: ProjectionHead,
    pub velocity: Velocity,
    pub train: TrainConfig,
    pub strategy: StrategyKind,
    pub selected_epoch: usize,
    /// Fingerprint of the offline pair set, 0 otherwise.
    pub pairs_fingerprint: u64,
}

impl Model {
    /// A model whose head is freshly initialized and never trained.
    pub fn untrained(encoder: EncoderConfig, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let head = ProjectionHead::init(encoder.dim, hidden_dim, out_dim, seed)?;
        let velocity = HeadGradients::zeros_like(&head);
        Ok(Self {
            encoder,
            head,
            velocity,
            train: TrainConfig::default(),
            strategy: StrategyKind::Untrained,
            selected_epoch: 0,
            pairs_fingerprint: 0,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim
    }

    /// Projected embedding of a column, or `None` when it has no non-empty cell.
    pub fn embed_column(&self, encoder: &Encoder, column: &Column) -> Result<Option<Vec<f64>>> {
        if !column.is_eligible() {
            return Ok(None);
        }
        let base = encoder.embed_column(&column.values)?;
        self.head.project(&base.vector).map(Some)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MODEL_MAGIC);
        w.u8(VERSION);
        self.write_body(&mut w);
        w.into_inner()
    }

    fn write_body(&self, w: &mut ByteWriter) {
        w.str(TOKENIZER_ID);
        w.str(FORMAT_ALPHABET);
        let e = &self.encoder;
        w.u8(match e.backend {
            Backend::Hashing => 0,
            Backend::VectorFile => 1,
        });
        w.len(e.dim);
        w.u64(e.hash_seed);
        w.u8(match e.token_mode {
            TokenMode::Word => 0,
            TokenMode::Cell => 1,
        });
        let path = e
            .vector_file_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.str(&path);

        let h = &self.head;
        w.len(h.in_dim);
        w.len(h.hidden_dim);
        w.len(h.out_dim);
        w.u64(h.init_seed);
        for t in h.tensors().into_iter().chain(self.velocity.tensors()) {
            for &x in t {
                w.f32(x as f32);
            }
        }

        let t = &self.train;
        w.f64(t.temperature);
        w.f64(t.learning_rate);
        w.f64(t.momentum);
        w.len(t.epochs);
        w.len(t.batch_size);
        w.len(t.sample_size);
        w.u64(t.seed);
        w.u8(self.strategy.code());
        w.len(self.selected_epoch);
        w.u64(self.pairs_fingerprint);
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        check_version(r.u8()?)?;
        let m = Self::read_body(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(m)
    }

    fn read_body(r: &mut ByteReader) -> Result<Self> {
        let tok = r.str()?;
        if tok != TOKENIZER_ID {
            return Err(Error::Format(format!("unsupported tokenizer {tok:?}")));
        }
        let alphabet = r.str()?;
        if alphabet != FORMAT_ALPHABET {
            return Err(Error::Format(format!("unsupported format alphabet {alphabet:?}")));
        }
        let backend = match r.u8()? {
            0 => Backend::Hashing,
            1 => Backend::VectorFile,
            c => return Err(Error::Format(format!("unknown backend code {c}"))),
        };
        let dim = r.len()?;
        let hash_seed = r.u64()?;
        let token_mode = match r.u8()? {
            0 => TokenMode::Word,
            1 => TokenMode::Cell,
            c => return Err(Error::Format(format!("unknown token mode {c}"))),
        };
        let path = r.str()?;
        let encoder = EncoderConfig {
            backend,
            dim,
            vector_file_path: (!path.is_empty()).then(|| PathBuf::from(path)),
            hash_seed,
            token_mode,
        };

        let in_dim = r.len()?;
        let hidden_dim = r.len()?;
        let out_dim = r.len()?;
        let init_seed = r.u64()?;
        if in_dim != dim {
            return Err(Error::Format(format!(
                "head input {in_dim} does not match encoder dim {dim}"
            )));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f32().map(f64::from)).collect() };
        let sizes = [hidden_dim * in_dim, hidden_dim, out_dim * hidden_dim, out_dim];
        let [w1, b1, w2, b2] = sizes.map(&mut read);
        let head = ProjectionHead {
            in_dim,
            hidden_dim,
            out_dim,
            w1: w1?,
            b1: b1?,
            w2: w2?,
            b2: b2?,
            init_seed,
        };
        let [dw1, db1, dw2, db2] = sizes.map(&mut read);
        let velocity = HeadGradients {
            dw1: dw1?,
            db1: db1?,
            dw2: dw2?,
            db2: db2?,
        };
        if !head.is_finite() || !velocity.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let train = TrainConfig {
            temperature: r.f64()?,
            learning_rate: r.f64()?,
            momentum: r.f64()?,
            epochs: r.len()?,
            batch_size: r.len()?,
            sample_size: r.len()?,
            seed: r.u64()?,
        };
        let strategy = StrategyKind::from_code(r.u8()?)?;
        let selected_epoch = r.len()?;
        let pairs_fingerprint = r.u64()?;
        Ok(Self {
            encoder,
            head,
            velocity,
            train,
            strategy,
            selected_epoch,
            pairs_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_version(v: u8) -> Result<()> {
    if v != VERSION {
        return Err(Error::Format(format!("unsupported file version {v}")));
    }
    Ok(())
}

/// A model together with the search index built from it.
#[derive(Debug, Clone)]
pub struct IndexFile {
    pub model: Model,
    pub index: SearchIndex,
}

impl IndexFile {
    /// Embeds and profiles every eligible column of `corpus` and builds the
    /// search index. Columns with no non-empty cell are skipped.
    pub fn build(model: Model, corpus: &Corpus, cfg: IndexConfig) -> Result<Self> {
        let encoder = Encoder::new(model.encoder.clone())?;
        let tfidf = TfidfModel::build(corpus);
        let columns: Vec<&Column> = corpus.columns().filter(|c| c.is_eligible()).collect();
        let entries = columns
            .par_iter()
            .map(|c| {
                let vector = model.embed_column(&encoder, c)?.expect("eligible column");
                Ok(IndexEntry {
                    name: c.name.clone(),
                    vector,
                    profile: SyntacticProfile::build(c, &tfidf, &cfg.syntactic),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tables = corpus
            .tables()
            .iter()
            .map(|t| TableInfo {
                table_id: t.table_id.clone(),
                name: t.name.clone(),
                column_names: t.headers.clone(),
            })
            .collect();
        let index = SearchIndex::build(cfg, model.out_dim(), tables, tfidf, entries)?;
        Ok(Self { model, index })
    }

    /// Turns an arbitrary table into a query against this index.
    pub fn query_from_table(&self, table: &Table) -> Result<QueryTable> {
        let encoder = Encoder::new(self.model.encoder.clone())?;
        self.query_with_encoder(&encoder, table)
    }

    pub fn query_with_encoder(&self, encoder: &Encoder, table: &Table) -> Result<QueryTable> {
        let syn = &self.index.config().syntactic;
        let mut columns = Vec::new();
        for c in &table.columns {
            if let Some(vector) = self.model.embed_column(encoder, c)? {
                columns.push(QueryColumn {
                    position: c.position,
                    name: c.name.clone(),
                    vector,
                    profile: SyntacticProfile::build(c, self.index.tfidf(), syn),
                });
            }
        }
        Ok(QueryTable {
            table_id: table.table_id.clone(),
            columns,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(INDEX_MAGIC);
        w.u8(VERSION);
        self.model.write_body(&mut w);
        self.index.write_to(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::Format("not an index file".into()));
        }
        check_version(r.u8()?)?;
        let model = Model::read_body(&mut r)?;
        let index = SearchIndex::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after index".into()));
        }
        if index.dim() != model.out_dim() {
            return Err(Error::Format("index dimension does not match the model".into()));
        }
        Ok(Self { model, index })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
