// SPDX-License-Identifier: Apache-2.0

//! Top-k table union search.
//!
//! Each query column looks up candidate columns, every candidate pair gets
//! a combined score (the mean of the enabled measures), and candidates are
//! grouped by table. Within a table, query and candidate columns are
//! matched greedily one-to-one and the table score is the CDF-weighted mean
//! of the matched pair scores.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::ColumnKey;
use crate::error::{Error, Result};
use crate::lsh::{CosineLshIndex, ItemId, MinHashIndex};
use crate::syntactic::{jaccard, Measure, SyntacticConfig, SyntacticProfile, TfidfModel};
use crate::util::{combine, dot, norm, ByteReader, ByteWriter};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub k: usize,
    pub threshold: f64,
    /// Enabled measures; must contain [`Measure::Semantic`].
    pub measures: Vec<Measure>,
    pub exclude_self: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 10,
            threshold: DEFAULT_THRESHOLD,
            measures: vec![Measure::Semantic],
            exclude_self: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !self.measures.contains(&Measure::Semantic) {
            return Err(Error::Config("the semantic measure must be enabled".into()));
        }
        Ok(())
    }

    fn enabled(&self, m: Measure) -> bool {
        self.measures.contains(&m)
    }
}

/// Cosine similarity of two embeddings.
pub fn attribute_unionability(a: &[f64], b: &[f64]) -> Result<f64> {
    crate::util::cosine(a, b).ok_or(Error::ZeroVector(0))
}

/// Empirical distribution of one query column's surviving candidate scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub query: ColumnKey,
    sorted: Vec<f64>,
}

impl ScoreDistribution {
    pub fn new(query: ColumnKey, mut scores: Vec<f64>) -> Self {
        scores.sort_by(f64::total_cmp);
        Self { query, sorted: scores }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.sorted
    }
}

/// Inclusive empirical CDF: `|{s' ∈ dist : s' ≤ score}| / |dist|`.
pub fn cdf_weight(score: f64, dist: &ScoreDistribution) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::InsufficientData("empty score distribution".into()));
    }
    let at_or_below = dist.sorted.partition_point(|&s| s <= score);
    Ok(at_or_below as f64 / dist.len() as f64)
}

/// A scored (query column, candidate column) pair, by column position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub query_position: usize,
    pub candidate_position: usize,
    pub score: f64,
}

/// Greedy one-to-one matching: repeatedly take the highest remaining pair
/// whose two columns are both unassigned. Ties go to the lower query
/// position, then the lower candidate position.
pub fn match_attributes(pairs: &[PairScore], threshold: f64) -> Vec<PairScore> {
    let mut sorted: Vec<PairScore> = pairs.iter().copied().filter(|p| p.score >= threshold).collect();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.query_position.cmp(&b.query_position))
            .then(a.candidate_position.cmp(&b.candidate_position))
    });
    let mut used_q = Vec::new();
    let mut used_c = Vec::new();
    let mut out = Vec::new();
    for p in sorted {
        if used_q.contains(&p.query_position) || used_c.contains(&p.candidate_position) {
            continue;
        }
        used_q.push(p.query_position);
        used_c.push(p.candidate_position);
        out.push(p);
    }
    out
}

/// Weighted mean `Σ wᵢ·sᵢ / Σ wᵢ` over `(score, weight)` pairs.
pub fn table_unionability(matches: &[(f64, f64)]) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::InsufficientData("no attribute matches".into()));
    }
    let (num, den) = matches.iter().fold((0.0, 0.0), |(n, d), &(s, w)| (n + w * s, d + w));
    if den <= 0.0 {
        return Err(Error::NonFinite("weights sum to zero".into()));
    }
    Ok(num / den)
}

/// Unweighted mean of the per-measure scores.
pub fn ensemble_score(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatch {
    pub query: ColumnKey,
    pub query_name: String,
    pub candidate: ColumnKey,
    pub candidate_name: String,
    pub score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultEntry {
    pub table_id: String,
    pub score: f64,
    pub matches: Vec<AttributeMatch>,
}

impl ResultEntry {
    pub fn match_count(&self) -> usize {
        self.matches.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query_table_id: String,
    pub entries: Vec<ResultEntry>,
}

impl QueryResult {
    pub fn table_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.table_id.as_str()).collect()
    }
}

pub const RESULTS_HEADER: [&str; 6] = [
    "query_table_id",
    "rank",
    "candidate_table_id",
    "table_score",
    "match_count",
    "matches",
];

fn column_label(name: &str, position: usize) -> String {
    if name.is_empty() {
        format!("#{position}")
    } else {
        name.to_string()
    }
}

/// Results CSV for one or more queries, ranks starting at 1.
pub fn results_to_csv(results: &[QueryResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(RESULTS_HEADER).map_err(err)?;
    for r in results {
        for (rank, e) in r.entries.iter().enumerate() {
            let matches: Vec<String> = e
                .matches
                .iter()
                .map(|m| {
                    format!(
                        "{}→{}:{:.6}",
                        column_label(&m.query_name, m.query.position),
                        column_label(&m.candidate_name, m.candidate.position),
                        m.score
                    )
                })
                .collect();
            w.write_record([
                r.query_table_id.clone(),
                (rank + 1).to_string(),
                e.table_id.clone(),
                format!("{:.6}", e.score),
                e.match_count().to_string(),
                matches.join(";"),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
}

/// Index construction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub cosine_bands: usize,
    pub cosine_rows: usize,
    pub minhash_bands: usize,
    pub minhash_rows: usize,
    pub seed: u64,
    pub syntactic: SyntacticConfig,
    pub name_index: bool,
    pub value_index: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            cosine_bands: crate::lsh::DEFAULT_COSINE_BANDS,
            cosine_rows: crate::lsh::DEFAULT_COSINE_ROWS,
            minhash_bands: crate::lsh::DEFAULT_MINHASH_BANDS,
            minhash_rows: crate::lsh::DEFAULT_MINHASH_ROWS,
            seed: 0,
            syntactic: SyntacticConfig::default(),
            name_index: true,
            value_index: true,
        }
    }
}

/// One column to be indexed: its projected embedding and syntactic profile.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub name: String,
    pub vector: Vec<f64>,
    pub profile: SyntacticProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableInfo {
    pub table_id: String,
    pub name: String,
    pub column_names: Vec<String>,
}

#[derive(Debug, Clone)]
struct IndexedColumn {
    name: String,
    norm: f64,
    profile: SyntacticProfile,
}

impl IndexedColumn {
    fn key(&self) -> &ColumnKey {
        &self.profile.column_key
    }
}

/// Frozen search structures over a corpus: the cosine LSH index, optional
/// MinHash indexes for names and values, and the per-column profiles.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    cfg: IndexConfig,
    tables: Vec<TableInfo>,
    tfidf: TfidfModel,
    columns: Vec<IndexedColumn>,
    by_table: HashMap<String, Vec<ItemId>>,
    cosine: CosineLshIndex,
    names: Option<MinHashIndex>,
    values: Option<MinHashIndex>,
}

impl SearchIndex {
    /// Builds the index. Item ids follow column-key order, so id order is
    /// the tie-break order.
    pub fn build(
        cfg: IndexConfig,
        dim: usize,
        tables: Vec<TableInfo>,
        tfidf: TfidfModel,
        mut entries: Vec<IndexEntry>,
    ) -> Result<Self> {
        entries.sort_by(|a, b| a.profile.column_key.cmp(&b.profile.column_key));
        let mut cosine = CosineLshIndex::new(dim, cfg.cosine_bands, cfg.cosine_rows, cfg.seed)?;
        let mut names = if cfg.name_index {
            Some(MinHashIndex::new(
                cfg.minhash_bands,
                cfg.minhash_rows,
                combine(cfg.seed, 1),
            )?)
        } else {
            None
        };
        let mut values = if cfg.value_index {
            Some(MinHashIndex::new(
                cfg.minhash_bands,
                cfg.minhash_rows,
                combine(cfg.seed, 2),
            )?)
        } else {
            None
        };
        let mut columns = Vec::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            let id = i as ItemId;
            if i > 0 && columns.last().map(IndexedColumn::key) == Some(&e.profile.column_key) {
                return Err(Error::DuplicateKey(e.profile.column_key.to_string()));
            }
            cosine.insert(id, &e.vector)?;
            if let Some(ix) = names.as_mut().filter(|_| !e.profile.name_qgrams.is_empty()) {
                ix.insert(id, &e.profile.name_qgrams)?;
            }
            if let Some(ix) = values.as_mut().filter(|_| !e.profile.value_terms.is_empty()) {
                ix.insert(id, &e.profile.value_terms)?;
            }
            columns.push(IndexedColumn {
                name: e.name,
                norm: norm(&e.vector),
                profile: e.profile,
            });
        }
        Ok(Self::assemble(cfg, tables, tfidf, columns, cosine, names, values))
    }

    fn assemble(
        cfg: IndexConfig,
        tables: Vec<TableInfo>,
        tfidf: TfidfModel,
        columns: Vec<IndexedColumn>,
        cosine: CosineLshIndex,
        names: Option<MinHashIndex>,
        values: Option<MinHashIndex>,
    ) -> Self {
        let mut by_table: HashMap<String, Vec<ItemId>> = HashMap::new();
        for (i, c) in columns.iter().enumerate() {
            by_table.entry(c.key().table_id.clone()).or_default().push(i as ItemId);
        }
        Self {
            cfg,
            tables,
            tfidf,
            columns,
            by_table,
            cosine,
            names,
            values,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cosine.dim()
    }

    pub fn tfidf(&self) -> &TfidfModel {
        &self.tfidf
    }

    pub fn tables(&self) -> &[TableInfo] {
        &self.tables
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn cosine_index(&self) -> &CosineLshIndex {
        &self.cosine
    }

    pub fn column_key(&self, id: ItemId) -> &ColumnKey {
        self.columns[id as usize].key()
    }

    /// Builds a query from an indexed table's stored columns.
    pub fn query_for_table(&self, table_id: &str) -> Result<QueryTable> {
        let ids = self
            .by_table
            .get(table_id)
            .ok_or_else(|| Error::UnknownTable(table_id.to_string()))?;
        let columns = ids
            .iter()
            .map(|&id| {
                let c = &self.columns[id as usize];
                QueryColumn {
                    position: c.key().position,
                    name: c.name.clone(),
                    vector: self.cosine.vector(id).expect("indexed vector").to_vec(),
                    profile: c.profile.clone(),
                }
            })
            .collect();
        Ok(QueryTable {
            table_id: table_id.to_string(),
            columns,
        })
    }

    /// Ids of the indexed tables that have at least one indexed column.
    pub fn indexed_table_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.by_table.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn write_to(&self, w: &mut ByteWriter) {
        let c = &self.cfg;
        for v in [c.cosine_bands, c.cosine_rows, c.minhash_bands, c.minhash_rows] {
            w.len(v);
        }
        w.u64(c.seed);
        w.len(c.syntactic.qgram);
        w.len(c.syntactic.top_terms);
        w.u8(u8::from(c.name_index));
        w.u8(u8::from(c.value_index));

        w.len(self.tables.len());
        for t in &self.tables {
            w.str(&t.table_id);
            w.str(&t.name);
            w.strs(&t.column_names);
        }
        w.len(self.tfidf.column_count());
        let df = self.tfidf.entries();
        w.len(df.len());
        for (tok, n) in df {
            w.str(tok);
            w.len(n);
        }
        w.len(self.columns.len());
        for col in &self.columns {
            w.str(&col.key().table_id);
            w.len(col.key().position);
            w.str(&col.name);
            w.strs(&col.profile.name_qgrams);
            w.strs(&col.profile.value_terms);
            w.strs(&col.profile.format_patterns);
        }
        self.cosine.write_to(w);
        for ix in [&self.names, &self.values] {
            match ix {
                Some(ix) => {
                    w.u8(1);
                    ix.write_to(w);
                }
                None => w.u8(0),
            }
        }
    }

    pub fn read_from(r: &mut ByteReader) -> Result<Self> {
        let cosine_bands = r.len()?;
        let cosine_rows = r.len()?;
        let minhash_bands = r.len()?;
        let minhash_rows = r.len()?;
        let seed = r.u64()?;
        let qgram = r.len()?;
        let top_terms = r.len()?;
        let name_index = r.u8()? != 0;
        let value_index = r.u8()? != 0;
        let cfg = IndexConfig {
            cosine_bands,
            cosine_rows,
            minhash_bands,
            minhash_rows,
            seed,
            syntactic: SyntacticConfig { qgram, top_terms },
            name_index,
            value_index,
        };
        let n_tables = r.len()?;
        let tables = (0..n_tables)
            .map(|_| {
                Ok(TableInfo {
                    table_id: r.str()?,
                    name: r.str()?,
                    column_names: r.strs()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let doc_count = r.len()?;
        let n_df = r.len()?;
        let df = (0..n_df)
            .map(|_| Ok((r.str()?, r.len()?)))
            .collect::<Result<Vec<_>>>()?;
        let tfidf = TfidfModel::from_parts(doc_count, df);
        let n_cols = r.len()?;
        let mut columns = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            let table_id = r.str()?;
            let position = r.len()?;
            let name = r.str()?;
            let profile = SyntacticProfile {
                column_key: ColumnKey::new(table_id, position),
                name_qgrams: r.strs()?,
                value_terms: r.strs()?,
                format_patterns: r.strs()?,
            };
            columns.push(IndexedColumn {
                name,
                norm: 0.0,
                profile,
            });
        }
        let cosine = CosineLshIndex::read_from(r)?;
        if cosine.len() != columns.len() {
            return Err(Error::Format("column catalog and cosine index disagree".into()));
        }
        for (i, c) in columns.iter_mut().enumerate() {
            let v = cosine
                .vector(i as ItemId)
                .ok_or_else(|| Error::Format(format!("missing vector for item {i}")))?;
            c.norm = norm(v);
        }
        let mut opt = || -> Result<Option<MinHashIndex>> {
            Ok(if r.u8()? != 0 {
                Some(MinHashIndex::read_from(r)?)
            } else {
                None
            })
        };
        let names = opt()?;
        let values = opt()?;
        Ok(Self::assemble(cfg, tables, tfidf, columns, cosine, names, values))
    }
}

#[derive(Debug, Clone)]
pub struct QueryColumn {
    pub position: usize,
    pub name: String,
    pub vector: Vec<f64>,
    pub profile: SyntacticProfile,
}

#[derive(Debug, Clone)]
pub struct QueryTable {
    pub table_id: String,
    pub columns: Vec<QueryColumn>,
}

/// Where candidate columns come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidatePool {
    /// Bucket collisions in the cosine index and enabled MinHash indexes.
    Lsh,
    /// Every indexed column.
    Exhaustive,
}

impl SearchIndex {
    /// Candidate item ids for one query column, before self-exclusion and
    /// thresholding.
    pub fn candidates(&self, q: &QueryColumn, cfg: &SearchConfig, pool: CandidatePool) -> Result<Vec<ItemId>> {
        match pool {
            CandidatePool::Exhaustive => Ok((0..self.columns.len() as ItemId).collect()),
            CandidatePool::Lsh => {
                let syntactic = cfg.enabled(Measure::Name) || cfg.enabled(Measure::Value);
                let t = if syntactic { 0.0 } else { cfg.threshold };
                let mut ids: Vec<ItemId> = self
                    .cosine
                    .lookup(&q.vector, t)?
                    .into_iter()
                    .map(|(id, _)| id)
                    .collect();
                for (m, ix, set) in [
                    (Measure::Name, &self.names, &q.profile.name_qgrams),
                    (Measure::Value, &self.values, &q.profile.value_terms),
                ] {
                    if !cfg.enabled(m) || set.is_empty() {
                        continue;
                    }
                    let ix = ix.as_ref().ok_or_else(|| {
                        Error::Config(format!("measure {m} requested but the index has no {m} index"))
                    })?;
                    ids.extend(ix.lookup(set, 0.0)?.into_iter().map(|(id, _)| id));
                }
                ids.sort_unstable();
                ids.dedup();
                Ok(ids)
            }
        }
    }

    /// Combined score of a query column against an indexed column.
    pub fn score_pair(&self, q: &QueryColumn, id: ItemId, cfg: &SearchConfig) -> Result<f64> {
        let n = norm(&q.vector);
        if n == 0.0 {
            return Err(Error::ZeroVector(q.position));
        }
        if id as usize >= self.columns.len() {
            return Err(Error::Config(format!("unknown item {id}")));
        }
        Ok(self.pair_score(q, n, id, cfg))
    }

    fn pair_score(&self, q: &QueryColumn, q_norm: f64, id: ItemId, cfg: &SearchConfig) -> f64 {
        let col = &self.columns[id as usize];
        let v = self.cosine.vector(id).expect("indexed vector");
        let semantic = (dot(&q.vector, v) / (q_norm * col.norm)).clamp(-1.0, 1.0);
        let mut scores = Vec::with_capacity(cfg.measures.len());
        for &m in &cfg.measures {
            scores.push(match m {
                Measure::Semantic => semantic.max(0.0),
                Measure::Name => jaccard(&q.profile.name_qgrams, &col.profile.name_qgrams),
                Measure::Value => jaccard(&q.profile.value_terms, &col.profile.value_terms),
                Measure::Format => jaccard(&q.profile.format_patterns, &col.profile.format_patterns),
            });
        }
        ensemble_score(&scores)
    }

    /// Runs the full search pipeline with the given candidate pool.
    pub fn search(&self, query: &QueryTable, cfg: &SearchConfig, pool: CandidatePool) -> Result<QueryResult> {
        cfg.validate()?;
        if query.columns.is_empty() {
            return Err(Error::InsufficientData(format!(
                "query table {} has no eligible columns",
                query.table_id
            )));
        }
        // table id → scored pairs (query column index, candidate id, score)
        let mut grouped: BTreeMap<&str, Vec<(usize, ItemId, f64)>> = BTreeMap::new();
        let mut distributions = Vec::with_capacity(query.columns.len());
        for (qi, q) in query.columns.iter().enumerate() {
            if q.vector.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    actual: q.vector.len(),
                });
            }
            let q_norm = norm(&q.vector);
            if q_norm == 0.0 {
                return Err(Error::ZeroVector(qi));
            }
            let mut survivors = Vec::new();
            for id in self.candidates(q, cfg, pool)? {
                let key = self.columns[id as usize].key();
                if cfg.exclude_self && key.table_id == query.table_id {
                    continue;
                }
                let s = self.pair_score(q, q_norm, id, cfg);
                if s >= cfg.threshold {
                    survivors.push(s);
                    grouped.entry(key.table_id.as_str()).or_default().push((qi, id, s));
                }
            }
            distributions.push(ScoreDistribution::new(
                ColumnKey::new(query.table_id.clone(), q.position),
                survivors,
            ));
        }

        let mut entries = Vec::with_capacity(grouped.len());
        for (table_id, scored) in grouped {
            let pairs: Vec<PairScore> = scored
                .iter()
                .map(|&(qi, id, score)| PairScore {
                    query_position: query.columns[qi].position,
                    candidate_position: self.columns[id as usize].key().position,
                    score,
                })
                .collect();
            let matched = match_attributes(&pairs, cfg.threshold);
            if matched.is_empty() {
                continue;
            }
            let by_position: HashMap<usize, usize> =
                query.columns.iter().enumerate().map(|(i, c)| (c.position, i)).collect();
            let mut matches = Vec::with_capacity(matched.len());
            let mut weighted = Vec::with_capacity(matched.len());
            for p in matched {
                let qi = by_position[&p.query_position];
                let weight = cdf_weight(p.score, &distributions[qi])?;
                let cand = scored
                    .iter()
                    .find(|&&(i, id, _)| i == qi && self.columns[id as usize].key().position == p.candidate_position)
                    .map(|&(_, id, _)| id)
                    .expect("matched pair comes from scored pairs");
                let col = &self.columns[cand as usize];
                weighted.push((p.score, weight));
                matches.push(AttributeMatch {
                    query: ColumnKey::new(query.table_id.clone(), p.query_position),
                    query_name: query.columns[qi].name.clone(),
                    candidate: col.key().clone(),
                    candidate_name: col.name.clone(),
                    score: p.score,
                    weight,
                });
            }
            entries.push(ResultEntry {
                table_id: table_id.to_string(),
                score: table_unionability(&weighted)?,
                matches,
            });
        }
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.table_id.cmp(&b.table_id)));
        entries.truncate(cfg.k);
        Ok(QueryResult {
            query_table_id: query.table_id.clone(),
            entries,
        })
    }

    /// Top-k search using the LSH indexes for candidate generation.
    pub fn top_k_search(&self, query: &QueryTable, cfg: &SearchConfig) -> Result<QueryResult> {
        self.search(query, cfg, CandidatePool::Lsh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps(q: usize, c: usize, s: f64) -> PairScore {
        PairScore {
            query_position: q,
            candidate_position: c,
            score: s,
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((attribute_unionability(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(attribute_unionability(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = attribute_unionability(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(attribute_unionability(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn cdf_examples() {
        let d = ScoreDistribution::new(ColumnKey::new("q", 0), vec![0.8, 0.2, 0.6, 0.4]);
        assert_eq!(cdf_weight(0.8, &d).unwrap(), 1.0);
        assert_eq!(cdf_weight(0.6, &d).unwrap(), 0.75);
        assert_eq!(cdf_weight(0.2, &d).unwrap(), 0.25);
        let empty = ScoreDistribution::new(ColumnKey::new("q", 0), vec![]);
        assert!(cdf_weight(0.5, &empty).is_err());
    }

    /// Exhaustive search over one-to-one assignments, maximizing the sum of
    /// scores lexicographically in greedy order; used to confirm greedy output
    /// on small cases where greedy is optimal.
    fn best_assignment(pairs: &[PairScore], t: f64) -> f64 {
        let eligible: Vec<PairScore> = pairs.iter().copied().filter(|p| p.score >= t).collect();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << eligible.len()) {
            let chosen: Vec<&PairScore> = (0..eligible.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &eligible[i])
                .collect();
            let ok = chosen.iter().enumerate().all(|(i, a)| {
                chosen[i + 1..]
                    .iter()
                    .all(|b| a.query_position != b.query_position && a.candidate_position != b.candidate_position)
            });
            if ok {
                best = best.max(chosen.iter().map(|p| p.score).sum());
            }
        }
        best
    }

    #[test]
    fn greedy_matching_examples() {
        assert_eq!(match_attributes(&[ps(0, 0, 0.9)], 0.7), vec![ps(0, 0, 0.9)]);
        let pairs = [ps(1, 1, 0.9), ps(1, 2, 0.8), ps(2, 1, 0.85)];
        assert_eq!(match_attributes(&pairs, 0.7), vec![ps(1, 1, 0.9)]);
        let pairs = [ps(1, 1, 0.9), ps(1, 2, 0.8), ps(2, 1, 0.85), ps(2, 2, 0.75)];
        let m = match_attributes(&pairs, 0.7);
        assert_eq!(m, vec![ps(1, 1, 0.9), ps(2, 2, 0.75)]);
        let total: f64 = m.iter().map(|p| p.score).sum();
        assert!((total - best_assignment(&pairs, 0.7)).abs() < 1e-12);
        assert!(match_attributes(&[ps(0, 0, 0.5), ps(1, 1, 0.69)], 0.7).is_empty());
        assert!(match_attributes(&[], 0.7).is_empty());
    }

    #[test]
    fn greedy_ties_prefer_lower_positions() {
        let m = match_attributes(&[ps(1, 0, 0.8), ps(0, 1, 0.8), ps(0, 0, 0.8)], 0.7);
        assert_eq!(m, vec![ps(0, 0, 0.8)]);
    }

    #[test]
    fn table_score_examples() {
        assert!((table_unionability(&[(0.8, 1.0), (0.6, 1.0)]).unwrap() - 0.7).abs() < 1e-12);
        let u = table_unionability(&[(0.9, 1.0), (0.5, 0.5)]).unwrap();
        assert!((u - 1.15 / 1.5).abs() < 1e-12);
        assert!((u - 0.7667).abs() < 1e-4);
        assert_eq!(table_unionability(&[(0.83, 0.3)]).unwrap(), 0.83);
        assert!(table_unionability(&[]).is_err());
    }

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_score(&[0.8]), 0.8);
        assert!((ensemble_score(&[0.8, 0.6]) - 0.7).abs() < 1e-12);
        assert!((ensemble_score(&[0.9, 0.3, 0.6]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        assert!(SearchConfig {
            k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SearchConfig {
            threshold: 1.2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SearchConfig {
            measures: vec![Measure::Name],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
