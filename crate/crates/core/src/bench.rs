// SPDX-License-Identifier: Apache-2.0

//! Benchmark synthesis and evaluation.
//!
//! Base tables are drawn from topic vocabularies; derived tables are random
//! column projections and row selections of one base. Two derived tables are
//! union-able when they come from the same base and share a base column.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Table};
use crate::error::{Error, Result};
use crate::search::{CandidatePool, QueryResult, QueryTable, SearchConfig, SearchIndex};
use crate::util::combine;

/// Smallest row count a derived table may have.
pub const MIN_ROWS: usize = 4;

const GENERIC_WORDS: [&str; 24] = [
    "the", "of", "and", "to", "in", "for", "on", "with", "other", "unknown", "none", "total", "new", "old", "main",
    "misc", "general", "yes", "no", "na", "1", "2", "3", "10",
];
const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "tr",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

/// Parameters of the synthetic topic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub tables_per_topic: usize,
    pub columns_per_table: usize,
    pub rows: usize,
    /// Distinct content words per topic.
    pub topic_vocab: usize,
    /// Words each column draws from (a random subset of its topic's words).
    pub domain_size: usize,
    /// Probability that a token is a generic word shared by all topics.
    pub generic_rate: f64,
    pub max_tokens_per_cell: usize,
    /// Domain words are drawn with weight `1 / rank^zipf_exponent`.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            topics: 10,
            tables_per_topic: 20,
            columns_per_table: 5,
            rows: 40,
            topic_vocab: 120,
            domain_size: 25,
            generic_rate: 0.5,
            max_tokens_per_cell: 3,
            zipf_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.topics == 0 || self.tables_per_topic == 0 || self.columns_per_table == 0 {
            return bad("topics, tables and columns must be positive");
        }
        if self.rows < MIN_ROWS {
            return bad("synthetic tables need at least 4 rows");
        }
        if self.domain_size == 0 || self.domain_size > self.topic_vocab {
            return bad("domain size must be in 1..=topic vocabulary");
        }
        if !(0.0..1.0).contains(&self.generic_rate) {
            return bad("generic rate must be in [0, 1)");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf exponent must be finite and non-negative");
        }
        if self.max_tokens_per_cell == 0 {
            return bad("cells need at least one token");
        }
        Ok(())
    }
}

/// Synthetic tables with the topic of every table.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub tables: Vec<Table>,
    pub topics: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn topic_of(&self, table_id: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|t| t.table_id == table_id)
            .map(|i| self.topics[i])
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if !GENERIC_WORDS.contains(&w.as_str()) && taken.insert(w.clone()) {
            return w;
        }
    }
}

/// Generates `topics × tables_per_topic` tables. Each column draws cell
/// tokens from its own domain inside the topic vocabulary, mixed with
/// generic words shared across topics. Column names are unique pseudo-words.
pub fn synthetic_tables(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = HashSet::new();
    let vocabs: Vec<Vec<String>> = (0..spec.topics)
        .map(|_| {
            (0..spec.topic_vocab)
                .map(|_| pseudo_word(&mut rng, &mut taken))
                .collect()
        })
        .collect();
    let weights: Vec<f64> = (1..=spec.domain_size)
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let rank = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut tables = Vec::new();
    let mut topics = Vec::new();
    for (t, vocab) in vocabs.iter().enumerate() {
        for b in 0..spec.tables_per_topic {
            let mut headers = Vec::with_capacity(spec.columns_per_table);
            let mut domains = Vec::with_capacity(spec.columns_per_table);
            for _ in 0..spec.columns_per_table {
                headers.push(pseudo_word(&mut rng, &mut taken));
                let mut d: Vec<&str> = vocab.iter().map(String::as_str).collect();
                d.shuffle(&mut rng);
                d.truncate(spec.domain_size);
                domains.push(d);
            }
            let rows: Vec<Vec<String>> = (0..spec.rows)
                .map(|_| {
                    domains
                        .iter()
                        .map(|d| {
                            let n = rng.random_range(1..=spec.max_tokens_per_cell);
                            let words: Vec<&str> = (0..n)
                                .map(|_| {
                                    if rng.random_bool(spec.generic_rate) {
                                        *GENERIC_WORDS.choose(&mut rng).unwrap()
                                    } else {
                                        d[rank.sample(&mut rng)]
                                    }
                                })
                                .collect();
                            words.join(" ")
                        })
                        .collect()
                })
                .collect();
            let id = format!("t{t:02}_b{b:02}");
            tables.push(Table::from_rows(id.clone(), id, headers, rows, "").0);
            topics.push(t);
        }
    }
    Ok(SyntheticCorpus { tables, topics })
}

/// Derivation parameters. Ranges are inclusive and sampled uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub derived_per_base: usize,
    pub row_fraction: (f64, f64),
    pub projection_size: (usize, usize),
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            derived_per_base: 20,
            row_fraction: (0.3, 0.8),
            projection_size: (2, 4),
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.row_fraction;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("invalid row fraction range {lo}..{hi}")));
        }
        let (a, b) = self.projection_size;
        if a == 0 || a > b {
            return Err(Error::Config(format!("invalid projection size range {a}..{b}")));
        }
        if self.derived_per_base == 0 {
            return Err(Error::Config("derived count must be positive".into()));
        }
        Ok(())
    }
}

/// Where a derived table came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub table_id: String,
    pub base_table_id: String,
    pub base_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    answers: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    /// Same base and at least one shared base column.
    pub fn from_provenance(prov: &[Provenance]) -> Self {
        let mut answers: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for a in prov {
            let set = answers.entry(a.table_id.clone()).or_default();
            for b in prov {
                if a.table_id != b.table_id
                    && a.base_table_id == b.base_table_id
                    && a.base_columns.iter().any(|c| b.base_columns.contains(c))
                {
                    set.insert(b.table_id.clone());
                }
            }
        }
        Self { answers }
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.answers.keys().map(String::as_str)
    }

    pub fn answers(&self, query: &str) -> Option<&BTreeSet<String>> {
        self.answers.get(query)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn avg_answer_size(&self) -> f64 {
        if self.answers.is_empty() {
            return 0.0;
        }
        self.answers.values().map(BTreeSet::len).sum::<usize>() as f64 / self.answers.len() as f64
    }

    /// One `query_table_id,answer_table_id` row per pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_table_id,answer_table_id\n");
        for (q, set) in &self.answers {
            for a in set {
                out.push_str(&format!("{q},{a}\n"));
            }
        }
        out
    }

    /// Parses the pair format. Queries with no answers cannot be expressed;
    /// list them in `queries` to keep them.
    pub fn from_csv(bytes: &[u8], queries: &[String]) -> Result<Self> {
        let mut answers: BTreeMap<String, BTreeSet<String>> =
            queries.iter().map(|q| (q.clone(), BTreeSet::new())).collect();
        let mut rd = csv::ReaderBuilder::new().from_reader(bytes);
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::Malformed(format!("ground truth: {e}")))?;
            if rec.len() != 2 {
                return Err(Error::Malformed(format!("ground truth row has {} fields", rec.len())));
            }
            answers
                .entry(rec[0].to_string())
                .or_default()
                .insert(rec[1].to_string());
        }
        Ok(Self { answers })
    }
}

/// Derives the benchmark tables from `bases`. Every derived table is a query.
pub fn generate_benchmark(bases: &[Table], spec: &BenchmarkSpec) -> Result<(Corpus, GroundTruth, Vec<Provenance>)> {
    spec.validate()?;
    let mut tables = Vec::with_capacity(bases.len() * spec.derived_per_base);
    let mut prov = Vec::with_capacity(tables.capacity());
    for (bi, base) in bases.iter().enumerate() {
        let n_rows = base.row_count();
        let n_cols = base.column_count();
        if n_rows < MIN_ROWS || n_cols == 0 {
            return Err(Error::InsufficientData(format!(
                "base table {} has {n_rows} rows and {n_cols} columns",
                base.table_id
            )));
        }
        for j in 0..spec.derived_per_base {
            let mut rng = ChaCha8Rng::seed_from_u64(combine(combine(spec.seed, bi as u64), j as u64));
            let lo = spec.projection_size.0.min(n_cols);
            let hi = spec.projection_size.1.min(n_cols);
            let p = rng.random_range(lo..=hi);
            let mut cols: Vec<usize> = (0..n_cols).collect();
            cols.shuffle(&mut rng);
            cols.truncate(p);
            cols.sort_unstable();
            let f = rng.random_range(spec.row_fraction.0..=spec.row_fraction.1);
            let keep = ((f * n_rows as f64).round() as usize).clamp(MIN_ROWS, n_rows);
            let mut rows: Vec<usize> = (0..n_rows).collect();
            rows.shuffle(&mut rng);
            rows.truncate(keep);
            rows.sort_unstable();
            let headers = cols.iter().map(|&c| base.headers[c].clone()).collect();
            let data = rows
                .iter()
                .map(|&r| cols.iter().map(|&c| base.columns[c].values[r].clone()).collect())
                .collect();
            let id = format!("{}_d{j:02}", base.table_id);
            tables.push(Table::from_rows(id.clone(), id.clone(), headers, data, "").0);
            prov.push(Provenance {
                table_id: id,
                base_table_id: base.table_id.clone(),
                base_columns: cols,
            });
        }
    }
    let truth = GroundTruth::from_provenance(&prov);
    Ok((Corpus::new(tables)?, truth, prov))
}

/// Per-query precision and recall at `k`.
pub fn query_precision_recall(result: &QueryResult, answers: &BTreeSet<String>, k: usize) -> (f64, f64) {
    let top: Vec<&str> = result.entries.iter().take(k).map(|e| e.table_id.as_str()).collect();
    let hits = top.iter().filter(|t| answers.contains(**t)).count() as f64;
    let p = if top.is_empty() { 0.0 } else { hits / top.len() as f64 };
    let r = if answers.is_empty() {
        0.0
    } else {
        hits / answers.len() as f64
    };
    (p, r)
}

/// Mean precision and recall at `k`. Queries without answers are skipped,
/// since recall is undefined for them.
pub fn precision_recall_at_k(results: &[QueryResult], truth: &GroundTruth, k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let (mut sp, mut sr, mut n) = (0.0, 0.0, 0usize);
    for r in results {
        let answers = truth
            .answers(&r.query_table_id)
            .ok_or_else(|| Error::UnknownTable(format!("query {} not in ground truth", r.query_table_id)))?;
        if answers.is_empty() {
            continue;
        }
        let (p, rc) = query_precision_recall(r, answers, k);
        sp += p;
        sr += rc;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData("no query has a non-empty answer set".into()));
    }
    Ok((sp / n as f64, sr / n as f64))
}

/// `k,mean_precision,mean_recall` rows.
pub fn metrics_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("k,mean_precision,mean_recall\n");
    for (k, p, r) in rows {
        out.push_str(&format!("{k},{p:.6},{r:.6}\n"));
    }
    out
}

/// Exhaustive-candidate oracle sharing every downstream step with the LSH path.
pub fn brute_force_search(index: &SearchIndex, query: &QueryTable, cfg: &SearchConfig) -> Result<QueryResult> {
    index.search(query, cfg, CandidatePool::Exhaustive)
}

/// A deterministic subset of `n` query ids (all of them when `n` ≥ len).
pub fn sample_queries(ids: &[String], n: usize, seed: u64) -> Vec<String> {
    if n >= ids.len() {
        return ids.to_vec();
    }
    let mut v = ids.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v.truncate(n);
    v.sort();
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Index,
    Query,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Index => "index",
            Phase::Query => "query",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub phase: Phase,
    pub items: usize,
    pub total_s: f64,
    pub mean_s: f64,
}

/// Runs `f` over the workload sequentially and times it with a monotonic
/// clock. An empty index workload is a no-op; an empty query workload is an
/// error.
pub fn timing_harness<W, F>(phase: Phase, workload: &[W], mut f: F) -> Result<Timing>
where
    F: FnMut(&W) -> Result<()>,
{
    if workload.is_empty() {
        return match phase {
            Phase::Query => Err(Error::InsufficientData("empty query workload".into())),
            Phase::Index => Ok(Timing {
                phase,
                items: 0,
                total_s: 0.0,
                mean_s: 0.0,
            }),
        };
    }
    let start = Instant::now();
    for w in workload {
        f(w)?;
    }
    let total_s = start.elapsed().as_secs_f64();
    Ok(Timing {
        phase,
        items: workload.len(),
        total_s,
        mean_s: total_s / workload.len() as f64,
    })
}

/// `phase,total_s,mean_s` rows.
pub fn timing_csv(rows: &[Timing]) -> String {
    let mut out = String::from("phase,total_s,mean_s\n");
    for t in rows {
        out.push_str(&format!("{},{:.6},{:.9}\n", t.phase.name(), t.total_s, t.mean_s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::ResultEntry;

    fn base(id: &str, cols: usize, rows: usize) -> Table {
        let headers = (0..cols).map(|c| format!("{id}c{c}")).collect();
        let data = (0..rows)
            .map(|r| (0..cols).map(|c| format!("{id}v{c}_{r}")).collect())
            .collect();
        Table::from_rows(id, id, headers, data, "").0
    }

    fn result(q: &str, ids: &[&str]) -> QueryResult {
        QueryResult {
            query_table_id: q.into(),
            entries: ids
                .iter()
                .map(|t| ResultEntry {
                    table_id: t.to_string(),
                    score: 1.0,
                    matches: vec![],
                })
                .collect(),
        }
    }

    fn truth(pairs: &[(&str, &[&str])]) -> GroundTruth {
        GroundTruth {
            answers: pairs
                .iter()
                .map(|(q, a)| (q.to_string(), a.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }

    #[test]
    fn single_column_base_gives_complete_overlap() {
        let spec = BenchmarkSpec {
            derived_per_base: 10,
            projection_size: (1, 1),
            ..Default::default()
        };
        let (corpus, truth, _) = generate_benchmark(&[base("a", 1, 20)], &spec).unwrap();
        assert_eq!(corpus.len(), 10);
        for q in truth.queries() {
            assert_eq!(truth.answers(q).unwrap().len(), 9);
        }
        assert_eq!(truth.avg_answer_size(), 9.0);
    }

    #[test]
    fn disjoint_bases_have_no_cross_answers() {
        let (_, truth, prov) =
            generate_benchmark(&[base("a", 4, 20), base("b", 3, 10)], &BenchmarkSpec::default()).unwrap();
        for p in &prov {
            for a in truth.answers(&p.table_id).unwrap() {
                assert!(a.starts_with(&p.base_table_id));
            }
        }
    }

    #[test]
    fn truth_is_symmetric_and_irreflexive() {
        let (_, truth, _) = generate_benchmark(&[base("a", 6, 30)], &BenchmarkSpec::default()).unwrap();
        for q in truth.queries() {
            for a in truth.answers(q).unwrap() {
                assert_ne!(a, q);
                assert!(truth.answers(a).unwrap().contains(q));
            }
        }
    }

    #[test]
    fn derived_tables_respect_floors() {
        let spec = BenchmarkSpec {
            row_fraction: (0.01, 0.02),
            ..Default::default()
        };
        let (corpus, _, _) = generate_benchmark(&[base("a", 3, 50)], &spec).unwrap();
        for t in corpus.tables() {
            assert!(t.row_count() >= MIN_ROWS);
            assert!(t.column_count() >= 1);
        }
        assert!(generate_benchmark(&[base("a", 3, 3)], &spec).is_err());
    }

    #[test]
    fn benchmark_is_deterministic() {
        let bases = synthetic_tables(&SyntheticSpec {
            topics: 2,
            tables_per_topic: 2,
            ..Default::default()
        })
        .unwrap();
        let spec = BenchmarkSpec {
            derived_per_base: 3,
            seed: 9,
            ..Default::default()
        };
        let a = generate_benchmark(&bases.tables, &spec).unwrap();
        let b = generate_benchmark(&bases.tables, &spec).unwrap();
        assert_eq!(a.0.tables(), b.0.tables());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let (_, t, prov) = generate_benchmark(&[base("a", 5, 20)], &BenchmarkSpec::default()).unwrap();
        let ids: Vec<String> = prov.iter().map(|p| p.table_id.clone()).collect();
        assert_eq!(GroundTruth::from_csv(t.to_csv().as_bytes(), &ids).unwrap(), t);
    }

    #[test]
    fn precision_recall_examples() {
        let t = truth(&[("q", &["a", "b", "c", "d"])]);
        let exact = precision_recall_at_k(&[result("q", &["a", "b", "c", "d"])], &t, 4).unwrap();
        assert_eq!(exact, (1.0, 1.0));
        let none = precision_recall_at_k(&[result("q", &["x", "y"])], &t, 4).unwrap();
        assert_eq!(none, (0.0, 0.0));
        let half = precision_recall_at_k(&[result("q", &["a", "x", "b", "y"])], &t, 4).unwrap();
        assert_eq!(half, (0.5, 0.5));
        let empty = precision_recall_at_k(&[result("q", &[])], &t, 4).unwrap();
        assert_eq!(empty, (0.0, 0.0));
        assert!(precision_recall_at_k(&[result("z", &["a"])], &t, 4).is_err());
    }

    #[test]
    fn metrics_ignore_query_order() {
        let t = truth(&[("q", &["a", "b"]), ("r", &["c"])]);
        let rs = vec![result("q", &["a", "x"]), result("r", &["c"])];
        let mut rev = rs.clone();
        rev.reverse();
        assert_eq!(
            precision_recall_at_k(&rs, &t, 2).unwrap(),
            precision_recall_at_k(&rev, &t, 2).unwrap()
        );
    }

    #[test]
    fn timing_edge_cases() {
        let none: [u8; 0] = [];
        assert!(timing_harness(Phase::Query, &none, |_| Ok(())).is_err());
        let t = timing_harness(Phase::Index, &none, |_| Ok(())).unwrap();
        assert_eq!(t.total_s, 0.0);
        let t = timing_harness(Phase::Query, &[1, 2, 3], |_| Ok(())).unwrap();
        assert_eq!(t.items, 3);
        assert!(t.mean_s >= 0.0);
    }

    #[test]
    fn synthetic_tables_shape() {
        let spec = SyntheticSpec {
            topics: 3,
            tables_per_topic: 4,
            ..Default::default()
        };
        let s = synthetic_tables(&spec).unwrap();
        assert_eq!(s.tables.len(), 12);
        assert_eq!(s.topic_of("t02_b03"), Some(2));
        assert!(s.tables.iter().all(|t| t.row_count() == spec.rows));
        assert_eq!(synthetic_tables(&spec).unwrap().tables, s.tables);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn recall_is_monotone_in_k(order in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), n_ans in 1usize..8) {
                let names: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
                let ans: Vec<&str> = names[..n_ans].iter().map(String::as_str).collect();
                let t = truth(&[("q", &ans)]);
                let ranked: Vec<&str> = order.iter().map(|&i| names[i].as_str()).collect();
                let r = [result("q", &ranked)];
                let mut prev = 0.0;
                for k in 1..=8 {
                    let (_, rec) = precision_recall_at_k(&r, &t, k).unwrap();
                    prop_assert!(rec >= prev);
                    prev = rec;
                }
            }
        }
    }
}
