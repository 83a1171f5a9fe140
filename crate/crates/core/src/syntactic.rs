// SPDX-License-Identifier: Apache-2.0

//! Syntactic column measures, each a Jaccard similarity between sets:
//! name q-grams (N), top TF-IDF value terms (V) and value format patterns (F).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::corpus::{tokenize, Column, ColumnKey, Corpus};
use crate::error::{Error, Result};

pub const DEFAULT_QGRAM: usize = 3;
pub const DEFAULT_TOP_TERMS: usize = 20;

/// Pattern alphabet used by [`format_pattern`]; recorded in model files.
pub const FORMAT_ALPHABET: &str = "digit=9;letter=a;space=_;other=verbatim;collapse=9a_";

/// A column similarity measure. `Semantic` is embedding cosine; the others
/// are syntactic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    Semantic,
    Name,
    Value,
    Format,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Semantic, Measure::Name, Measure::Value, Measure::Format];

    pub fn code(self) -> &'static str {
        match self {
            Measure::Semantic => "semantic",
            Measure::Name => "N",
            Measure::Value => "V",
            Measure::Format => "F",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "semantic" | "S" | "s" => Ok(Measure::Semantic),
            "N" | "n" | "name" => Ok(Measure::Name),
            "V" | "v" | "value" => Ok(Measure::Value),
            "F" | "f" | "format" => Ok(Measure::Format),
            other => Err(Error::Config(format!("unknown measure {other:?}"))),
        }
    }
}

/// Parses a comma-separated measure list such as `semantic,N,V`.
pub fn parse_measures(s: &str) -> Result<Vec<Measure>> {
    let mut out: Vec<Measure> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntacticConfig {
    pub qgram: usize,
    pub top_terms: usize,
}

impl Default for SyntacticConfig {
    fn default() -> Self {
        Self {
            qgram: DEFAULT_QGRAM,
            top_terms: DEFAULT_TOP_TERMS,
        }
    }
}

/// Set representations of one column. Every set is sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntacticProfile {
    pub column_key: ColumnKey,
    pub name_qgrams: Vec<String>,
    pub value_terms: Vec<String>,
    pub format_patterns: Vec<String>,
}

impl SyntacticProfile {
    pub fn build(column: &Column, tfidf: &TfidfModel, cfg: &SyntacticConfig) -> Self {
        Self {
            column_key: column.key(),
            name_qgrams: name_qgrams(&column.name, cfg.qgram),
            value_terms: value_terms(column, tfidf, cfg.top_terms),
            format_patterns: format_patterns(column),
        }
    }

    pub fn set(&self, kind: Measure) -> &[String] {
        match kind {
            Measure::Name => &self.name_qgrams,
            Measure::Value => &self.value_terms,
            Measure::Format => &self.format_patterns,
            Measure::Semantic => &[],
        }
    }
}

/// Lowercased, non-alphanumerics stripped, sliding windows of `q` characters.
/// Names shorter than `q` give the singleton `{name}`.
pub fn name_qgrams(name: &str, q: usize) -> Vec<String> {
    let chars: Vec<char> = name
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    if chars.is_empty() {
        return Vec::new();
    }
    let q = q.max(1);
    if chars.len() < q {
        return vec![chars.into_iter().collect()];
    }
    let set: BTreeSet<String> = chars.windows(q).map(|w| w.iter().collect()).collect();
    set.into_iter().collect()
}

/// Document frequencies over a corpus where each column is one document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TfidfModel {
    df: HashMap<String, usize>,
    column_count: usize,
}

impl TfidfModel {
    pub fn build(corpus: &Corpus) -> Self {
        Self::from_columns(corpus.columns())
    }

    pub fn from_columns<'a>(columns: impl IntoIterator<Item = &'a Column>) -> Self {
        let mut model = TfidfModel::default();
        for column in columns {
            model.column_count += 1;
            let tokens: BTreeSet<String> = column.non_empty_values().flat_map(tokenize).collect();
            for t in tokens {
                *model.df.entry(t).or_insert(0) += 1;
            }
        }
        model
    }

    /// Rebuilds a model from stored parts (e.g. an index file).
    pub fn from_parts(column_count: usize, df: impl IntoIterator<Item = (String, usize)>) -> Self {
        Self {
            df: df.into_iter().filter(|(_, n)| *n > 0).collect(),
            column_count,
        }
    }

    pub fn column_count(&self) -> usize {
        self.column_count
    }

    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    /// Entries sorted by token.
    pub fn entries(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<_> = self.df.iter().map(|(k, &n)| (k.as_str(), n)).collect();
        v.sort_unstable();
        v
    }

    /// `log(1 + N / df)`; unseen tokens are treated as df = 1.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df(token).max(1) as f64;
        (1.0 + self.column_count.max(1) as f64 / df).ln()
    }
}

/// The `t` highest-scoring tokens of `column` by `tf · log(1 + N/df)`,
/// ties broken lexicographically. Returned sorted.
pub fn value_terms(column: &Column, tfidf: &TfidfModel, t: usize) -> Vec<String> {
    let mut tf: HashMap<String, usize> = HashMap::new();
    for token in column.non_empty_values().flat_map(tokenize) {
        *tf.entry(token).or_insert(0) += 1;
    }
    let mut scored: Vec<(f64, String)> = tf
        .into_iter()
        .map(|(tok, n)| (n as f64 * tfidf.idf(&tok), tok))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut top: Vec<String> = scored.into_iter().take(t).map(|(_, tok)| tok).collect();
    top.sort();
    top
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Digit,
    Letter,
    Space,
}

/// Character-class pattern of a value: digits become `9`, letters `a`,
/// whitespace `_`; other characters are kept. Runs of the same class
/// collapse to one symbol.
pub fn format_pattern(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut last: Option<Class> = None;
    for c in value.chars() {
        let class = if c.is_numeric() {
            Some(Class::Digit)
        } else if c.is_alphabetic() {
            Some(Class::Letter)
        } else if c.is_whitespace() {
            Some(Class::Space)
        } else {
            None
        };
        match class {
            Some(k) if last == Some(k) => {}
            Some(k) => out.push(match k {
                Class::Digit => '9',
                Class::Letter => 'a',
                Class::Space => '_',
            }),
            None => out.push(c),
        }
        last = class;
    }
    out
}

pub fn format_patterns(column: &Column) -> Vec<String> {
    let set: BTreeSet<String> = column.non_empty_values().map(format_pattern).collect();
    set.into_iter().collect()
}

/// Jaccard similarity of two sorted, deduplicated slices. Two empty sets
/// score 0.
pub fn jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Syntactic similarity of two profiles. `Semantic` is not a syntactic
/// measure and yields 0.
pub fn measure(kind: Measure, a: &SyntacticProfile, b: &SyntacticProfile) -> f64 {
    match kind {
        Measure::Semantic => 0.0,
        k => jaccard(a.set(k), b.set(k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(id: &str, name: &str, values: &[&str]) -> Column {
        Column {
            table_id: id.into(),
            position: 0,
            name: name.into(),
            values: values.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn qgram_examples() {
        assert_eq!(name_qgrams("year", 3), vec!["ear", "yea"]);
        assert_eq!(name_qgrams("ab", 3), vec!["ab"]);
        assert!(name_qgrams("", 3).is_empty());
        assert_eq!(name_qgrams("Cited_URL", 3), name_qgrams("citedurl", 3));
        let j = jaccard(&name_qgrams("year", 3), &name_qgrams("years", 3));
        assert!((j - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_pattern("2007"), "9");
        assert_eq!(format_pattern("J Cheng"), "a_a");
        assert_eq!(format_pattern("https://x.y"), "a://a.a");
        assert_eq!(format_pattern("March 2007"), "a_9");
        assert_eq!(format_pattern(""), "");
    }

    #[test]
    fn format_measure_years_vs_month_year() {
        let tf = TfidfModel::default();
        let cfg = SyntacticConfig::default();
        let a = SyntacticProfile::build(&column("a", "year", &["2007", "2009", "1999"]), &tf, &cfg);
        let b = SyntacticProfile::build(&column("b", "date", &["March 2007", "June 2010"]), &tf, &cfg);
        assert_eq!(a.format_patterns, vec!["9"]);
        assert_eq!(b.format_patterns, vec!["a_9"]);
        assert_eq!(measure(Measure::Format, &a, &b), 0.0);
    }

    #[test]
    fn tfidf_prefers_rare_terms() {
        // a: rare1, rare2, common; b, c: common plus filler
        let cols = [
            column("a", "x", &["rare1 common", "rare2"]),
            column("b", "x", &["common filler"]),
            column("c", "x", &["common"]),
        ];
        let tf = TfidfModel::from_columns(&cols);
        assert_eq!(tf.df("common"), 3);
        assert_eq!(tf.df("rare1"), 1);
        // common: 1·ln(1+3/3) = 0.693; rare1, rare2: 1·ln(1+3/1) = 1.386
        assert!((tf.idf("common") - 2f64.ln()).abs() < 1e-12);
        assert!((tf.idf("rare1") - 4f64.ln()).abs() < 1e-12);
        assert_eq!(value_terms(&cols[0], &tf, 2), vec!["rare1", "rare2"]);
        assert_eq!(value_terms(&cols[0], &tf, 5), vec!["common", "rare1", "rare2"]);
    }

    #[test]
    fn value_terms_break_ties_lexicographically() {
        let cols = [column("a", "x", &["b a c"])];
        let tf = TfidfModel::from_columns(&cols);
        assert_eq!(value_terms(&cols[0], &tf, 2), vec!["a", "b"]);
        assert!(value_terms(&column("e", "x", &["", ""]), &tf, 2).is_empty());
    }

    #[test]
    fn measure_identity_and_disjointness() {
        let cols = [
            column("a", "venue", &["VLDB", "SIGMOD 2009"]),
            column("b", "venue", &["VLDB", "SIGMOD 2009"]),
            column("c", "zz", &["$$"]),
        ];
        let tf = TfidfModel::from_columns(&cols);
        let cfg = SyntacticConfig::default();
        let p: Vec<_> = cols.iter().map(|c| SyntacticProfile::build(c, &tf, &cfg)).collect();
        for k in [Measure::Name, Measure::Value, Measure::Format] {
            assert_eq!(measure(k, &p[0], &p[1]), 1.0);
        }
        assert_eq!(measure(Measure::Name, &p[0], &p[2]), 0.0);
        assert_eq!(measure(Measure::Value, &p[0], &p[2]), 0.0);
    }

    #[test]
    fn empty_sets_score_zero() {
        let e: [String; 0] = [];
        assert_eq!(jaccard(&e, &e), 0.0);
    }

    #[test]
    fn value_terms_independent_of_corpus_order() {
        let cols = vec![
            column("a", "x", &["alpha beta", "beta gamma"]),
            column("b", "x", &["beta delta"]),
            column("c", "x", &["gamma"]),
        ];
        let tf1 = TfidfModel::from_columns(&cols);
        let rev: Vec<Column> = cols.iter().rev().cloned().collect();
        let tf2 = TfidfModel::from_columns(&rev);
        for c in &cols {
            assert_eq!(value_terms(c, &tf1, 2), value_terms(c, &tf2, 2));
        }
    }

    #[test]
    fn measure_parsing() {
        assert_eq!(
            parse_measures("semantic,V,N").unwrap(),
            vec![Measure::Semantic, Measure::Name, Measure::Value]
        );
        assert!(parse_measures("semantic,Q").is_err());
    }

    proptest! {
        #[test]
        fn format_pattern_is_idempotent(s in "\\PC{0,20}") {
            let p = format_pattern(&s);
            prop_assert_eq!(format_pattern(&p), p);
        }

        #[test]
        fn jaccard_symmetric_and_bounded(
            a in prop::collection::btree_set(0u8..20, 0..10),
            b in prop::collection::btree_set(0u8..20, 0..10),
        ) {
            let a: Vec<_> = a.into_iter().collect();
            let b: Vec<_> = b.into_iter().collect();
            let j = jaccard(&a, &b);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j, jaccard(&b, &a));
            if !a.is_empty() {
                prop_assert_eq!(jaccard(&a, &a), 1.0);
            }
        }
    }
}
