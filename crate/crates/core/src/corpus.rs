// SPDX-License-Identifier: Apache-2.0

//! Table ingestion, the in-memory corpus, tokenization and column sampling.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::util::{combine, fnv1a, write_atomic};

/// Identifies a column inside a corpus: `(table_id, position)`.
///
/// Ordering is lexicographic on the table id, then by position, which is
/// the tie-break order used throughout search and indexing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnKey {
    pub table_id: String,
    pub position: usize,
}

impl ColumnKey {
    pub fn new(table_id: impl Into<String>, position: usize) -> Self {
        Self {
            table_id: table_id.into(),
            position,
        }
    }

    fn stable_hash(&self) -> u64 {
        combine(fnv1a(self.table_id.as_bytes()), self.position as u64)
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.table_id, self.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub table_id: String,
    pub position: usize,
    pub name: String,
    pub values: Vec<String>,
}

impl Column {
    pub fn key(&self) -> ColumnKey {
        ColumnKey::new(self.table_id.clone(), self.position)
    }

    pub fn non_empty_values(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(String::as_str).filter(|v| !v.is_empty())
    }

    /// A column is eligible for sampling and embedding when it has at least
    /// one non-empty cell.
    pub fn is_eligible(&self) -> bool {
        self.non_empty_values().next().is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub table_id: String,
    pub name: String,
    pub headers: Vec<String>,
    pub columns: Vec<Column>,
    pub source_path: String,
}

impl Table {
    /// Builds a table from a header row and data rows, padding or truncating
    /// rows to the header width. Returns the table and the number of ragged rows.
    pub fn from_rows(
        table_id: impl Into<String>,
        name: impl Into<String>,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
        source_path: impl Into<String>,
    ) -> (Self, usize) {
        let table_id = table_id.into();
        let width = headers.len();
        let mut ragged = 0;
        let mut columns: Vec<Column> = headers
            .iter()
            .enumerate()
            .map(|(position, h)| Column {
                table_id: table_id.clone(),
                position,
                name: h.clone(),
                values: Vec::with_capacity(rows.len()),
            })
            .collect();
        for mut row in rows {
            if row.len() != width {
                ragged += 1;
                row.resize(width, String::new());
            }
            for (col, cell) in columns.iter_mut().zip(row) {
                col.values.push(cell);
            }
        }
        let table = Table {
            table_id,
            name: name.into(),
            headers,
            columns,
            source_path: source_path.into(),
        };
        (table, ragged)
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<&str> {
        self.columns.iter().map(|c| c.values[i].as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub has_header: bool,
    pub delimiter: u8,
    /// Overrides the table id; defaults to the file stem.
    pub table_id: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            delimiter: b',',
            table_id: None,
        }
    }
}

/// Counters for recoverable problems met during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub ragged_rows: usize,
    pub undecodable_cells: usize,
}

impl IngestReport {
    pub fn warnings(&self) -> usize {
        self.ragged_rows + self.undecodable_cells
    }
}

pub fn load_csv(path: &Path, options: &IngestOptions) -> Result<Table> {
    load_csv_with_report(path, options).map(|(t, _)| t)
}

pub fn load_csv_with_report(path: &Path, options: &IngestOptions) -> Result<(Table, IngestReport)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let table_id = options.table_id.clone().unwrap_or_else(|| stem.clone());
    parse_csv(&bytes, &table_id, &stem, &path.to_string_lossy(), options).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        Error::NoDataRows { .. } => Error::NoDataRows {
            path: path.to_path_buf(),
        },
        other => other,
    })
}

/// Parses CSV bytes. Undecodable byte sequences become U+FFFD and are counted.
pub fn parse_csv(
    bytes: &[u8],
    table_id: &str,
    name: &str,
    source_path: &str,
    options: &IngestOptions,
) -> Result<(Table, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(options.delimiter)
        .from_reader(bytes);
    let mut report = IngestReport::default();
    let decode = |field: &[u8], report: &mut IngestReport| -> String {
        let text = String::from_utf8_lossy(field);
        if matches!(text, std::borrow::Cow::Owned(_)) {
            report.undecodable_cells += 1;
        }
        text.trim().to_string()
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(true) => rows.push(record.iter().map(|f| decode(f, &mut report)).collect()),
            Ok(false) => break,
            Err(source) => {
                return Err(Error::Csv {
                    path: PathBuf::from(source_path),
                    source,
                })
            }
        }
    }
    let headers = if options.has_header {
        if rows.is_empty() {
            Vec::new()
        } else {
            rows.remove(0)
        }
    } else {
        let width = rows.first().map_or(0, Vec::len);
        vec![String::new(); width]
    };
    if rows.is_empty() || headers.is_empty() {
        return Err(Error::NoDataRows {
            path: PathBuf::from(source_path),
        });
    }
    let (table, ragged) = Table::from_rows(table_id, name, headers, rows, source_path);
    report.ragged_rows = ragged;
    Ok((table, report))
}

/// Serializes a table (header row plus data rows) as RFC-4180 CSV.
pub fn table_to_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        path: PathBuf::from(&table.source_path),
        source,
    };
    w.write_record(&table.headers).map_err(csv_err)?;
    for i in 0..table.row_count() {
        w.write_record(table.row(i)).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Malformed(format!("csv flush: {e}")))
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    write_atomic(path, &table_to_csv(table)?)
}

/// One manifest line: `id<TAB>path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub table_id: String,
    pub path: PathBuf,
}

/// Reads a manifest. Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, p) = line
            .split_once('\t')
            .ok_or_else(|| Error::Malformed(format!("{}:{}: expected id<TAB>path", path.display(), lineno + 1)))?;
        let p = PathBuf::from(p.trim());
        let p = if p.is_relative() { base.join(p) } else { p };
        entries.push(ManifestEntry {
            table_id: id.trim().to_string(),
            path: p,
        });
    }
    Ok(entries)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{}\n", e.table_id, e.path.display()))
        .collect()
}

/// Immutable collection of tables with lookup by table id and column key.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    tables: Vec<Table>,
    by_id: HashMap<String, usize>,
    column_count: usize,
}

impl Corpus {
    pub fn new(tables: Vec<Table>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(tables.len());
        for (i, t) in tables.iter().enumerate() {
            if t.headers.len() != t.columns.len() {
                return Err(Error::Malformed(format!(
                    "table {}: {} headers but {} columns",
                    t.table_id,
                    t.headers.len(),
                    t.columns.len()
                )));
            }
            if by_id.insert(t.table_id.clone(), i).is_some() {
                return Err(Error::DuplicateKey(t.table_id.clone()));
            }
        }
        let column_count = tables.iter().map(Table::column_count).sum();
        Ok(Self {
            tables,
            by_id,
            column_count,
        })
    }

    /// Loads every table listed in a manifest. Tables are ordered by path.
    pub fn load_manifest(path: &Path, options: &IngestOptions) -> Result<Self> {
        let mut entries = read_manifest(path)?;
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let tables = entries
            .par_iter()
            .map(|e| {
                let opts = IngestOptions {
                    table_id: Some(e.table_id.clone()),
                    ..options.clone()
                };
                load_csv(&e.path, &opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tables)
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn column_count(&self) -> usize {
        self.column_count
    }

    pub fn table(&self, table_id: &str) -> Option<&Table> {
        self.by_id.get(table_id).map(|&i| &self.tables[i])
    }

    pub fn column(&self, key: &ColumnKey) -> Option<&Column> {
        self.table(&key.table_id).and_then(|t| t.columns.get(key.position))
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.tables.iter().flat_map(|t| t.columns.iter())
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSample {
    pub column_key: ColumnKey,
    pub sampled_values: Vec<String>,
    pub seed_used: u64,
}

/// Uniform sampling with replacement from the non-empty cells of `column`.
/// Deterministic in `(column_key, s, seed)`.
pub fn sample_column(column: &Column, s: usize, seed: u64) -> Result<ColumnSample> {
    let pool: Vec<&str> = column.non_empty_values().collect();
    if pool.is_empty() {
        return Err(Error::EmptyColumn(column.key().to_string()));
    }
    let key = column.key();
    let seed_used = combine(seed, key.stable_hash());
    let mut rng = ChaCha8Rng::seed_from_u64(seed_used);
    let sampled_values = (0..s)
        .map(|_| pool[rng.random_range(0..pool.len())].to_string())
        .collect();
    Ok(ColumnSample {
        column_key: key,
        sampled_values,
        seed_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> (Table, IngestReport) {
        parse_csv(text.as_bytes(), "t", "t", "t.csv", &IngestOptions::default()).unwrap()
    }

    fn col(values: &[&str]) -> Column {
        Column {
            table_id: "t".into(),
            position: 0,
            name: "c".into(),
            values: values.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn parses_simple_file() {
        let (t, r) = parse("a,b\n1,2\n3,4");
        assert_eq!(t.headers, vec!["a", "b"]);
        assert_eq!(t.row_count(), 2);
        assert_eq!(t.column_count(), 2);
        assert_eq!(t.columns[1].values, vec!["2", "4"]);
        assert_eq!(r.warnings(), 0);
    }

    #[test]
    fn ragged_rows_are_fixed_and_counted() {
        let (t, r) = parse("a,b\n1,2,3\n4\n");
        assert_eq!(t.row(0), vec!["1", "2"]);
        assert_eq!(t.row(1), vec!["4", ""]);
        assert_eq!(r.ragged_rows, 2);
    }

    #[test]
    fn crlf_quotes_and_trimming() {
        let (t, _) = parse("x, y\r\n\" Very Large, Data \",  2\r\n");
        assert_eq!(t.headers, vec!["x", "y"]);
        assert_eq!(t.row(0), vec!["Very Large, Data", "2"]);
    }

    #[test]
    fn figure_one_fragment() {
        let text = "id,title,authors,venue,year\n\
            1,A Database Approach,Jerry X,Very Large Data Bases,2007\n\
            2,Graph Indexing,\"J Cheng, Y Ke\",SIGMOD,2009\n";
        let (t, _) = parse(text);
        assert_eq!(t.column_count(), 5);
        assert!(t.columns[3].values.iter().any(|v| v == "Very Large Data Bases"));
    }

    #[test]
    fn invalid_utf8_is_replaced_not_fatal() {
        let mut bytes = b"a,b\n".to_vec();
        bytes.extend_from_slice(&[b'x', 0xff, b',', b'y', b'\n']);
        let (t, r) = parse_csv(&bytes, "t", "t", "t.csv", &IngestOptions::default()).unwrap();
        assert_eq!(r.undecodable_cells, 1);
        assert_eq!(t.columns[0].values[0], "x\u{fffd}");
    }

    #[test]
    fn header_only_file_is_rejected() {
        let err = parse_csv(b"a,b\n", "t", "t", "t.csv", &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoDataRows { .. }));
    }

    #[test]
    fn missing_file_is_input_error() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), &IngestOptions::default()).unwrap_err();
        assert_eq!(err.category(), crate::ErrorCategory::Input);
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Very Large Data Bases"),
            vec!["very", "large", "data", "bases"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("J Cheng, Y Ke"), vec!["j", "cheng", "y", "ke"]);
        assert_eq!(tokenize("ACM-2007"), vec!["acm", "2007"]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = col(&["a", "b", "c"]);
        assert_eq!(sample_column(&c, 3, 7).unwrap(), sample_column(&c, 3, 7).unwrap());
    }

    #[test]
    fn single_value_sampling_repeats() {
        let c = col(&["a", "", ""]);
        assert_eq!(sample_column(&c, 4, 0).unwrap().sampled_values, vec!["a"; 4]);
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let c = col(&["a", "b"]);
        let s = sample_column(&c, 1000, 1).unwrap();
        let freq = s.sampled_values.iter().filter(|v| *v == "a").count() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&freq), "freq {freq}");
    }

    #[test]
    fn all_empty_column_cannot_be_sampled() {
        assert!(matches!(
            sample_column(&col(&["", ""]), 3, 0),
            Err(Error::EmptyColumn(_))
        ));
    }

    #[test]
    fn corpus_lookup_and_duplicates() {
        let (t1, _) = Table::from_rows("a", "a", vec!["x".into()], vec![vec!["1".into()]], "");
        let (t2, _) = Table::from_rows("b", "b", vec!["x".into(), "y".into()], vec![], "");
        let corpus = Corpus::new(vec![t1.clone(), t2]).unwrap();
        assert_eq!(corpus.column_count(), 3);
        assert_eq!(corpus.column(&ColumnKey::new("b", 1)).unwrap().name, "y");
        assert!(corpus.column(&ColumnKey::new("b", 2)).is_none());
        assert!(matches!(Corpus::new(vec![t1.clone(), t1]), Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.csv"), "h\n2\n").unwrap();
        std::fs::write(dir.path().join("a.csv"), "h\n1\n").unwrap();
        std::fs::write(dir.path().join("m.tsv"), "tb\tb.csv\nta\ta.csv\n").unwrap();
        let corpus = Corpus::load_manifest(&dir.path().join("m.tsv"), &IngestOptions::default()).unwrap();
        let ids: Vec<_> = corpus.tables().iter().map(|t| t.table_id.as_str()).collect();
        assert_eq!(ids, vec!["ta", "tb"]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(
            rows in prop::collection::vec(
                prop::collection::vec("[a-zA-Z0-9,\"]([a-zA-Z0-9 ,\"\n]{0,8}[a-zA-Z0-9,\"])?", 3),
                1..6)
        ) {
            let headers = vec!["h0".to_string(), "h1".into(), "h2".into()];
            let (t, _) = Table::from_rows("t", "t", headers, rows, "t.csv");
            let bytes = table_to_csv(&t).unwrap();
            let (back, report) = parse_csv(&bytes, "t", "t", "t.csv", &IngestOptions::default()).unwrap();
            prop_assert_eq!(report.warnings(), 0);
            prop_assert_eq!(back.columns, t.columns);
        }
    }
}
