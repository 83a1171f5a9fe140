// SPDX-License-Identifier: Apache-2.0

//! `tabunion` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 input error, 4 config error,
//! 5 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use tabunion::bench::{
    brute_force_search, generate_benchmark, metrics_csv, precision_recall_at_k, sample_queries, synthetic_tables,
    timing_csv, timing_harness, BenchmarkSpec, GroundTruth, Phase, SyntheticSpec, Timing,
};
use tabunion::contrast::{
    build_offline_pairs, loss_history_csv, offline_pairs_from_csv, offline_pairs_to_csv, pairs_fingerprint, train,
    Strategy, DEFAULT_OFFLINE_FLOOR,
};
use tabunion::corpus::{load_csv_with_report, manifest_to_string, write_csv, Corpus, IngestOptions, ManifestEntry};
use tabunion::encoder::{Backend, Encoder, EncoderConfig, TokenMode};
use tabunion::model::{IndexFile, Model, StrategyKind};
use tabunion::projection::TrainConfig;
use tabunion::search::{results_to_csv, IndexConfig, QueryResult, SearchConfig, DEFAULT_THRESHOLD};
use tabunion::syntactic::{parse_measures, Measure, SyntacticConfig};
use tabunion::util::write_atomic;
use tabunion::{Error, ErrorCategory, Result};

#[derive(Parser, Debug)]
#[command(
    name = "tabunion",
    version,
    about = "Table union search over learned column embeddings"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a projection head on a corpus and write a model file.
    Train(TrainArgs),
    /// Embed and index every column of a corpus.
    Index(IndexArgs),
    /// Print index statistics.
    Stats(StatsArgs),
    /// Find the top-k union-able tables for a query CSV.
    Query(QueryArgs),
    /// Evaluate an index against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic benchmark corpus and its ground truth.
    Benchgen(BenchgenArgs),
}

#[derive(Args, Debug, Clone)]
struct CsvArgs {
    /// Treat the first row as data rather than a header.
    #[arg(long)]
    no_header: bool,
    /// Field delimiter (one ASCII character).
    #[arg(long, default_value = ",")]
    delimiter: String,
}

impl CsvArgs {
    fn options(&self) -> Result<IngestOptions> {
        let d = self.delimiter.as_bytes();
        if d.len() != 1 {
            return Err(Error::Config(format!(
                "delimiter must be one byte, got {:?}",
                self.delimiter
            )));
        }
        Ok(IngestOptions {
            has_header: !self.no_header,
            delimiter: d[0],
            table_id: None,
        })
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum StrategyArg {
    Online,
    Offline,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum TokenModeArg {
    Word,
    Cell,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus manifest: one `table_id<TAB>path` per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file.
    #[arg(long = "model")]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "online")]
    strategy: StrategyArg,
    /// Offline pair cache; built and written when missing.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Minimum match score for an offline pair.
    #[arg(long, default_value_t = DEFAULT_OFFLINE_FLOOR)]
    offline_floor: f64,
    /// Maximum number of offline pairs.
    #[arg(long, default_value_t = 100_000)]
    offline_cap: usize,
    /// Loss history CSV (default: `<model>.loss.csv`).
    #[arg(long)]
    loss_history: Option<PathBuf>,
    /// Skip training and write a freshly initialized head.
    #[arg(long)]
    untrained: bool,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    sample_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.1)]
    temperature: f64,
    /// Base embedding dimension for the hashing encoder.
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    out_dim: usize,
    /// Pretrained `word v1 .. vD` vector file; unknown words fall back to hashing.
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "word")]
    token_mode: TokenModeArg,
    #[arg(long, default_value_t = 0)]
    hash_seed: u64,
    #[command(flatten)]
    csv: CsvArgs,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long = "model")]
    model: PathBuf,
    /// Output index file.
    #[arg(long = "index")]
    index: PathBuf,
    /// Measures to support; MinHash indexes are built for N and V.
    #[arg(long, default_value = "semantic,N,V")]
    measures: String,
    #[arg(long, default_value_t = tabunion::lsh::DEFAULT_COSINE_BANDS)]
    bands: usize,
    #[arg(long, default_value_t = tabunion::lsh::DEFAULT_COSINE_ROWS)]
    rows: usize,
    #[arg(long, default_value_t = tabunion::lsh::DEFAULT_MINHASH_BANDS)]
    minhash_bands: usize,
    #[arg(long, default_value_t = tabunion::lsh::DEFAULT_MINHASH_ROWS)]
    minhash_rows: usize,
    #[arg(long, default_value_t = tabunion::syntactic::DEFAULT_QGRAM)]
    qgram: usize,
    #[arg(long, default_value_t = tabunion::syntactic::DEFAULT_TOP_TERMS)]
    top_terms: usize,
    /// Timing CSV for the indexing phase.
    #[arg(long)]
    timing: Option<PathBuf>,
    #[command(flatten)]
    csv: CsvArgs,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long = "index")]
    index: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Comma-separated subset of semantic,N,V,F; must include semantic.
    #[arg(long, default_value = "semantic")]
    measures: String,
    /// Keep the query's own table among the candidates.
    #[arg(long)]
    include_self: bool,
    /// Score every indexed column instead of using LSH candidates.
    #[arg(long)]
    brute_force: bool,
}

impl SearchArgs {
    fn config(&self, k: usize) -> Result<SearchConfig> {
        let cfg = SearchConfig {
            k,
            threshold: self.threshold,
            measures: parse_measures(&self.measures)?,
            exclude_self: !self.include_self,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long = "index")]
    index: PathBuf,
    /// Query table CSV.
    #[arg(long)]
    table: PathBuf,
    /// Query table id (default: file stem).
    #[arg(long)]
    table_id: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Results CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    csv: CsvArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long = "index")]
    index: PathBuf,
    /// Ground truth CSV: query_table_id,answer_table_id.
    #[arg(long)]
    truth: PathBuf,
    /// Cutoffs, comma separated (default: rounded average answer size).
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Evaluate a seeded sample of this many queries.
    #[arg(long)]
    sample_queries: Option<usize>,
    /// Metrics CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the ranked results.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Time queries sequentially and write a timing CSV.
    #[arg(long)]
    timing: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args, Debug)]
struct BenchgenArgs {
    /// Output directory; receives tables/, manifest.tsv and truth.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Manifest of base tables (default: synthetic topic tables).
    #[arg(long)]
    bases: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 2)]
    bases_per_topic: usize,
    #[arg(long, default_value_t = 5)]
    columns: usize,
    #[arg(long, default_value_t = 40)]
    rows: usize,
    #[arg(long, default_value_t = 20)]
    derived: usize,
    #[arg(long, default_value_t = 0.3)]
    min_row_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    max_row_fraction: f64,
    #[arg(long, default_value_t = 2)]
    min_columns: usize,
    #[arg(long, default_value_t = 4)]
    max_columns: usize,
    #[command(flatten)]
    csv: CsvArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Input => 3,
        ErrorCategory::Config => 4,
        ErrorCategory::Numeric => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(4);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    let seed = cli.seed;
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, seed),
        Command::Index(a) => cmd_index(a, seed),
        Command::Stats(a) => cmd_stats(a),
        Command::Query(a) => cmd_query(a),
        Command::Eval(a) => cmd_eval(a, seed),
        Command::Benchgen(a) => cmd_benchgen(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    let train_cfg = TrainConfig {
        temperature: a.temperature,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
        sample_size: a.sample_size,
        seed,
    };
    train_cfg.validate()?;
    let enc_cfg = EncoderConfig {
        backend: if a.vectors.is_some() {
            Backend::VectorFile
        } else {
            Backend::Hashing
        },
        dim: a.dim,
        vector_file_path: a.vectors.clone(),
        hash_seed: a.hash_seed,
        token_mode: match a.token_mode {
            TokenModeArg::Word => TokenMode::Word,
            TokenModeArg::Cell => TokenMode::Cell,
        },
    };
    let corpus = Corpus::load_manifest(&a.manifest, &a.csv.options()?)?;
    let encoder = Encoder::new(enc_cfg)?;
    let mut model = Model::untrained(encoder.config().clone(), a.hidden_dim, a.out_dim, seed)?;
    model.train = train_cfg.clone();
    if a.untrained {
        model.save(&a.model)?;
        println!("wrote untrained model {}", a.model.display());
        return Ok(());
    }

    let strategy = match a.strategy {
        StrategyArg::Online => Strategy::Online,
        StrategyArg::Offline => {
            let path = a.pairs.clone().unwrap_or_else(|| sibling(&a.model, ".pairs.csv"));
            let pairs = if path.exists() {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                offline_pairs_from_csv(&bytes)?
            } else {
                let pairs = build_offline_pairs(&corpus, a.offline_floor, a.offline_cap, &SyntacticConfig::default())?;
                write_atomic(&path, &offline_pairs_to_csv(&pairs)?)?;
                println!("cached {} offline pairs in {}", pairs.len(), path.display());
                pairs
            };
            model.pairs_fingerprint = pairs_fingerprint(&pairs);
            Strategy::Offline(pairs)
        }
    };
    let start = Instant::now();
    let out = train(&corpus, &encoder, model.head.clone(), &train_cfg, &strategy)?;
    model.head = out.head;
    model.velocity = out.velocity;
    model.selected_epoch = out.selected_epoch;
    model.strategy = match a.strategy {
        StrategyArg::Online => StrategyKind::Online,
        StrategyArg::Offline => StrategyKind::Offline,
    };
    let history = a.loss_history.unwrap_or_else(|| sibling(&a.model, ".loss.csv"));
    write_atomic(&history, loss_history_csv(&out.history).as_bytes())?;
    model.save(&a.model)?;
    println!(
        "trained {} epochs in {:.1}s (selected epoch {}); model {}",
        train_cfg.epochs,
        start.elapsed().as_secs_f64(),
        out.selected_epoch,
        a.model.display()
    );
    println!("loss history: {}", history.display());
    Ok(())
}

fn cmd_index(a: IndexArgs, seed: u64) -> Result<()> {
    let measures = parse_measures(&a.measures)?;
    let cfg = IndexConfig {
        cosine_bands: a.bands,
        cosine_rows: a.rows,
        minhash_bands: a.minhash_bands,
        minhash_rows: a.minhash_rows,
        seed,
        syntactic: SyntacticConfig {
            qgram: a.qgram,
            top_terms: a.top_terms,
        },
        name_index: measures.contains(&Measure::Name),
        value_index: measures.contains(&Measure::Value),
    };
    let model = Model::load(&a.model)?;
    let corpus = Corpus::load_manifest(&a.manifest, &a.csv.options()?)?;
    let start = Instant::now();
    let file = IndexFile::build(model, &corpus, cfg)?;
    let total_s = start.elapsed().as_secs_f64();
    file.save(&a.index)?;
    let columns = file.index.column_count();
    println!(
        "indexed {columns} of {} columns from {} tables in {total_s:.3}s ({} skipped as empty)",
        corpus.column_count(),
        corpus.len(),
        corpus.column_count() - columns
    );
    if let Some(path) = a.timing {
        let t = Timing {
            phase: Phase::Index,
            items: columns,
            total_s,
            mean_s: if columns == 0 { 0.0 } else { total_s / columns as f64 },
        };
        write_atomic(&path, timing_csv(&[t]).as_bytes())?;
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let f = IndexFile::load(&a.index)?;
    let ix = &f.index;
    let cfg = ix.config();
    let total: usize = ix.tables().iter().map(|t| t.column_names.len()).sum();
    println!("tables\t{}", ix.tables().len());
    println!("columns\t{total}");
    println!("indexed_columns\t{}", ix.column_count());
    println!("skipped_columns\t{}", total - ix.column_count());
    println!("embedding_dim\t{}", ix.dim());
    println!("cosine_bands\t{}", cfg.cosine_bands);
    println!("cosine_rows\t{}", cfg.cosine_rows);
    println!("name_index\t{}", cfg.name_index);
    println!("value_index\t{}", cfg.value_index);
    println!("strategy\t{}", f.model.strategy.name());
    println!("encoder_dim\t{}", f.model.encoder.dim);
    Ok(())
}

fn run_search(f: &IndexFile, q: &tabunion::search::QueryTable, cfg: &SearchConfig, brute: bool) -> Result<QueryResult> {
    if brute {
        brute_force_search(&f.index, q, cfg)
    } else {
        f.index.top_k_search(q, cfg)
    }
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let cfg = a.search.config(a.k)?;
    let mut opts = a.csv.options()?;
    opts.table_id = a.table_id.clone();
    let (table, report) = load_csv_with_report(&a.table, &opts)?;
    if report.warnings() > 0 {
        eprintln!(
            "warning: {} ragged rows, {} undecodable cells in {}",
            report.ragged_rows,
            report.undecodable_cells,
            a.table.display()
        );
    }
    let f = IndexFile::load(&a.index)?;
    let q = f.query_from_table(&table)?;
    let result = run_search(&f, &q, &cfg, a.search.brute_force)?;
    let csv = results_to_csv(std::slice::from_ref(&result))?;
    match a.out {
        Some(path) => write_atomic(&path, &csv)?,
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, seed: u64) -> Result<()> {
    if a.k.contains(&0) {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let f = IndexFile::load(&a.index)?;
    let mut ids = f.index.indexed_table_ids();
    let bytes = std::fs::read(&a.truth).map_err(|e| Error::io(&a.truth, e))?;
    let truth = GroundTruth::from_csv(&bytes, &ids)?;
    if let Some(n) = a.sample_queries {
        ids = sample_queries(&ids, n, seed);
    }
    let mut ks = a.k.clone();
    if ks.is_empty() {
        ks.push((truth.avg_answer_size().round() as usize).max(1));
    }
    ks.sort_unstable();
    ks.dedup();
    let cfg = a.search.config(*ks.last().unwrap())?;
    let queries = ids
        .iter()
        .map(|id| f.index.query_for_table(id))
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<QueryResult> = if let Some(path) = &a.timing {
        let mut out = Vec::with_capacity(queries.len());
        let t = timing_harness(Phase::Query, &queries, |q| {
            out.push(run_search(&f, q, &cfg, a.search.brute_force)?);
            Ok(())
        })?;
        write_atomic(path, timing_csv(&[t]).as_bytes())?;
        out
    } else {
        queries
            .par_iter()
            .map(|q| run_search(&f, q, &cfg, a.search.brute_force))
            .collect::<Result<_>>()?
    };
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let (p, r) = precision_recall_at_k(&results, &truth, k)?;
        rows.push((k, p, r));
    }
    if let Some(path) = &a.results {
        write_atomic(path, &results_to_csv(&results)?)?;
    }
    let csv = metrics_csv(&rows);
    match a.out {
        Some(path) => write_atomic(&path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_benchgen(a: BenchgenArgs, seed: u64) -> Result<()> {
    let spec = BenchmarkSpec {
        derived_per_base: a.derived,
        row_fraction: (a.min_row_fraction, a.max_row_fraction),
        projection_size: (a.min_columns, a.max_columns),
        seed,
    };
    let bases = match &a.bases {
        Some(manifest) => Corpus::load_manifest(manifest, &a.csv.options()?)?.tables().to_vec(),
        None => {
            synthetic_tables(&SyntheticSpec {
                topics: a.topics,
                tables_per_topic: a.bases_per_topic,
                columns_per_table: a.columns,
                rows: a.rows,
                seed,
                ..Default::default()
            })?
            .tables
        }
    };
    let (corpus, truth, _) = generate_benchmark(&bases, &spec)?;
    let tables_dir = a.out_dir.join("tables");
    std::fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;
    let mut entries = Vec::with_capacity(corpus.len());
    for t in corpus.tables() {
        let rel = PathBuf::from("tables").join(format!("{}.csv", t.table_id));
        write_csv(t, &a.out_dir.join(&rel))?;
        entries.push(ManifestEntry {
            table_id: t.table_id.clone(),
            path: rel,
        });
    }
    write_atomic(&a.out_dir.join("manifest.tsv"), manifest_to_string(&entries).as_bytes())?;
    write_atomic(&a.out_dir.join("truth.csv"), truth.to_csv().as_bytes())?;
    println!(
        "generated {} tables from {} bases; average answer size {:.2}",
        corpus.len(),
        bases.len(),
        truth.avg_answer_size()
    );
    Ok(())
}
