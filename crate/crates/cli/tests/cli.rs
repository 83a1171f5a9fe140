// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tabunion"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn tabunion")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn table(words: &[&str], header: &[&str], rows: usize, offset: usize) -> String {
    let mut s = header.join(",") + "\n";
    for r in 0..rows {
        let row: Vec<String> = (0..header.len())
            .map(|c| {
                format!(
                    "{} {}",
                    words[(r + c + offset) % words.len()],
                    words[(r * 3 + c) % words.len()]
                )
            })
            .collect();
        s += &row.join(",");
        s += "\n";
    }
    s
}

/// Three unrelated topics, two tables each, plus a manifest.
fn small_corpus(dir: &Path) -> PathBuf {
    let topics: [(&[&str], [&str; 2]); 3] = [
        (
            &["paris", "rome", "oslo", "lima", "quito", "cairo"],
            ["city", "capital"],
        ),
        (&["apple", "pear", "plum", "fig", "kiwi", "lemon"], ["fruit", "produce"]),
        (&["red", "green", "blue", "cyan", "amber", "violet"], ["color", "shade"]),
    ];
    let mut manifest = String::new();
    for (t, (words, header)) in topics.iter().enumerate() {
        for v in 0..2 {
            let id = format!("t{t}v{v}");
            write(&dir.join(format!("tables/{id}.csv")), &table(words, header, 12, v));
            manifest += &format!("{id}\ttables/{id}.csv\n");
        }
    }
    let m = dir.join("manifest.tsv");
    write(&m, &manifest);
    m
}

#[test]
fn train_is_deterministic_and_reports_history() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    let args = [
        "train",
        "--manifest",
        "manifest.tsv",
        "--epochs",
        "3",
        "--batch-size",
        "4",
        "--seed",
        "5",
    ];
    let out = ok(d.path(), &[&args[..], &["--model", "a.bin"]].concat());
    assert!(out.contains("loss history: a.bin.loss.csv"));
    ok(d.path(), &[&args[..], &["--model", "b.bin", "--threads", "1"]].concat());
    assert_eq!(
        fs::read(d.path().join("a.bin")).unwrap(),
        fs::read(d.path().join("b.bin")).unwrap()
    );
    let history = fs::read_to_string(d.path().join("a.bin.loss.csv")).unwrap();
    assert!(history.starts_with("epoch,split,mean_loss\n"));
    assert_eq!(history.lines().filter(|l| l.contains(",train,")).count(), 3);
}

#[test]
fn offline_training_builds_and_caches_pairs() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    let args = [
        "train",
        "--manifest",
        "manifest.tsv",
        "--model",
        "m.bin",
        "--strategy",
        "offline",
        "--pairs",
        "pairs.csv",
        "--epochs",
        "2",
        "--batch-size",
        "2",
    ];
    let first = ok(d.path(), &args);
    assert!(first.contains("cached"));
    let pairs = fs::read_to_string(d.path().join("pairs.csv")).unwrap();
    assert!(pairs.lines().count() > 1);
    let second = ok(d.path(), &args);
    assert!(!second.contains("cached"));
}

#[test]
fn missing_manifest_is_an_input_error_without_outputs() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["train", "--manifest", "nope.tsv", "--model", "m.bin"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!d.path().join("m.bin").exists());
    assert!(!d.path().join("m.bin.loss.csv").exists());
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    assert_eq!(run(d.path(), &["train"]).status.code(), Some(2));
    let bad_temp = run(
        d.path(),
        &[
            "train",
            "--manifest",
            "manifest.tsv",
            "--model",
            "m.bin",
            "--temperature",
            "0",
        ],
    );
    assert_eq!(bad_temp.status.code(), Some(4));
    assert!(!d.path().join("m.bin").exists());
}

#[test]
fn index_counts_skip_empty_columns_and_reindex_is_identical() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    write(&d.path().join("tables/blank.csv"), "label,empty\nx,\ny,\nz,\n");
    let mut m = fs::read_to_string(d.path().join("manifest.tsv")).unwrap();
    m += "blank\ttables/blank.csv\n";
    write(&d.path().join("manifest.tsv"), &m);
    ok(
        d.path(),
        &["train", "--manifest", "manifest.tsv", "--model", "m.bin", "--untrained"],
    );
    let index = ["index", "--manifest", "manifest.tsv", "--model", "m.bin", "--seed", "3"];
    let report = ok(d.path(), &[&index[..], &["--index", "a.idx"]].concat());
    assert!(report.contains("indexed 13 of 14 columns"), "{report}");
    ok(d.path(), &[&index[..], &["--index", "b.idx"]].concat());
    assert_eq!(
        fs::read(d.path().join("a.idx")).unwrap(),
        fs::read(d.path().join("b.idx")).unwrap()
    );
    let stats = ok(d.path(), &["stats", "--index", "a.idx"]);
    assert!(stats.contains("indexed_columns\t13"));
    assert!(stats.contains("skipped_columns\t1"));
}

#[test]
fn planted_near_duplicate_ranks_first() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    ok(
        d.path(),
        &[
            "train",
            "--manifest",
            "manifest.tsv",
            "--model",
            "m.bin",
            "--epochs",
            "5",
            "--batch-size",
            "3",
        ],
    );
    ok(
        d.path(),
        &[
            "index",
            "--manifest",
            "manifest.tsv",
            "--model",
            "m.bin",
            "--index",
            "i.idx",
        ],
    );
    let mut probe = fs::read_to_string(d.path().join("tables/t1v0.csv")).unwrap();
    probe += "apple pear,plum fig\n";
    write(&d.path().join("probe.csv"), &probe);
    let out = ok(
        d.path(),
        &[
            "query",
            "--index",
            "i.idx",
            "--table",
            "probe.csv",
            "--k",
            "1",
            "--measures",
            "semantic,N,V",
        ],
    );
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(
        rows[0],
        "query_table_id,rank,candidate_table_id,table_score,match_count,matches"
    );
    assert_eq!(rows.len(), 2, "{out}");
    assert!(rows[1].starts_with("probe,1,t1v"), "{out}");
}

#[test]
fn malformed_query_is_an_input_error() {
    let d = tempfile::tempdir().unwrap();
    small_corpus(d.path());
    ok(
        d.path(),
        &["train", "--manifest", "manifest.tsv", "--model", "m.bin", "--untrained"],
    );
    ok(
        d.path(),
        &[
            "index",
            "--manifest",
            "manifest.tsv",
            "--model",
            "m.bin",
            "--index",
            "i.idx",
        ],
    );
    write(&d.path().join("bad.csv"), "only,a,header\n");
    let out = run(
        d.path(),
        &["query", "--index", "i.idx", "--table", "bad.csv", "--out", "r.csv"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(!d.path().join("r.csv").exists());
    let out = run(d.path(), &["query", "--index", "m.bin", "--table", "tables/t0v0.csv"]);
    assert_eq!(out.status.code(), Some(3), "a model file is not an index");
}

/// Two single-column bases with disjoint vocabularies: every derived table
/// answers every other table of its base and nothing else.
fn perfect_bench(dir: &Path) {
    write(
        &dir.join("bases/left.csv"),
        &table(&["north", "south", "east", "west"], &["heading"], 30, 0),
    );
    write(
        &dir.join("bases/right.csv"),
        &table(&["circle", "square", "oval", "star"], &["shape"], 30, 0),
    );
    write(&dir.join("bases.tsv"), "left\tbases/left.csv\nright\tbases/right.csv\n");
    ok(
        dir,
        &[
            "benchgen",
            "--out-dir",
            "bench",
            "--bases",
            "bases.tsv",
            "--derived",
            "5",
            "--min-columns",
            "1",
            "--max-columns",
            "1",
            "--min-row-fraction",
            "0.9",
            "--max-row-fraction",
            "1.0",
            "--seed",
            "2",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--manifest",
            "bench/manifest.tsv",
            "--model",
            "m.bin",
            "--untrained",
        ],
    );
    ok(
        dir,
        &[
            "index",
            "--manifest",
            "bench/manifest.tsv",
            "--model",
            "m.bin",
            "--index",
            "i.idx",
        ],
    );
}

#[test]
fn eval_on_perfect_fixture_scores_one() {
    let d = tempfile::tempdir().unwrap();
    perfect_bench(d.path());
    let out = ok(
        d.path(),
        &[
            "eval",
            "--index",
            "i.idx",
            "--truth",
            "bench/truth.csv",
            "--k",
            "4",
            "--measures",
            "semantic,N,V",
        ],
    );
    assert_eq!(out, "k,mean_precision,mean_recall\n4,1.000000,1.000000\n");
}

#[test]
fn eval_emits_one_row_per_k_with_monotone_recall() {
    let d = tempfile::tempdir().unwrap();
    perfect_bench(d.path());
    ok(
        d.path(),
        &[
            "eval",
            "--index",
            "i.idx",
            "--truth",
            "bench/truth.csv",
            "--k",
            "3,1,2,8",
            "--out",
            "metrics.csv",
            "--results",
            "results.csv",
            "--timing",
            "timing.csv",
        ],
    );
    let metrics = fs::read_to_string(d.path().join("metrics.csv")).unwrap();
    let rows: Vec<Vec<f64>> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[0] as usize).collect::<Vec<_>>(), vec![1, 2, 3, 8]);
    assert!(rows.windows(2).all(|w| w[1][2] >= w[0][2]));
    let timing = fs::read_to_string(d.path().join("timing.csv")).unwrap();
    assert!(timing.starts_with("phase,total_s,mean_s\nquery,"));
    assert!(
        fs::read_to_string(d.path().join("results.csv"))
            .unwrap()
            .lines()
            .count()
            > 1
    );
}

#[test]
fn benchgen_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "benchgen",
        "--topics",
        "2",
        "--bases-per-topic",
        "2",
        "--derived",
        "3",
        "--seed",
        "4",
    ];
    ok(d.path(), &[&args[..], &["--out-dir", "a"]].concat());
    ok(d.path(), &[&args[..], &["--out-dir", "b"]].concat());
    for f in ["manifest.tsv", "truth.csv", "tables/t01_b01_d02.csv"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap()
        );
    }
    let manifest = fs::read_to_string(d.path().join("a/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 12);
}
