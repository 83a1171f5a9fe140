// SPDX-License-Identifier: Apache-2.0

//! Contrastive training of the projection head.
//!
//! A batch holds `2M` column instances where instance `k` and `k + M` are a
//! positive pair and every other instance is a negative. Positives come
//! either from two random samples of the same column (online) or from a
//! precomputed top-1 syntactic match (offline).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{sample_column, ColumnKey, ColumnSample, Corpus, Table};
use crate::encoder::{CellCache, Encoder};
use crate::error::{Error, Result};
use crate::projection::{HeadGradients, ProjectionHead, TrainConfig, Velocity};
use crate::syntactic::{jaccard, value_terms, SyntacticConfig, TfidfModel};
use crate::util::{combine, dot, fnv1a, norm};

pub const DEFAULT_OFFLINE_FLOOR: f64 = 0.5;
pub const VALIDATION_FRACTION: f64 = 0.05;

const SPLIT_SALT: u64 = 0x5e11_7000;
const VALIDATION_SALT: u64 = 0x7a11_d000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// Base embeddings; `instances[k]` and `instances[k + pairs]` are positives.
    pub instances: Vec<Vec<f64>>,
    pub pairs: usize,
    pub provenance: Vec<ColumnKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflinePair {
    pub column_key_a: ColumnKey,
    pub column_key_b: ColumnKey,
    pub match_score: f64,
}

#[derive(Debug, Clone)]
pub enum Strategy {
    Online,
    Offline(Vec<OfflinePair>),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Online => "online",
            Strategy::Offline(_) => "offline",
        }
    }
}

/// Two independent samples of every eligible column, ordered as
/// `[view1 of all columns..., view2 of all columns...]`.
pub fn online_views(tables: &[&Table], sample_size: usize, seed: u64) -> Result<Vec<ColumnSample>> {
    let columns: Vec<_> = tables
        .iter()
        .flat_map(|t| t.columns.iter())
        .filter(|c| c.is_eligible())
        .collect();
    let (s1, s2) = (combine(seed, 1), combine(seed, 2));
    let first = columns
        .iter()
        .map(|c| sample_column(c, sample_size, s1))
        .collect::<Result<Vec<_>>>()?;
    let second = columns
        .iter()
        .map(|c| sample_column(c, sample_size, s2))
        .collect::<Result<Vec<_>>>()?;
    Ok(first.into_iter().chain(second).collect())
}

pub fn build_online_batch(
    tables: &[&Table],
    encoder: &Encoder,
    cache: &mut CellCache,
    sample_size: usize,
    seed: u64,
) -> Result<TrainingBatch> {
    let views = online_views(tables, sample_size, seed)?;
    let pairs = views.len() / 2;
    if pairs < 2 {
        return Err(Error::InsufficientData(format!(
            "batch has {pairs} eligible column(s); at least 2 are needed"
        )));
    }
    let mut instances = Vec::with_capacity(views.len());
    let mut provenance = Vec::with_capacity(views.len());
    for v in views {
        instances.push(encoder.embed_column_with(&v.sampled_values, cache)?.vector);
        provenance.push(v.column_key);
    }
    Ok(TrainingBatch {
        instances,
        pairs,
        provenance,
    })
}

/// For every column, its best other-table match by value-term Jaccard, if
/// that score reaches `floor`. Unordered duplicates are removed and at most
/// `cap` pairs (highest scores first) are kept.
pub fn build_offline_pairs(corpus: &Corpus, floor: f64, cap: usize, cfg: &SyntacticConfig) -> Result<Vec<OfflinePair>> {
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::Config(format!("offline floor {floor} outside (0, 1]")));
    }
    let tfidf = TfidfModel::build(corpus);
    let mut keys: Vec<ColumnKey> = Vec::new();
    let mut terms: Vec<Vec<String>> = Vec::new();
    for c in corpus.columns() {
        let t = value_terms(c, &tfidf, cfg.top_terms);
        if !t.is_empty() {
            keys.push(c.key());
            terms.push(t);
        }
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));

    let mut postings: HashMap<&str, Vec<usize>> = HashMap::new();
    for &i in &order {
        for t in &terms[i] {
            postings.entry(t.as_str()).or_default().push(i);
        }
    }

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut pairs = Vec::new();
    for &i in &order {
        let candidates: BTreeSet<usize> = terms[i]
            .iter()
            .flat_map(|t| postings[t.as_str()].iter().copied())
            .filter(|&j| keys[j].table_id != keys[i].table_id)
            .collect();
        let mut best: Option<(f64, usize)> = None;
        for j in candidates {
            let s = jaccard(&terms[i], &terms[j]);
            let better = match best {
                None => true,
                Some((bs, bj)) => s > bs || (s == bs && keys[j] < keys[bj]),
            };
            if better {
                best = Some((s, j));
            }
        }
        if let Some((score, j)) = best {
            if score < floor {
                continue;
            }
            let (a, b) = if keys[i] < keys[j] { (i, j) } else { (j, i) };
            if seen.insert((a, b)) {
                pairs.push(OfflinePair {
                    column_key_a: keys[a].clone(),
                    column_key_b: keys[b].clone(),
                    match_score: score,
                });
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.match_score
            .total_cmp(&x.match_score)
            .then_with(|| x.column_key_a.cmp(&y.column_key_a))
            .then_with(|| x.column_key_b.cmp(&y.column_key_b))
    });
    pairs.truncate(cap);
    Ok(pairs)
}

fn format_key(k: &ColumnKey) -> String {
    k.to_string()
}

fn parse_key(s: &str) -> Result<ColumnKey> {
    let (id, pos) = s
        .rsplit_once('#')
        .ok_or_else(|| Error::Malformed(format!("bad column key {s:?}")))?;
    let position = pos
        .parse()
        .map_err(|_| Error::Malformed(format!("bad column position in {s:?}")))?;
    Ok(ColumnKey::new(id, position))
}

pub fn offline_pairs_to_csv(pairs: &[OfflinePair]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(["column_key_a", "column_key_b", "score"]).map_err(err)?;
    for p in pairs {
        w.write_record([
            format_key(&p.column_key_a),
            format_key(&p.column_key_b),
            format!("{}", p.match_score),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
}

pub fn offline_pairs_from_csv(bytes: &[u8]) -> Result<Vec<OfflinePair>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
        if rec.len() != 3 {
            return Err(Error::Malformed("offline pair rows need 3 fields".into()));
        }
        out.push(OfflinePair {
            column_key_a: parse_key(&rec[0])?,
            column_key_b: parse_key(&rec[1])?,
            match_score: rec[2]
                .parse()
                .map_err(|_| Error::Malformed(format!("bad score {:?}", &rec[2])))?,
        });
    }
    Ok(out)
}

/// Loss value, gradient per projected vector, and the per-anchor terms
/// `l(i, partner(i))` in instance order.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub gradients: Vec<Vec<f64>>,
    pub partial_losses: Vec<f64>,
}

/// Normalized-temperature cross-entropy over `2M` projected vectors with
/// cosine similarity, averaged over both directions of every positive pair.
pub fn nt_xent_loss(projected: &[Vec<f64>], temperature: f64) -> Result<LossOutput> {
    let n = projected.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InsufficientData(format!(
            "contrastive loss needs an even number of instances (got {n})"
        )));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let m = n / 2;
    let dim = projected[0].len();
    let mut norms = Vec::with_capacity(n);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, e) in projected.iter().enumerate() {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: e.len(),
            });
        }
        let nrm = norm(e);
        if nrm == 0.0 {
            return Err(Error::ZeroVector(i));
        }
        if !nrm.is_finite() {
            return Err(Error::NonFinite(format!("projected instance {i}")));
        }
        norms.push(nrm);
        z.push(e.iter().map(|x| x / nrm).collect());
    }

    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = dot(&z[i], &z[j]) / temperature;
            logits[i * n + j] = s;
            logits[j * n + i] = s;
        }
    }

    // coefficient matrix dL/dlogit[i][j]
    let scale = 1.0 / n as f64;
    let mut coef = vec![0.0; n * n];
    let mut partial_losses = Vec::with_capacity(n);
    for i in 0..n {
        let partner = (i + m) % n;
        let row = &logits[i * n..(i + 1) * n];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let log_denom = max + denom.ln();
        partial_losses.push(log_denom - row[partner]);
        for j in 0..n {
            if j == i {
                continue;
            }
            let p = (row[j] - log_denom).exp();
            coef[i * n + j] = scale * (p - if j == partner { 1.0 } else { 0.0 });
        }
    }
    let loss = partial_losses.iter().sum::<f64>() * scale;

    let mut gradients = Vec::with_capacity(n);
    for i in 0..n {
        let mut dz = vec![0.0; dim];
        for j in 0..n {
            if j == i {
                continue;
            }
            let c = (coef[i * n + j] + coef[j * n + i]) / temperature;
            if c != 0.0 {
                for (d, zj) in dz.iter_mut().zip(&z[j]) {
                    *d += c * zj;
                }
            }
        }
        let radial = dot(&z[i], &dz);
        let inv = 1.0 / norms[i];
        gradients.push(dz.iter().zip(&z[i]).map(|(d, zi)| (d - radial * zi) * inv).collect());
    }
    Ok(LossOutput {
        loss,
        gradients,
        partial_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub split: Split,
    pub mean_loss: f64,
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,split,mean_loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.split.name(), r.mean_loss);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub velocity: Velocity,
    pub history: Vec<LossRecord>,
    /// Epoch whose head was returned (lowest validation loss, or the last).
    pub selected_epoch: usize,
}

impl TrainOutcome {
    pub fn epoch_losses(&self, split: Split) -> Vec<f64> {
        self.history
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.mean_loss)
            .collect()
    }
}

fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

struct Step<'a> {
    head: &'a mut ProjectionHead,
    velocity: &'a mut Velocity,
    cfg: &'a TrainConfig,
}

impl Step<'_> {
    fn run(&mut self, instances: &[Vec<f64>], what: &str) -> Result<f64> {
        let (projected, cache) = self.head.forward_batch(instances)?;
        let out = nt_xent_loss(&projected, self.cfg.temperature)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at {what}")));
        }
        let grads: HeadGradients = self.head.backward_cached(instances, &cache, &out.gradients)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradients at {what}")));
        }
        self.head
            .sgd_step(&grads, self.cfg.learning_rate, self.cfg.momentum, self.velocity)?;
        if !self.head.is_finite() {
            return Err(Error::NonFinite(format!("parameters after {what}")));
        }
        Ok(out.loss)
    }
}

fn eval_loss(head: &ProjectionHead, instances: &[Vec<f64>], temperature: f64) -> Result<f64> {
    let (projected, _) = head.forward_batch(instances)?;
    let loss = nt_xent_loss(&projected, temperature)?.loss;
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok(loss)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Splits table indices into (train, validation) with a seeded shuffle.
fn split_tables(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..n).collect();
    let order = shuffled(&all, combine(seed, SPLIT_SALT));
    let n_val = (n as f64 * VALIDATION_FRACTION).floor() as usize;
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains `head` on `corpus` and returns the head with the lowest
/// end-of-epoch validation loss (or the final head when no validation
/// batch can be formed).
pub fn train(
    corpus: &Corpus,
    encoder: &Encoder,
    head: ProjectionHead,
    cfg: &TrainConfig,
    strategy: &Strategy,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if head.in_dim != encoder.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.in_dim,
            actual: encoder.dim(),
        });
    }
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty corpus".into()));
    }
    match strategy {
        Strategy::Online => train_online(corpus, encoder, head, cfg),
        Strategy::Offline(pairs) => train_offline(corpus, encoder, head, cfg, pairs),
    }
}

struct Tracker {
    history: Vec<LossRecord>,
    best: Option<(f64, usize, ProjectionHead, Velocity)>,
}

impl Tracker {
    fn record_epoch(
        &mut self,
        epoch: usize,
        train_losses: &[f64],
        val_loss: Option<f64>,
        head: &ProjectionHead,
        velocity: &Velocity,
    ) {
        self.history.push(LossRecord {
            epoch,
            split: Split::Train,
            mean_loss: mean(train_losses),
        });
        if let Some(v) = val_loss {
            self.history.push(LossRecord {
                epoch,
                split: Split::Validation,
                mean_loss: v,
            });
            if self.best.as_ref().is_none_or(|(b, ..)| v < *b) {
                self.best = Some((v, epoch, head.clone(), velocity.clone()));
            }
        }
    }

    fn finish(self, head: ProjectionHead, velocity: Velocity, last_epoch: usize) -> TrainOutcome {
        match self.best {
            Some((_, epoch, h, v)) => TrainOutcome {
                head: h,
                velocity: v,
                history: self.history,
                selected_epoch: epoch,
            },
            None => TrainOutcome {
                head,
                velocity,
                history: self.history,
                selected_epoch: last_epoch,
            },
        }
    }
}

fn train_online(
    corpus: &Corpus,
    encoder: &Encoder,
    mut head: ProjectionHead,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let eligible: Vec<&Table> = corpus
        .tables()
        .iter()
        .filter(|t| t.columns.iter().any(|c| c.is_eligible()))
        .collect();
    let (train_idx, val_idx) = split_tables(eligible.len(), cfg.seed);
    let train_tables: Vec<&Table> = train_idx.iter().map(|&i| eligible[i]).collect();
    let val_tables: Vec<&Table> = val_idx.iter().map(|&i| eligible[i]).collect();

    let mut cache = CellCache::default();
    let val_batches: Vec<Vec<Vec<f64>>> = val_tables
        .chunks(cfg.batch_size)
        .enumerate()
        .filter_map(|(b, chunk)| {
            build_online_batch(
                chunk,
                encoder,
                &mut cache,
                cfg.sample_size,
                combine(combine(cfg.seed, VALIDATION_SALT), b as u64),
            )
            .ok()
        })
        .map(|batch| batch.instances)
        .collect();

    let mut velocity = HeadGradients::zeros_like(&head);
    let mut tracker = Tracker {
        history: Vec::new(),
        best: None,
    };
    for epoch in 0..cfg.epochs {
        let epoch_seed = combine(cfg.seed, epoch as u64);
        let order = shuffled(&train_tables, epoch_seed);
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = match build_online_batch(
                chunk,
                encoder,
                &mut cache,
                cfg.sample_size,
                combine(epoch_seed, b as u64),
            ) {
                Ok(batch) => batch,
                Err(Error::InsufficientData(_)) => continue,
                Err(e) => return Err(e),
            };
            let mut step = Step {
                head: &mut head,
                velocity: &mut velocity,
                cfg,
            };
            losses.push(step.run(&batch.instances, &format!("epoch {epoch} batch {b}"))?);
        }
        if losses.is_empty() {
            return Err(Error::InsufficientData(
                "no training batch has two or more eligible columns".into(),
            ));
        }
        let val = if val_batches.is_empty() {
            None
        } else {
            let v = val_batches
                .iter()
                .map(|inst| eval_loss(&head, inst, cfg.temperature))
                .collect::<Result<Vec<_>>>()?;
            Some(mean(&v))
        };
        tracker.record_epoch(epoch, &losses, val, &head, &velocity);
    }
    Ok(tracker.finish(head, velocity, cfg.epochs.saturating_sub(1)))
}

fn train_offline(
    corpus: &Corpus,
    encoder: &Encoder,
    mut head: ProjectionHead,
    cfg: &TrainConfig,
    pairs: &[OfflinePair],
) -> Result<TrainOutcome> {
    if pairs.len() < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{} offline pairs but batch size {}",
            pairs.len(),
            cfg.batch_size
        )));
    }
    // base embeddings of every paired column, computed once
    let mut cache = CellCache::default();
    let mut base: HashMap<ColumnKey, Vec<f64>> = HashMap::new();
    for p in pairs {
        for key in [&p.column_key_a, &p.column_key_b] {
            if base.contains_key(key) {
                continue;
            }
            let column = corpus.column(key).ok_or_else(|| Error::UnknownTable(key.to_string()))?;
            let e = encoder.embed_column_with(&column.values, &mut cache)?;
            base.insert(key.clone(), e.vector);
        }
    }

    let eligible: Vec<&str> = corpus.tables().iter().map(|t| t.table_id.as_str()).collect();
    let (_, val_idx) = split_tables(eligible.len(), cfg.seed);
    let val_tables: HashSet<&str> = val_idx.iter().map(|&i| eligible[i]).collect();
    let (val_pairs, train_pairs): (Vec<&OfflinePair>, Vec<&OfflinePair>) = pairs.iter().partition(|p| {
        val_tables.contains(p.column_key_a.table_id.as_str()) || val_tables.contains(p.column_key_b.table_id.as_str())
    });

    let instances_of = |chunk: &[&OfflinePair]| -> Vec<Vec<f64>> {
        chunk
            .iter()
            .map(|p| base[&p.column_key_a].clone())
            .chain(chunk.iter().map(|p| base[&p.column_key_b].clone()))
            .collect()
    };
    let val_batches: Vec<Vec<Vec<f64>>> = val_pairs
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= 2)
        .map(instances_of)
        .collect();

    let mut velocity = HeadGradients::zeros_like(&head);
    let mut tracker = Tracker {
        history: Vec::new(),
        best: None,
    };
    for epoch in 0..cfg.epochs {
        let order = shuffled(&train_pairs, combine(cfg.seed, epoch as u64));
        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let mut step = Step {
                head: &mut head,
                velocity: &mut velocity,
                cfg,
            };
            losses.push(step.run(&instances_of(chunk), &format!("epoch {epoch} batch {b}"))?);
        }
        if losses.is_empty() {
            return Err(Error::InsufficientData("no offline training batch".into()));
        }
        let val = if val_batches.is_empty() {
            None
        } else {
            let v = val_batches
                .iter()
                .map(|inst| eval_loss(&head, inst, cfg.temperature))
                .collect::<Result<Vec<_>>>()?;
            Some(mean(&v))
        };
        tracker.record_epoch(epoch, &losses, val, &head, &velocity);
    }
    Ok(tracker.finish(head, velocity, cfg.epochs.saturating_sub(1)))
}

/// Stable fingerprint of a set of offline pairs, stored in model files.
pub fn pairs_fingerprint(pairs: &[OfflinePair]) -> u64 {
    pairs.iter().fold(0u64, |acc, p| {
        combine(
            acc,
            fnv1a(format!("{}|{}|{}", p.column_key_a, p.column_key_b, p.match_score).as_bytes()),
        )
    })
}
