// SPDX-License-Identifier: Apache-2.0

//! Banded LSH indexes: random-hyperplane signatures for cosine similarity
//! and MinHash signatures for Jaccard similarity.
//!
//! Both indexes store the original vectors/sets and rescore every
//! bucket-collided candidate exactly, so hashing only affects which items
//! are considered, never the scores that come back.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::syntactic::jaccard;
use crate::util::{combine, dot, fnv1a, mix64, norm, ByteReader, ByteWriter};

/// Item identifier inside an index.
pub type ItemId = u32;

pub const DEFAULT_COSINE_BANDS: usize = 32;
pub const DEFAULT_COSINE_ROWS: usize = 8;
pub const DEFAULT_MINHASH_BANDS: usize = 32;
pub const DEFAULT_MINHASH_ROWS: usize = 4;

/// Sign pattern of a vector against the index hyperplanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub bits: Vec<bool>,
}

impl Signature {
    pub fn agreement(&self, other: &Signature) -> f64 {
        let same = self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count();
        same as f64 / self.bits.len().max(1) as f64
    }
}

type Buckets = Vec<HashMap<u64, Vec<ItemId>>>;

fn write_buckets(w: &mut ByteWriter, buckets: &Buckets) {
    w.len(buckets.len());
    for band in buckets {
        let mut keys: Vec<&u64> = band.keys().collect();
        keys.sort_unstable();
        w.len(keys.len());
        for k in keys {
            w.u64(*k);
            let ids = &band[k];
            w.len(ids.len());
            for &id in ids {
                w.u32(id);
            }
        }
    }
}

fn read_buckets(r: &mut ByteReader, expected_bands: usize) -> Result<Buckets> {
    let n = r.len()?;
    if n != expected_bands {
        return Err(Error::Format(format!("expected {expected_bands} bands, found {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let keys = r.len()?;
        let mut band = HashMap::with_capacity(keys);
        for _ in 0..keys {
            let k = r.u64()?;
            let m = r.len()?;
            let ids = (0..m).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            band.insert(k, ids);
        }
        out.push(band);
    }
    Ok(out)
}

fn gather(buckets: &Buckets, keys: &[u64]) -> Vec<ItemId> {
    let mut ids: Vec<ItemId> = buckets
        .iter()
        .zip(keys)
        .filter_map(|(band, k)| band.get(k))
        .flatten()
        .copied()
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn sort_hits(hits: &mut [(ItemId, f64)]) {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold {t} outside [0, 1]")))
    }
}

#[derive(Debug, Clone)]
struct StoredVector {
    vector: Vec<f64>,
    norm: f64,
}

/// Random-hyperplane LSH over `bands × rows` sign bits.
#[derive(Debug, Clone)]
pub struct CosineLshIndex {
    dim: usize,
    bands: usize,
    rows: usize,
    seed: u64,
    hyperplanes: Vec<Vec<f64>>,
    buckets: Buckets,
    slots: HashMap<ItemId, usize>,
    ids: Vec<ItemId>,
    stored: Vec<StoredVector>,
}

impl CosineLshIndex {
    pub fn new(dim: usize, bands: usize, rows: usize, seed: u64) -> Result<Self> {
        if dim == 0 || bands == 0 || rows == 0 || rows > 64 {
            return Err(Error::Config(format!(
                "invalid cosine LSH shape dim={dim} bands={bands} rows={rows}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyperplanes = (0..bands * rows)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = norm(&v);
                if n > 0.0 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            })
            .collect();
        Ok(Self {
            dim,
            bands,
            rows,
            seed,
            hyperplanes,
            buckets: vec![HashMap::new(); bands],
            slots: HashMap::new(),
            ids: Vec::new(),
            stored: Vec::new(),
        })
    }

    pub fn with_defaults(dim: usize, seed: u64) -> Result<Self> {
        Self::new(dim, DEFAULT_COSINE_BANDS, DEFAULT_COSINE_ROWS, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn hyperplane_count(&self) -> usize {
        self.hyperplanes.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check_vector(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector(0));
        }
        Ok(n)
    }

    /// Bit `p` is set when `hyperplane_p · v ≥ 0`.
    pub fn signature(&self, v: &[f64]) -> Result<Signature> {
        self.check_vector(v)?;
        Ok(Signature {
            bits: self.hyperplanes.iter().map(|h| dot(h, v) >= 0.0).collect(),
        })
    }

    fn band_keys(&self, sig: &Signature) -> Vec<u64> {
        sig.bits
            .chunks(self.rows)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &b)| acc | (u64::from(b) << i))
            })
            .collect()
    }

    pub fn insert(&mut self, id: ItemId, v: &[f64]) -> Result<()> {
        if self.slots.contains_key(&id) {
            return Err(Error::DuplicateKey(format!("item {id}")));
        }
        let n = self.check_vector(v)?;
        let keys = self.band_keys(&self.signature(v)?);
        for (band, key) in self.buckets.iter_mut().zip(keys) {
            band.entry(key).or_default().push(id);
        }
        self.slots.insert(id, self.stored.len());
        self.ids.push(id);
        self.stored.push(StoredVector {
            vector: v.to_vec(),
            norm: n,
        });
        Ok(())
    }

    pub fn vector(&self, id: ItemId) -> Option<&[f64]> {
        self.slots.get(&id).map(|&s| self.stored[s].vector.as_slice())
    }

    /// Ids sharing at least one band bucket with `v`, ascending.
    pub fn candidates(&self, v: &[f64]) -> Result<Vec<ItemId>> {
        let keys = self.band_keys(&self.signature(v)?);
        Ok(gather(&self.buckets, &keys))
    }

    /// Exact cosine of `v` against a stored item.
    pub fn score(&self, v: &[f64], id: ItemId) -> Option<f64> {
        let n = norm(v);
        let s = &self.stored[*self.slots.get(&id)?];
        if n == 0.0 {
            return None;
        }
        Some((dot(v, &s.vector) / (n * s.norm)).clamp(-1.0, 1.0))
    }

    /// Bucket-collided items whose exact cosine with `v` is at least `t`,
    /// sorted by descending score then id.
    pub fn lookup(&self, v: &[f64], t: f64) -> Result<Vec<(ItemId, f64)>> {
        check_threshold(t)?;
        let n = self.check_vector(v)?;
        let mut hits: Vec<(ItemId, f64)> = self
            .candidates(v)?
            .into_iter()
            .filter_map(|id| {
                let s = &self.stored[self.slots[&id]];
                let score = (dot(v, &s.vector) / (n * s.norm)).clamp(-1.0, 1.0);
                (score >= t).then_some((id, score))
            })
            .collect();
        sort_hits(&mut hits);
        Ok(hits)
    }

    /// Every band bucket as `(band, key, ids)`, sorted by band then key.
    pub fn dump_buckets(&self) -> Vec<(usize, u64, Vec<ItemId>)> {
        let mut out = Vec::new();
        for (b, band) in self.buckets.iter().enumerate() {
            let mut keys: Vec<_> = band.keys().copied().collect();
            keys.sort_unstable();
            out.extend(keys.into_iter().map(|k| (b, k, band[&k].clone())));
        }
        out
    }

    pub fn write_to(&self, w: &mut ByteWriter) {
        w.len(self.dim);
        w.len(self.bands);
        w.len(self.rows);
        w.u64(self.seed);
        for h in &self.hyperplanes {
            for &x in h {
                w.f64(x);
            }
        }
        w.len(self.ids.len());
        for (id, s) in self.ids.iter().zip(&self.stored) {
            w.u32(*id);
            for &x in &s.vector {
                w.f64(x);
            }
        }
        write_buckets(w, &self.buckets);
    }

    pub fn read_from(r: &mut ByteReader) -> Result<Self> {
        let dim = r.len()?;
        let bands = r.len()?;
        let rows = r.len()?;
        let seed = r.u64()?;
        if dim == 0 || bands == 0 || rows == 0 || rows > 64 {
            return Err(Error::Format("invalid cosine LSH header".into()));
        }
        let hyperplanes = (0..bands * rows)
            .map(|_| (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let count = r.len()?;
        let mut ids = Vec::with_capacity(count);
        let mut stored = Vec::with_capacity(count);
        let mut slots = HashMap::with_capacity(count);
        for slot in 0..count {
            let id = r.u32()?;
            let vector = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let n = norm(&vector);
            if slots.insert(id, slot).is_some() {
                return Err(Error::Format(format!("duplicate item {id}")));
            }
            ids.push(id);
            stored.push(StoredVector { vector, norm: n });
        }
        let buckets = read_buckets(r, bands)?;
        Ok(Self {
            dim,
            bands,
            rows,
            seed,
            hyperplanes,
            buckets,
            slots,
            ids,
            stored,
        })
    }
}

/// MinHash LSH over `bands × rows` permutations, with exact Jaccard rescoring.
#[derive(Debug, Clone)]
pub struct MinHashIndex {
    bands: usize,
    rows: usize,
    seed: u64,
    perm_seeds: Vec<u64>,
    buckets: Buckets,
    slots: HashMap<ItemId, usize>,
    ids: Vec<ItemId>,
    sets: Vec<Vec<String>>,
}

impl MinHashIndex {
    pub fn new(bands: usize, rows: usize, seed: u64) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(Error::Config("MinHash bands and rows must be positive".into()));
        }
        let perm_seeds = (0..bands * rows).map(|i| combine(seed, i as u64)).collect();
        Ok(Self {
            bands,
            rows,
            seed,
            perm_seeds,
            buckets: vec![HashMap::new(); bands],
            slots: HashMap::new(),
            ids: Vec::new(),
            sets: Vec::new(),
        })
    }

    pub fn with_defaults(seed: u64) -> Result<Self> {
        Self::new(DEFAULT_MINHASH_BANDS, DEFAULT_MINHASH_ROWS, seed)
    }

    pub fn permutations(&self) -> usize {
        self.perm_seeds.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Per-permutation minima of the hashed set elements.
    pub fn signature<S: AsRef<str>>(&self, set: &[S]) -> Result<Vec<u64>> {
        if set.is_empty() {
            return Err(Error::Malformed("empty set has no MinHash signature".into()));
        }
        let hashes: Vec<u64> = set.iter().map(|s| fnv1a(s.as_ref().as_bytes())).collect();
        Ok(self
            .perm_seeds
            .iter()
            .map(|&ps| hashes.iter().map(|&h| mix64(h ^ ps)).min().unwrap())
            .collect())
    }

    fn band_keys(&self, sig: &[u64]) -> Vec<u64> {
        sig.chunks(self.rows)
            .map(|chunk| chunk.iter().fold(0u64, |acc, &m| combine(acc, m)))
            .collect()
    }

    /// Inserts a set; `set` must be sorted and deduplicated.
    pub fn insert(&mut self, id: ItemId, set: &[String]) -> Result<()> {
        if self.slots.contains_key(&id) {
            return Err(Error::DuplicateKey(format!("item {id}")));
        }
        let keys = self.band_keys(&self.signature(set)?);
        for (band, key) in self.buckets.iter_mut().zip(keys) {
            band.entry(key).or_default().push(id);
        }
        self.slots.insert(id, self.sets.len());
        self.ids.push(id);
        self.sets.push(set.to_vec());
        Ok(())
    }

    pub fn candidates(&self, set: &[String]) -> Result<Vec<ItemId>> {
        let keys = self.band_keys(&self.signature(set)?);
        Ok(gather(&self.buckets, &keys))
    }

    /// Bucket-collided sets with exact Jaccard ≥ `t`, sorted by descending
    /// score then id. `set` must be sorted and deduplicated.
    pub fn lookup(&self, set: &[String], t: f64) -> Result<Vec<(ItemId, f64)>> {
        check_threshold(t)?;
        let mut hits: Vec<(ItemId, f64)> = self
            .candidates(set)?
            .into_iter()
            .filter_map(|id| {
                let score = jaccard(set, &self.sets[self.slots[&id]]);
                (score >= t).then_some((id, score))
            })
            .collect();
        sort_hits(&mut hits);
        Ok(hits)
    }

    pub fn write_to(&self, w: &mut ByteWriter) {
        w.len(self.bands);
        w.len(self.rows);
        w.u64(self.seed);
        w.len(self.ids.len());
        for (id, set) in self.ids.iter().zip(&self.sets) {
            w.u32(*id);
            w.strs(set);
        }
        write_buckets(w, &self.buckets);
    }

    pub fn read_from(r: &mut ByteReader) -> Result<Self> {
        let bands = r.len()?;
        let rows = r.len()?;
        let seed = r.u64()?;
        let mut index = Self::new(bands, rows, seed).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.len()?;
        for slot in 0..count {
            let id = r.u32()?;
            let set = r.strs()?;
            if index.slots.insert(id, slot).is_some() {
                return Err(Error::Format(format!("duplicate item {id}")));
            }
            index.ids.push(id);
            index.sets.push(set);
        }
        index.buckets = read_buckets(r, bands)?;
        Ok(index)
    }
}
