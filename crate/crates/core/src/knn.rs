//! Exact cosine nearest neighbors over hidden states (one list per
//! occurrence) and embeddings (one list per type).
//!
//! Every dot product is accumulated in f64 over f32 inputs using eight
//! interleaved lanes (element `i` goes to lane `i % 8`), and the lanes are
//! combined as `((l0+l1)+(l2+l3))+((l4+l5)+(l6+l7))`. The order is the same
//! for every pair and both argument orders, so scores are reproducible and
//! `cosine(u, v) == cosine(v, u)` bit for bit. Top-n selection uses the total
//! order (score descending, tie rank ascending), which makes the result
//! independent of scan order and thread count.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpusio::{OccurrenceTable, QuerySet, VectorSet, Vocab};

pub const DEFAULT_N: usize = 10;
pub const NEIGHBOR_HEADER: &str = "query_row\trank\tneighbor_row\tscore";
pub const NEIGHBOR_MAGIC: &[u8; 4] = b"HSN1";

const LANES: usize = 8;
/// Queries handled per register tile.
const TILE: usize = 4;
/// Queries per parallel work unit.
const QUERY_BLOCK: usize = 64;
/// Candidate rows converted to f64 at a time.
const CANDIDATE_BLOCK: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum KnnError {
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{vectors} vectors but {rows} table rows")]
    SizeMismatch { vectors: usize, rows: usize },
    #[error("row {0} has a zero-norm vector and cannot be queried")]
    UnqueryableRow(usize),
    #[error("row {0} is out of range")]
    RowOutOfRange(usize),
    #[error("neighbor count must be at least 1")]
    InvalidN,
    #[error("token type `{0}` is not in the embedding vocabulary")]
    UnknownType(String),
}

pub type Result<T, E = KnnError> = std::result::Result<T, E>;

/// Which candidates are removed from a hidden-state query's neighbor list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionPolicy {
    /// Drop every occurrence whose surface type equals the query's.
    #[default]
    SameType,
    /// Drop only the query row.
    SelfOnly,
}

impl std::str::FromStr for ExclusionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "same-type" => Ok(ExclusionPolicy::SameType),
            "self-only" => Ok(ExclusionPolicy::SelfOnly),
            _ => Err(format!("unknown exclusion policy `{s}` (expected same-type or self-only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: usize,
    pub entries: Vec<Neighbor>,
    /// Fewer than `n` candidates were available.
    pub short: bool,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeNeighborList {
    pub query_type: String,
    pub entries: Vec<(String, f64)>,
    pub short: bool,
}

/// f64 dot product with the fixed lane order described in the module docs.
#[inline(always)]
fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    for (l, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[l] += *x as f64 * *y as f64;
    }
    combine(&acc)
}

#[inline(always)]
fn combine(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Squared Euclidean norm in the same accumulation order as every dot product.
pub fn squared_norm(v: &[f32]) -> f64 {
    dot_f32(v, v)
}

pub fn norm(v: &[f32]) -> f64 {
    squared_norm(v).sqrt()
}

/// Cosine similarity of two vectors, clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(KnnError::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let (su, sv) = (squared_norm(u), squared_norm(v));
    if su == 0.0 || sv == 0.0 {
        return Err(KnnError::ZeroVector);
    }
    Ok(score(dot_f32(u, v), su, sv))
}

/// `dot / sqrt(|q|^2 |c|^2)`: exactly 1 for identical vectors.
#[inline(always)]
fn score(dot: f64, sq_q: f64, sq_c: f64) -> f64 {
    (dot / (sq_q * sq_c).sqrt()).clamp(-1.0, 1.0)
}

/// Dot products of `TILE` f64 query rows against one f64 candidate row.
/// Per pair, the operation sequence is identical to `dot_f32`.
#[inline(always)]
fn tile_dots(q: [&[f64]; TILE], c: &[f64]) -> [f64; TILE] {
    let mut acc = [[0f64; LANES]; TILE];
    let full = c.len() / LANES * LANES;
    let mut base = 0;
    while base < full {
        let cv: &[f64; LANES] = c[base..base + LANES].try_into().unwrap();
        for t in 0..TILE {
            let qv: &[f64; LANES] = q[t][base..base + LANES].try_into().unwrap();
            for l in 0..LANES {
                acc[t][l] += qv[l] * cv[l];
            }
        }
        base += LANES;
    }
    for i in full..c.len() {
        for t in 0..TILE {
            acc[t][i - full] += q[t][i] * c[i];
        }
    }
    let mut out = [0f64; TILE];
    for t in 0..TILE {
        out[t] = combine(&acc[t]);
    }
    out
}

/// Dots of one query tile against every row of a converted candidate block.
#[inline(always)]
fn tile_block(q: [&[f64]; TILE], cbuf: &[f64], dim: usize, out: &mut Vec<[f64; TILE]>) {
    out.clear();
    out.extend(cbuf.chunks_exact(dim).map(|c| tile_dots(q, c)));
}

/// Explicit AVX2 build of `tile_block`: lanes 0-3 and 4-7 of the scalar
/// accumulator live in two registers, using separate mul and add (no FMA),
/// so results are bit-identical to the portable path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tile_block_avx2(q: [&[f64]; TILE], cbuf: &[f64], dim: usize, out: &mut Vec<[f64; TILE]>) {
    use std::arch::x86_64::*;
    out.clear();
    let full = dim / LANES * LANES;
    assert!(q.iter().all(|r| r.len() == dim));
    for c in cbuf.chunks_exact(dim) {
        let cp = c.as_ptr();
        let qp: [*const f64; TILE] = std::array::from_fn(|t| q[t].as_ptr());
        let mut lo = [_mm256_setzero_pd(); TILE];
        let mut hi = [_mm256_setzero_pd(); TILE];
        let mut o = 0;
        while o < full {
            let c0 = _mm256_loadu_pd(cp.add(o));
            let c1 = _mm256_loadu_pd(cp.add(o + 4));
            for t in 0..TILE {
                lo[t] = _mm256_add_pd(lo[t], _mm256_mul_pd(_mm256_loadu_pd(qp[t].add(o)), c0));
                hi[t] = _mm256_add_pd(hi[t], _mm256_mul_pd(_mm256_loadu_pd(qp[t].add(o + 4)), c1));
            }
            o += LANES;
        }
        let mut dots = [0f64; TILE];
        for t in 0..TILE {
            let mut acc = [0f64; LANES];
            _mm256_storeu_pd(acc.as_mut_ptr(), lo[t]);
            _mm256_storeu_pd(acc.as_mut_ptr().add(4), hi[t]);
            for i in full..dim {
                acc[i - full] += q[t][i] * c[i];
            }
            dots[t] = combine(&acc);
        }
        out.push(dots);
    }
}

fn avx2_available() -> bool {
    static AVX2: OnceLock<bool> = OnceLock::new();
    *AVX2.get_or_init(|| {
        #[cfg(target_arch = "x86_64")]
        {
            std::is_x86_feature_detected!("avx2")
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    })
}

fn tile_block_dispatch(use_avx2: bool, q: [&[f64]; TILE], cbuf: &[f64], dim: usize, out: &mut Vec<[f64; TILE]>) {
    #[cfg(target_arch = "x86_64")]
    if use_avx2 {
        // SAFETY: only reached after runtime detection of AVX2.
        return unsafe { tile_block_avx2(q, cbuf, dim, out) };
    }
    let _ = use_avx2;
    tile_block(q, cbuf, dim, out)
}

fn inverse_norms(sq_norms: &[f64]) -> Vec<f64> {
    sq_norms.iter().map(|&x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 }).collect()
}

/// Bounded best-first list under (score desc, tie rank asc).
struct TopN {
    n: usize,
    items: Vec<(f64, u32, usize)>,
}

impl TopN {
    fn new(n: usize) -> Self {
        TopN { n, items: Vec::with_capacity(n + 1) }
    }

    #[inline]
    fn better(a: (f64, u32), b: (f64, u32)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    /// Score a candidate must beat once the list is full.
    #[inline]
    fn floor(&self) -> f64 {
        if self.items.len() == self.n {
            self.items[self.n - 1].0
        } else {
            f64::NEG_INFINITY
        }
    }

    #[inline]
    fn offer(&mut self, score: f64, rank: u32, row: usize) {
        if self.items.len() == self.n {
            let last = self.items[self.n - 1];
            if !Self::better((score, rank), (last.0, last.1)) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(s, r, _)| Self::better((s, r), (score, rank)));
        self.items.insert(pos, (score, rank, row));
    }
}

/// Shared exact scan over a row set.
struct ScanSpace<'a> {
    data: &'a [f32],
    dim: usize,
    sq_norms: &'a [f64],
    inv_norms: &'a [f64],
    tie_rank: &'a [u32],
    candidates: &'a [usize],
}

/// Slack for the cheap pre-filter score; far above its rounding error.
const PREFILTER_SLACK: f64 = 1e-9;

impl ScanSpace<'_> {
    /// Top `n` candidates for every query, in query order. `excluded(q, c)`
    /// removes candidate `c` for query `q` and must be symmetric; the query
    /// row itself is always removed. Queries must be candidates.
    fn scan<F>(&self, queries: &[usize], n: usize, excluded: F) -> Vec<(Vec<(usize, f64)>, bool)>
    where
        F: Fn(usize, usize) -> bool + Sync,
    {
        let use_avx2 = avx2_available();
        if queries.len() * 2 >= self.candidates.len() && self.candidates.len() > QUERY_BLOCK {
            let all = self.scan_symmetric(n, &excluded, use_avx2);
            return queries
                .iter()
                .map(|q| {
                    let k = self.candidates.binary_search(q).expect("query is a candidate");
                    all[k].clone()
                })
                .collect();
        }
        queries.par_chunks(QUERY_BLOCK).flat_map_iter(|block| self.scan_block(block, n, &excluded, use_avx2)).collect()
    }

    /// Converts rows to f64, zero-padding to a whole number of tiles.
    fn widen(&self, rows: &[usize]) -> Vec<f64> {
        let dim = self.dim;
        let mut buf = vec![0f64; rows.len().div_ceil(TILE) * TILE * dim];
        for (k, &r) in rows.iter().enumerate() {
            for (dst, src) in buf[k * dim..(k + 1) * dim].iter_mut().zip(&self.data[r * dim..(r + 1) * dim]) {
                *dst = *src as f64;
            }
        }
        buf
    }

    /// All-candidates scan that computes each unordered pair once and offers
    /// the score to both sides. Valid because dot products are bitwise
    /// symmetric and top-n selection is order independent.
    fn scan_symmetric<F>(&self, n: usize, excluded: &F, use_avx2: bool) -> Vec<(Vec<(usize, f64)>, bool)>
    where
        F: Fn(usize, usize) -> bool + Sync,
    {
        let dim = self.dim;
        let blocks: Vec<&[usize]> = self.candidates.chunks(QUERY_BLOCK).collect();
        let tops: Vec<Mutex<Vec<TopN>>> =
            blocks.iter().map(|b| Mutex::new(b.iter().map(|_| TopN::new(n)).collect())).collect();

        let offer = |tops: &mut [TopN], rows: &[usize], cols: &[usize], dot: &dyn Fn(usize, usize) -> f64| {
            for (a, &qrow) in rows.iter().enumerate() {
                let top = &mut tops[a];
                for (b, &c) in cols.iter().enumerate() {
                    let d = dot(a, b);
                    if d * self.inv_norms[qrow] * self.inv_norms[c] < top.floor() - PREFILTER_SLACK {
                        continue;
                    }
                    if c == qrow || excluded(qrow, c) {
                        continue;
                    }
                    top.offer(score(d, self.sq_norms[qrow], self.sq_norms[c]), self.tie_rank[c], c);
                }
            }
        };

        (0..blocks.len()).into_par_iter().for_each(|i| {
            let rows = blocks[i];
            let qbuf = self.widen(rows);
            let mut dots_buf: Vec<[f64; TILE]> = Vec::with_capacity(QUERY_BLOCK);
            // dots[a * QUERY_BLOCK + b] = row a of block i against row b of block j
            let mut dots = vec![0f64; QUERY_BLOCK * QUERY_BLOCK];
            for (j, cols) in blocks.iter().enumerate().skip(i) {
                let cbuf = self.widen(cols);
                let cblock = &cbuf[..cols.len() * dim];
                for t0 in (0..rows.len()).step_by(TILE) {
                    let q: [&[f64]; TILE] = std::array::from_fn(|t| &qbuf[(t0 + t) * dim..(t0 + t + 1) * dim]);
                    tile_block_dispatch(use_avx2, q, cblock, dim, &mut dots_buf);
                    for (b, d) in dots_buf.iter().enumerate() {
                        for t in 0..TILE.min(rows.len() - t0) {
                            dots[(t0 + t) * QUERY_BLOCK + b] = d[t];
                        }
                    }
                }
                offer(&mut tops[i].lock().unwrap(), rows, cols, &|a, b| dots[a * QUERY_BLOCK + b]);
                if j != i {
                    offer(&mut tops[j].lock().unwrap(), cols, rows, &|a, b| dots[b * QUERY_BLOCK + a]);
                }
            }
        });

        tops.into_iter()
            .flat_map(|m| m.into_inner().unwrap())
            .map(|top| {
                let short = top.items.len() < n;
                (top.items.into_iter().map(|(s, _, r)| (r, s)).collect(), short)
            })
            .collect()
    }

    fn scan_block<F>(&self, block: &[usize], n: usize, excluded: &F, use_avx2: bool) -> Vec<(Vec<(usize, f64)>, bool)>
    where
        F: Fn(usize, usize) -> bool,
    {
        let dim = self.dim;
        let padded = block.len().div_ceil(TILE) * TILE;
        let mut qbuf = vec![0f64; padded * dim];
        for (k, &q) in block.iter().enumerate() {
            for (dst, src) in qbuf[k * dim..(k + 1) * dim].iter_mut().zip(&self.data[q * dim..(q + 1) * dim]) {
                *dst = *src as f64;
            }
        }
        let mut tops: Vec<TopN> = block.iter().map(|_| TopN::new(n)).collect();
        let mut cbuf = vec![0f64; CANDIDATE_BLOCK.min(self.candidates.len().max(1)) * dim];
        let mut dots_buf: Vec<[f64; TILE]> = Vec::with_capacity(CANDIDATE_BLOCK);

        for cands in self.candidates.chunks(CANDIDATE_BLOCK) {
            for (k, &c) in cands.iter().enumerate() {
                for (dst, src) in cbuf[k * dim..(k + 1) * dim].iter_mut().zip(&self.data[c * dim..(c + 1) * dim]) {
                    *dst = *src as f64;
                }
            }
            let cblock = &cbuf[..cands.len() * dim];
            for t0 in (0..block.len()).step_by(TILE) {
                let q: [&[f64]; TILE] = std::array::from_fn(|t| &qbuf[(t0 + t) * dim..(t0 + t + 1) * dim]);
                let live = (block.len() - t0).min(TILE);
                tile_block_dispatch(use_avx2, q, cblock, dim, &mut dots_buf);
                for (&c, dots) in cands.iter().zip(&dots_buf) {
                    for t in 0..live {
                        let qrow = block[t0 + t];
                        let top = &mut tops[t0 + t];
                        if dots[t] * self.inv_norms[qrow] * self.inv_norms[c] < top.floor() - PREFILTER_SLACK {
                            continue;
                        }
                        if c == qrow || excluded(qrow, c) {
                            continue;
                        }
                        let s = score(dots[t], self.sq_norms[qrow], self.sq_norms[c]);
                        top.offer(s, self.tie_rank[c], c);
                    }
                }
            }
        }
        // A list is short exactly when every admissible candidate made it in.
        tops.into_iter()
            .map(|top| {
                let short = top.items.len() < n;
                (top.items.into_iter().map(|(s, _, r)| (r, s)).collect(), short)
            })
            .collect()
    }
}

/// Immutable cosine index over hidden states and their occurrence metadata.
pub struct SimilarityIndex<'a> {
    vectors: &'a VectorSet,
    table: &'a OccurrenceTable,
    sq_norms: Vec<f64>,
    inv_norms: Vec<f64>,
    queryable: Vec<bool>,
    candidates: Vec<usize>,
    type_ids: Vec<u32>,
    position_rank: Vec<u32>,
}

impl<'a> SimilarityIndex<'a> {
    pub fn build(vectors: &'a VectorSet, table: &'a OccurrenceTable) -> Result<Self> {
        if vectors.count() != table.len() {
            return Err(KnnError::SizeMismatch { vectors: vectors.count(), rows: table.len() });
        }
        let sq_norms: Vec<f64> = vectors.rows().map(squared_norm).collect();
        let inv_norms = inverse_norms(&sq_norms);
        let queryable: Vec<bool> = sq_norms.iter().map(|&x| x > 0.0).collect();
        let candidates = (0..sq_norms.len()).filter(|&r| queryable[r]).collect();

        let mut ids: HashMap<&str, u32> = HashMap::new();
        let type_ids = table
            .occurrences()
            .iter()
            .map(|o| {
                let next = ids.len() as u32;
                *ids.entry(o.surface.as_str()).or_insert(next)
            })
            .collect();

        let mut by_position: Vec<usize> = (0..table.len()).collect();
        by_position.sort_by_key(|&r| (table.get(r).sentence_id, table.get(r).token_id));
        let mut position_rank = vec![0u32; table.len()];
        for (rank, &r) in by_position.iter().enumerate() {
            position_rank[r] = rank as u32;
        }
        Ok(SimilarityIndex { vectors, table, sq_norms, inv_norms, queryable, candidates, type_ids, position_rank })
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_norms.is_empty()
    }

    pub fn is_queryable(&self, row: usize) -> bool {
        self.queryable.get(row).copied().unwrap_or(false)
    }

    pub fn queryable_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn unqueryable_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&r| !self.queryable[r]).collect()
    }

    pub fn table(&self) -> &OccurrenceTable {
        self.table
    }

    /// Squared norms, one per row.
    pub fn squared_norms(&self) -> &[f64] {
        &self.sq_norms
    }

    fn space(&self) -> ScanSpace<'_> {
        ScanSpace {
            data: self.vectors.as_slice(),
            dim: self.vectors.dim(),
            sq_norms: &self.sq_norms,
            inv_norms: &self.inv_norms,
            tie_rank: &self.position_rank,
            candidates: &self.candidates,
        }
    }

    fn run(&self, queries: &[usize], n: usize, exclusion: ExclusionPolicy) -> Vec<NeighborList> {
        let raw = match exclusion {
            ExclusionPolicy::SameType => self.space().scan(queries, n, |q, c| self.type_ids[q] == self.type_ids[c]),
            ExclusionPolicy::SelfOnly => self.space().scan(queries, n, |_, _| false),
        };
        queries
            .iter()
            .zip(raw)
            .map(|(&query, (entries, short))| NeighborList {
                query,
                entries: entries.into_iter().map(|(row, score)| Neighbor { row, score }).collect(),
                short,
            })
            .collect()
    }

    /// Exact top-`n` neighbors of one occurrence.
    pub fn query_neighbors(&self, query: usize, n: usize, exclusion: ExclusionPolicy) -> Result<NeighborList> {
        if n == 0 {
            return Err(KnnError::InvalidN);
        }
        if query >= self.len() {
            return Err(KnnError::RowOutOfRange(query));
        }
        if !self.queryable[query] {
            return Err(KnnError::UnqueryableRow(query));
        }
        Ok(self.run(&[query], n, exclusion).pop().unwrap())
    }

    /// Neighbor lists for every queryable row of `queries`, ascending by row.
    pub fn all_neighbors(&self, queries: &QuerySet, n: usize, exclusion: ExclusionPolicy) -> Result<AllNeighbors> {
        if n == 0 {
            return Err(KnnError::InvalidN);
        }
        let mut rows = Vec::with_capacity(queries.len());
        let mut skipped = Vec::new();
        for &r in queries.rows() {
            if r >= self.len() {
                return Err(KnnError::RowOutOfRange(r));
            }
            if self.queryable[r] {
                rows.push(r);
            } else {
                skipped.push(r);
            }
        }
        Ok(AllNeighbors { lists: self.run(&rows, n, exclusion), skipped })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllNeighbors {
    pub lists: Vec<NeighborList>,
    /// Zero-norm query rows that were not searched.
    pub skipped: Vec<usize>,
}

/// Per-type cosine index over an embedding table.
pub struct EmbeddingIndex<'a> {
    embeddings: &'a VectorSet,
    vocab: &'a Vocab,
    sq_norms: Vec<f64>,
    inv_norms: Vec<f64>,
    candidates: Vec<usize>,
    lexical_rank: Vec<u32>,
}

impl<'a> EmbeddingIndex<'a> {
    pub fn build(embeddings: &'a VectorSet, vocab: &'a Vocab) -> Result<Self> {
        if embeddings.count() != vocab.len() {
            return Err(KnnError::SizeMismatch { vectors: embeddings.count(), rows: vocab.len() });
        }
        let sq_norms: Vec<f64> = embeddings.rows().map(squared_norm).collect();
        let inv_norms = inverse_norms(&sq_norms);
        let candidates = (0..sq_norms.len()).filter(|&r| sq_norms[r] > 0.0).collect();
        let mut order: Vec<usize> = (0..vocab.len()).collect();
        order.sort_by(|&a, &b| vocab.types()[a].cmp(&vocab.types()[b]));
        let mut lexical_rank = vec![0u32; vocab.len()];
        for (rank, &r) in order.iter().enumerate() {
            lexical_rank[r] = rank as u32;
        }
        Ok(EmbeddingIndex { embeddings, vocab, sq_norms, inv_norms, candidates, lexical_rank })
    }

    fn resolve(&self, query_type: &str) -> Result<usize> {
        let row = self.vocab.row_of(query_type).ok_or_else(|| KnnError::UnknownType(query_type.to_string()))?;
        if self.sq_norms[row] == 0.0 {
            return Err(KnnError::ZeroVector);
        }
        Ok(row)
    }

    pub fn neighbors(&self, query_type: &str, n: usize) -> Result<TypeNeighborList> {
        Ok(self.neighbors_many(&[query_type], n)?.pop().unwrap())
    }

    /// Neighbor lists for several types in one scan, in input order.
    pub fn neighbors_many<S: AsRef<str>>(&self, query_types: &[S], n: usize) -> Result<Vec<TypeNeighborList>> {
        if n == 0 {
            return Err(KnnError::InvalidN);
        }
        let rows = query_types.iter().map(|t| self.resolve(t.as_ref())).collect::<Result<Vec<_>>>()?;
        let space = ScanSpace {
            data: self.embeddings.as_slice(),
            dim: self.embeddings.dim(),
            sq_norms: &self.sq_norms,
            inv_norms: &self.inv_norms,
            tie_rank: &self.lexical_rank,
            candidates: &self.candidates,
        };
        let types = self.vocab.types();
        Ok(rows
            .iter()
            .zip(space.scan(&rows, n, |_, _| false))
            .map(|(&q, (entries, short))| TypeNeighborList {
                query_type: types[q].clone(),
                entries: entries.into_iter().map(|(r, s)| (types[r].clone(), s)).collect(),
                short,
            })
            .collect())
    }
}

/// Convenience wrapper building a throwaway index for a single query.
pub fn embedding_neighbors(
    embeddings: &VectorSet,
    vocab: &Vocab,
    query_type: &str,
    n: usize,
) -> Result<TypeNeighborList> {
    EmbeddingIndex::build(embeddings, vocab)?.neighbors(query_type, n)
}

pub fn write_neighbors_tsv<W: Write>(lists: &[NeighborList], mut w: W) -> io::Result<()> {
    writeln!(w, "{NEIGHBOR_HEADER}")?;
    for list in lists {
        for (k, e) in list.entries.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{:.6}", list.query, k + 1, e.row, e.score)?;
        }
    }
    w.flush()
}

/// Binary mirror of the TSV: magic `HSN1`, record count (u64), then per
/// record query (u64), rank (u32), neighbor (u64), score (f64); little-endian.
pub fn write_neighbors_binary<W: Write>(lists: &[NeighborList], mut w: W) -> io::Result<()> {
    let records: u64 = lists.iter().map(|l| l.entries.len() as u64).sum();
    w.write_all(NEIGHBOR_MAGIC)?;
    w.write_all(&records.to_le_bytes())?;
    for list in lists {
        for (k, e) in list.entries.iter().enumerate() {
            w.write_all(&(list.query as u64).to_le_bytes())?;
            w.write_all(&(k as u32 + 1).to_le_bytes())?;
            w.write_all(&(e.row as u64).to_le_bytes())?;
            w.write_all(&e.score.to_le_bytes())?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborRecord {
    pub query: u64,
    pub rank: u32,
    pub neighbor: u64,
    pub score: f64,
}

pub fn read_neighbors_binary<R: Read>(mut r: R) -> io::Result<Vec<NeighborRecord>> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NEIGHBOR_MAGIC {
        return Err(bad("bad neighbor file magic"));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count);
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut rec = [0u8; 28];
    for _ in 0..count {
        r.read_exact(&mut rec)?;
        out.push(NeighborRecord {
            query: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            rank: u32::from_le_bytes(rec[8..12].try_into().unwrap()),
            neighbor: u64::from_le_bytes(rec[12..20].try_into().unwrap()),
            score: f64::from_le_bytes(rec[20..28].try_into().unwrap()),
        });
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after neighbor records"));
    }
    Ok(out)
}
