//! Exhaustive top-K search: Hamming distance over packed codes, plus a
//! squared-Euclidean scorer over dense real embeddings for comparison.
//!
//! Results are ordered by distance, ties by ascending node index. Selection
//! keeps a bounded max-heap of the K best candidates seen so far.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::graph::{NodeId, Vocab};

/// Number of differing bits: Σ popcount(a_w XOR b_w).
#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<'a> {
    /// A stored row; excluded from its own results when `exclude_self`.
    Node(NodeId),
    Code(&'a [u64]),
    Vector(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query<'a> {
    pub target: Target<'a>,
    pub k: usize,
    pub exclude_self: bool,
}

impl<'a> Query<'a> {
    pub fn node(node: NodeId, k: usize) -> Self {
        Query {
            target: Target::Node(node),
            k,
            exclude_self: true,
        }
    }

    pub fn code(code: &'a [u64], k: usize) -> Self {
        Query {
            target: Target::Code(code),
            k,
            exclude_self: false,
        }
    }

    pub fn vector(vector: &'a [f64], k: usize) -> Self {
        Query {
            target: Target::Vector(vector),
            k,
            exclude_self: false,
        }
    }

    pub fn include_self(mut self) -> Self {
        self.exclude_self = false;
        self
    }

    fn skipped(&self) -> Option<usize> {
        match self.target {
            Target::Node(n) if self.exclude_self => Some(n.index()),
            _ => None,
        }
    }

    fn check_k(&self, node_count: usize) -> Result<()> {
        let max = node_count - usize::from(self.skipped().is_some_and(|s| s < node_count));
        if self.k == 0 || self.k > max {
            return Err(Error::KOutOfRange { k: self.k, max });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<D> {
    pub node: NodeId,
    pub distance: D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult<D = u32> {
    pub entries: Vec<Neighbor<D>>,
    /// Wall time of the distance and selection pass.
    pub elapsed: Duration,
}

impl<D> RankedResult<D> {
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.node)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Total order used for ranking, with ties broken by ascending node index.
pub trait Distance: Copy + Send {
    /// Heap key ordering by (distance, node).
    type Key: Ord + Copy + Send;
    fn key(self, node: u32) -> Self::Key;
    fn unkey(key: Self::Key) -> (Self, u32);
}

impl Distance for u32 {
    /// Distance in the high half, node in the low half: one compare per step.
    type Key = u64;

    #[inline]
    fn key(self, node: u32) -> u64 {
        (u64::from(self) << 32) | u64::from(node)
    }

    #[inline]
    fn unkey(key: u64) -> (u32, u32) {
        ((key >> 32) as u32, key as u32)
    }
}

impl Distance for f64 {
    type Key = RealKey;

    #[inline]
    fn key(self, node: u32) -> RealKey {
        RealKey(self, node)
    }

    #[inline]
    fn unkey(key: RealKey) -> (f64, u32) {
        (key.0, key.1)
    }
}

#[doc(hidden)]
#[derive(Clone, Copy)]
pub struct RealKey(f64, u32);

impl PartialEq for RealKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for RealKey {}
impl PartialOrd for RealKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for RealKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Bounded selection of the K smallest (distance, node) pairs.
struct TopK<D: Distance> {
    k: usize,
    heap: BinaryHeap<D::Key>,
}

impl<D: Distance> TopK<D> {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, distance: D, node: u32) {
        self.offer_key(distance.key(node));
    }

    #[inline]
    fn offer_key(&mut self, c: D::Key) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(mut top) = self.heap.peek_mut() {
            if c < *top {
                *top = c;
            }
        }
    }

    /// Current admission threshold when candidates arrive in increasing
    /// node order: a new candidate must be strictly closer than this.
    #[inline]
    fn bound(&self) -> Option<D> {
        (self.heap.len() == self.k).then(|| D::unkey(*self.heap.peek().unwrap()).0)
    }

    fn merge(mut self, other: TopK<D>) -> Self {
        for c in other.heap {
            self.offer_key(c);
        }
        self
    }

    fn into_sorted(self) -> Vec<Neighbor<D>> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|key| {
                let (distance, node) = D::unkey(key);
                Neighbor {
                    node: NodeId(node),
                    distance,
                }
            })
            .collect()
    }
}

/// Rows per block. Distances for a block are computed first and filtered
/// through a bitmask, so the heap is touched without a data-dependent branch
/// per row.
const BLOCK: usize = 64;

/// Longest prefix used to seed the heap.
const MAX_SEED: usize = 4096;

/// Seeds an empty selection with the exact K best of a prefix of `range`,
/// found by linear-time selection, and returns where streaming resumes.
/// Starting from a tight bound cuts heap replacements from about
/// K·ln(n/K) to K·ln(n/m).
#[inline(always)]
fn seed_prefix(range: &std::ops::Range<usize>, skip: Option<usize>, sel: &mut TopK<u32>, dist: impl Fn(usize) -> u32) -> usize {
    debug_assert!(sel.heap.is_empty());
    let m = range.len().min((8 * sel.k).clamp(BLOCK, MAX_SEED).max(sel.k));
    let end = range.start + m;
    let mut keys = Vec::with_capacity(m);
    for i in range.start..end {
        if Some(i) != skip {
            keys.push(dist(i).key(i as u32));
        }
    }
    if keys.len() > sel.k {
        keys.select_nth_unstable(sel.k - 1);
        keys.truncate(sel.k);
    }
    sel.heap = BinaryHeap::from(keys);
    end
}

#[inline(always)]
fn scan_fixed<const W: usize>(data: &[u64], query: &[u64], range: std::ops::Range<usize>, skip: Option<usize>, sel: &mut TopK<u32>) {
    let q: [u64; W] = query.try_into().unwrap();
    let distance = |row: &[u64]| {
        let mut acc = 0u32;
        for w in 0..W {
            acc += (row[w] ^ q[w]).count_ones();
        }
        acc
    };
    let mut base = seed_prefix(&range, skip, sel, |i| distance(&data[i * W..(i + 1) * W]));
    let mut dist = [0u32; BLOCK];
    for block in data[base * W..range.end * W].chunks(BLOCK * W) {
        let rows = block.len() / W;
        for (d, row) in dist.iter_mut().zip(block.chunks_exact(W)) {
            *d = distance(row);
        }
        // Stale within the block; the heap still rejects anything not closer.
        let bound = sel.bound().unwrap_or(u32::MAX);
        let mut mask = 0u64;
        for (j, &d) in dist[..rows].iter().enumerate() {
            mask |= u64::from(d < bound) << j;
        }
        if let Some(s) = skip.filter(|s| (base..base + rows).contains(s)) {
            mask &= !(1u64 << (s - base));
        }
        while mask != 0 {
            let j = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            sel.offer(dist[j], (base + j) as u32);
        }
        base += rows;
    }
}

#[inline(always)]
fn scan_dyn(data: &[u64], words: usize, query: &[u64], range: std::ops::Range<usize>, skip: Option<usize>, sel: &mut TopK<u32>) {
    let row = |i: usize| &data[i * words..(i + 1) * words];
    let start = seed_prefix(&range, skip, sel, |i| hamming(row(i), query));
    let mut bound = sel.bound().unwrap_or(u32::MAX);
    for i in start..range.end {
        let d = hamming(row(i), query);
        if d < bound && Some(i) != skip {
            sel.offer(d, i as u32);
            bound = sel.bound().unwrap_or(u32::MAX);
        }
    }
}

#[inline(always)]
fn scan_generic(data: &[u64], words: usize, query: &[u64], range: std::ops::Range<usize>, skip: Option<usize>, sel: &mut TopK<u32>) {
    match words {
        1 => scan_fixed::<1>(data, query, range, skip, sel),
        2 => scan_fixed::<2>(data, query, range, skip, sel),
        3 => scan_fixed::<3>(data, query, range, skip, sel),
        4 => scan_fixed::<4>(data, query, range, skip, sel),
        _ => scan_dyn(data, words, query, range, skip, sel),
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn scan_popcnt(data: &[u64], words: usize, query: &[u64], range: std::ops::Range<usize>, skip: Option<usize>, sel: &mut TopK<u32>) {
    scan_generic(data, words, query, range, skip, sel)
}

fn scan(codes: &CodeMatrix, query: &[u64], range: std::ops::Range<usize>, skip: Option<usize>, sel: &mut TopK<u32>) {
    let words = codes.words_per_code();
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the CPU supports popcnt.
        unsafe { scan_popcnt(codes.words(), words, query, range, skip, sel) };
        return;
    }
    scan_generic(codes.words(), words, query, range, skip, sel)
}

fn resolve_code<'a>(codes: &'a CodeMatrix, q: &Query<'a>) -> Result<&'a [u64]> {
    match q.target {
        Target::Node(n) if n.index() < codes.node_count() => Ok(codes.row(n.index())),
        Target::Node(n) => Err(Error::Config(format!(
            "query node {n} outside matrix of {} codes",
            codes.node_count()
        ))),
        Target::Code(c) if c.len() == codes.words_per_code() => Ok(c),
        Target::Code(c) => Err(Error::DimensionMismatch {
            expected: codes.words_per_code(),
            actual: c.len(),
        }),
        Target::Vector(_) => Err(Error::Config("a dense vector cannot query a code matrix".into())),
    }
}

/// The K nearest codes by Hamming distance in one pass over the matrix.
pub fn top_k(codes: &CodeMatrix, q: &Query) -> Result<RankedResult<u32>> {
    let query = resolve_code(codes, q)?;
    q.check_k(codes.node_count())?;
    let start = Instant::now();
    let mut sel = TopK::new(q.k);
    scan(codes, query, 0..codes.node_count(), q.skipped(), &mut sel);
    let entries = sel.into_sorted();
    Ok(RankedResult {
        entries,
        elapsed: start.elapsed(),
    })
}

/// Same result as [`top_k`], with the scan split into `parts` row ranges
/// searched in parallel and merged.
pub fn top_k_partitioned(codes: &CodeMatrix, q: &Query, parts: usize) -> Result<RankedResult<u32>> {
    let query = resolve_code(codes, q)?;
    q.check_k(codes.node_count())?;
    let n = codes.node_count();
    let parts = parts.clamp(1, n.max(1));
    let chunk = n.div_ceil(parts);
    let start = Instant::now();
    let sel = (0..parts)
        .into_par_iter()
        .map(|p| {
            let mut sel = TopK::new(q.k);
            scan(codes, query, p * chunk..((p + 1) * chunk).min(n), q.skipped(), &mut sel);
            sel
        })
        .reduce(|| TopK::new(q.k), TopK::merge);
    let entries = sel.into_sorted();
    Ok(RankedResult {
        entries,
        elapsed: start.elapsed(),
    })
}

/// The K nearest rows by squared Euclidean distance.
pub fn top_k_euclidean(embeddings: &DenseMatrix, q: &Query) -> Result<RankedResult<f64>> {
    let query = match q.target {
        Target::Node(n) if n.index() < embeddings.rows() => embeddings.row(n.index()),
        Target::Node(n) => {
            return Err(Error::Config(format!(
                "query node {n} outside matrix of {} rows",
                embeddings.rows()
            )))
        }
        Target::Vector(v) if v.len() == embeddings.cols() => v,
        Target::Vector(v) => {
            return Err(Error::DimensionMismatch {
                expected: embeddings.cols(),
                actual: v.len(),
            })
        }
        Target::Code(_) => return Err(Error::Config("a code cannot query a dense matrix".into())),
    };
    q.check_k(embeddings.rows())?;
    let skip = q.skipped();
    let start = Instant::now();
    let mut sel = TopK::new(q.k);
    for i in 0..embeddings.rows() {
        if Some(i) != skip {
            sel.offer(squared_euclidean(embeddings.row(i), query), i as u32);
        }
    }
    let entries = sel.into_sorted();
    Ok(RankedResult {
        entries,
        elapsed: start.elapsed(),
    })
}

/// Runs one node query per entry of `queries`, in parallel.
pub fn batch_top_k(codes: &CodeMatrix, queries: &[NodeId], k: usize, exclude_self: bool) -> Result<Vec<RankedResult<u32>>> {
    queries
        .par_iter()
        .map(|&n| {
            let mut q = Query::node(n, k);
            q.exclude_self = exclude_self;
            top_k(codes, &q)
        })
        .collect()
}

/// Writes `query_id  rank  neighbor_id  distance` rows (tab-separated, rank
/// from 1), with a trailing `elapsed_us` column when `timing` is set.
pub fn write_tsv<W: Write>(
    mut out: W,
    vocab: &Vocab,
    queries: &[NodeId],
    results: &[RankedResult<u32>],
    timing: bool,
) -> std::io::Result<()> {
    for (q, result) in queries.iter().zip(results) {
        for (rank, e) in result.entries.iter().enumerate() {
            write!(out, "{}\t{}\t{}\t{}", vocab.id(*q), rank + 1, vocab.id(e.node), e.distance)?;
            if timing {
                write!(out, "\t{:.3}", result.elapsed.as_secs_f64() * 1e6)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &CodeMatrix, i: usize, b: &CodeMatrix, j: usize) -> u32 {
        (0..a.dim()).filter(|&r| a.get(i, r) != b.get(j, r)).count() as u32
    }

    fn random_codes(n: usize, dim: usize, rng: &mut impl Rng) -> CodeMatrix {
        let mut m = CodeMatrix::zeros(n, dim);
        for i in 0..n {
            for r in 0..dim {
                m.set(i, r, rng.gen());
            }
        }
        m
    }

    fn sort_oracle(codes: &CodeMatrix, q: usize, k: usize, exclude: bool) -> Vec<(u32, u32)> {
        let mut all: Vec<(u32, u32)> = (0..codes.node_count())
            .filter(|&i| !(exclude && i == q))
            .map(|i| (naive(codes, q, codes, i), i as u32))
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn identity_and_complement() {
        for dim in [1, 63, 64, 65, 128, 200] {
            let mut m = CodeMatrix::zeros(2, dim);
            for r in 0..dim {
                m.set(0, r, r % 3 == 0);
                m.set(1, r, r % 3 != 0);
            }
            assert_eq!(hamming(m.row(0), m.row(0)), 0);
            assert_eq!(hamming(m.row(0), m.row(1)) as usize, dim);
        }
    }

    #[test]
    fn self_query_included() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = random_codes(50, 128, &mut rng);
        let r = top_k(&m, &Query::node(NodeId(0), 1).include_self()).unwrap();
        assert_eq!(r.entries, vec![Neighbor { node: NodeId(0), distance: 0 }]);
    }

    #[test]
    fn planted_nearest() {
        let mut m = CodeMatrix::zeros(20, 16);
        for i in 0..20 {
            for r in 0..16 {
                m.set(i, r, r < 2 + (i % 7));
            }
        }
        let query = vec![0u64];
        for i in 0..20 {
            m.set(i, 0, true);
            m.set(i, 1, true);
        }
        m.set(7, 1, false);
        for r in 2..16 {
            m.set(7, r, false);
        }
        let r = top_k(&m, &Query::code(&query, 3)).unwrap();
        assert_eq!(r.entries[0], Neighbor { node: NodeId(7), distance: 1 });
    }

    #[test]
    fn matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, dim) in &[(30, 8), (200, 64), (300, 65), (500, 130)] {
            let m = random_codes(n, dim, &mut rng);
            for k in [1, 10, 29] {
                let q = rng.gen_range(0..n);
                let got: Vec<(u32, u32)> = top_k(&m, &Query::node(NodeId(q as u32), k))
                    .unwrap()
                    .entries
                    .iter()
                    .map(|e| (e.distance, e.node.0))
                    .collect();
                assert_eq!(got, sort_oracle(&m, q, k, true));
                let part = top_k_partitioned(&m, &Query::node(NodeId(q as u32), k), 7).unwrap();
                assert_eq!(part.entries, top_k(&m, &Query::node(NodeId(q as u32), k)).unwrap().entries);
            }
        }
    }

    #[test]
    fn k_range() {
        let m = CodeMatrix::zeros(5, 8);
        assert!(matches!(top_k(&m, &Query::node(NodeId(0), 0)), Err(Error::KOutOfRange { .. })));
        assert!(matches!(top_k(&m, &Query::node(NodeId(0), 5)), Err(Error::KOutOfRange { max: 4, .. })));
        assert_eq!(top_k(&m, &Query::node(NodeId(0), 5).include_self()).unwrap().len(), 5);
        // All distances tie, so ascending node order decides.
        let r = top_k(&m, &Query::node(NodeId(2), 4)).unwrap();
        assert_eq!(r.nodes().map(|n| n.0).collect::<Vec<_>>(), [0, 1, 3, 4]);
        assert!(top_k(&m, &Query::node(NodeId(9), 1)).is_err());
    }

    #[test]
    fn euclidean_basics() {
        let m = DenseMatrix::new(3, 2, vec![0.0, 0.0, 1.0, 1.0, 3.0, 3.0]).unwrap();
        let r = top_k_euclidean(&m, &Query::vector(&[1.0, 1.0], 1)).unwrap();
        assert_eq!(r.entries[0], Neighbor { node: NodeId(1), distance: 0.0 });
        let r = top_k_euclidean(&m, &Query::node(NodeId(0), 2)).unwrap();
        assert_eq!(r.nodes().map(|n| n.0).collect::<Vec<_>>(), [1, 2]);
        assert!(top_k_euclidean(&m, &Query::node(NodeId(0), 3)).is_err());
    }

    #[test]
    fn euclidean_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d) = (400, 16);
        // Coarse values make exact ties common.
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(0..3) as f64).collect();
        let m = DenseMatrix::new(n, d, data).unwrap();
        for q in [0usize, 17, 399] {
            let mut all: Vec<(f64, u32)> = (0..n)
                .filter(|&i| i != q)
                .map(|i| (squared_euclidean(m.row(i), m.row(q)), i as u32))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<(f64, u32)> = top_k_euclidean(&m, &Query::node(NodeId(q as u32), 25))
                .unwrap()
                .entries
                .iter()
                .map(|e| (e.distance, e.node.0))
                .collect();
            assert_eq!(got, all[..25]);
        }
    }

    #[test]
    fn tsv_output() {
        let vocab = Vocab::from_ids(["a", "b", "c"]).unwrap();
        let mut m = CodeMatrix::zeros(3, 4);
        m.set(2, 0, true);
        m.set(1, 0, true);
        m.set(1, 1, true);
        let queries = [NodeId(0)];
        let results = batch_top_k(&m, &queries, 2, true).unwrap();
        let mut buf = Vec::new();
        write_tsv(&mut buf, &vocab, &queries, &results, false).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a\t1\tc\t1\na\t2\tb\t2\n");
    }
}
