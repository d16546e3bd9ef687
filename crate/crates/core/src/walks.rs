//! Truncated random walks and windowed context-pair counting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    /// Maximum number of nodes in a walk (L).
    pub walk_length: usize,
    /// Walks started at every node (γ).
    pub walks_per_node: usize,
    /// Context window radius (t).
    pub window: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_length: 100,
            walks_per_node: 40,
            window: 10,
            seed: 1,
        }
    }
}

impl WalkConfig {
    /// A window at least as long as the walk only sees `walk_length - 1`
    /// neighbors; that is accepted with a warning so degenerate settings such
    /// as `walk_length = 1` still run.
    pub fn validate(&self) -> Result<()> {
        if self.walk_length == 0 || self.walks_per_node == 0 || self.window == 0 {
            return Err(Error::Config(format!(
                "walk_length, walks_per_node and window must be positive (got {}, {}, {})",
                self.walk_length, self.walks_per_node, self.window
            )));
        }
        if self.window >= self.walk_length {
            warn!(
                "window {} is not shorter than walk length {}; windows are truncated at walk ends",
                self.window, self.walk_length
            );
        }
        Ok(())
    }

    /// Upper bound on `PairCounts::total`, reached only when no walk stops early.
    pub fn max_pair_total(&self, node_count: usize) -> u64 {
        let l = self.walk_length as u64;
        let t = (self.window as u64).min(l.saturating_sub(1));
        // Each walk of length L contributes 2 * Σ_{δ=1..t} (L - δ) ordered pairs.
        let per_walk = 2 * (t * l - t * (t + 1) / 2);
        node_count as u64 * self.walks_per_node as u64 * per_walk
    }
}

/// Flat storage of variable-length walks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WalkSet {
    offsets: Vec<usize>,
    nodes: Vec<u32>,
}

impl WalkSet {
    pub fn from_walks<I, W>(walks: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: AsRef<[u32]>,
    {
        let mut set = WalkSet {
            offsets: vec![0],
            nodes: Vec::new(),
        };
        for w in walks {
            set.push(w.as_ref());
        }
        set
    }

    fn push(&mut self, walk: &[u32]) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.nodes.extend_from_slice(walk);
        self.offsets.push(self.nodes.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.nodes[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// One walk per line, space-separated external ids.
    pub fn write(&self, vocab: &Vocab, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for walk in self.iter() {
            let line: Vec<&str> = walk.iter().map(|&n| vocab.id(NodeId(n))).collect();
            writeln!(out, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// RNG for walk number `round` started at `start`. Streams are independent
/// of generation order, so parallel and serial generation agree.
fn walk_rng(seed: u64, start: usize, round: usize, walks_per_node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((start as u64) * walks_per_node as u64 + round as u64);
    rng
}

fn walk_into(graph: &Graph, start: usize, length: usize, rng: &mut impl Rng, out: &mut Vec<u32>) {
    let mut current = start;
    out.push(current as u32);
    for _ in 1..length {
        let nbrs = graph.neighbors(current);
        if nbrs.is_empty() {
            break;
        }
        current = nbrs[rng.gen_range(0..nbrs.len())] as usize;
        out.push(current as u32);
    }
}

/// Generates exactly `walks_per_node` uniform random walks from every node.
/// Walks are ordered by start node, then by walk number.
pub fn generate_walks(graph: &Graph, cfg: &WalkConfig) -> Result<WalkSet> {
    cfg.validate()?;
    let per_node: Vec<Vec<u32>> = (0..graph.node_count())
        .into_par_iter()
        .map(|start| {
            let mut buf = Vec::with_capacity(cfg.walks_per_node * cfg.walk_length + 1);
            let mut ends = Vec::with_capacity(cfg.walks_per_node);
            for round in 0..cfg.walks_per_node {
                let mut rng = walk_rng(cfg.seed, start, round, cfg.walks_per_node);
                walk_into(graph, start, cfg.walk_length, &mut rng, &mut buf);
                ends.push(buf.len() as u32);
            }
            // Walk boundaries ride along at the tail of the buffer.
            buf.extend_from_slice(&ends);
            buf
        })
        .collect();

    let mut set = WalkSet {
        offsets: vec![0],
        nodes: Vec::new(),
    };
    for buf in per_node {
        let split = buf.len() - cfg.walks_per_node;
        let (nodes, ends) = buf.split_at(split);
        let mut begin = 0usize;
        for &end in ends {
            set.push(&nodes[begin..end as usize]);
            begin = end as usize;
        }
    }
    Ok(set)
}

/// One aggregated context-pair count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PairCount {
    pub center: u32,
    pub context: u32,
    pub count: u32,
}

/// Sparse n(v_i, v_j) counts, sorted by (center, context).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCounts {
    pairs: Vec<PairCount>,
    total: u64,
}

type CountMap = FxHashMap<u64, u32>;

#[inline]
fn key(center: u32, context: u32) -> u64 {
    (center as u64) << 32 | context as u64
}

fn count_walk(walk: &[u32], window: usize, map: &mut CountMap) {
    for (i, &center) in walk.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(walk.len());
        for (j, &context) in walk[lo..hi].iter().enumerate() {
            if lo + j != i && context != center {
                *map.entry(key(center, context)).or_insert(0) += 1;
            }
        }
    }
}

fn merge(mut a: CountMap, mut b: CountMap) -> CountMap {
    if a.len() < b.len() {
        std::mem::swap(&mut a, &mut b);
    }
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

impl PairCounts {
    fn from_map(map: CountMap) -> Self {
        let mut pairs: Vec<PairCount> = map
            .into_iter()
            .map(|(k, count)| PairCount {
                center: (k >> 32) as u32,
                context: k as u32,
                count,
            })
            .collect();
        pairs.sort_unstable();
        let total = pairs.iter().map(|p| p.count as u64).sum();
        PairCounts { pairs, total }
    }

    /// Builds counts from explicit `(center, context, count)` entries.
    /// Duplicates add up; zero counts and diagonal entries are dropped.
    pub fn from_entries(entries: impl IntoIterator<Item = (u32, u32, u32)>) -> Self {
        let mut map = CountMap::default();
        for (c, x, n) in entries {
            if c != x && n > 0 {
                *map.entry(key(c, x)).or_insert(0) += n;
            }
        }
        Self::from_map(map)
    }

    /// For every walk position i and every j with 0 < |i − j| ≤ window inside
    /// the walk, adds one to n(walk[i], walk[j]). Windows are truncated at
    /// walk boundaries.
    pub fn from_walks(walks: &WalkSet, window: usize) -> Self {
        let map = (0..walks.len())
            .into_par_iter()
            .with_min_len(256)
            .fold(CountMap::default, |mut map, i| {
                count_walk(walks.get(i), window, &mut map);
                map
            })
            .reduce(CountMap::default, merge);
        Self::from_map(map)
    }

    /// Generates walks and counts their pairs without holding every walk in
    /// memory at once. Equal to `from_walks(&generate_walks(graph, cfg)?, cfg.window)`.
    pub fn collect(graph: &Graph, cfg: &WalkConfig) -> Result<Self> {
        cfg.validate()?;
        let map = (0..graph.node_count())
            .into_par_iter()
            .with_min_len(16)
            .fold(
                || (CountMap::default(), Vec::with_capacity(cfg.walk_length)),
                |(mut map, mut buf), start| {
                    for round in 0..cfg.walks_per_node {
                        buf.clear();
                        let mut rng = walk_rng(cfg.seed, start, round, cfg.walks_per_node);
                        walk_into(graph, start, cfg.walk_length, &mut rng, &mut buf);
                        count_walk(&buf, cfg.window, &mut map);
                    }
                    (map, buf)
                },
            )
            .map(|(map, _)| map)
            .reduce(CountMap::default, merge);
        Ok(Self::from_map(map))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Σ n(v_i, v_j); its reciprocal is the structure trade-off weight α₁.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn pairs(&self) -> &[PairCount] {
        &self.pairs
    }

    pub fn get(&self, center: u32, context: u32) -> u32 {
        self.pairs
            .binary_search_by(|p| (p.center, p.context).cmp(&(center, context)))
            .map(|i| self.pairs[i].count)
            .unwrap_or(0)
    }

    /// Σ_j n(v_i, v_j) for every node i.
    pub fn center_frequencies(&self, node_count: usize) -> Vec<u64> {
        let mut freq = vec![0u64; node_count];
        for p in &self.pairs {
            freq[p.center as usize] += p.count as u64;
        }
        freq
    }

    /// `center context count` lines using dense node indices.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for p in &self.pairs {
            writeln!(out, "{} {} {}", p.center, p.context, p.count).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: Option<Vec<u32>> = line.split_whitespace().map(|f| f.parse().ok()).collect();
            match parsed.as_deref() {
                Some(&[c, x, k]) => entries.push((c, x, k)),
                _ => {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: n + 1,
                        message: "expected `center context count` integers".into(),
                    })
                }
            }
        }
        Ok(Self::from_entries(entries))
    }
}
