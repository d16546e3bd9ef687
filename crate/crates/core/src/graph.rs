//! Attributed network ingestion: edge lists, node attributes, class labels.
//!
//! External node ids are arbitrary strings interned into dense `u32` indices in
//! first-appearance order. All downstream computation works on the dense
//! indices; the [`Vocab`] maps them back and is persisted as a `*.vocab`
//! sidecar (one id per line, line number = index).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};

/// Dense node index in `[0, |V|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    #[inline]
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Field separator for the text formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// Any run of spaces or tabs.
    #[default]
    Whitespace,
    Char(char),
}

impl Delimiter {
    fn split<'a>(self, line: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            Delimiter::Whitespace => Box::new(line.split_whitespace()),
            Delimiter::Char(c) => Box::new(line.split(c).map(str::trim)),
        }
    }
}

/// Bidirectional map between dense indices and external string ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    ids: Vec<String>,
    index: FxHashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, assigning the next free index on first sight.
    pub fn intern(&mut self, id: &str) -> u32 {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).map(|&i| NodeId(i))
    }

    pub fn id(&self, node: NodeId) -> &str {
        &self.ids[node.index()]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for id in ids {
            let id = id.into();
            if vocab.index.contains_key(&id) {
                return Err(Error::Config(format!("duplicate vocabulary id `{id}`")));
            }
            vocab.intern(&id);
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for id in &self.ids {
            writeln!(out, "{id}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut vocab = Vocab::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if vocab.index.contains_key(&line) {
                return Err(Error::Parse {
                    path: path.into(),
                    line: n + 1,
                    message: format!("duplicate id `{line}`"),
                });
            }
            vocab.intern(&line);
        }
        Ok(vocab)
    }
}

/// Undirected simple graph in compressed sparse row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    vocab: Vocab,
}

impl Graph {
    /// Builds a graph over `vocab`'s nodes. Direction is ignored, duplicate
    /// edges collapse, self-loops are dropped.
    pub fn from_edges(vocab: Vocab, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let n = vocab.len();
        let mut pairs: Vec<(u32, u32)> = edges
            .into_iter()
            .filter(|&(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();

        let mut degree = vec![0usize; n];
        for &(a, b) in &pairs {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut neighbors = vec![0u32; offsets[n]];
        for &(a, b) in &pairs {
            neighbors[cursor[a as usize]] = b;
            cursor[a as usize] += 1;
            neighbors[cursor[b as usize]] = a;
            cursor[b as usize] += 1;
        }
        for i in 0..n {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Graph {
            offsets,
            neighbors,
            vocab,
        }
    }

    /// Reads `src<delim>dst` lines; `#` comment lines and blank lines are skipped.
    pub fn load_edge_list(path: impl AsRef<Path>, delimiter: Delimiter) -> Result<Self> {
        let path = path.as_ref();
        let mut vocab = Vocab::new();
        let mut edges = Vec::new();
        let mut self_loops = 0usize;
        for_each_record(path, delimiter, |line, fields| {
            let [src, dst] = expect_fields::<2>(path, line, fields, "src dst")?;
            let a = vocab.intern(src);
            let b = vocab.intern(dst);
            if a == b {
                self_loops += 1;
            } else {
                edges.push((a, b));
            }
            Ok(())
        })?;
        if self_loops > 0 {
            warn!("{}: dropped {self_loops} self-loop(s)", path.display());
        }
        if vocab.is_empty() {
            return Err(Error::EmptyGraph { path: path.into() });
        }
        Ok(Graph::from_edges(vocab, edges))
    }

    /// Writes each undirected edge once as `src\tdst` using external ids.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        for (a, b) in self.edges() {
            writeln!(out, "{}\t{}", self.vocab.id(a), self.vocab.id(b))
                .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn node_count(&self) -> usize {
        self.vocab.len()
    }

    /// Number of unordered node pairs stored.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Unordered edges `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.node_count()).flat_map(move |a| {
            self.neighbors(a)
                .iter()
                .filter(move |&&b| (b as usize) > a)
                .map(move |&b| (NodeId::from(a), NodeId(b)))
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }
}

/// One stored entry of the node-attribute matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttrEntry {
    pub node: u32,
    pub attr: u32,
    pub weight: f64,
}

/// Sparse non-negative node × attribute matrix with row and column access.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    node_count: usize,
    attr_count: usize,
    /// Sorted by (node, attr).
    entries: Vec<AttrEntry>,
    row_offsets: Vec<usize>,
    /// Entry positions sorted by (attr, node).
    col_order: Vec<u32>,
    col_offsets: Vec<usize>,
}

impl AttributeMatrix {
    /// Duplicate (node, attr) triplets sum; zero weights are dropped.
    pub fn from_triplets(
        node_count: usize,
        attr_count: usize,
        triplets: impl IntoIterator<Item = AttrEntry>,
    ) -> Result<Self> {
        let mut raw: Vec<AttrEntry> = Vec::new();
        for t in triplets {
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return Err(Error::InvalidWeights(format!(
                    "attribute weight {} for node {} attr {} is not a finite non-negative number",
                    t.weight, t.node, t.attr
                )));
            }
            if t.node as usize >= node_count || t.attr as usize >= attr_count {
                return Err(Error::Config(format!(
                    "attribute triplet ({}, {}) outside {node_count}x{attr_count}",
                    t.node, t.attr
                )));
            }
            raw.push(t);
        }
        raw.sort_by_key(|t| (t.node, t.attr));
        let mut entries: Vec<AttrEntry> = Vec::with_capacity(raw.len());
        for t in raw {
            match entries.last_mut() {
                Some(last) if last.node == t.node && last.attr == t.attr => last.weight += t.weight,
                _ => entries.push(t),
            }
        }
        entries.retain(|t| t.weight > 0.0);

        let mut row_offsets = vec![0usize; node_count + 1];
        let mut col_offsets = vec![0usize; attr_count + 1];
        for t in &entries {
            row_offsets[t.node as usize + 1] += 1;
            col_offsets[t.attr as usize + 1] += 1;
        }
        for i in 0..node_count {
            row_offsets[i + 1] += row_offsets[i];
        }
        for j in 0..attr_count {
            col_offsets[j + 1] += col_offsets[j];
        }
        let mut col_order: Vec<u32> = (0..entries.len() as u32).collect();
        col_order.sort_by_key(|&p| {
            let t = &entries[p as usize];
            (t.attr, t.node)
        });
        Ok(AttributeMatrix {
            node_count,
            attr_count,
            entries,
            row_offsets,
            col_order,
            col_offsets,
        })
    }

    pub fn empty(node_count: usize) -> Self {
        Self::from_triplets(node_count, 0, std::iter::empty()).expect("empty matrix is valid")
    }

    /// Reads `node<delim>attr<delim>weight` lines. `attr` is a non-negative
    /// integer index; |A| is one past the largest index seen. Unknown node
    /// ids are an error unless `skip_unknown` is set.
    pub fn load(
        path: impl AsRef<Path>,
        graph: &Graph,
        delimiter: Delimiter,
        skip_unknown: bool,
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut triplets = Vec::new();
        let mut attr_count = 0usize;
        let mut skipped = 0usize;
        for_each_record(path, delimiter, |line, fields| {
            let [node, attr, weight] = expect_fields::<3>(path, line, fields, "node attr weight")?;
            let attr: u32 = attr.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                message: format!("attribute index `{attr}` is not a non-negative integer"),
            })?;
            let weight: f64 = weight.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line,
                message: format!("weight `{weight}` is not a number"),
            })?;
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("weight {weight} must be finite and non-negative"),
                });
            }
            let Some(node) = graph.vocab().get(node) else {
                if skip_unknown {
                    skipped += 1;
                    return Ok(());
                }
                return Err(Error::UnknownNode {
                    path: path.into(),
                    line,
                    id: node.to_owned(),
                });
            };
            attr_count = attr_count.max(attr as usize + 1);
            triplets.push(AttrEntry {
                node: node.0,
                attr,
                weight,
            });
            Ok(())
        })?;
        if skipped > 0 {
            warn!("{}: skipped {skipped} line(s) with unknown node ids", path.display());
        }
        Self::from_triplets(graph.node_count(), attr_count, triplets)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn attr_count(&self) -> usize {
        self.attr_count
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Entries in (node, attr) order.
    pub fn entries(&self) -> &[AttrEntry] {
        &self.entries
    }

    pub fn row(&self, node: usize) -> &[AttrEntry] {
        &self.entries[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    pub fn column(&self, attr: usize) -> impl Iterator<Item = &AttrEntry> + '_ {
        self.col_order[self.col_offsets[attr]..self.col_offsets[attr + 1]]
            .iter()
            .map(move |&p| &self.entries[p as usize])
    }

    /// Σ X_ij.
    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|t| t.weight).sum()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.attr_count];
        for t in &self.entries {
            sums[t.attr as usize] += t.weight;
        }
        sums
    }
}

/// Partial node → class map. Class names are interned in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<Option<u32>>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(node_count: usize) -> Self {
        LabelMap {
            labels: vec![None; node_count],
            class_names: Vec::new(),
        }
    }

    /// Builds a map from per-node class indices; `class_count` is one past the
    /// largest index present.
    pub fn from_classes(labels: Vec<Option<u32>>) -> Self {
        let class_count = labels.iter().flatten().map(|&c| c as usize + 1).max().unwrap_or(0);
        LabelMap {
            labels,
            class_names: (0..class_count).map(|c| c.to_string()).collect(),
        }
    }

    /// Reads `node<delim>class` lines. A node listed twice with different
    /// classes is an error.
    pub fn load(path: impl AsRef<Path>, graph: &Graph, delimiter: Delimiter) -> Result<Self> {
        let path = path.as_ref();
        let mut map = LabelMap::new(graph.node_count());
        let mut class_index: FxHashMap<String, u32> = FxHashMap::default();
        for_each_record(path, delimiter, |line, fields| {
            let [node, class] = expect_fields::<2>(path, line, fields, "node class")?;
            let Some(node) = graph.vocab().get(node) else {
                return Err(Error::UnknownNode {
                    path: path.into(),
                    line,
                    id: node.to_owned(),
                });
            };
            let next = class_index.len() as u32;
            let c = *class_index.entry(class.to_owned()).or_insert_with(|| {
                map.class_names.push(class.to_owned());
                next
            });
            match map.labels[node.index()] {
                Some(prev) if prev != c => Err(Error::Parse {
                    path: path.into(),
                    line,
                    message: format!("node `{}` already labeled with a different class", graph.vocab().id(node)),
                }),
                _ => {
                    map.labels[node.index()] = Some(c);
                    Ok(())
                }
            }
        })?;
        Ok(map)
    }

    #[inline]
    pub fn get(&self, node: usize) -> Option<u32> {
        self.labels[node]
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_name(&self, class: u32) -> &str {
        &self.class_names[class as usize]
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled_count() == 0
    }

    pub fn labeled_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_some())
            .map(|(i, _)| NodeId::from(i))
    }

    /// Number of labeled nodes in each class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count()];
        for c in self.labels.iter().flatten() {
            sizes[*c as usize] += 1;
        }
        sizes
    }
}

fn for_each_record(
    path: &Path,
    delimiter: Delimiter,
    mut f: impl FnMut(usize, Vec<&str>) -> Result<()>,
) -> Result<()> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = delimiter.split(trimmed).collect();
        f(n + 1, fields)?;
    }
    Ok(())
}

fn expect_fields<'a, const N: usize>(
    path: &Path,
    line: usize,
    fields: Vec<&'a str>,
    shape: &str,
) -> Result<[&'a str; N]> {
    let count = fields.len();
    let arr: [&str; N] = fields.try_into().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        message: format!("expected `{shape}` ({N} fields), found {count}"),
    })?;
    if arr.iter().any(|f| f.is_empty()) {
        return Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("empty field in `{shape}` record"),
        });
    }
    Ok(arr)
}
