//! Retrieval evaluation: every labeled node queries its top-K neighbors and
//! results are scored against class labels.
//!
//! * precision@K(v) = |{u in top K : C(u) = C(v)}| / K
//! * AP@K(v) = Σ_{k ≤ K} precision@k(v) · rel_k(v) / |{u : C(u) = C(v)}|
//! * MAP@K = mean of AP@K over all labeled queries
//!
//! The AP denominator counts every same-class node, not just those within
//! the cutoff, so MAP@K values are small for large classes.

use std::fmt::Write as _;
use std::time::Duration;

use log::warn;
use rayon::prelude::*;

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::graph::{LabelMap, NodeId};
use crate::search::{top_k, top_k_euclidean, DenseMatrix, Query};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Drop the query from its own candidate list and relevant count.
    pub exclude_query: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![100, 200, 500],
            exclude_query: true,
        }
    }
}

/// Anything that answers node top-K queries.
pub trait Retriever: Sync {
    fn node_count(&self) -> usize;
    fn query(&self, node: NodeId, k: usize, exclude_self: bool) -> Result<(Vec<NodeId>, Duration)>;
    fn memory_bytes(&self) -> usize;
}

impl Retriever for CodeMatrix {
    fn node_count(&self) -> usize {
        CodeMatrix::node_count(self)
    }

    fn query(&self, node: NodeId, k: usize, exclude_self: bool) -> Result<(Vec<NodeId>, Duration)> {
        let mut q = Query::node(node, k);
        q.exclude_self = exclude_self;
        let r = top_k(self, &q)?;
        Ok((r.nodes().collect(), r.elapsed))
    }

    fn memory_bytes(&self) -> usize {
        self.payload_bytes()
    }
}

impl Retriever for DenseMatrix {
    fn node_count(&self) -> usize {
        self.rows()
    }

    fn query(&self, node: NodeId, k: usize, exclude_self: bool) -> Result<(Vec<NodeId>, Duration)> {
        let mut q = Query::node(node, k);
        q.exclude_self = exclude_self;
        let r = top_k_euclidean(self, &q)?;
        Ok((r.nodes().collect(), r.elapsed))
    }

    fn memory_bytes(&self) -> usize {
        self.bytes()
    }
}

/// Fraction of the first `k` ranked nodes sharing the query's class.
pub fn precision_at_k(ranked: &[NodeId], query: NodeId, labels: &LabelMap, k: usize) -> Result<f64> {
    let class = labels
        .get(query.index())
        .ok_or_else(|| Error::Config(format!("query node {query} is unlabeled")))?;
    if k == 0 || ranked.len() < k {
        return Err(Error::KOutOfRange { k, max: ranked.len() });
    }
    let hits = ranked[..k]
        .iter()
        .filter(|n| labels.get(n.index()) == Some(class))
        .count();
    Ok(hits as f64 / k as f64)
}

/// AP@K with `relevant_total` as the denominator; 0 when nothing is relevant.
pub fn average_precision_at_k(
    ranked: &[NodeId],
    query: NodeId,
    labels: &LabelMap,
    k: usize,
    relevant_total: usize,
) -> Result<f64> {
    let class = labels
        .get(query.index())
        .ok_or_else(|| Error::Config(format!("query node {query} is unlabeled")))?;
    if k == 0 || ranked.len() < k {
        return Err(Error::KOutOfRange { k, max: ranked.len() });
    }
    if relevant_total == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, n) in ranked[..k].iter().enumerate() {
        if labels.get(n.index()) == Some(class) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / relevant_total as f64)
}

pub fn map_at_k(average_precisions: &[f64]) -> f64 {
    if average_precisions.is_empty() {
        return 0.0;
    }
    average_precisions.iter().sum::<f64>() / average_precisions.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffMetrics {
    pub k: usize,
    pub precision: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub metrics: Vec<CutoffMetrics>,
    pub queries: usize,
    /// Queries whose class has no other member; they score AP = 0.
    pub zero_relevant_queries: usize,
    pub mean_query_time: Duration,
    pub memory_bytes: usize,
}

impl EvalReport {
    pub fn metric(&self, k: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn mean_query_ms(&self) -> f64 {
        self.mean_query_time.as_secs_f64() * 1e3
    }

    pub fn tsv_header(&self) -> String {
        let mut h = String::from("method");
        for m in &self.metrics {
            write!(h, "\tprecision@{k}\tMAP@{k}", k = m.k).unwrap();
        }
        h.push_str("\tquery_ms\tmemory_bytes");
        h
    }

    pub fn tsv_row(&self) -> String {
        let mut row = self.method.clone();
        for m in &self.metrics {
            write!(row, "\t{:.4}\t{:.4}", m.precision, m.map).unwrap();
        }
        write!(row, "\t{:.4}\t{}", self.mean_query_ms(), self.memory_bytes).unwrap();
        row
    }
}

/// Aligned plain-text table; all reports must share the same cutoffs.
pub fn format_table(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut header: Vec<String> = vec!["Method".into()];
    for m in &first.metrics {
        header.push(format!("precision@{}", m.k));
        header.push(format!("MAP@{}", m.k));
    }
    header.push("Query time (ms)".into());
    header.push("Memory".into());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.method.clone()];
        for m in &r.metrics {
            row.push(format!("{:.4}", m.precision));
            row.push(format!("{:.4}", m.map));
        }
        row.push(format!("{:.3}", r.mean_query_ms()));
        row.push(format!("{:.2}K", r.memory_bytes as f64 / 1024.0));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

struct QueryScore {
    precision: Vec<f64>,
    ap: Vec<f64>,
    elapsed: Duration,
    zero_relevant: bool,
}

/// Queries every labeled node and aggregates precision@K, MAP@K and mean
/// query time. Per-query work runs on the current rayon pool; aggregation
/// is an ordered reduction, so metrics do not depend on thread count.
pub fn run_benchmark<R: Retriever + ?Sized>(
    method: &str,
    retriever: &R,
    labels: &LabelMap,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let n = retriever.node_count();
    if labels.node_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.node_count(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Config("no labeled nodes to evaluate".into()));
    }
    if cfg.ks.is_empty() {
        return Err(Error::Config("no cutoffs given".into()));
    }
    let self_slot = usize::from(cfg.exclude_query);
    let max_k = labels.labeled_count().min(n) - self_slot;
    if let Some(&k) = cfg.ks.iter().find(|&&k| k == 0 || k > max_k) {
        return Err(Error::KOutOfRange { k, max: max_k });
    }
    let k_max = *cfg.ks.iter().max().unwrap();
    let class_sizes = labels.class_sizes();
    let queries: Vec<NodeId> = labels.labeled_nodes().collect();

    let scores: Vec<QueryScore> = queries
        .par_iter()
        .map(|&q| -> Result<QueryScore> {
            let (ranked, elapsed) = retriever.query(q, k_max, cfg.exclude_query)?;
            let class = labels.get(q.index()).unwrap();
            let relevant = class_sizes[class as usize] - self_slot;
            let mut precision = Vec::with_capacity(cfg.ks.len());
            let mut ap = Vec::with_capacity(cfg.ks.len());
            for &k in &cfg.ks {
                precision.push(precision_at_k(&ranked, q, labels, k)?);
                ap.push(average_precision_at_k(&ranked, q, labels, k, relevant)?);
            }
            Ok(QueryScore {
                precision,
                ap,
                elapsed,
                zero_relevant: relevant == 0,
            })
        })
        .collect::<Result<_>>()?;

    let count = scores.len();
    let zero_relevant = scores.iter().filter(|s| s.zero_relevant).count();
    if zero_relevant > 0 {
        warn!("{method}: {zero_relevant} queries have no same-class candidates (AP counted as 0)");
    }
    let metrics = cfg
        .ks
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let precision = scores.iter().map(|s| s.precision[slot]).sum::<f64>() / count as f64;
            let aps: Vec<f64> = scores.iter().map(|s| s.ap[slot]).collect();
            CutoffMetrics {
                k,
                precision,
                map: map_at_k(&aps),
            }
        })
        .collect();
    let total: Duration = scores.iter().map(|s| s.elapsed).sum();
    Ok(EvalReport {
        method: method.to_owned(),
        metrics,
        queries: count,
        zero_relevant_queries: zero_relevant,
        mean_query_time: total / count as u32,
        memory_bytes: retriever.memory_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn precision_counts() {
        let labels = LabelMap::from_classes(
            (0..101).map(|i| Some(if i == 0 || i <= 58 { 0 } else { 1 })).collect(),
        );
        let ranked: Vec<NodeId> = (1..=100).map(NodeId).collect();
        assert!((precision_at_k(&ranked, NodeId(0), &labels, 100).unwrap() - 0.58).abs() < 1e-15);
        assert_eq!(precision_at_k(&ranked, NodeId(0), &labels, 58).unwrap(), 1.0);
        assert!(precision_at_k(&ranked, NodeId(0), &labels, 101).is_err());
        let partial = LabelMap::from_classes(vec![None, Some(0)]);
        assert!(precision_at_k(&ids(&[1]), NodeId(0), &partial, 1).is_err());
    }

    #[test]
    fn ten_node_set_count() {
        // Query 0 has class 2; classes for nodes 1..=9 below.
        let classes = [2, 2, 0, 2, 1, 2, 2, 0, 1, 2];
        let labels = LabelMap::from_classes(classes.iter().map(|&c| Some(c)).collect());
        let ranked = ids(&[9, 4, 2, 1, 8, 5, 3, 7, 6]);
        for k in 1..=9 {
            let expected = ranked[..k].iter().filter(|n| classes[n.index()] == 2).count() as f64 / k as f64;
            assert_eq!(precision_at_k(&ranked, NodeId(0), &labels, k).unwrap(), expected);
        }
    }

    #[test]
    fn average_precision_cases() {
        // Query 0 in class 0 with relevant nodes {1, 2, 3}.
        let labels = LabelMap::from_classes(vec![Some(0), Some(0), Some(0), Some(0), Some(1), Some(1)]);
        let perfect = ids(&[1, 2, 3, 4, 5]);
        for k in 1..=5 {
            let ap = average_precision_at_k(&perfect, NodeId(0), &labels, k, 3).unwrap();
            assert!((ap - k.min(3) as f64 / 3.0).abs() < 1e-15);
        }
        let none = ids(&[4, 5, 1, 2, 3]);
        assert_eq!(average_precision_at_k(&none, NodeId(0), &labels, 2, 3).unwrap(), 0.0);
        // Interleaved: relevant at ranks 1, 3, 5.
        let mixed = ids(&[1, 4, 2, 5, 3]);
        let by_hand = (1.0 / 1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
        assert!((average_precision_at_k(&mixed, NodeId(0), &labels, 5, 3).unwrap() - by_hand).abs() < 1e-15);
        let by_hand_3 = (1.0 + 2.0 / 3.0) / 3.0;
        assert!((average_precision_at_k(&mixed, NodeId(0), &labels, 3, 3).unwrap() - by_hand_3).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&mixed, NodeId(0), &labels, 5, 0).unwrap(), 0.0);
        assert_eq!(map_at_k(&[0.5, 0.25]), 0.375);
        assert_eq!(map_at_k(&[]), 0.0);
    }

    #[test]
    fn perfect_codes_score_one() {
        // Three classes of 10 nodes; codes are one-hot class patterns.
        let n = 30;
        let mut codes = CodeMatrix::zeros(n, 3);
        let mut classes = Vec::new();
        for i in 0..n {
            codes.set(i, i / 10, true);
            classes.push(Some((i / 10) as u32));
        }
        let labels = LabelMap::from_classes(classes);
        let cfg = EvalConfig { ks: vec![5, 9], exclude_query: true };
        let report = run_benchmark("perfect", &codes, &labels, &cfg).unwrap();
        assert_eq!(report.metric(5).unwrap().precision, 1.0);
        assert_eq!(report.metric(9).unwrap().precision, 1.0);
        assert!((report.metric(9).unwrap().map - 1.0).abs() < 1e-12);
        assert_eq!(report.queries, 30);
        assert_eq!(report.memory_bytes, 30 * 8);
    }

    #[test]
    fn random_codes_two_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1000;
        let mut codes = CodeMatrix::zeros(n, 64);
        for i in 0..n {
            for r in 0..64 {
                codes.set(i, r, rng.gen());
            }
        }
        let labels = LabelMap::from_classes((0..n).map(|i| Some((i % 2) as u32)).collect());
        let cfg = EvalConfig { ks: vec![100], exclude_query: true };
        let report = run_benchmark("random", &codes, &labels, &cfg).unwrap();
        assert!((report.metric(100).unwrap().precision - 0.5).abs() < 0.03);
    }

    #[test]
    fn refuses_bad_inputs() {
        let codes = CodeMatrix::zeros(4, 8);
        let cfg = EvalConfig { ks: vec![2], exclude_query: true };
        assert!(run_benchmark("x", &codes, &LabelMap::new(4), &cfg).is_err());
        let labels = LabelMap::from_classes(vec![Some(0), Some(1), Some(0), None]);
        assert!(run_benchmark("x", &codes, &labels, &cfg).is_ok());
        let too_big = EvalConfig { ks: vec![3], exclude_query: true };
        assert!(matches!(run_benchmark("x", &codes, &labels, &too_big), Err(Error::KOutOfRange { .. })));
        assert!(run_benchmark("x", &codes, &LabelMap::from_classes(vec![Some(0); 3]), &cfg).is_err());
    }

    #[test]
    fn singleton_class_flagged() {
        let codes = CodeMatrix::zeros(4, 8);
        let labels = LabelMap::from_classes(vec![Some(0), Some(0), Some(1), Some(0)]);
        let cfg = EvalConfig { ks: vec![2], exclude_query: true };
        let r = run_benchmark("x", &codes, &labels, &cfg).unwrap();
        assert_eq!(r.zero_relevant_queries, 1);
        assert_eq!(r.queries, 4);
    }

    #[test]
    fn report_formats() {
        let r = EvalReport {
            method: "BinaryNE".into(),
            metrics: vec![CutoffMetrics { k: 100, precision: 0.58281, map: 0.1 }],
            queries: 1,
            zero_relevant_queries: 0,
            mean_query_time: Duration::from_micros(70),
            memory_bytes: 43_328,
        };
        assert_eq!(r.tsv_header(), "method\tprecision@100\tMAP@100\tquery_ms\tmemory_bytes");
        assert_eq!(r.tsv_row(), "BinaryNE\t0.5828\t0.1000\t0.0700\t43328");
        let table = format_table(&[r]);
        assert!(table.contains("42.31K"));
        assert!(table.lines().count() == 3);
    }
}
