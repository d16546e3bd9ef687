use std::collections::BTreeSet;

use binaryne::codes::CodeMatrix;
use binaryne::graph::AttrEntry;
use binaryne::sampler::{AliasTable, NoiseDistribution};
use binaryne::search::{hamming, squared_euclidean, top_k, top_k_euclidean, top_k_partitioned, DenseMatrix, Query};
use binaryne::walks::{PairCounts, WalkConfig};
use binaryne::{AttributeMatrix, Delimiter, Graph, ModelParams, NodeId, Vocab};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_from(n: u32, edges: &[(u32, u32)]) -> Graph {
    Graph::from_edges(Vocab::from_ids((0..n).map(|i| format!("n{i}"))).unwrap(), edges.iter().copied())
}

fn edge_list() -> impl Strategy<Value = (u32, Vec<(u32, u32)>)> {
    (2u32..40).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 1..120)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_is_simple_and_symmetric((n, edges) in edge_list()) {
        let g = graph_from(n, &edges);
        let expected: BTreeSet<(u32, u32)> = edges.iter().filter(|(a, b)| a != b).map(|&(a, b)| (a.min(b), a.max(b))).collect();
        prop_assert_eq!(g.edge_count(), expected.len());
        let degree_sum: usize = (0..g.node_count()).map(|v| g.degree(v)).sum();
        prop_assert_eq!(degree_sum, 2 * g.edge_count());
        for v in 0..g.node_count() {
            let nb = g.neighbors(v);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]), "neighbors sorted and unique");
            prop_assert!(!nb.contains(&(v as u32)), "self-loop kept");
            for &u in nb {
                prop_assert!(g.neighbors(u as usize).contains(&(v as u32)));
            }
        }
    }

    #[test]
    fn edge_list_round_trip((n, edges) in edge_list()) {
        let g = graph_from(n, &edges);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.edges");
        g.write_edge_list(&path).unwrap();
        if g.edge_count() == 0 {
            prop_assert!(Graph::load_edge_list(&path, Delimiter::Whitespace).is_err());
        } else {
            let h = Graph::load_edge_list(&path, Delimiter::Whitespace).unwrap();
            let ids = |g: &Graph| -> BTreeSet<(String, String)> {
                g.edges()
                    .map(|(a, b)| {
                        let (a, b) = (g.vocab().id(a).to_string(), g.vocab().id(b).to_string());
                        if a < b { (a, b) } else { (b, a) }
                    })
                    .collect()
            };
            prop_assert_eq!(ids(&g), ids(&h));
        }
    }

    #[test]
    fn pair_counts_symmetric_and_bounded((n, edges) in edge_list(), len in 2usize..20, t in 1usize..5, seed in 0u64..1000) {
        let g = graph_from(n, &edges);
        let cfg = WalkConfig { walk_length: len, walks_per_node: 3, window: t, seed };
        let pairs = PairCounts::collect(&g, &cfg).unwrap();
        for p in pairs.pairs() {
            prop_assert!(p.center != p.context);
            prop_assert_eq!(pairs.get(p.context, p.center), p.count);
            prop_assert!(g.vocab().len() > p.center.max(p.context) as usize);
        }
        prop_assert!(pairs.total() <= cfg.max_pair_total(g.node_count()));
        prop_assert_eq!(pairs.total(), pairs.pairs().iter().map(|p| p.count as u64).sum::<u64>());
    }

    #[test]
    fn attribute_duplicates_are_summed(entries in prop::collection::vec((0u32..10, 0u32..6, 0.0f64..5.0), 1..60)) {
        let triplets = entries.iter().map(|&(node, attr, weight)| AttrEntry { node, attr, weight });
        let x = AttributeMatrix::from_triplets(10, 6, triplets).unwrap();
        let total: f64 = entries.iter().map(|e| e.2).sum();
        prop_assert!((x.total_weight() - total).abs() < 1e-9);
        let keys: BTreeSet<(u32, u32)> = entries.iter().filter(|e| e.2 != 0.0).map(|e| (e.0, e.1)).collect();
        prop_assert_eq!(x.nnz(), keys.len());
        prop_assert!(x.entries().iter().all(|e| e.weight > 0.0));
    }

    #[test]
    fn alias_reconstructs_target(weights in prop::collection::vec(0.0f64..100.0, 1..300)) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 0.0);
        let table = AliasTable::new(&weights).unwrap();
        for (p, w) in table.probabilities().iter().zip(&weights) {
            prop_assert!((p - w / total).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_never_returns_excluded(freq in prop::collection::vec(0.0f64..50.0, 2..40), k in 1usize..8, seed in 0u64..100) {
        let positive = freq.iter().filter(|&&f| f > 0.0).count();
        prop_assume!(positive >= 2);
        let exclude = freq.iter().position(|&f| f > 0.0).unwrap();
        let noise = NoiseDistribution::new(&freq, 0.75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            for c in noise.draw(k, exclude, &mut rng).unwrap() {
                prop_assert!(c as usize != exclude);
                prop_assert!(freq[c as usize] > 0.0);
            }
        }
    }

    #[test]
    fn hamming_is_a_metric(dim in 1usize..300, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = CodeMatrix::zeros(4, dim);
        for i in 0..3 {
            for r in 0..dim {
                codes.set(i, r, rng.gen());
            }
        }
        for r in 0..dim {
            codes.set(3, r, !codes.get(0, r));
        }
        let d = |i: usize, j: usize| hamming(codes.row(i), codes.row(j));
        prop_assert_eq!(d(0, 0), 0);
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2));
        prop_assert_eq!(d(0, 3), dim as u32);
        prop_assert!(codes.is_canonical());
    }

    #[test]
    fn code_file_round_trip(n in 1usize..50, dim in 1usize..260, seed in 0u64..1000) {
        let codes = binaryne::synthetic::random_codes(n, dim, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bnec");
        codes.save(&path).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 20 + codes.payload_bytes());
        prop_assert_eq!(CodeMatrix::load(&path).unwrap(), codes);
    }

    #[test]
    fn hamming_top_k_matches_sort_at_any_width(n in 2usize..1500, dim in 1usize..400, k in 1usize..150, parts in 1usize..6, seed in 0u64..1000) {
        let k = k.min(n - 1);
        let codes = binaryne::synthetic::random_codes(n, dim, seed);
        let q = (seed as usize * 31) % n;
        let mut all: Vec<(u32, usize)> = (0..n).filter(|&j| j != q).map(|j| (hamming(codes.row(q), codes.row(j)), j)).collect();
        all.sort_unstable();
        let query = Query::node(NodeId(q as u32), k);
        for got in [top_k(&codes, &query).unwrap(), top_k_partitioned(&codes, &query, parts).unwrap()] {
            let got: Vec<(u32, usize)> = got.entries.iter().map(|e| (e.distance, e.node.index())).collect();
            prop_assert_eq!(&got, &all[..k].to_vec());
        }
    }

    #[test]
    fn euclidean_top_k_matches_sort(n in 2usize..200, dim in 1usize..20, k in 1usize..30, seed in 0u64..1000) {
        let k = k.min(n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Integer-valued entries make exact ties common.
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2..3) as f64).collect();
        let m = DenseMatrix::new(n, dim, data).unwrap();
        let q = rng.gen_range(0..n);
        let mut all: Vec<(f64, usize)> = (0..n).filter(|&j| j != q).map(|j| (squared_euclidean(m.row(q), m.row(j)), j)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = top_k_euclidean(&m, &Query::node(NodeId(q as u32), k)).unwrap();
        let got: Vec<(f64, usize)> = got.entries.iter().map(|e| (e.distance, e.node.index())).collect();
        prop_assert_eq!(got, all[..k].to_vec());
    }
}

/// Upper 0.001/6 quantile of the chi-square distribution with 4 degrees of
/// freedom. Six centers are tested, so this keeps the family-wise error at 0.001.
const CHI2_4DF_FAMILY_P001: f64 = 22.402;

#[test]
fn complete_graph_contexts_are_uniform() {
    let n = 6u32;
    let edges: Vec<(u32, u32)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let g = graph_from(n, &edges);
    let cfg = WalkConfig { walk_length: 100, walks_per_node: 5200, window: 1, seed: 17 };
    let pairs = PairCounts::collect(&g, &cfg).unwrap();
    for c in 0..n {
        let counts: Vec<f64> = (0..n).filter(|&j| j != c).map(|j| pairs.get(c, j) as f64).collect();
        let total: f64 = counts.iter().sum();
        assert!(total >= 1e6, "center {c}: only {total} pairs");
        let expected = total / (n - 1) as f64;
        let chi2: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
        assert!(chi2 < CHI2_4DF_FAMILY_P001, "center {c}: chi-square {chi2}");
    }
}

#[test]
fn alias_reconstruction_at_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights: Vec<f64> = (0..100_000).map(|i| if i % 97 == 0 { 0.0 } else { rng.gen_range(0.0..1.0f64).powi(3) }).collect();
    let total: f64 = weights.iter().sum();
    let table = AliasTable::new(&weights).unwrap();
    let worst = table
        .probabilities()
        .iter()
        .zip(&weights)
        .map(|(p, w)| (p - w / total).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
    for _ in 0..10_000 {
        assert!(weights[table.sample(&mut rng)] > 0.0);
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut p = ModelParams::init(30, 7, 20, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for j in 0..30 {
        p.context_column_mut(j).iter_mut().for_each(|w| *w = rng.gen());
    }
    for j in 0..7 {
        p.attr_column_mut(j).iter_mut().for_each(|w| *w = -rng.gen::<f32>());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bnep");
    p.save(&path).unwrap();
    let bytes = std::fs::metadata(&path).unwrap().len();
    assert_eq!(bytes, 28 + 4 * (30 * 20 + 20 * 30 + 20 * 7));
    assert_eq!(ModelParams::load(&path).unwrap(), p);
}
