//! Seeded synthetic inputs for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codes::CodeMatrix;
use crate::graph::{AttrEntry, AttributeMatrix, Graph, LabelMap, Vocab};
use crate::search::DenseMatrix;

/// Planted-partition attributed network: nodes are split evenly into
/// classes, edges land inside a class with probability `homophily`, and each
/// node draws attribute words either from its class topic (with probability
/// `topic_affinity`) or uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedSbm {
    pub nodes: usize,
    pub classes: usize,
    pub edges: usize,
    pub homophily: f64,
    pub attrs: usize,
    pub words_per_node: usize,
    /// Words in each class topic.
    pub topic_size: usize,
    pub topic_affinity: f64,
    pub seed: u64,
}

impl Default for AttributedSbm {
    /// Roughly Cora-shaped: 2708 nodes, 5278 edges, 7 classes, 1433 words.
    fn default() -> Self {
        AttributedSbm {
            nodes: 2708,
            classes: 7,
            edges: 5278,
            homophily: 0.8,
            attrs: 1433,
            words_per_node: 18,
            topic_size: 120,
            topic_affinity: 0.5,
            seed: 7,
        }
    }
}

pub struct SyntheticNetwork {
    pub graph: Graph,
    pub attrs: AttributeMatrix,
    pub labels: LabelMap,
}

impl AttributedSbm {
    pub fn generate(&self) -> SyntheticNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.nodes;
        let class_of = |i: usize| i % self.classes;
        let members: Vec<Vec<usize>> = (0..self.classes)
            .map(|c| (0..n).filter(|&i| class_of(i) == c).collect())
            .collect();

        let mut edges = Vec::with_capacity(self.edges);
        let mut seen = std::collections::HashSet::new();
        while edges.len() < self.edges {
            let a = rng.gen_range(0..n);
            let b = if rng.gen::<f64>() < self.homophily {
                let same = &members[class_of(a)];
                same[rng.gen_range(0..same.len())]
            } else {
                rng.gen_range(0..n)
            };
            if a != b && seen.insert((a.min(b), a.max(b))) {
                edges.push((a as u32, b as u32));
            }
        }
        let vocab = Vocab::from_ids((0..n).map(|i| format!("n{i}"))).unwrap();
        let graph = Graph::from_edges(vocab, edges);

        let topics: Vec<Vec<u32>> = (0..self.classes)
            .map(|_| (0..self.topic_size).map(|_| rng.gen_range(0..self.attrs as u32)).collect())
            .collect();
        let mut triplets = Vec::with_capacity(n * self.words_per_node);
        for i in 0..n {
            for _ in 0..self.words_per_node {
                let attr = if rng.gen::<f64>() < self.topic_affinity {
                    let t = &topics[class_of(i)];
                    t[rng.gen_range(0..t.len())]
                } else {
                    rng.gen_range(0..self.attrs as u32)
                };
                triplets.push(AttrEntry {
                    node: i as u32,
                    attr,
                    weight: 1.0,
                });
            }
        }
        // Binary occurrence, like bag-of-words indicator features.
        let mut attrs = AttributeMatrix::from_triplets(n, self.attrs, triplets).unwrap();
        let binary: Vec<AttrEntry> = attrs
            .entries()
            .iter()
            .map(|t| AttrEntry { weight: 1.0, ..*t })
            .collect();
        attrs = AttributeMatrix::from_triplets(n, self.attrs, binary).unwrap();
        let labels = LabelMap::from_classes((0..n).map(|i| Some(class_of(i) as u32)).collect());
        SyntheticNetwork { graph, attrs, labels }
    }
}

/// Uniformly random codes with canonical tails.
pub fn random_codes(node_count: usize, dim: usize, seed: u64) -> CodeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = dim.div_ceil(64);
    let mask = match dim % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    };
    let data = (0..node_count * words)
        .map(|i| {
            let w: u64 = rng.gen();
            if i % words == words - 1 {
                w & mask
            } else {
                w
            }
        })
        .collect();
    CodeMatrix::from_words(node_count, dim, data).unwrap()
}

/// Dense embeddings with entries uniform on [−1, 1).
pub fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape() {
        let net = AttributedSbm::default().generate();
        assert_eq!(net.graph.node_count(), 2708);
        assert_eq!(net.graph.edge_count(), 5278);
        assert_eq!(net.labels.class_count(), 7);
        assert!(net.attrs.nnz() > 40_000);
        assert!(random_codes(10, 65, 1).is_canonical());
    }
}
