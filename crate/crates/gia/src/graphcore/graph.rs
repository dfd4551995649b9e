//! Graph and knowledge-graph data model plus adjacency normalization.

use crate::error::{Error, Result};
use crate::numkernel::{SparseMatrix, Tensor};

/// Missing-label marker used in files and label vectors.
pub const UNLABELED: i64 = -1;

/// Immutable undirected graph with pre-encoded node features and indexed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<i64>,
    class_count: usize,
}

impl Graph {
    /// Validate and build a graph. Edges are canonicalized to `(min, max)`
    /// order and must be unique with in-range endpoints; self-loops are
    /// rejected (normalization adds its own).
    pub fn new(
        node_count: usize,
        mut edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<i64>,
        class_count: usize,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.shape()[0] != node_count {
            return Err(Error::Validation(format!(
                "feature matrix {:?} does not have {} rows",
                features.shape(),
                node_count
            )));
        }
        if labels.len() != node_count {
            return Err(Error::Validation(format!(
                "{} labels for {} nodes",
                labels.len(),
                node_count
            )));
        }
        for (node, &l) in labels.iter().enumerate() {
            if l != UNLABELED && (l < 0 || l as usize >= class_count) {
                return Err(Error::Validation(format!(
                    "node {} has label {} outside [0, {})",
                    node, l, class_count
                )));
            }
        }
        for e in edges.iter_mut() {
            if e.0 >= node_count || e.1 >= node_count {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) has endpoint outside [0, {})",
                    e.0, e.1, node_count
                )));
            }
            if e.0 == e.1 {
                return Err(Error::Validation(format!("self-loop on node {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate edge".into()));
        }
        Ok(Self { node_count, edges, features, labels, class_count })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Labeled `(node, class)` pairs in ascending node order.
    pub fn labeled_items(&self) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != UNLABELED)
            .map(|(v, &l)| (v, l as usize))
            .collect()
    }

    /// Replace the feature matrix (used after dimension unification).
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Graph::new(
            self.node_count,
            self.edges.clone(),
            features,
            self.labels.clone(),
            self.class_count,
        )
    }
}

/// Symmetric degree-normalized adjacency with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}`. Always has full diagonal, operator norm ≤ 1.
pub fn normalize_adjacency(graph: &Graph) -> SparseMatrix {
    let n = graph.node_count();
    let mut degree = vec![1.0f64; n]; // self-loop counts one
    for &(u, v) in graph.edges() {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let mut entries = Vec::with_capacity(n + 2 * graph.edges().len());
    for v in 0..n {
        entries.push((v, v, 1.0 / degree[v]));
    }
    for &(u, v) in graph.edges() {
        let w = 1.0 / (degree[u] * degree[v]).sqrt();
        entries.push((u, v, w));
        entries.push((v, u, w));
    }
    SparseMatrix::from_triplets(n, n, entries).expect("normalized adjacency is structurally valid")
}

/// Knowledge graph as entity features plus labeled triples.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entity_count: usize,
    triples: Vec<(usize, usize, usize)>, // (head, relation, tail)
    features: Tensor,
    relation_count: usize,
}

impl KnowledgeGraph {
    pub fn new(
        entity_count: usize,
        triples: Vec<(usize, usize, usize)>,
        features: Tensor,
        relation_count: usize,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.shape()[0] != entity_count {
            return Err(Error::Validation(format!(
                "entity feature matrix {:?} does not have {} rows",
                features.shape(),
                entity_count
            )));
        }
        for (i, &(h, r, t)) in triples.iter().enumerate() {
            if h >= entity_count || t >= entity_count {
                return Err(Error::Validation(format!(
                    "triple {} has entity outside [0, {})",
                    i, entity_count
                )));
            }
            if r >= relation_count {
                return Err(Error::Validation(format!(
                    "triple {} has relation {} outside [0, {})",
                    i, r, relation_count
                )));
            }
        }
        Ok(Self { entity_count, triples, features, relation_count })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, edges: Vec<(usize, usize)>) -> Graph {
        Graph::new(n, edges, Tensor::zeros(&[n, 2]), vec![UNLABELED; n], 1).unwrap()
    }

    #[test]
    fn isolated_node_normalizes_to_identity() {
        let adj = normalize_adjacency(&tiny(1, vec![]));
        assert_eq!(adj.to_dense().data(), &[1.0]);
    }

    #[test]
    fn single_edge_normalizes_to_half() {
        let adj = normalize_adjacency(&tiny(2, vec![(0, 1)]));
        assert_eq!(adj.to_dense().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn path_graph_matches_dense_oracle() {
        let g = tiny(3, vec![(0, 1), (1, 2)]);
        let adj = normalize_adjacency(&g).to_dense();
        // Dense oracle: build A+I, normalize by D^{-1/2} on both sides.
        let mut a = vec![vec![0.0f64; 3]; 3];
        for i in 0..3 {
            a[i][i] = 1.0;
        }
        for &(u, v) in g.edges() {
            a[u][v] = 1.0;
            a[v][u] = 1.0;
        }
        let deg: Vec<f64> = (0..3).map(|i| a[i].iter().sum()).collect();
        for i in 0..3 {
            for j in 0..3 {
                let expect = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
                assert!((adj.at(i, j) - expect).abs() < 1e-12);
            }
        }
        // Symmetry is exact.
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(adj.at(i, j), adj.at(j, i));
            }
        }
    }

    #[test]
    fn spectral_radius_at_most_one() {
        let g = tiny(6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]);
        let norm = normalize_adjacency(&g).spectral_norm(200);
        assert!(norm <= 1.0 + 1e-9, "spectral norm {}", norm);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let err = Graph::new(2, vec![], Tensor::zeros(&[2, 1]), vec![0, 3], 2).unwrap_err();
        assert!(err.to_string().contains("node 1"));
    }

    #[test]
    fn duplicate_edges_rejected() {
        let err = Graph::new(3, vec![(0, 1), (1, 0)], Tensor::zeros(&[3, 1]), vec![-1; 3], 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
