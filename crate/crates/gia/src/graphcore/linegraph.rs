//! Line-graph task unification: relation classification as node classification.

use crate::error::{Error, Result};
use crate::graphcore::graph::{Graph, KnowledgeGraph};
use crate::graphcore::svd::unify_features;
use crate::numkernel::Tensor;
use std::collections::HashMap;

/// Turn a knowledge graph into a node-classification graph: one node per
/// triple, adjacent when two triples share an entity, labeled by relation id.
///
/// Node features are the concatenated head/tail entity features `[x_h ‖ x_t]`,
/// column-centered and unified to width `d_o`.
pub fn line_graph_transform(kg: &KnowledgeGraph, d_o: usize) -> Result<Graph> {
    let triples = kg.triples();
    if triples.is_empty() {
        return Err(Error::Input("knowledge graph has no triples".into()));
    }
    let n = triples.len();
    let d = kg.features().shape()[1];

    // Adjacency: group triples by incident entity, connect within groups.
    let mut by_entity: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(h, _, t)) in triples.iter().enumerate() {
        by_entity.entry(h).or_default().push(i);
        if t != h {
            by_entity.entry(t).or_default().push(i);
        }
    }
    let mut edge_set: Vec<(usize, usize)> = Vec::new();
    let mut members: Vec<&Vec<usize>> = by_entity.values().collect();
    members.sort(); // HashMap order must not leak into the output
    for group in members {
        for i in 0..group.len() {
            for j in (i + 1)..group.len() {
                let (a, b) = (group[i].min(group[j]), group[i].max(group[j]));
                edge_set.push((a, b));
            }
        }
    }
    edge_set.sort_unstable();
    edge_set.dedup();

    // Concatenated endpoint features, centered, then SVD-unified.
    let mut concat = Vec::with_capacity(n * 2 * d);
    for &(h, _, t) in triples {
        concat.extend_from_slice(kg.features().row(h));
        concat.extend_from_slice(kg.features().row(t));
    }
    let mut concat = Tensor::from_raw(vec![n, 2 * d], concat);
    for j in 0..2 * d {
        let mean: f64 = (0..n).map(|r| concat.at(r, j)).sum::<f64>() / n as f64;
        for r in 0..n {
            concat.data_mut()[r * 2 * d + j] -= mean;
        }
    }
    let features = unify_features(&concat, d_o)?;

    let labels: Vec<i64> = triples.iter().map(|&(_, r, _)| r as i64).collect();
    Graph::new(n, edge_set, features, labels, kg.relation_count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg(entities: usize, triples: Vec<(usize, usize, usize)>, relations: usize) -> KnowledgeGraph {
        let feats = Tensor::new(
            vec![entities, 3],
            (0..entities * 3).map(|i| (i as f64 * 0.73).sin() + 0.1).collect(),
        )
        .unwrap();
        KnowledgeGraph::new(entities, triples, feats, relations).unwrap()
    }

    #[test]
    fn shared_entity_produces_edge() {
        let g = line_graph_transform(&kg(3, vec![(0, 0, 1), (1, 1, 2)], 2), 4).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.labels(), &[0, 1]);
    }

    #[test]
    fn disjoint_triples_produce_no_edges() {
        let g = line_graph_transform(&kg(6, vec![(0, 0, 1), (2, 0, 3), (4, 1, 5)], 2), 4).unwrap();
        assert_eq!(g.node_count(), 3);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn star_becomes_complete_graph() {
        let g = line_graph_transform(
            &kg(5, vec![(0, 0, 1), (0, 1, 2), (0, 0, 3), (0, 1, 4)], 2),
            4,
        )
        .unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edges().len(), 6); // K4
    }

    #[test]
    fn edges_match_brute_force_intersection_oracle() {
        let triples = vec![(0, 0, 1), (1, 1, 2), (3, 0, 4), (2, 1, 4), (0, 1, 4), (5, 0, 6)];
        let g = line_graph_transform(&kg(7, triples.clone(), 2), 4).unwrap();
        let mut expect = Vec::new();
        for i in 0..triples.len() {
            for j in (i + 1)..triples.len() {
                let (h1, _, t1) = triples[i];
                let (h2, _, t2) = triples[j];
                if h1 == h2 || h1 == t2 || t1 == h2 || t1 == t2 {
                    expect.push((i, j));
                }
            }
        }
        expect.sort_unstable();
        assert_eq!(g.edges(), expect.as_slice());
    }

    #[test]
    fn empty_kg_is_input_error() {
        let err = line_graph_transform(&kg(2, vec![], 1), 4).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
