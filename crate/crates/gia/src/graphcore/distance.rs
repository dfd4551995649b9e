//! Frobenius graph distance between feature/structure pairs.

use crate::error::{Error, Result};
use crate::graphcore::graph::{normalize_adjacency, Graph};
use crate::numkernel::SparseMatrix;

/// `‖X₁−X₂‖_F + ‖Â₁−Â₂‖_F` after padding the smaller graph with isolated
/// nodes (diagonal 1.0 in the normalized adjacency) and zero feature rows.
pub fn graph_distance(g1: &Graph, g2: &Graph) -> Result<f64> {
    if g1.feature_dim() != g2.feature_dim() {
        return Err(Error::Dimension {
            op: "graph_distance",
            detail: format!("feature widths {} vs {}", g1.feature_dim(), g2.feature_dim()),
        });
    }
    let n = g1.node_count().max(g2.node_count());
    let d = g1.feature_dim();

    let mut feat_sq = 0.0;
    for r in 0..n {
        for j in 0..d {
            let a = if r < g1.node_count() { g1.features().at(r, j) } else { 0.0 };
            let b = if r < g2.node_count() { g2.features().at(r, j) } else { 0.0 };
            feat_sq += (a - b) * (a - b);
        }
    }

    let a1 = pad_normalized(normalize_adjacency(g1), n);
    let a2 = pad_normalized(normalize_adjacency(g2), n);
    Ok(feat_sq.sqrt() + a1.diff_frobenius(&a2)?)
}

/// Extend a normalized adjacency to `n×n` with self-loop-normalized isolated
/// nodes (1.0 diagonal entries).
fn pad_normalized(adj: SparseMatrix, n: usize) -> SparseMatrix {
    if adj.rows() == n {
        return adj;
    }
    let mut entries = Vec::with_capacity(adj.nnz() + n - adj.rows());
    for r in 0..adj.rows() {
        let (cols, vals) = adj.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            entries.push((r, c, v));
        }
    }
    for r in adj.rows()..n {
        entries.push((r, r, 1.0));
    }
    SparseMatrix::from_triplets(n, n, entries).expect("padding preserves validity")
}
