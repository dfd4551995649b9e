//! Shared one-layer graph encoder and gradient fingerprints.
//!
//! The encoder weight matrix stays at its stored initialization `θ0`; domains
//! are characterized by the single-step displacement a cross-entropy gradient
//! at `θ0` would produce. Representation encoding applies relu, while the
//! fingerprint path reads logits straight off the pre-activation slice so the
//! closed-form gradient below is exact.

use crate::error::{Error, Result};
use crate::graphcore::{normalize_adjacency, Graph};
use crate::numkernel::{GradTape, SparseMatrix, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Stored encoder initialization; every fingerprint in one model uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInit {
    weights: Tensor,
    seed: u64,
}

impl EncoderInit {
    /// Draw `θ0 ∈ R^{d_o×d}` with entries `N(0, 1/d_o)`.
    pub fn from_seed(d_o: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_o as f64).sqrt();
        let data = (0..d_o * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Self { weights: Tensor::from_raw(vec![d_o, d], data), seed }
    }

    pub fn from_weights(weights: Tensor, seed: u64) -> Self {
        Self { weights, seed }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Single-step parameter displacement `Δθ = −η·∇L(θ0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub delta: Tensor,
    pub eta: f64,
    pub labeled_count: usize,
}

/// Graph with its normalized adjacency and propagated features cached.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    graph: Graph,
    adjacency: SparseMatrix,
    propagated: Tensor, // Â·X
}

impl PreparedGraph {
    pub fn new(graph: Graph) -> Self {
        let adjacency = normalize_adjacency(&graph);
        let propagated = adjacency.matmul(graph.features()).expect("shapes agree by construction");
        Self { graph, adjacency, propagated }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn propagated(&self) -> &Tensor {
        &self.propagated
    }

    /// `relu(Â X θ)` over all nodes.
    pub fn encode_all(&self, theta: &Tensor) -> Result<Tensor> {
        self.check_theta(theta)?;
        Ok(self.propagated.matmul(theta)?.relu())
    }

    /// `relu(Â X θ)` restricted to the requested item rows.
    pub fn encode(&self, theta: &Tensor, items: &[usize]) -> Result<Tensor> {
        self.check_theta(theta)?;
        Ok(self.propagated.select_rows(items)?.matmul(theta)?.relu())
    }

    fn check_theta(&self, theta: &Tensor) -> Result<()> {
        let d_o = self.graph.feature_dim();
        if theta.shape().len() != 2 || theta.shape()[0] != d_o {
            return Err(Error::Dimension {
                op: "encode",
                detail: format!("encoder weights {:?} need {} rows", theta.shape(), d_o),
            });
        }
        Ok(())
    }
}

fn validate_labeled(
    prepared: &PreparedGraph,
    labeled: &[(usize, usize)],
    class_count: usize,
    d: usize,
) -> Result<Vec<(usize, usize)>> {
    if labeled.is_empty() {
        return Err(Error::Input("fingerprint requires at least one labeled item".into()));
    }
    if class_count > d {
        return Err(Error::Config(format!(
            "{} classes cannot be sliced from {} encoder outputs",
            class_count, d
        )));
    }
    let n = prepared.graph().node_count();
    let mut sorted = labeled.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Input(format!("node {} appears twice in labeled set", w[0].0)));
        }
    }
    for &(v, c) in &sorted {
        if v >= n {
            return Err(Error::Input(format!("labeled node {} outside [0, {})", v, n)));
        }
        if c >= class_count {
            return Err(Error::Input(format!(
                "label {} on node {} outside [0, {})",
                c, v, class_count
            )));
        }
    }
    Ok(sorted)
}

/// Autodiff fingerprint: mean cross-entropy over the labeled items, logits
/// taken as the first `C` coordinates of the pre-activation encoding,
/// backpropagated to `θ0` and scaled by `−η`.
///
/// Items are processed in ascending node order so equal label sets yield
/// bitwise-equal fingerprints.
pub fn fingerprint(
    prepared: &PreparedGraph,
    labeled: &[(usize, usize)],
    theta0: &Tensor,
    eta: f64,
) -> Result<Fingerprint> {
    prepared.check_theta(theta0)?;
    let class_count = prepared.graph().class_count();
    let d = theta0.shape()[1];
    let sorted = validate_labeled(prepared, labeled, class_count, d)?;

    let items: Vec<usize> = sorted.iter().map(|&(v, _)| v).collect();
    let targets: Vec<usize> = sorted.iter().map(|&(_, c)| c).collect();

    let mut tape = GradTape::new();
    let rows = tape.leaf(prepared.propagated.select_rows(&items)?);
    let theta = tape.param(theta0.clone());
    let pre = tape.matmul(rows, theta)?;
    let slice = tape.leaf(Tensor::eye_select(d, class_count));
    let logits = tape.matmul(pre, slice)?;
    let loss = tape.cross_entropy_with_logits(logits, &targets)?;
    let mut grads = tape.backward(loss, &Tensor::scalar(1.0))?;
    let delta = grads.take(theta)?.scale(-eta);
    Ok(Fingerprint { delta, eta, labeled_count: items.len() })
}

/// Closed-form fingerprint `−η · (1/|V|) · Xᵀ Â G` for the fully labeled,
/// linear-head regime, where row `v` of `G` carries `softmax(logits_v) −
/// one_hot(y_v)` in its first `C` columns.
///
/// Serves as an independent oracle for [`fingerprint`] when all nodes are
/// labeled.
pub fn fingerprint_closed_form(
    prepared: &PreparedGraph,
    labels: &[usize],
    theta0: &Tensor,
    eta: f64,
) -> Result<Fingerprint> {
    prepared.check_theta(theta0)?;
    let graph = prepared.graph();
    let n = graph.node_count();
    if labels.len() != n {
        return Err(Error::Input(format!(
            "closed form needs all {} nodes labeled, got {}",
            n,
            labels.len()
        )));
    }
    let class_count = graph.class_count();
    let d = theta0.shape()[1];
    if class_count > d {
        return Err(Error::Config(format!(
            "{} classes cannot be sliced from {} encoder outputs",
            class_count, d
        )));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= class_count) {
        return Err(Error::Input(format!("label {} outside [0, {})", c, class_count)));
    }

    let pre = prepared.propagated.matmul(theta0)?;
    let mut g = Tensor::zeros(&[n, d]);
    for v in 0..n {
        let row = &pre.data()[v * d..v * d + class_count];
        let mut sm = vec![0.0; class_count];
        crate::numkernel::Tensor::from_raw(vec![1, class_count], row.to_vec())
            .softmax()?
            .data()
            .iter()
            .zip(sm.iter_mut())
            .for_each(|(&s, o)| *o = s);
        for c in 0..class_count {
            g.data_mut()[v * d + c] = sm[c] - if labels[v] == c { 1.0 } else { 0.0 };
        }
    }
    let ag = prepared.adjacency.matmul(&g)?;
    let delta = graph.features().transpose()?.matmul(&ag)?.scale(-eta / n as f64);
    Ok(Fingerprint { delta, eta, labeled_count: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::UNLABELED;

    fn random_graph(n: usize, d_i: usize, classes: usize, seed: u64) -> Graph {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..n * d_i).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.gen::<f64>() < 0.4 {
                    edges.push((u, v));
                }
            }
        }
        let labels: Vec<i64> = (0..n).map(|v| (v % classes) as i64).collect();
        Graph::new(n, edges, Tensor::new(vec![n, d_i], feats).unwrap(), labels, classes).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let pg = PreparedGraph::new(random_graph(5, 3, 2, 1));
        let h = pg.encode_all(&Tensor::zeros(&[3, 4])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_node_encoding_is_relu_of_own_features() {
        let g = Graph::new(
            1,
            vec![],
            Tensor::new(vec![1, 2], vec![2.0, -3.0]).unwrap(),
            vec![UNLABELED],
            1,
        )
        .unwrap();
        let pg = PreparedGraph::new(g);
        let theta = Tensor::new(vec![2, 2], vec![1.0, 0.5, 1.0, 1.0]).unwrap();
        let h = pg.encode(&theta, &[0]).unwrap();
        // Â row is e_v, so h = relu(x θ) = relu([-1, -2]) = [0, 0].
        assert_eq!(h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn encode_matches_dense_oracle() {
        let g = random_graph(4, 3, 2, 7);
        let pg = PreparedGraph::new(g.clone());
        let theta = EncoderInit::from_seed(3, 5, 11).weights().clone();
        let h = pg.encode_all(&theta).unwrap();
        let dense = normalize_adjacency(&g).to_dense();
        let oracle = dense.matmul(g.features()).unwrap().matmul(&theta).unwrap().relu();
        for (a, b) in h.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_shape_mismatch_is_dimension_error() {
        let pg = PreparedGraph::new(random_graph(3, 4, 2, 3));
        let err = pg.encode_all(&Tensor::zeros(&[5, 2])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn zero_eta_gives_zero_fingerprint() {
        let pg = PreparedGraph::new(random_graph(5, 4, 2, 5));
        let theta0 = EncoderInit::from_seed(4, 4, 2).weights().clone();
        let fp = fingerprint(&pg, &pg.graph().labeled_items(), &theta0, 0.0).unwrap();
        assert!(fp.delta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fingerprint_is_linear_in_eta() {
        let pg = PreparedGraph::new(random_graph(6, 4, 3, 9));
        let theta0 = EncoderInit::from_seed(4, 4, 4).weights().clone();
        let items = pg.graph().labeled_items();
        let a = fingerprint(&pg, &items, &theta0, 0.01).unwrap();
        let b = fingerprint(&pg, &items, &theta0, 0.02).unwrap();
        for (x, y) in a.delta.data().iter().zip(b.delta.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn fingerprint_matches_finite_differences() {
        let pg = PreparedGraph::new(random_graph(4, 3, 2, 13));
        let theta0 = EncoderInit::from_seed(3, 3, 8).weights().clone();
        let labeled = vec![(1, 0), (3, 1)];
        let fp = fingerprint(&pg, &labeled, &theta0, 1.0).unwrap();
        // Independent loss evaluation for central differences.
        let loss = |theta: &Tensor| -> f64 {
            let items: Vec<usize> = labeled.iter().map(|&(v, _)| v).collect();
            let targets: Vec<usize> = labeled.iter().map(|&(_, c)| c).collect();
            let pre = pg.propagated().select_rows(&items).unwrap().matmul(theta).unwrap();
            let logits = pre.matmul(&Tensor::eye_select(3, 2)).unwrap();
            logits.cross_entropy_with_logits(&targets).unwrap().data()[0]
        };
        let h = 1e-5;
        for idx in 0..theta0.numel() {
            let mut plus = theta0.clone();
            plus.data_mut()[idx] += h;
            let mut minus = theta0.clone();
            minus.data_mut()[idx] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = -fp.delta.data()[idx]; // η = 1
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!((fd - analytic).abs() / denom < 1e-4, "entry {}: {} vs {}", idx, analytic, fd);
        }
    }

    #[test]
    fn closed_form_matches_autodiff_with_uniform_logits() {
        let pg = PreparedGraph::new(random_graph(6, 4, 3, 21));
        let theta0 = Tensor::zeros(&[4, 5]);
        let labels: Vec<usize> = pg.graph().labels().iter().map(|&l| l as usize).collect();
        let labeled = pg.graph().labeled_items();
        let auto = fingerprint(&pg, &labeled, &theta0, 0.01).unwrap();
        let closed = fingerprint_closed_form(&pg, &labels, &theta0, 0.01).unwrap();
        for (a, b) in auto.delta.data().iter().zip(closed.delta.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn closed_form_matches_autodiff_on_random_graph() {
        let pg = PreparedGraph::new(random_graph(7, 5, 3, 33));
        let theta0 = EncoderInit::from_seed(5, 6, 17).weights().clone();
        let labels: Vec<usize> = pg.graph().labels().iter().map(|&l| l as usize).collect();
        let labeled = pg.graph().labeled_items();
        let auto = fingerprint(&pg, &labeled, &theta0, 0.01).unwrap();
        let closed = fingerprint_closed_form(&pg, &labels, &theta0, 0.01).unwrap();
        for (a, b) in auto.delta.data().iter().zip(closed.delta.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn fingerprint_is_permutation_consistent() {
        let g = random_graph(6, 4, 2, 40);
        let n = g.node_count();
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let mut feats = Tensor::zeros(&[n, 4]);
        let mut labels = vec![0i64; n];
        for v in 0..n {
            labels[perm[v]] = g.labels()[v];
            for j in 0..4 {
                feats.data_mut()[perm[v] * 4 + j] = g.features().at(v, j);
            }
        }
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let permuted = Graph::new(n, edges, feats, labels, 2).unwrap();

        let theta0 = EncoderInit::from_seed(4, 4, 77).weights().clone();
        let fp1 = fingerprint(&PreparedGraph::new(g.clone()), &g.labeled_items(), &theta0, 0.01).unwrap();
        let fp2 =
            fingerprint(&PreparedGraph::new(permuted.clone()), &permuted.labeled_items(), &theta0, 0.01).unwrap();
        for (a, b) in fp1.delta.data().iter().zip(fp2.delta.data()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn too_many_classes_is_config_error() {
        let pg = PreparedGraph::new(random_graph(4, 3, 3, 50));
        let theta0 = Tensor::zeros(&[3, 2]); // d = 2 < 3 classes
        let err = fingerprint(&pg, &pg.graph().labeled_items(), &theta0, 0.01).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
