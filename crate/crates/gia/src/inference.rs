//! Parameter-update-free in-context prediction on an unseen graph.
//!
//! The base path is pure prompt attention: support-only fingerprint, FiLM
//! alignment, per-query attention scores, argmax. Three optional
//! enhancements stack on top: graph-aware prototypes from label propagation,
//! an adaptive cosine/inverse-distance metric, and iterative refinement of
//! the prediction matrix with clamped support rows. Each is independently
//! toggleable so the base path stays recoverable.

use crate::aligners::{align_feature_rows, align_labels, gen_film};
use crate::dpaa::{dpaa_scores, PromptSet};
use crate::embedder::in_context_embedding;
use crate::encoder::PreparedGraph;
use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Tensor};
use crate::trainer::ModelBundle;

/// Cumulative enhancement ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InferenceMode {
    /// Attention scores only.
    DpaaOnly,
    /// Blend in cosine scores against graph-aware prototypes.
    Prototypes,
    /// Replace the cosine metric with the adaptive cosine/inverse-distance mix.
    Adaptive,
    /// Additionally refine the full prediction matrix by label propagation.
    Refine,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 4] = [
        InferenceMode::DpaaOnly,
        InferenceMode::Prototypes,
        InferenceMode::Adaptive,
        InferenceMode::Refine,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InferenceMode::DpaaOnly => "dpaa-only",
            InferenceMode::Prototypes => "+prototypes",
            InferenceMode::Adaptive => "+adaptive",
            InferenceMode::Refine => "+refine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dpaa-only" => Ok(InferenceMode::DpaaOnly),
            "+prototypes" | "prototypes" => Ok(InferenceMode::Prototypes),
            "+adaptive" | "adaptive" => Ok(InferenceMode::Adaptive),
            "+refine" | "refine" => Ok(InferenceMode::Refine),
            other => Err(Error::Config(format!("unknown inference mode `{}`", other))),
        }
    }
}

/// Inference settings; propagation and blending weights live in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    pub propagation_alpha: f64,
    pub propagation_iterations: usize,
    pub refine_blend: f64,
    /// Weight of the attention scores against the prototype-metric scores.
    pub score_blend: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: InferenceMode::DpaaOnly,
            propagation_alpha: 0.85,
            propagation_iterations: 10,
            refine_blend: 0.5,
            score_blend: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("propagation_alpha", self.propagation_alpha),
            ("refine_blend", self.refine_blend),
            ("score_blend", self.score_blend),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{} must lie in [0,1), got {}", name, v)));
            }
        }
        if self.propagation_iterations == 0 {
            return Err(Error::Config("propagation needs at least one iteration".into()));
        }
        Ok(())
    }
}

/// Few-shot prompt: `(node, class)` pairs with classes `0..class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub items: Vec<(usize, usize)>,
    pub class_count: usize,
    /// Smallest per-class item count (the effective shot number).
    pub shots: usize,
}

impl SupportSet {
    pub fn new(items: Vec<(usize, usize)>, class_count: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Input("support set is empty".into()));
        }
        if class_count == 0 {
            return Err(Error::Input("support set declares zero classes".into()));
        }
        let mut per_class = vec![0usize; class_count];
        for &(node, class) in &items {
            if class >= class_count {
                return Err(Error::Input(format!(
                    "support item (node {}, class {}) outside [0, {})",
                    node, class, class_count
                )));
            }
            per_class[class] += 1;
        }
        if let Some(missing) = per_class.iter().position(|&c| c == 0) {
            return Err(Error::Input(format!("class {} has no support items", missing)));
        }
        let shots = per_class.iter().copied().min().unwrap();
        Ok(Self { items, class_count, shots })
    }
}

/// Predictions plus the score rows that produced them.
#[derive(Debug, Clone)]
pub struct InferenceOutput {
    /// `(node, class position)` per query, in query order.
    pub predictions: Vec<(usize, usize)>,
    /// One score row per query (class order follows the class list).
    pub scores: Tensor,
    pub domain_embedding: Tensor,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let t = Tensor::from_raw(vec![row.len()], row.to_vec());
    t.softmax().expect("nonempty row").data().to_vec()
}

/// Label-propagated class prototypes.
///
/// Soft labels start one-hot on support rows and uniform elsewhere, are
/// propagated over the normalized adjacency with the support rows re-clamped
/// (and rows renormalized to stay distributions), and each class prototype is
/// the propagated-mass-weighted mean of the aligned node features.
pub fn graph_aware_prototypes(
    prepared: &PreparedGraph,
    support: &[(usize, usize)],
    way: usize,
    aligned: &Tensor,
    alpha: f64,
    iterations: usize,
) -> Result<Tensor> {
    let n = prepared.graph().node_count();
    let d = aligned.cols();
    let mut seed = Tensor::filled(&[n, way], 1.0 / way as f64);
    for &(node, class) in support {
        for c in 0..way {
            seed.data_mut()[node * way + c] = if c == class { 1.0 } else { 0.0 };
        }
    }
    let mut soft = seed.clone();
    for _ in 0..iterations {
        let propagated = prepared.adjacency().matmul(&soft)?;
        for i in 0..n * way {
            soft.data_mut()[i] = alpha * propagated.data()[i] + (1.0 - alpha) * seed.data()[i];
        }
        renormalize_rows(&mut soft);
        clamp_rows(&mut soft, support);
    }

    let mut prototypes = Tensor::zeros(&[way, d]);
    for c in 0..way {
        let mut mass = 0.0;
        for v in 0..n {
            mass += soft.at(v, c);
        }
        if mass <= 0.0 {
            continue;
        }
        for v in 0..n {
            let w = soft.at(v, c) / mass;
            for j in 0..d {
                prototypes.data_mut()[c * d + j] += w * aligned.at(v, j);
            }
        }
    }
    Ok(prototypes)
}

fn renormalize_rows(t: &mut Tensor) {
    let cols = t.cols();
    let rows = t.numel() / cols;
    for r in 0..rows {
        let sum: f64 = t.row(r).iter().sum();
        if sum > 0.0 {
            for v in &mut t.data_mut()[r * cols..(r + 1) * cols] {
                *v /= sum;
            }
        }
    }
}

fn clamp_rows(t: &mut Tensor, support: &[(usize, usize)]) {
    let cols = t.cols();
    for &(node, class) in support {
        for c in 0..cols {
            t.data_mut()[node * cols + c] = if c == class { 1.0 } else { 0.0 };
        }
    }
}

/// Cosine plus inverse Euclidean distance, weighted per query by the
/// logistic of the coordinate variance of the aligned query feature.
pub fn adaptive_score(z_q: &Tensor, prototypes: &Tensor) -> Result<Tensor> {
    let d = z_q.numel();
    if prototypes.cols() != d {
        return Err(Error::Dimension {
            op: "adaptive_score",
            detail: format!("query [{}] vs prototypes {:?}", d, prototypes.shape()),
        });
    }
    let mean: f64 = z_q.data().iter().sum::<f64>() / d as f64;
    let var: f64 = z_q.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let w = sigmoid(var);
    let qn = z_q.frobenius_norm();
    let way = prototypes.rows();
    let mut out = Tensor::zeros(&[way]);
    for c in 0..way {
        let p = prototypes.row(c);
        let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = z_q.data().iter().zip(p).map(|(a, b)| a * b).sum();
        let cos = if qn == 0.0 || pn == 0.0 { 0.0 } else { dot / (qn * pn) };
        let dist: f64 = z_q
            .data()
            .iter()
            .zip(p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        out.data_mut()[c] = w * cos + (1.0 - w) / (1.0 + dist);
    }
    Ok(out)
}

/// Plain cosine against prototypes (the pre-adaptive metric).
fn cosine_score(z_q: &Tensor, prototypes: &Tensor) -> Tensor {
    let qn = z_q.frobenius_norm();
    let way = prototypes.rows();
    let mut out = Tensor::zeros(&[way]);
    for c in 0..way {
        let p = prototypes.row(c);
        let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = z_q.data().iter().zip(p).map(|(a, b)| a * b).sum();
        out.data_mut()[c] = if qn == 0.0 || pn == 0.0 { 0.0 } else { dot / (qn * pn) };
    }
    out
}

/// Refine a full `n×way` score matrix by propagation with clamped support
/// rows; returns per-node argmax predictions and the final row-stochastic
/// matrix.
pub fn refine_predictions(
    prepared: &PreparedGraph,
    scores: &Tensor,
    support: &[(usize, usize)],
    blend: f64,
    iterations: usize,
) -> Result<(Vec<usize>, Tensor)> {
    let n = prepared.graph().node_count();
    let way = scores.cols();
    if scores.rows() != n {
        return Err(Error::Dimension {
            op: "refine_predictions",
            detail: format!("score matrix {:?} vs {} nodes", scores.shape(), n),
        });
    }
    let mut p = scores.softmax()?;
    clamp_rows(&mut p, support);
    for _ in 0..iterations {
        let propagated = prepared.adjacency().matmul(&p)?;
        for i in 0..n * way {
            p.data_mut()[i] = blend * propagated.data()[i] + (1.0 - blend) * p.data()[i];
        }
        renormalize_rows(&mut p);
        clamp_rows(&mut p, support);
        debug_assert!(
            (0..n).all(|r| (p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9),
            "propagated rows must stay stochastic"
        );
    }
    let predictions = (0..n).map(|r| argmax(p.row(r))).collect();
    Ok((predictions, p))
}

/// Inference with an explicit prototype class list (graph-local label ids).
///
/// The public entry point [`in_context_predict`] uses `0..C_new`; episode
/// evaluation passes the sampled class subset.
pub fn predict_with_classes(
    bundle: &ModelBundle,
    prepared: &PreparedGraph,
    support: &[(usize, usize)],
    class_list: &[usize],
    queries: &[usize],
    cfg: &InferenceConfig,
) -> Result<InferenceOutput> {
    cfg.validate()?;
    let hash_before = bundle.content_hash();

    if support.is_empty() {
        return Err(Error::Input("support set is empty".into()));
    }
    if class_list.is_empty() {
        return Err(Error::Input("class list is empty".into()));
    }
    let l_max = bundle.label_base.l_max();
    if let Some(&c) = class_list.iter().find(|&&c| c >= l_max) {
        return Err(Error::Config(format!(
            "class id {} exceeds the label base capacity {}; the base rows are trained and cannot be extended",
            c, l_max
        )));
    }
    let way = class_list.len();
    let position_of = |class: usize| class_list.iter().position(|&c| c == class);
    let n = prepared.graph().node_count();
    for &(node, class) in support {
        if node >= n {
            return Err(Error::Input(format!("support node {} outside [0, {})", node, n)));
        }
        if position_of(class).is_none() {
            return Err(Error::Input(format!("support class {} not in the class list", class)));
        }
    }
    let mut coverage = vec![false; way];
    for &(_, class) in support {
        coverage[position_of(class).unwrap()] = true;
    }
    if let Some(missing) = coverage.iter().position(|&c| !c) {
        return Err(Error::Input(format!("class {} has no support items", class_list[missing])));
    }
    for &q in queries {
        if q >= n {
            return Err(Error::Input(format!("query node {} outside [0, {})", q, n)));
        }
    }

    // Support-only domain embedding, FiLM alignment, prompt matrices.
    let embedding = in_context_embedding(prepared, support, bundle.theta0.weights(), bundle.config.eta, &bundle.embedder)?;
    let film_feat = gen_film(&embedding.vector, &bundle.film_feature)?;
    let film_label = gen_film(&embedding.vector, &bundle.film_label)?;
    let encoded = prepared.encode_all(bundle.theta0.weights())?;
    let aligned = align_feature_rows(&encoded, &film_feat)?;
    let prototypes = align_labels(class_list, &bundle.label_base, &film_label)?;

    // Grouped by class position, then node id.
    let mut sup_sorted: Vec<(usize, usize)> =
        support.iter().map(|&(v, c)| (v, position_of(c).unwrap())).collect();
    sup_sorted.sort_unstable_by_key(|&(v, pos)| (pos, v));
    let sup_nodes: Vec<usize> = sup_sorted.iter().map(|&(v, _)| v).collect();
    let sup_positions: Vec<usize> = sup_sorted.iter().map(|&(_, pos)| pos).collect();
    let prompt = PromptSet::new(
        aligned.select_rows(&sup_nodes)?,
        sup_positions,
        prototypes.clone(),
        class_list.to_vec(),
    )?;

    let d = bundle.config.d;
    let attention_row = |node: usize| -> Result<Tensor> {
        let z_q = Tensor::from_raw(vec![d], aligned.row(node).to_vec());
        dpaa_scores(&z_q, &prompt, &bundle.dpaa)
    };

    // Per-query final scores under the configured mode.
    let blended_row = |node: usize, proto: &Tensor| -> Result<Vec<f64>> {
        let dpaa_row = attention_row(node)?;
        if cfg.mode == InferenceMode::DpaaOnly {
            return Ok(dpaa_row.data().to_vec());
        }
        let z_q = Tensor::from_raw(vec![d], aligned.row(node).to_vec());
        let metric = if cfg.mode >= InferenceMode::Adaptive {
            adaptive_score(&z_q, proto)?
        } else {
            cosine_score(&z_q, proto)
        };
        let a = softmax_slice(dpaa_row.data());
        let b = softmax_slice(metric.data());
        Ok(a.iter()
            .zip(&b)
            .map(|(x, y)| cfg.score_blend * x + (1.0 - cfg.score_blend) * y)
            .collect())
    };

    let proto = if cfg.mode >= InferenceMode::Prototypes {
        graph_aware_prototypes(
            prepared,
            &sup_sorted,
            way,
            &aligned,
            cfg.propagation_alpha,
            cfg.propagation_iterations,
        )?
    } else {
        prototypes
    };

    let mut scores = Tensor::zeros(&[queries.len(), way]);
    let mut predictions = Vec::with_capacity(queries.len());

    if cfg.mode == InferenceMode::Refine {
        // Refinement needs score rows for every node.
        let mut full = Tensor::zeros(&[n, way]);
        let support_nodes: std::collections::HashSet<usize> = sup_nodes.iter().copied().collect();
        for v in 0..n {
            if support_nodes.contains(&v) {
                continue; // clamped anyway
            }
            let row = blended_row(v, &proto)?;
            full.data_mut()[v * way..(v + 1) * way].copy_from_slice(&row);
        }
        let (preds, refined) = refine_predictions(prepared, &full, &sup_sorted, cfg.refine_blend, cfg.propagation_iterations)?;
        for (i, &q) in queries.iter().enumerate() {
            predictions.push((q, preds[q]));
            scores.data_mut()[i * way..(i + 1) * way].copy_from_slice(refined.row(q));
        }
    } else {
        for (i, &q) in queries.iter().enumerate() {
            let row = blended_row(q, &proto)?;
            predictions.push((q, argmax(&row)));
            scores.data_mut()[i * way..(i + 1) * way].copy_from_slice(&row);
        }
    }

    assert_eq!(hash_before, bundle.content_hash(), "inference must not mutate the bundle");
    Ok(InferenceOutput { predictions, scores, domain_embedding: embedding.vector })
}

/// Frozen-parameter few-shot prediction with classes `0..C_new`.
pub fn in_context_predict(
    bundle: &ModelBundle,
    prepared: &PreparedGraph,
    support: &SupportSet,
    queries: &[usize],
    cfg: &InferenceConfig,
) -> Result<InferenceOutput> {
    let class_list: Vec<usize> = (0..support.class_count).collect();
    predict_with_classes(bundle, prepared, &support.items, &class_list, queries, cfg)
}
