//! Episode sampling and two-stage episodic pretraining.
//!
//! Stage A computes a gradient fingerprint per corpus graph and fits the
//! domain embedder to the pairwise fingerprint metric, then freezes it.
//! Stage B trains the FiLM generators, the label base, and the attention
//! projections with the tempered episodic loss; the encoder initialization
//! and the embedder stay untouched.

mod bundle;
mod episode;

pub use bundle::{BundleConfig, ModelBundle, BUNDLE_MAGIC};
pub use episode::{sample_episode, Episode};

use crate::aligners::{film_on_tape, FiLMGenerator, LabelBase};
use crate::dpaa::{params_on_tape, prompts_on_tape, scores_on_tape, DPAAParams};
use crate::embedder::{train_embedder, EmbedderArch, EmbedderTrainConfig};
use crate::encoder::{fingerprint, EncoderInit, PreparedGraph};
use crate::error::{Error, Result};
use crate::graphcore::{unify_features, Graph};
use crate::inference::{predict_with_classes, InferenceConfig};
use crate::numkernel::{GradTape, OptimizerState, Tensor, ValueId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Pretraining configuration; defaults follow the standard recipe
/// (10-way 5-shot, 10000 episodes, AdamW at 0.005 with weight decay 0.0005,
/// temperature 0.2, fingerprint step 0.01, all widths 64).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub way: usize,
    pub shots: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_accumulation: usize,
    pub seed: u64,
    pub d_o: usize,
    pub d: usize,
    pub d_e: usize,
    pub eta: f64,
    pub film_hidden: usize,
    pub dpaa_layers: usize,
    pub dpaa_heads: usize,
    pub shared_kv: bool,
    pub stage_a_learning_rate: f64,
    pub stage_a_iterations: usize,
    /// Label-base capacity; defaults to the corpus maximum class count.
    pub l_max: Option<usize>,
    /// Sample pretraining graphs proportionally to node count instead of
    /// uniformly.
    pub weight_by_size: bool,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            way: 10,
            shots: 5,
            queries_per_class: 5,
            episodes: 10000,
            tau: 0.2,
            learning_rate: 0.005,
            weight_decay: 0.0005,
            grad_accumulation: 1,
            seed: 0,
            d_o: 64,
            d: 64,
            d_e: 64,
            eta: 0.01,
            film_hidden: 64,
            dpaa_layers: 1,
            dpaa_heads: 1,
            shared_kv: true,
            stage_a_learning_rate: 0.01,
            stage_a_iterations: 2000,
            l_max: None,
            weight_by_size: false,
            conv1_channels: 8,
            conv2_channels: 16,
            conv_kernel: 3,
            conv_stride: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.shots < 1 || self.queries_per_class < 1 {
            return Err(Error::Config("episodes need way ≥ 2, shots ≥ 1, queries ≥ 1".into()));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episode count must be positive".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.d_o == 0 || self.d == 0 || self.d_e == 0 || self.film_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.grad_accumulation == 0 {
            return Err(Error::Config("gradient accumulation must be ≥ 1".into()));
        }
        if self.d % self.dpaa_heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by {} attention heads",
                self.d, self.dpaa_heads
            )));
        }
        Ok(())
    }

    pub fn embedder_arch(&self) -> EmbedderArch {
        EmbedderArch {
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            kernel: self.conv_kernel,
            stride: self.conv_stride,
            embedding_dim: self.d_e,
        }
    }
}

/// Stable stream-splitting for per-component and per-episode seeds.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E3779B97F4A7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
        x ^ (x >> 31)
    }
    splitmix(base ^ splitmix(stream))
}

/// Unify a graph's features to width `d_o` when they are not already there.
pub fn prepare_graph(graph: &Graph, d_o: usize) -> Result<PreparedGraph> {
    let graph = if graph.feature_dim() == d_o {
        graph.clone()
    } else {
        graph.with_features(unify_features(graph.features(), d_o)?)?
    };
    Ok(PreparedGraph::new(graph))
}

/// Everything pretraining produces besides the bundle itself.
#[derive(Debug)]
pub struct PretrainReport {
    pub bundle: ModelBundle,
    /// Per-episode loss, recorded before each update.
    pub curve: Vec<f64>,
    pub stage_a_history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// The Stage-B trainable set, in the fixed tape/optimizer order.
struct TrainableSet {
    film_feature: FiLMGenerator,
    film_label: FiLMGenerator,
    label_base: LabelBase,
    dpaa: DPAAParams,
}

impl TrainableSet {
    fn tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = Vec::new();
        out.extend(self.film_feature.params().into_iter().cloned());
        out.extend(self.film_label.params().into_iter().cloned());
        out.push(self.label_base.rows.clone());
        out.extend(self.dpaa.params().into_iter().cloned());
        out
    }

    fn store(&mut self, tensors: Vec<Tensor>) {
        let mut iter = tensors.into_iter();
        for slot in self.film_feature.params_mut() {
            *slot = iter.next().unwrap();
        }
        for slot in self.film_label.params_mut() {
            *slot = iter.next().unwrap();
        }
        self.label_base.rows = iter.next().unwrap();
        for slot in self.dpaa.params_mut() {
            *slot = iter.next().unwrap();
        }
        debug_assert!(iter.next().is_none());
    }
}

/// Build one episode's loss on a fresh tape; returns the loss id and the
/// trainable ids in [`TrainableSet`] order.
fn episode_loss_on_tape(
    tape: &mut GradTape,
    encoded: &Tensor,
    episode: &Episode,
    domain_embedding: &Tensor,
    set: &TrainableSet,
    tau: f64,
) -> Result<(ValueId, Vec<ValueId>)> {
    let feat_ids = film_on_tape(tape, domain_embedding, &set.film_feature)?;
    let label_ids = film_on_tape(tape, domain_embedding, &set.film_label)?;
    let base_id = tape.param(set.label_base.rows.clone());
    let dpaa_ids = params_on_tape(tape, &set.dpaa);

    let support_nodes: Vec<usize> = episode.support.iter().map(|&(v, _)| v).collect();
    let h_sup = tape.leaf(encoded.select_rows(&support_nodes)?);
    let z_sup = tape.mul_row(h_sup, feat_ids.gamma)?;
    let z_pmt = tape.add_row(z_sup, feat_ids.beta)?;

    let selector = tape.leaf(set.label_base.selector(&episode.classes)?);
    let e_sel = tape.matmul(selector, base_id)?;
    let u_sel = tape.mul_row(e_sel, label_ids.gamma)?;
    let u_pmt = tape.add_row(u_sel, label_ids.beta)?;

    let prompts = prompts_on_tape(tape, &dpaa_ids, z_pmt, u_pmt)?;

    let way = episode.classes.len();
    let inv_tau = tape.leaf(Tensor::filled(&[way], 1.0 / tau));
    let mut total: Option<ValueId> = None;
    for &(node, class) in &episode.queries {
        let position = episode
            .classes
            .iter()
            .position(|&c| c == class)
            .expect("query class always among episode classes");
        let h_q = tape.leaf(Tensor::from_raw(vec![encoded.cols()], encoded.row(node).to_vec()));
        let scaled = tape.mul(h_q, feat_ids.gamma)?;
        let z_q = tape.add(scaled, feat_ids.beta)?;
        let scores = scores_on_tape(tape, &dpaa_ids, set.dpaa.heads, &prompts, z_q)?;
        let logits = tape.mul(scores, inv_tau)?;
        let logits = tape.reshape(logits, vec![1, way])?;
        let ce = tape.cross_entropy_with_logits(logits, &[position])?;
        total = Some(match total {
            None => ce,
            Some(t) => tape.add(t, ce)?,
        });
    }
    let total = total.ok_or_else(|| Error::Episode("episode has no queries".into()))?;
    let norm = tape.leaf(Tensor::scalar(1.0 / episode.queries.len() as f64));
    let loss = tape.mul(total, norm)?;

    let mut ids: Vec<ValueId> = Vec::new();
    ids.extend(feat_ids.params);
    ids.extend(label_ids.params);
    ids.push(base_id);
    ids.extend(dpaa_ids.ordered());
    Ok((loss, ids))
}

/// Stage A + Stage B pretraining over an already-loaded corpus.
pub fn pretrain(corpus: &[Graph], cfg: &TrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("pretraining corpus is empty".into()));
    }
    let mut warnings = Vec::new();

    let prepared: Vec<PreparedGraph> =
        corpus.iter().map(|g| prepare_graph(g, cfg.d_o)).collect::<Result<_>>()?;
    let l_max_corpus = prepared.iter().map(|p| p.graph().class_count()).max().unwrap();
    let l_max = match cfg.l_max {
        Some(l) if l < l_max_corpus => {
            return Err(Error::Config(format!(
                "configured label capacity {} below corpus maximum {}",
                l, l_max_corpus
            )))
        }
        Some(l) => l,
        None => l_max_corpus,
    };
    for p in &prepared {
        if p.graph().class_count() > cfg.d {
            return Err(Error::Config(format!(
                "graph with {} classes exceeds encoder width {}",
                p.graph().class_count(),
                cfg.d
            )));
        }
    }

    let theta_seed = mix_seed(cfg.seed, 1);
    let theta0 = EncoderInit::from_seed(cfg.d_o, cfg.d, theta_seed);
    let encoded: Vec<Tensor> = prepared
        .iter()
        .map(|p| p.encode_all(theta0.weights()))
        .collect::<Result<_>>()?;

    // Stage A: fingerprints over all available labels, metric-fit embedder.
    let fingerprints: Vec<_> = prepared
        .iter()
        .map(|p| fingerprint(p, &p.graph().labeled_items(), theta0.weights(), cfg.eta))
        .collect::<Result<_>>()?;
    let stage_a_cfg = EmbedderTrainConfig {
        learning_rate: cfg.stage_a_learning_rate,
        max_iterations: cfg.stage_a_iterations,
        init_seed: mix_seed(cfg.seed, 2),
        arch: cfg.embedder_arch(),
        ..EmbedderTrainConfig::default()
    };
    let (embedder, stage_a_embeddings, stage_a_history) = if prepared.len() >= 2 {
        train_embedder(&fingerprints, &stage_a_cfg)?
    } else {
        // Single-graph corpus: nothing to fit a metric on; keep the seeded init.
        warnings.push("single-graph corpus: domain embedder kept at initialization".into());
        let params = crate::embedder::EmbedderParams::init(
            stage_a_cfg.arch.clone(),
            cfg.d_o,
            cfg.d,
            stage_a_cfg.init_seed,
        )?;
        let es = fingerprints
            .iter()
            .enumerate()
            .map(|(i, fp)| crate::embedder::embed_domain(fp, &params, crate::embedder::EmbeddingSource::Pretrain(i)))
            .collect::<Result<Vec<_>>>()?;
        (params, es, Vec::new())
    };
    let theta0_frozen = theta0.clone();
    let embedder_frozen = embedder.clone();
    let domain_embeddings: Vec<Tensor> = stage_a_embeddings.iter().map(|e| e.vector.clone()).collect();

    // Stage B trainables.
    let mut set = TrainableSet {
        film_feature: FiLMGenerator::init(cfg.d_e, cfg.d, cfg.film_hidden, mix_seed(cfg.seed, 3)),
        film_label: FiLMGenerator::init(cfg.d_e, cfg.d, cfg.film_hidden, mix_seed(cfg.seed, 4)),
        label_base: LabelBase::init(l_max, cfg.d, mix_seed(cfg.seed, 5)),
        dpaa: DPAAParams::init(cfg.d, cfg.dpaa_layers, cfg.dpaa_heads, cfg.shared_kv, mix_seed(cfg.seed, 6))?,
    };
    let mut optimizer = OptimizerState::new(&set.tensors(), cfg.learning_rate, cfg.weight_decay);
    let episode_seed = mix_seed(cfg.seed, 7);

    let size_weights: Vec<usize> = prepared.iter().map(|p| p.graph().node_count()).collect();
    let total_size: usize = size_weights.iter().sum();

    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut grad_acc: Option<Vec<Tensor>> = None;
    let mut acc_count = 0usize;
    let mut clamp_warned = false;

    for episode_idx in 0..cfg.episodes {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(episode_seed, episode_idx as u64));
        let graph_id = if cfg.weight_by_size {
            let mut pick = rng.gen_range(0..total_size);
            let mut chosen = 0;
            for (i, &w) in size_weights.iter().enumerate() {
                if pick < w {
                    chosen = i;
                    break;
                }
                pick -= w;
            }
            chosen
        } else {
            rng.gen_range(0..prepared.len())
        };

        let episode = sample_episode(
            prepared[graph_id].graph(),
            graph_id,
            cfg.way,
            cfg.shots,
            cfg.queries_per_class,
            &mut rng,
        )?;
        if let Some(w) = episode.clamped_way {
            if !clamp_warned {
                warnings.push(format!(
                    "episode {}: way clamped to {} eligible classes on graph {}",
                    episode_idx, w, graph_id
                ));
                clamp_warned = true;
            }
        }

        let mut tape = GradTape::new();
        let (loss_id, param_ids) = episode_loss_on_tape(
            &mut tape,
            &encoded[graph_id],
            &episode,
            &domain_embeddings[graph_id],
            &set,
            cfg.tau,
        )?;
        let loss = tape.value(loss_id).data()[0];
        if !loss.is_finite() {
            return Err(Error::Training {
                iteration: episode_idx,
                detail: "episode loss became non-finite".into(),
            });
        }
        curve.push(loss);

        let mut grads = tape.backward(loss_id, &Tensor::scalar(1.0))?;
        let step: Vec<Tensor> = param_ids
            .iter()
            .map(|&id| grads.take(id))
            .collect::<Result<_>>()?;
        match &mut grad_acc {
            None => grad_acc = Some(step),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&step) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
        acc_count += 1;

        if acc_count == cfg.grad_accumulation || episode_idx + 1 == cfg.episodes {
            let mut acc = grad_acc.take().unwrap();
            if acc_count > 1 {
                let inv = 1.0 / acc_count as f64;
                for g in acc.iter_mut() {
                    for v in g.data_mut() {
                        *v *= inv;
                    }
                }
            }
            let mut tensors = set.tensors();
            optimizer.step(&mut tensors, &acc)?;
            set.store(tensors);
            acc_count = 0;
        }
    }

    // Freeze contract: Stage B never touches θ0 or the embedder.
    assert_eq!(theta0_frozen, theta0, "encoder initialization drifted during Stage B");
    assert_eq!(embedder_frozen, embedder, "domain embedder drifted during Stage B");

    let config = BundleConfig {
        d_o: cfg.d_o,
        d: cfg.d,
        d_e: cfg.d_e,
        tau: cfg.tau,
        eta: cfg.eta,
        l_max,
        film_hidden: cfg.film_hidden,
        dpaa_layers: cfg.dpaa_layers,
        dpaa_heads: cfg.dpaa_heads,
        shared_kv: cfg.shared_kv,
        seed: cfg.seed,
        theta_seed,
        conv1_channels: cfg.conv1_channels,
        conv2_channels: cfg.conv2_channels,
        conv_kernel: cfg.conv_kernel,
        conv_stride: cfg.conv_stride,
    };
    let bundle = ModelBundle {
        config,
        theta0,
        embedder,
        film_feature: set.film_feature,
        film_label: set.film_label,
        label_base: set.label_base,
        dpaa: set.dpaa,
        pretrain_embeddings: domain_embeddings,
    };
    Ok(PretrainReport { bundle, curve, stage_a_history, warnings })
}

/// Run the inference path on one sampled episode; returns query accuracy.
pub fn evaluate_episode(
    bundle: &ModelBundle,
    prepared: &PreparedGraph,
    episode: &Episode,
    cfg: &InferenceConfig,
) -> Result<f64> {
    let queries: Vec<usize> = episode.queries.iter().map(|&(v, _)| v).collect();
    let output = predict_with_classes(
        bundle,
        prepared,
        &episode.support,
        &episode.classes,
        &queries,
        cfg,
    )?;
    let mut correct = 0usize;
    for (i, &(_, class)) in episode.queries.iter().enumerate() {
        let truth = episode.classes.iter().position(|&c| c == class).unwrap();
        if output.predictions[i].1 == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / episode.queries.len() as f64)
}
