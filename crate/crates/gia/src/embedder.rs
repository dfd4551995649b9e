//! Domain embedder: conv stack + MLP over gradient fingerprints, trained with
//! the pairwise metric-preserving loss and then frozen.

use crate::encoder::{fingerprint, Fingerprint, PreparedGraph};
use crate::error::{Error, Result};
use crate::numkernel::{GradTape, OptimizerState, Tensor, ValueId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Architecture descriptor stored with the model so any choice reproduces.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderArch {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub embedding_dim: usize,
}

impl Default for EmbedderArch {
    fn default() -> Self {
        Self { conv1_channels: 8, conv2_channels: 16, kernel: 3, stride: 2, embedding_dim: 64 }
    }
}

impl EmbedderArch {
    fn conv_out(&self, len: usize) -> Result<usize> {
        if len < self.kernel {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("fingerprint side {} smaller than kernel {}", len, self.kernel),
            });
        }
        Ok((len - self.kernel) / self.stride + 1)
    }

    /// Flattened length after both conv layers on a `rows×cols` fingerprint.
    pub fn flat_len(&self, rows: usize, cols: usize) -> Result<usize> {
        let h1 = self.conv_out(rows)?;
        let w1 = self.conv_out(cols)?;
        let h2 = self.conv_out(h1)?;
        let w2 = self.conv_out(w1)?;
        Ok(self.conv2_channels * h2 * w2)
    }
}

/// Trainable embedder parameters (two conv layers plus one linear layer).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    pub arch: EmbedderArch,
    pub fingerprint_shape: (usize, usize),
    pub conv1_kernel: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_kernel: Tensor,
    pub conv2_bias: Tensor,
    pub mlp_weight: Tensor,
    pub mlp_bias: Tensor,
}

impl EmbedderParams {
    /// Seeded initialization for fingerprints of shape `d_o×d`.
    pub fn init(arch: EmbedderArch, d_o: usize, d: usize, seed: u64) -> Result<Self> {
        let flat = arch.flat_len(d_o, d)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = |shape: Vec<usize>, fan_in: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect();
            Tensor::from_raw(shape, data)
        };
        let k = arch.kernel;
        Ok(Self {
            conv1_kernel: draw(vec![arch.conv1_channels, 1, k, k], k * k),
            conv1_bias: Tensor::zeros(&[arch.conv1_channels]),
            conv2_kernel: draw(vec![arch.conv2_channels, arch.conv1_channels, k, k], arch.conv1_channels * k * k),
            conv2_bias: Tensor::zeros(&[arch.conv2_channels]),
            mlp_weight: draw(vec![arch.embedding_dim, flat], flat),
            mlp_bias: Tensor::zeros(&[arch.embedding_dim]),
            arch,
            fingerprint_shape: (d_o, d),
        })
    }

    pub fn params(&self) -> [&Tensor; 6] {
        [
            &self.conv1_kernel,
            &self.conv1_bias,
            &self.conv2_kernel,
            &self.conv2_bias,
            &self.mlp_weight,
            &self.mlp_bias,
        ]
    }

    fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv1_kernel,
            &mut self.conv1_bias,
            &mut self.conv2_kernel,
            &mut self.conv2_bias,
            &mut self.mlp_weight,
            &mut self.mlp_bias,
        ]
    }
}

/// Where an embedding came from.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Pretrain(usize),
    InContext,
}

/// Compact domain descriptor `e ∈ R^{d_e}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEmbedding {
    pub vector: Tensor,
    pub source: EmbeddingSource,
}

struct ParamIds {
    conv1_kernel: ValueId,
    conv1_bias: ValueId,
    conv2_kernel: ValueId,
    conv2_bias: ValueId,
    mlp_weight: ValueId,
    mlp_bias: ValueId,
}

fn forward_on_tape(tape: &mut GradTape, fp: ValueId, ids: &ParamIds, arch: &EmbedderArch) -> Result<ValueId> {
    let c1 = tape.conv2d(fp, ids.conv1_kernel, ids.conv1_bias, arch.stride)?;
    let r1 = tape.relu(c1)?;
    let c2 = tape.conv2d(r1, ids.conv2_kernel, ids.conv2_bias, arch.stride)?;
    let r2 = tape.relu(c2)?;
    let flat_len = tape.value(r2).numel();
    let col = tape.reshape(r2, vec![flat_len, 1])?;
    let lin = tape.matmul(ids.mlp_weight, col)?;
    let d_e = tape.value(ids.mlp_bias).numel();
    let bias_col = tape.reshape(ids.mlp_bias, vec![d_e, 1])?;
    let out = tape.add(lin, bias_col)?;
    tape.flatten(out)
}

fn add_params(tape: &mut GradTape, params: &EmbedderParams, trainable: bool) -> ParamIds {
    let mut put = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.leaf(t.clone()) };
    ParamIds {
        conv1_kernel: put(&params.conv1_kernel),
        conv1_bias: put(&params.conv1_bias),
        conv2_kernel: put(&params.conv2_kernel),
        conv2_bias: put(&params.conv2_bias),
        mlp_weight: put(&params.mlp_weight),
        mlp_bias: put(&params.mlp_bias),
    }
}

fn embed_vector(fp: &Fingerprint, params: &EmbedderParams) -> Result<Tensor> {
    let (rows, cols) = (fp.delta.shape()[0], fp.delta.shape()[1]);
    if (rows, cols) != params.fingerprint_shape {
        return Err(Error::Dimension {
            op: "embed_domain",
            detail: format!(
                "fingerprint {:?} vs embedder built for {:?}",
                fp.delta.shape(),
                params.fingerprint_shape
            ),
        });
    }
    let mut tape = GradTape::new();
    let image = tape.leaf(fp.delta.reshape(vec![1, rows, cols])?);
    let ids = add_params(&mut tape, params, false);
    let out = forward_on_tape(&mut tape, image, &ids, &params.arch)?;
    Ok(tape.value(out).clone())
}

/// Embed a fingerprint, treating `Δθ` as a one-channel image.
pub fn embed_domain(fp: &Fingerprint, params: &EmbedderParams, source: EmbeddingSource) -> Result<DomainEmbedding> {
    Ok(DomainEmbedding { vector: embed_vector(fp, params)?, source })
}

/// Metric-preserving loss: sum over ordered pairs `i≠j` of
/// `(‖Δθ_i − Δθ_j‖_F − ‖e_i − e_j‖₂)²`.
pub fn lde_loss(fingerprints: &[Fingerprint], embeddings: &[Tensor]) -> Result<f64> {
    if fingerprints.len() != embeddings.len() {
        return Err(Error::Dimension {
            op: "lde_loss",
            detail: format!("{} fingerprints vs {} embeddings", fingerprints.len(), embeddings.len()),
        });
    }
    if fingerprints.len() < 2 {
        return Err(Error::Config("metric loss needs at least two domains".into()));
    }
    let m = fingerprints.len();
    let mut loss = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let target = fingerprints[i].delta.sub(&fingerprints[j].delta)?.frobenius_norm();
            let got = embeddings[i].sub(&embeddings[j])?.frobenius_norm();
            loss += (target - got) * (target - got);
        }
    }
    Ok(loss)
}

/// Stage-A training configuration.
#[derive(Debug, Clone)]
pub struct EmbedderTrainConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Stop when loss improvement over this window drops below
    /// `stop_ratio × initial loss`.
    pub window: usize,
    pub stop_ratio: f64,
    pub init_seed: u64,
    pub arch: EmbedderArch,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iterations: 2000,
            window: 50,
            stop_ratio: 1e-6,
            init_seed: 0,
            arch: EmbedderArch::default(),
        }
    }
}

/// Minimize [`lde_loss`] over the embedder parameters; returns the frozen
/// parameters, the per-domain embeddings, and the loss history.
pub fn train_embedder(
    fingerprints: &[Fingerprint],
    cfg: &EmbedderTrainConfig,
) -> Result<(EmbedderParams, Vec<DomainEmbedding>, Vec<f64>)> {
    if fingerprints.len() < 2 {
        return Err(Error::Config("embedder training needs at least two fingerprints".into()));
    }
    let shape = fingerprints[0].delta.shape().to_vec();
    if fingerprints.iter().any(|fp| fp.delta.shape() != shape.as_slice()) {
        return Err(Error::Dimension {
            op: "train_embedder",
            detail: "fingerprints must share one shape".into(),
        });
    }
    let m = fingerprints.len();
    let (rows, cols) = (shape[0], shape[1]);
    let mut params = EmbedderParams::init(cfg.arch.clone(), rows, cols, cfg.init_seed)?;

    // Pairwise fingerprint distances are fixed throughout.
    let mut target = vec![0.0f64; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = fingerprints[i].delta.sub(&fingerprints[j].delta)?.frobenius_norm();
            target[i * m + j] = d;
            target[j * m + i] = d;
        }
    }

    let mut opt = OptimizerState::new(&params.params().map(Clone::clone), cfg.learning_rate, 0.0);
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iterations);
    let mut initial = 0.0;

    for iter in 0..cfg.max_iterations {
        // Forward every fingerprint on its own tape.
        let mut tapes = Vec::with_capacity(m);
        let mut outputs = Vec::with_capacity(m);
        let mut embeddings = Vec::with_capacity(m);
        for fp in fingerprints {
            let mut tape = GradTape::new();
            let image = tape.leaf(fp.delta.reshape(vec![1, rows, cols])?);
            let ids = add_params(&mut tape, &params, true);
            let out = forward_on_tape(&mut tape, image, &ids, &cfg.arch)?;
            embeddings.push(tape.value(out).clone());
            tapes.push((tape, ids));
            outputs.push(out);
        }

        let loss = lde_loss(fingerprints, &embeddings)?;
        if !loss.is_finite() {
            return Err(Error::Training { iteration: iter, detail: "metric loss became non-finite".into() });
        }
        if iter == 0 {
            initial = loss;
        }
        history.push(loss);
        if iter >= cfg.window && history[iter - cfg.window] - loss < cfg.stop_ratio * initial {
            break;
        }

        // Seed each tape with ∂loss/∂e_i and accumulate parameter gradients.
        let d_e = cfg.arch.embedding_dim;
        let mut grads = vec![Tensor::zeros(params.params()[0].shape()); 0];
        let mut acc: Vec<Tensor> = params.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        for i in 0..m {
            let mut seed = Tensor::zeros(&[d_e]);
            for j in 0..m {
                if i == j {
                    continue;
                }
                let diff = embeddings[i].sub(&embeddings[j])?;
                let norm = diff.frobenius_norm();
                if norm < 1e-30 {
                    continue;
                }
                // Ordered pairs (i,j) and (j,i) both contribute.
                let coeff = -4.0 * (target[i * m + j] - norm) / norm;
                for (s, dv) in seed.data_mut().iter_mut().zip(diff.data()) {
                    *s += coeff * dv;
                }
            }
            let (tape, ids) = &tapes[i];
            let mut g = tape.backward(outputs[i], &seed)?;
            for (slot, id) in acc.iter_mut().zip([
                ids.conv1_kernel,
                ids.conv1_bias,
                ids.conv2_kernel,
                ids.conv2_bias,
                ids.mlp_weight,
                ids.mlp_bias,
            ]) {
                let delta = g.take(id)?;
                for (a, b) in slot.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
        }
        grads.append(&mut acc);

        let mut current: Vec<Tensor> = params.params().map(Clone::clone).to_vec();
        opt.step(&mut current, &grads)?;
        for (dst, src) in params.params_mut().into_iter().zip(current) {
            *dst = src;
        }
    }

    let embeddings = fingerprints
        .iter()
        .enumerate()
        .map(|(i, fp)| embed_domain(fp, &params, EmbeddingSource::Pretrain(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((params, embeddings, history))
}

/// Support-only fingerprint of a new graph passed through the frozen embedder.
pub fn in_context_embedding(
    prepared: &PreparedGraph,
    support: &[(usize, usize)],
    theta0: &Tensor,
    eta: f64,
    params: &EmbedderParams,
) -> Result<DomainEmbedding> {
    if support.is_empty() {
        return Err(Error::Input("in-context embedding requires a nonempty support set".into()));
    }
    let fp = fingerprint(prepared, support, theta0, eta)?;
    embed_domain(&fp, params, EmbeddingSource::InContext)
}
