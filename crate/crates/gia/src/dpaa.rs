//! Dual prompt-aware attention.
//!
//! Feature-side attention lets a query attend over aligned support features;
//! the attended representation is mapped to label space and attends over the
//! aligned label prototypes. Both sides share the key/value projections in
//! the default configuration. Queries never interact with each other; every
//! call is a single-query attention.

use crate::error::{Error, Result};
use crate::numkernel::{attention_single_query, GradTape, Tensor, ValueId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// One attention layer's projection matrices (row convention: `x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

/// DPAA parameter bundle. Default configuration is one layer, one head,
/// key/value projections shared between the feature and label sides; the
/// alternatives exist as ablation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DPAAParams {
    pub layers: Vec<AttentionLayer>,
    pub heads: usize,
    /// When `false`, the label side gets its own key/value projections.
    pub shared_kv: bool,
    pub label_w_k: Option<Tensor>,
    pub label_w_v: Option<Tensor>,
    /// Learnable map from attended features to the label-side query.
    pub omega_weight: Tensor,
    pub omega_bias: Tensor,
}

impl DPAAParams {
    pub fn init(d: usize, layers: usize, heads: usize, shared_kv: bool, seed: u64) -> Result<Self> {
        if layers == 0 || heads == 0 {
            return Err(Error::Config("attention needs at least one layer and one head".into()));
        }
        if d % heads != 0 {
            return Err(Error::Config(format!("width {} not divisible by {} heads", d, heads)));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect();
            Tensor::from_raw(vec![rows, cols], data)
        };
        let layer_params = (0..layers)
            .map(|_| AttentionLayer { w_q: draw(d, d), w_k: draw(d, d), w_v: draw(d, d) })
            .collect();
        let (label_w_k, label_w_v) = if shared_kv {
            (None, None)
        } else {
            (Some(draw(d, d)), Some(draw(d, d)))
        };
        Ok(Self {
            layers: layer_params,
            heads,
            shared_kv,
            label_w_k,
            label_w_v,
            omega_weight: draw(d, d),
            omega_bias: Tensor::zeros(&[d]),
        })
    }

    pub fn width(&self) -> usize {
        self.omega_weight.shape()[0]
    }

    fn label_kv(&self) -> (&Tensor, &Tensor) {
        if self.shared_kv {
            let last = self.layers.last().unwrap();
            (&last.w_k, &last.w_v)
        } else {
            (self.label_w_k.as_ref().unwrap(), self.label_w_v.as_ref().unwrap())
        }
    }

    /// Flat list of trainable tensors in serialization order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend([&layer.w_q, &layer.w_k, &layer.w_v]);
        }
        if let (Some(k), Some(v)) = (&self.label_w_k, &self.label_w_v) {
            out.extend([k, v]);
        }
        out.extend([&self.omega_weight, &self.omega_bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w_q);
            out.push(&mut layer.w_k);
            out.push(&mut layer.w_v);
        }
        if let Some(k) = &mut self.label_w_k {
            out.push(k);
        }
        if let Some(v) = &mut self.label_w_v {
            out.push(v);
        }
        out.push(&mut self.omega_weight);
        out.push(&mut self.omega_bias);
        out
    }
}

/// Aligned support features and label prototypes for one episode.
#[derive(Debug, Clone)]
pub struct PromptSet {
    /// `(m·k)×d` aligned support features, grouped by episode class order.
    pub support_features: Tensor,
    /// Episode-class position (`0..m`) of each support row.
    pub support_classes: Vec<usize>,
    /// `m×d` aligned label prototypes; row `c` is episode class `c`.
    pub prototypes: Tensor,
    /// Graph-local label id behind each prototype row.
    pub class_ids: Vec<usize>,
}

impl PromptSet {
    pub fn new(
        support_features: Tensor,
        support_classes: Vec<usize>,
        prototypes: Tensor,
        class_ids: Vec<usize>,
    ) -> Result<Self> {
        let m = prototypes.shape()[0];
        if m == 0 || support_features.shape()[0] == 0 {
            return Err(Error::Input("prompt must contain at least one support item and prototype".into()));
        }
        if support_features.shape()[0] != support_classes.len() || class_ids.len() != m {
            return Err(Error::Dimension {
                op: "prompt_set",
                detail: format!(
                    "{} support rows / {} tags, {} prototypes / {} ids",
                    support_features.shape()[0],
                    support_classes.len(),
                    m,
                    class_ids.len()
                ),
            });
        }
        if support_classes.iter().any(|&c| c >= m) {
            return Err(Error::Input("support row tagged with out-of-episode class".into()));
        }
        Ok(Self { support_features, support_classes, prototypes, class_ids })
    }

    pub fn way(&self) -> usize {
        self.prototypes.shape()[0]
    }
}

fn multi_head(query: &Tensor, keys: &Tensor, values: &Tensor, heads: usize) -> Result<Tensor> {
    let d = query.shape()[0];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    if heads == 1 {
        return Ok(attention_single_query(query, keys, values, scale)?.0);
    }
    let n = keys.shape()[0];
    let mut out = Tensor::zeros(&[d]);
    for h in 0..heads {
        let cols: Vec<usize> = (h * dh..(h + 1) * dh).collect();
        let q_h = Tensor::from_raw(vec![dh], cols.iter().map(|&c| query.data()[c]).collect());
        let mut k_h = Tensor::zeros(&[n, dh]);
        let mut v_h = Tensor::zeros(&[n, dh]);
        for r in 0..n {
            for (j, &c) in cols.iter().enumerate() {
                k_h.data_mut()[r * dh + j] = keys.at(r, c);
                v_h.data_mut()[r * dh + j] = values.at(r, c);
            }
        }
        let (o_h, _) = attention_single_query(&q_h, &k_h, &v_h, scale)?;
        for (j, &c) in cols.iter().enumerate() {
            out.data_mut()[c] = o_h.data()[j];
        }
    }
    Ok(out)
}

/// Feature-side attention: the query feature attends over the support rows.
pub fn feature_attention(z_q: &Tensor, prompt: &PromptSet, params: &DPAAParams) -> Result<Tensor> {
    let mut z = z_q.clone();
    for layer in &params.layers {
        let q = z.reshape(vec![1, z.numel()])?.matmul(&layer.w_q)?.reshape(vec![z.numel()])?;
        let keys = prompt.support_features.matmul(&layer.w_k)?;
        let values = prompt.support_features.matmul(&layer.w_v)?;
        z = multi_head(&q, &keys, &values, params.heads)?;
    }
    Ok(z)
}

/// Label-side attention: the attended feature, mapped through `f_Ω`, attends
/// over the label prototypes.
pub fn label_attention(z_out: &Tensor, prompt: &PromptSet, params: &DPAAParams) -> Result<Tensor> {
    let d = z_out.numel();
    let q = z_out
        .reshape(vec![1, d])?
        .matmul(&params.omega_weight)?
        .reshape(vec![d])?
        .add(&params.omega_bias)?;
    let (w_k, w_v) = params.label_kv();
    let keys = prompt.prototypes.matmul(w_k)?;
    let values = prompt.prototypes.matmul(w_v)?;
    multi_head(&q, &keys, &values, params.heads)
}

/// Per-class scores: `s = u_out · (U^pmt)ᵀ`.
pub fn score(u_out: &Tensor, prompt: &PromptSet) -> Result<Tensor> {
    let d = u_out.numel();
    prompt
        .prototypes
        .matmul(&u_out.reshape(vec![d, 1])?)?
        .reshape(vec![prompt.way()])
}

/// Full pipeline for one query.
pub fn dpaa_scores(z_q: &Tensor, prompt: &PromptSet, params: &DPAAParams) -> Result<Tensor> {
    let z_out = feature_attention(z_q, prompt, params)?;
    let u_out = label_attention(&z_out, prompt, params)?;
    score(&u_out, prompt)
}

/// Tempered episodic loss: mean over queries of `−log softmax(s/τ)[target]`.
pub fn episode_loss(scores: &[Tensor], targets: &[usize], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {}", tau)));
    }
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::Dimension {
            op: "episode_loss",
            detail: format!("{} score rows vs {} targets", scores.len(), targets.len()),
        });
    }
    let mut total = 0.0;
    for (s, &t) in scores.iter().zip(targets) {
        let m = s.numel();
        let logits = s.scale(1.0 / tau).reshape(vec![1, m])?;
        total += logits.cross_entropy_with_logits(&[t])?.data()[0];
    }
    Ok(total / scores.len() as f64)
}

/// Tape parameter ids for the DPAA block, in [`DPAAParams::params`] order.
pub struct DPAATapeIds {
    pub layer_params: Vec<[ValueId; 3]>,
    pub label_w_k: Option<ValueId>,
    pub label_w_v: Option<ValueId>,
    pub omega_weight: ValueId,
    pub omega_bias: ValueId,
}

impl DPAATapeIds {
    pub fn ordered(&self) -> Vec<ValueId> {
        let mut out = Vec::new();
        for l in &self.layer_params {
            out.extend_from_slice(l);
        }
        if let (Some(k), Some(v)) = (self.label_w_k, self.label_w_v) {
            out.extend([k, v]);
        }
        out.extend([self.omega_weight, self.omega_bias]);
        out
    }
}

/// Register the DPAA parameters as trainable leaves.
pub fn params_on_tape(tape: &mut GradTape, params: &DPAAParams) -> DPAATapeIds {
    let layer_params = params
        .layers
        .iter()
        .map(|l| [tape.param(l.w_q.clone()), tape.param(l.w_k.clone()), tape.param(l.w_v.clone())])
        .collect();
    DPAATapeIds {
        layer_params,
        label_w_k: params.label_w_k.as_ref().map(|t| tape.param(t.clone())),
        label_w_v: params.label_w_v.as_ref().map(|t| tape.param(t.clone())),
        omega_weight: tape.param(params.omega_weight.clone()),
        omega_bias: tape.param(params.omega_bias.clone()),
    }
}

fn multi_head_on_tape(
    tape: &mut GradTape,
    query: ValueId,
    keys: ValueId,
    values: ValueId,
    heads: usize,
) -> Result<ValueId> {
    let d = tape.value(query).numel();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    if heads == 1 {
        return tape.attention(query, keys, values, scale);
    }
    let mut combined: Option<ValueId> = None;
    for h in 0..heads {
        let mut slice = Tensor::zeros(&[d, dh]);
        for j in 0..dh {
            slice.data_mut()[(h * dh + j) * dh + j] = 1.0;
        }
        let sel = tape.leaf(slice);
        let q_row = tape.reshape(query, vec![1, d])?;
        let q_h = tape.matmul(q_row, sel)?;
        let q_h = tape.flatten(q_h)?;
        let k_h = tape.matmul(keys, sel)?;
        let v_h = tape.matmul(values, sel)?;
        let o_h = tape.attention(q_h, k_h, v_h, scale)?;
        // Embed the head output back into the d-wide vector.
        let mut embed = Tensor::zeros(&[dh, d]);
        for j in 0..dh {
            embed.data_mut()[j * d + h * dh + j] = 1.0;
        }
        let emb = tape.leaf(embed);
        let o_row = tape.reshape(o_h, vec![1, dh])?;
        let o_full = tape.matmul(o_row, emb)?;
        let o_full = tape.flatten(o_full)?;
        combined = Some(match combined {
            None => o_full,
            Some(c) => tape.add(c, o_full)?,
        });
    }
    Ok(combined.unwrap())
}

/// Episode-level key/value projections, computed once and shared by every
/// query on the tape.
pub struct EpisodePrompts {
    pub u_pmt: ValueId,
    feature_kv: Vec<(ValueId, ValueId)>,
    label_kv: (ValueId, ValueId),
}

/// Project the prompt matrices through the key/value maps once per episode.
pub fn prompts_on_tape(
    tape: &mut GradTape,
    ids: &DPAATapeIds,
    z_pmt: ValueId,
    u_pmt: ValueId,
) -> Result<EpisodePrompts> {
    let mut feature_kv = Vec::with_capacity(ids.layer_params.len());
    for layer in &ids.layer_params {
        let [_, w_k, w_v] = *layer;
        feature_kv.push((tape.matmul(z_pmt, w_k)?, tape.matmul(z_pmt, w_v)?));
    }
    let (w_k, w_v) = match (ids.label_w_k, ids.label_w_v) {
        (Some(k), Some(v)) => (k, v),
        _ => {
            let last = ids.layer_params.last().unwrap();
            (last[1], last[2])
        }
    };
    let label_kv = (tape.matmul(u_pmt, w_k)?, tape.matmul(u_pmt, w_v)?);
    Ok(EpisodePrompts { u_pmt, feature_kv, label_kv })
}

/// Record the per-query DPAA pipeline; returns the `[m]` score vector id.
pub fn scores_on_tape(
    tape: &mut GradTape,
    ids: &DPAATapeIds,
    heads: usize,
    prompts: &EpisodePrompts,
    z_q: ValueId,
) -> Result<ValueId> {
    let d = tape.value(z_q).numel();
    let mut z = z_q;
    for (layer, &(keys, values)) in ids.layer_params.iter().zip(&prompts.feature_kv) {
        let q_row = tape.reshape(z, vec![1, d])?;
        let q = tape.matmul(q_row, layer[0])?;
        let q = tape.flatten(q)?;
        z = multi_head_on_tape(tape, q, keys, values, heads)?;
    }

    let z_row = tape.reshape(z, vec![1, d])?;
    let q_lab = tape.matmul(z_row, ids.omega_weight)?;
    let q_lab = tape.flatten(q_lab)?;
    let q_lab = tape.add(q_lab, ids.omega_bias)?;
    let (keys, values) = prompts.label_kv;
    let u_out = multi_head_on_tape(tape, q_lab, keys, values, heads)?;

    let m = tape.value(prompts.u_pmt).shape()[0];
    let u_col = tape.reshape(u_out, vec![d, 1])?;
    let s = tape.matmul(prompts.u_pmt, u_col)?;
    tape.reshape(s, vec![m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Tensor::from_raw(
            shape.to_vec(),
            (0..shape.iter().product::<usize>())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    fn prompt(mk: usize, m: usize, d: usize, seed: u64) -> PromptSet {
        PromptSet::new(
            random_tensor(&[mk, d], seed),
            (0..mk).map(|i| i % m).collect(),
            random_tensor(&[m, d], seed + 1),
            (0..m).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_support_row_returns_its_value_projection() {
        let d = 4;
        let params = DPAAParams::init(d, 1, 1, true, 3).unwrap();
        let p = prompt(1, 1, d, 10);
        let z_q = random_tensor(&[d], 5);
        let out = feature_attention(&z_q, &p, &params).unwrap();
        let expect = p.support_features.matmul(&params.layers[0].w_v).unwrap();
        assert_eq!(out.data(), expect.row(0));
    }

    #[test]
    fn identical_support_rows_collapse_to_common_projection() {
        let d = 4;
        let params = DPAAParams::init(d, 1, 1, true, 4).unwrap();
        let row = random_tensor(&[d], 6);
        let mut support = Tensor::zeros(&[3, d]);
        for r in 0..3 {
            for j in 0..d {
                support.data_mut()[r * d + j] = row.data()[j];
            }
        }
        let p = PromptSet::new(support, vec![0, 0, 0], random_tensor(&[1, d], 7), vec![0]).unwrap();
        let out = feature_attention(&random_tensor(&[d], 8), &p, &params).unwrap();
        let expect = row.reshape(vec![1, d]).unwrap().matmul(&params.layers[0].w_v).unwrap();
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_attention_matches_naive_oracle() {
        let d = 6;
        let params = DPAAParams::init(d, 1, 1, true, 9).unwrap();
        let p = prompt(5, 3, d, 20);
        let z_q = random_tensor(&[d], 21);
        let got = feature_attention(&z_q, &p, &params).unwrap();

        // Naive loop-based oracle.
        let q = z_q.reshape(vec![1, d]).unwrap().matmul(&params.layers[0].w_q).unwrap();
        let k = p.support_features.matmul(&params.layers[0].w_k).unwrap();
        let v = p.support_features.matmul(&params.layers[0].w_v).unwrap();
        let n = k.shape()[0];
        let mut logits = vec![0.0; n];
        for i in 0..n {
            for j in 0..d {
                logits[i] += q.data()[j] * k.at(i, j) / (d as f64).sqrt();
            }
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expect = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                expect[j] += exps[i] / z * v.at(i, j);
            }
        }
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_prototype_label_attention() {
        let d = 4;
        let params = DPAAParams::init(d, 1, 1, true, 11).unwrap();
        let p = prompt(2, 1, d, 30);
        let u = label_attention(&random_tensor(&[d], 31), &p, &params).unwrap();
        let expect = p.prototypes.matmul(params.label_kv().1).unwrap();
        assert_eq!(u.data(), expect.row(0));
    }

    #[test]
    fn score_is_prototype_dot_products() {
        let d = 5;
        let p = prompt(3, 3, d, 40);
        let u = random_tensor(&[d], 41);
        let s = score(&u, &p).unwrap();
        for c in 0..3 {
            let mut dot = 0.0;
            for j in 0..d {
                dot += u.data()[j] * p.prototypes.at(c, j);
            }
            assert_eq!(s.data()[c], dot);
        }
        let zero = score(&Tensor::zeros(&[d]), &p).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_prototypes_score_their_own_row_highest() {
        let d = 4;
        let p = PromptSet::new(
            random_tensor(&[2, d], 50),
            vec![0, 1],
            Tensor::eye_select(2, d),
            vec![0, 1],
        )
        .unwrap();
        let s = score(&Tensor::eye_select(2, d).select_rows(&[1]).unwrap().reshape(vec![d]).unwrap(), &p).unwrap();
        assert!(s.data()[1] > s.data()[0]);
    }

    #[test]
    fn episode_loss_examples() {
        // Uniform scores: loss = ln m for any temperature.
        let s = vec![Tensor::zeros(&[5])];
        for tau in [0.05, 0.2, 1.0] {
            let l = episode_loss(&s, &[3], tau).unwrap();
            assert!((l - 5.0f64.ln()).abs() < 1e-12);
        }
        // Hand-computed two-way case.
        let s = vec![Tensor::new(vec![2], vec![1.0, 0.0]).unwrap()];
        let l = episode_loss(&s, &[0], 1.0).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()) < 1e-12);
        assert!(matches!(episode_loss(&s, &[0], 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn temperature_never_changes_the_argmax() {
        let mut rng = ChaCha20Rng::seed_from_u64(60);
        for _ in 0..50 {
            let s = Tensor::from_raw(vec![4], (0..4).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect());
            let base: usize = (0..4).max_by(|&a, &b| s.data()[a].partial_cmp(&s.data()[b]).unwrap()).unwrap();
            for tau in [0.05, 0.2, 0.5, 1.0, 10.0] {
                let sm = s.scale(1.0 / tau).softmax().unwrap();
                let am = (0..4).max_by(|&a, &b| sm.data()[a].partial_cmp(&sm.data()[b]).unwrap()).unwrap();
                assert_eq!(am, base);
            }
        }
    }

    #[test]
    fn support_permutation_leaves_output_unchanged() {
        let d = 6;
        let params = DPAAParams::init(d, 1, 1, true, 70).unwrap();
        let p = prompt(6, 3, d, 71);
        let z_q = random_tensor(&[d], 72);
        let base = dpaa_scores(&z_q, &p, &params).unwrap();

        let perm = [4usize, 2, 0, 5, 1, 3];
        let mut support = Tensor::zeros(&[6, d]);
        let mut classes = vec![0usize; 6];
        for (dst, &src) in perm.iter().enumerate() {
            classes[dst] = p.support_classes[src];
            for j in 0..d {
                support.data_mut()[dst * d + j] = p.support_features.at(src, j);
            }
        }
        let permuted = PromptSet::new(support, classes, p.prototypes.clone(), p.class_ids.clone()).unwrap();
        let out = dpaa_scores(&z_q, &permuted, &params).unwrap();
        for (a, b) in base.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn prototype_permutation_permutes_scores() {
        let d = 4;
        let params = DPAAParams::init(d, 1, 1, true, 80).unwrap();
        let p = prompt(3, 3, d, 81);
        let z_q = random_tensor(&[d], 82);
        let base = dpaa_scores(&z_q, &p, &params).unwrap();

        let perm = [2usize, 0, 1];
        let mut protos = Tensor::zeros(&[3, d]);
        let mut ids = vec![0usize; 3];
        for (dst, &src) in perm.iter().enumerate() {
            ids[dst] = p.class_ids[src];
            for j in 0..d {
                protos.data_mut()[dst * d + j] = p.prototypes.at(src, j);
            }
        }
        // Support tags follow the prototype reordering.
        let inverse = {
            let mut inv = [0usize; 3];
            for (dst, &src) in perm.iter().enumerate() {
                inv[src] = dst;
            }
            inv
        };
        let classes: Vec<usize> = p.support_classes.iter().map(|&c| inverse[c]).collect();
        let permuted = PromptSet::new(p.support_features.clone(), classes, protos, ids).unwrap();
        let out = dpaa_scores(&z_q, &permuted, &params).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert!((out.data()[dst] - base.data()[src]).abs() <= 1e-12);
        }
    }

    #[test]
    fn tape_scores_match_pure_scores() {
        for (layers, heads, shared) in [(1usize, 1usize, true), (2, 1, true), (1, 2, true), (1, 1, false)] {
            let d = 6;
            let params = DPAAParams::init(d, layers, heads, shared, 90).unwrap();
            let p = prompt(4, 2, d, 91);
            let z_q = random_tensor(&[d], 92);
            let pure = dpaa_scores(&z_q, &p, &params).unwrap();

            let mut tape = GradTape::new();
            let ids = params_on_tape(&mut tape, &params);
            let z_pmt = tape.leaf(p.support_features.clone());
            let u_pmt = tape.leaf(p.prototypes.clone());
            let prompts = prompts_on_tape(&mut tape, &ids, z_pmt, u_pmt).unwrap();
            let q = tape.leaf(z_q.clone());
            let s = scores_on_tape(&mut tape, &ids, params.heads, &prompts, q).unwrap();
            assert_eq!(tape.value(s).data(), pure.data(), "layers={} heads={} shared={}", layers, heads, shared);
        }
    }

    #[test]
    fn ablation_configs_change_outputs() {
        let d = 6;
        let p = prompt(4, 2, d, 95);
        let z_q = random_tensor(&[d], 96);
        let base = dpaa_scores(&z_q, &p, &DPAAParams::init(d, 1, 1, true, 97).unwrap()).unwrap();
        let two_layer = dpaa_scores(&z_q, &p, &DPAAParams::init(d, 2, 1, true, 97).unwrap()).unwrap();
        let four_head = dpaa_scores(&z_q, &p, &DPAAParams::init(d, 1, 2, true, 97).unwrap()).unwrap();
        assert_ne!(base.data(), two_layer.data());
        assert_ne!(base.data(), four_head.data());
    }
}
