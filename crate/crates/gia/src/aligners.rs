//! Domain-conditioned FiLM transformations for features and labels, the
//! shared label base, and the Lipschitz instrumentation for the alignment
//! smoothness check.

use crate::error::{Error, Result};
use crate::graphcore::spectral_norm;
use crate::numkernel::{GradTape, Tensor, ValueId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Two-layer MLP from a domain embedding to FiLM scale/shift parameters.
///
/// The second layer is stored as separate scale/shift heads; stacked they are
/// the usual `R^{d_e} → R^{2d}` map. The scale head passes through softplus,
/// so γ is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FiLMGenerator {
    pub w_hidden: Tensor, // hidden × d_e
    pub b_hidden: Tensor, // hidden
    pub w_scale: Tensor,  // d × hidden
    pub b_scale: Tensor,  // d
    pub w_shift: Tensor,  // d × hidden
    pub b_shift: Tensor,  // d
}

impl FiLMGenerator {
    pub fn init(d_e: usize, d: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                .collect();
            Tensor::from_raw(vec![rows, cols], data)
        };
        Self {
            w_hidden: draw(hidden, d_e),
            b_hidden: Tensor::zeros(&[hidden]),
            w_scale: draw(d, hidden),
            b_scale: Tensor::zeros(&[d]),
            w_shift: draw(d, hidden),
            b_shift: Tensor::zeros(&[d]),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w_scale.shape()[0]
    }

    pub fn params(&self) -> [&Tensor; 6] {
        [&self.w_hidden, &self.b_hidden, &self.w_scale, &self.b_scale, &self.w_shift, &self.b_shift]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_scale,
            &mut self.b_scale,
            &mut self.w_shift,
            &mut self.b_shift,
        ]
    }
}

/// A scale/shift pair; γ entries are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct FiLMParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Run the generator on a domain embedding.
pub fn gen_film(embedding: &Tensor, gen: &FiLMGenerator) -> Result<FiLMParams> {
    if embedding.shape() != [gen.embedding_dim()] {
        return Err(Error::Dimension {
            op: "gen_film",
            detail: format!("embedding {:?} vs generator input {}", embedding.shape(), gen.embedding_dim()),
        });
    }
    let e = embedding.reshape(vec![gen.embedding_dim(), 1])?;
    let hidden_len = gen.b_hidden.numel();
    let h = gen
        .w_hidden
        .matmul(&e)?
        .add(&gen.b_hidden.reshape(vec![hidden_len, 1])?)?
        .relu();
    let d = gen.output_dim();
    let gamma = gen.w_scale.matmul(&h)?.add(&gen.b_scale.reshape(vec![d, 1])?)?.softplus();
    let beta = gen.w_shift.matmul(&h)?.add(&gen.b_shift.reshape(vec![d, 1])?)?;
    Ok(FiLMParams { gamma: gamma.reshape(vec![d])?, beta: beta.reshape(vec![d])? })
}

/// Ids of the generator's tape parameters plus its (γ, β) outputs.
pub struct FiLMTapeIds {
    pub params: [ValueId; 6],
    pub gamma: ValueId,
    pub beta: ValueId,
}

/// Record the generator forward on a tape with trainable parameters.
pub fn film_on_tape(tape: &mut GradTape, embedding: &Tensor, gen: &FiLMGenerator) -> Result<FiLMTapeIds> {
    let d_e = gen.embedding_dim();
    let hidden_len = gen.b_hidden.numel();
    let d = gen.output_dim();
    let e = tape.leaf(embedding.reshape(vec![d_e, 1])?);
    let w_hidden = tape.param(gen.w_hidden.clone());
    let b_hidden = tape.param(gen.b_hidden.clone());
    let w_scale = tape.param(gen.w_scale.clone());
    let b_scale = tape.param(gen.b_scale.clone());
    let w_shift = tape.param(gen.w_shift.clone());
    let b_shift = tape.param(gen.b_shift.clone());

    let lin1 = tape.matmul(w_hidden, e)?;
    let b1 = tape.reshape(b_hidden, vec![hidden_len, 1])?;
    let h = tape.add(lin1, b1)?;
    let h = tape.relu(h)?;

    let raw_scale = tape.matmul(w_scale, h)?;
    let bs = tape.reshape(b_scale, vec![d, 1])?;
    let raw_scale = tape.add(raw_scale, bs)?;
    let gamma = tape.softplus(raw_scale)?;
    let gamma = tape.flatten(gamma)?;

    let raw_shift = tape.matmul(w_shift, h)?;
    let bsh = tape.reshape(b_shift, vec![d, 1])?;
    let raw_shift = tape.add(raw_shift, bsh)?;
    let beta = tape.flatten(raw_shift)?;

    Ok(FiLMTapeIds {
        params: [w_hidden, b_hidden, w_scale, b_scale, w_shift, b_shift],
        gamma,
        beta,
    })
}

/// Elementwise affine map `z = γ ⊙ h + β`; invertible since γ > 0.
pub fn align_features(h: &Tensor, film: &FiLMParams) -> Result<Tensor> {
    h.mul(&film.gamma)?.add(&film.beta)
}

/// Row-wise FiLM over a feature matrix.
pub fn align_feature_rows(h: &Tensor, film: &FiLMParams) -> Result<Tensor> {
    h.mul_row(&film.gamma)?.add_row(&film.beta)
}

/// Invert the affine map: `(z − β) / γ`.
pub fn unalign_features(z: &Tensor, film: &FiLMParams) -> Result<Tensor> {
    let centered = z.sub(&film.beta)?;
    let inv = Tensor::from_raw(
        film.gamma.shape().to_vec(),
        film.gamma.data().iter().map(|&g| 1.0 / g).collect(),
    );
    centered.mul(&inv)
}

/// Shared trainable label prototypes indexed by graph-local label id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBase {
    pub rows: Tensor, // L_max × d
}

impl LabelBase {
    /// Rows drawn `N(0, I_d)`.
    pub fn init(l_max: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = (0..l_max * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Self { rows: Tensor::from_raw(vec![l_max, d], data) }
    }

    pub fn l_max(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    /// One-hot selector matrix picking `ids` rows; keeps gradients flowing to
    /// the base on a tape.
    pub fn selector(&self, ids: &[usize]) -> Result<Tensor> {
        let mut sel = Tensor::zeros(&[ids.len(), self.l_max()]);
        for (r, &id) in ids.iter().enumerate() {
            if id >= self.l_max() {
                return Err(Error::Config(format!(
                    "label id {} exceeds the label base capacity {}",
                    id,
                    self.l_max()
                )));
            }
            sel.data_mut()[r * self.l_max() + id] = 1.0;
        }
        Ok(sel)
    }
}

/// Domain-specific label prototypes: row `i` is `γ ⊙ E_{ids[i]} + β`.
pub fn align_labels(ids: &[usize], base: &LabelBase, film: &FiLMParams) -> Result<Tensor> {
    let selected = base.selector(ids)?.matmul(&base.rows)?;
    align_feature_rows(&selected, film)
}

/// Product of the spectral norms of the generator's weight matrices, with the
/// two output heads stacked. Relu and softplus are 1-Lipschitz, so this bounds
/// the `R^{d_e} → R^{2d}` map; the testable inequality is
/// `‖Δγ‖ + ‖Δβ‖ ≤ √2 · L̂ · ‖Δe‖`.
pub fn lipschitz_bound(gen: &FiLMGenerator) -> Result<f64> {
    let d = gen.output_dim();
    let hidden = gen.w_scale.shape()[1];
    let mut stacked = Tensor::zeros(&[2 * d, hidden]);
    stacked.data_mut()[..d * hidden].copy_from_slice(gen.w_scale.data());
    stacked.data_mut()[d * hidden..].copy_from_slice(gen.w_shift.data());
    Ok(spectral_norm(&gen.w_hidden)? * spectral_norm(&stacked)?)
}
