//! Dense 64-bit tensors and the pure forward kernels.
//!
//! Every op here is the single source of truth for its forward semantics;
//! the tape records the same calls and adds the reverse pass.

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Build a tensor, validating the shape/data contract and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                detail: format!("shape {:?} implies {} values, got {}", shape, numel(&shape), data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite entry in tensor input".into()));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for op results; skips the finiteness scan.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_raw(shape.to_vec(), vec![0.0; numel(shape)])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self::from_raw(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(vec![1], vec![value])
    }

    /// Identity-like one-hot selector matrix with `rows×cols`, ones on the diagonal.
    pub fn eye_select(rows: usize, cols: usize) -> Self {
        let mut t = Self::zeros(&[rows, cols]);
        for i in 0..rows.min(cols) {
            t.data[i * cols + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2-D accessor used throughout; panics on rank mismatch in debug builds.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Extract rows `idx` of a 2-D tensor into a new `|idx|×cols` tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        self.expect_rank("select_rows", 2)?;
        let c = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.shape[0] {
                return Err(Error::Input(format!("row index {} out of range {}", i, self.shape[0])));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor::from_raw(vec![idx.len(), c], data))
    }

    /// Same data, new shape (metadata only).
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if numel(&shape) != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        Ok(Tensor::from_raw(shape, self.data.clone()))
    }

    fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::Dimension {
                op,
                detail: format!("expected rank {}, got shape {:?}", rank, self.shape),
            });
        }
        Ok(())
    }

    // ---- elementwise and broadcast ops ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "mul",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    /// Add a row vector to every row of a 2-D tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        self.broadcast_row("add_row", row, |a, b| a + b)
    }

    /// Multiply every row of a 2-D tensor by a row vector.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        self.broadcast_row("mul_row", row, |a, b| a * b)
    }

    fn broadcast_row(&self, op: &'static str, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_rank(op, 2)?;
        if row.shape.len() != 1 || row.shape[0] != self.shape[1] {
            return Err(Error::Dimension {
                op,
                detail: format!("matrix {:?} vs row {:?}", self.shape, row.shape),
            });
        }
        let c = self.shape[1];
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.shape[0] {
            for j in 0..c {
                data.push(f(self.data[r * c + j], row.data[j]));
            }
        }
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|v| v * s).collect())
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    // ---- activations ----

    pub fn relu(&self) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| v.max(0.0)).collect())
    }

    pub fn softplus(&self) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| softplus(v)).collect())
    }

    /// Softmax over the last axis of a 1-D or 2-D tensor.
    pub fn softmax(&self) -> Result<Tensor> {
        let (rows, cols) = match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => {
                return Err(Error::Dimension {
                    op: "softmax",
                    detail: format!("expected rank 1 or 2, got {:?}", self.shape),
                })
            }
        };
        if cols == 0 {
            return Err(Error::Dimension { op: "softmax", detail: "empty axis".into() });
        }
        let mut data = vec![0.0; self.data.len()];
        for r in 0..rows {
            softmax_row(&self.data[r * cols..(r + 1) * cols], &mut data[r * cols..(r + 1) * cols]);
        }
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    // ---- contractions ----

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_rank("matmul", 2)?;
        other.expect_rank("matmul", 2)?;
        let (n, k) = (self.shape[0], self.shape[1]);
        let (k2, m) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape, other.shape),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * m..(p + 1) * m];
                for j in 0..m {
                    o_row[j] += a * b_row[j];
                }
            }
        }
        Ok(Tensor::from_raw(vec![n, m], out))
    }

    /// Pure utility transpose (not a tape op).
    pub fn transpose(&self) -> Result<Tensor> {
        self.expect_rank("transpose", 2)?;
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor::from_raw(vec![m, n], out))
    }

    // ---- reductions ----

    pub fn mean(&self) -> Result<Tensor> {
        if self.data.is_empty() {
            return Err(Error::Dimension { op: "mean", detail: "empty tensor".into() });
        }
        let s: f64 = self.data.iter().sum();
        Ok(Tensor::scalar(s / self.data.len() as f64))
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "dot",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mean cross-entropy between row logits and integer targets.
    pub fn cross_entropy_with_logits(&self, targets: &[usize]) -> Result<Tensor> {
        self.expect_rank("cross_entropy_with_logits", 2)?;
        let (n, c) = (self.shape[0], self.shape[1]);
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy_with_logits",
                detail: format!("{} logit rows vs {} targets", n, targets.len()),
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Input(format!("target class {} out of range {}", t, c)));
        }
        let mut total = 0.0;
        for r in 0..n {
            let row = &self.data[r * c..(r + 1) * c];
            total += log_sum_exp(row) - row[targets[r]];
        }
        Ok(Tensor::scalar(total / n as f64))
    }

    /// 2-D convolution with valid padding and channel bias.
    ///
    /// `self`: `[c_in, h, w]`, `kernel`: `[c_out, c_in, kh, kw]`, `bias`: `[c_out]`.
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        self.expect_rank("conv2d", 3)?;
        kernel.expect_rank("conv2d", 4)?;
        bias.expect_rank("conv2d", 1)?;
        let (c_in, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let (c_out, kc, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
        if kc != c_in || bias.shape[0] != c_out {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("input {:?}, kernel {:?}, bias {:?}", self.shape, kernel.shape, bias.shape),
            });
        }
        if stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        if h < kh || w < kw {
            return Err(Error::Dimension {
                op: "conv2d",
                detail: format!("input {}x{} smaller than kernel {}x{}", h, w, kh, kw),
            });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = vec![0.0; c_out * oh * ow];
        for o in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.data[o];
                    for c in 0..c_in {
                        for u in 0..kh {
                            for v in 0..kw {
                                let iv = self.data[c * h * w + (i * stride + u) * w + (j * stride + v)];
                                let kv = kernel.data[((o * c_in + c) * kh + u) * kw + v];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[(o * oh + i) * ow + j] = acc;
                }
            }
        }
        Ok(Tensor::from_raw(vec![c_out, oh, ow], out))
    }
}

/// Single-query scaled dot-product attention.
///
/// `query`: `[d]`, `keys`/`values`: `[n, d]`; returns the attended `[d]` vector
/// together with the attention weights.
pub fn attention_single_query(
    query: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    scale: f64,
) -> Result<(Tensor, Vec<f64>)> {
    if query.shape().len() != 1 {
        return Err(Error::Dimension {
            op: "attention",
            detail: format!("query must be rank 1, got {:?}", query.shape()),
        });
    }
    if keys.shape().len() != 2 || values.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "attention",
            detail: format!("keys {:?} / values {:?} must be rank 2", keys.shape(), values.shape()),
        });
    }
    let d = query.shape()[0];
    let n = keys.shape()[0];
    if keys.shape()[1] != d || values.shape()[0] != n {
        return Err(Error::Dimension {
            op: "attention",
            detail: format!("query [{}], keys {:?}, values {:?}", d, keys.shape(), values.shape()),
        });
    }
    if n == 0 {
        return Err(Error::Input("attention over empty key set".into()));
    }
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..d {
            acc += query.data()[j] * keys.at(i, j);
        }
        logits[i] = acc * scale;
    }
    let mut weights = vec![0.0; n];
    softmax_row(&logits, &mut weights);
    let dv = values.shape()[1];
    let mut out = vec![0.0; dv];
    for i in 0..n {
        for j in 0..dv {
            out[j] += weights[i] * values.at(i, j);
        }
    }
    Ok((Tensor::from_raw(vec![dv], out), weights))
}

/// Numerically stable softplus ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(input: &[f64], out: &mut [f64]) {
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(input) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
