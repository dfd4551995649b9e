//! Reverse-mode autodiff over a recorded op tape.
//!
//! The tape records each forward op with the value ids it consumed; backward
//! walks the records once in reverse, accumulating gradients additively for
//! shared inputs. Only the op kinds the model architecture needs are here.

use crate::error::{Error, Result};
use crate::numkernel::sparse::SparseMatrix;
use crate::numkernel::tensor::{attention_single_query, sigmoid, Tensor};

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    MatMul(ValueId, ValueId),
    SparseMatMul { matrix: SparseMatrix, dense: ValueId },
    Add(ValueId, ValueId),
    Mul(ValueId, ValueId),
    AddRow { matrix: ValueId, row: ValueId },
    MulRow { matrix: ValueId, row: ValueId },
    Relu(ValueId),
    Softplus(ValueId),
    Softmax(ValueId),
    Conv2d { input: ValueId, kernel: ValueId, bias: ValueId, stride: usize },
    Reshape(ValueId),
    Mean(ValueId),
    CrossEntropyWithLogits { logits: ValueId, targets: Vec<usize> },
    Attention { query: ValueId, keys: ValueId, values: ValueId, scale: f64, weights: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed ops with the inputs needed for backward.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    fn check(&self, id: ValueId, op: &'static str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::State(format!("value id {} unknown to tape in `{}`", id.0, op)));
        }
        Ok(())
    }

    /// Record a constant input.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Record a trainable input; `backward` will report its gradient.
    pub fn param(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn sparse_matmul(&mut self, matrix: &SparseMatrix, dense: ValueId) -> Result<ValueId> {
        self.check(dense, "sparse_matmul")?;
        let out = matrix.matmul(self.value(dense))?;
        Ok(self.push(out, Op::SparseMatMul { matrix: matrix.clone(), dense }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, matrix: ValueId, row: ValueId) -> Result<ValueId> {
        self.check(matrix, "add_row")?;
        self.check(row, "add_row")?;
        let out = self.value(matrix).add_row(self.value(row))?;
        Ok(self.push(out, Op::AddRow { matrix, row }))
    }

    pub fn mul_row(&mut self, matrix: ValueId, row: ValueId) -> Result<ValueId> {
        self.check(matrix, "mul_row")?;
        self.check(row, "mul_row")?;
        let out = self.value(matrix).mul_row(self.value(row))?;
        Ok(self.push(out, Op::MulRow { matrix, row }))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "relu")?;
        let out = self.value(x).relu();
        Ok(self.push(out, Op::Relu(x)))
    }

    pub fn softplus(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "softplus")?;
        let out = self.value(x).softplus();
        Ok(self.push(out, Op::Softplus(x)))
    }

    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "softmax")?;
        let out = self.value(x).softmax()?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn conv2d(&mut self, input: ValueId, kernel: ValueId, bias: ValueId, stride: usize) -> Result<ValueId> {
        self.check(input, "conv2d")?;
        self.check(kernel, "conv2d")?;
        self.check(bias, "conv2d")?;
        let out = self.value(input).conv2d(self.value(kernel), self.value(bias), stride)?;
        Ok(self.push(out, Op::Conv2d { input, kernel, bias, stride }))
    }

    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        self.check(x, "reshape")?;
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn flatten(&mut self, x: ValueId) -> Result<ValueId> {
        let n = self.value(x).numel();
        self.reshape(x, vec![n])
    }

    pub fn mean(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "mean")?;
        let out = self.value(x).mean()?;
        Ok(self.push(out, Op::Mean(x)))
    }

    pub fn cross_entropy_with_logits(&mut self, logits: ValueId, targets: &[usize]) -> Result<ValueId> {
        self.check(logits, "cross_entropy_with_logits")?;
        let out = self.value(logits).cross_entropy_with_logits(targets)?;
        Ok(self.push(out, Op::CrossEntropyWithLogits { logits, targets: targets.to_vec() }))
    }

    pub fn attention(&mut self, query: ValueId, keys: ValueId, values: ValueId, scale: f64) -> Result<ValueId> {
        self.check(query, "attention")?;
        self.check(keys, "attention")?;
        self.check(values, "attention")?;
        let (out, weights) = attention_single_query(self.value(query), self.value(keys), self.value(values), scale)?;
        Ok(self.push(out, Op::Attention { query, keys, values, scale, weights }))
    }

    /// Run the reverse pass from `output`, seeded with `seed`.
    ///
    /// Returns a gradient per trainable leaf; leaves the output does not
    /// depend on get zero tensors.
    pub fn backward(&self, output: ValueId, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward op was recorded".into()));
        }
        self.check(output, "backward")?;
        let out_shape = self.value(output).shape();
        if seed.shape() != out_shape {
            return Err(Error::Dimension {
                op: "backward",
                detail: format!("seed shape {:?} vs output {:?}", seed.shape(), out_shape),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let bt = self.value(*b).transpose()?;
                    let at = self.value(*a).transpose()?;
                    accumulate(&mut grads[a.0], g.matmul(&bt)?);
                    accumulate(&mut grads[b.0], at.matmul(&g)?);
                }
                Op::SparseMatMul { matrix, dense } => {
                    accumulate(&mut grads[dense.0], matrix.transpose().matmul(&g)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads[a.0], g.mul(self.value(*b))?);
                    accumulate(&mut grads[b.0], g.mul(self.value(*a))?);
                }
                Op::AddRow { matrix, row } => {
                    accumulate(&mut grads[row.0], column_sums(&g));
                    accumulate(&mut grads[matrix.0], g);
                }
                Op::MulRow { matrix, row } => {
                    let m = self.value(*matrix);
                    accumulate(&mut grads[row.0], column_sums(&g.mul(m)?));
                    let r = self.value(*row);
                    accumulate(&mut grads[matrix.0], g.mul_row(r)?);
                }
                Op::Relu(x) => {
                    let mask = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Softplus(x) => {
                    let input = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(input.data())
                        .map(|(&gv, &xv)| gv * sigmoid(xv))
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::from_raw(g.shape().to_vec(), data));
                }
                Op::Softmax(x) => {
                    let y = &self.nodes[idx].value;
                    accumulate(&mut grads[x.0], softmax_backward(y, &g));
                }
                Op::Conv2d { input, kernel, bias, stride } => {
                    let (di, dk, db) = conv2d_backward(self.value(*input), self.value(*kernel), &g, *stride);
                    accumulate(&mut grads[input.0], di);
                    accumulate(&mut grads[kernel.0], dk);
                    accumulate(&mut grads[bias.0], db);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads[x.0], g.reshape(shape)?);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel() as f64;
                    let v = g.data()[0] / n;
                    accumulate(&mut grads[x.0], Tensor::filled(self.value(*x).shape(), v));
                }
                Op::CrossEntropyWithLogits { logits, targets } => {
                    let l = self.value(*logits);
                    let sm = l.softmax()?;
                    let (n, c) = (l.shape()[0], l.shape()[1]);
                    let scale = g.data()[0] / n as f64;
                    let mut data = sm.data().to_vec();
                    for (r, &t) in targets.iter().enumerate() {
                        data[r * c + t] -= 1.0;
                    }
                    for v in data.iter_mut() {
                        *v *= scale;
                    }
                    accumulate(&mut grads[logits.0], Tensor::from_raw(vec![n, c], data));
                }
                Op::Attention { query, keys, values, scale, weights } => {
                    let (dq, dk, dv) =
                        attention_backward(self.value(*query), self.value(*keys), self.value(*values), weights, *scale, &g);
                    accumulate(&mut grads[query.0], dq);
                    accumulate(&mut grads[keys.0], dk);
                    accumulate(&mut grads[values.0], dv);
                }
            }
        }

        // Materialize zero gradients for trainable leaves the output ignored.
        let mut out = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                out[idx] = Some(match grads[idx].take() {
                    Some(t) => t,
                    None => Tensor::zeros(node.value.shape()),
                });
            }
        }
        Ok(Gradients { by_node: out })
    }
}

/// Gradients per trainable leaf, indexed by the leaf's `ValueId`.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Result<&Tensor> {
        self.by_node
            .get(id.0)
            .and_then(|g| g.as_ref())
            .ok_or_else(|| Error::State(format!("value id {} is not a trainable leaf", id.0)))
    }

    pub fn take(&mut self, id: ValueId) -> Result<Tensor> {
        self.by_node
            .get_mut(id.0)
            .and_then(|g| g.take())
            .ok_or_else(|| Error::State(format!("value id {} is not a trainable leaf", id.0)))
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(t) => {
            debug_assert_eq!(t.shape(), delta.shape());
            for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let (n, c) = (g.shape()[0], g.shape()[1]);
    let mut out = vec![0.0; c];
    for r in 0..n {
        for j in 0..c {
            out[j] += g.data()[r * c + j];
        }
    }
    Tensor::from_raw(vec![c], out)
}

fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let cols = y.cols();
    let rows = y.numel() / cols;
    let mut out = vec![0.0; y.numel()];
    for r in 0..rows {
        let ys = &y.data()[r * cols..(r + 1) * cols];
        let gs = &g.data()[r * cols..(r + 1) * cols];
        let inner: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
        for j in 0..cols {
            out[r * cols + j] = ys[j] * (gs[j] - inner);
        }
    }
    Tensor::from_raw(y.shape().to_vec(), out)
}

fn conv2d_backward(input: &Tensor, kernel: &Tensor, g: &Tensor, stride: usize) -> (Tensor, Tensor, Tensor) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, _, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let mut di = vec![0.0; input.numel()];
    let mut dk = vec![0.0; kernel.numel()];
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        for i in 0..oh {
            for j in 0..ow {
                let gv = g.data()[(o * oh + i) * ow + j];
                db[o] += gv;
                for c in 0..c_in {
                    for u in 0..kh {
                        for v in 0..kw {
                            let in_idx = c * h * w + (i * stride + u) * w + (j * stride + v);
                            let k_idx = ((o * c_in + c) * kh + u) * kw + v;
                            di[in_idx] += gv * kernel.data()[k_idx];
                            dk[k_idx] += gv * input.data()[in_idx];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_raw(input.shape().to_vec(), di),
        Tensor::from_raw(kernel.shape().to_vec(), dk),
        Tensor::from_raw(vec![c_out], db),
    )
}

fn attention_backward(
    query: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    weights: &[f64],
    scale: f64,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = keys.shape()[0];
    let d = keys.shape()[1];
    let dv_cols = values.shape()[1];
    let mut dv = vec![0.0; values.numel()];
    let mut da = vec![0.0; n];
    for i in 0..n {
        for j in 0..dv_cols {
            dv[i * dv_cols + j] += weights[i] * g.data()[j];
            da[i] += values.at(i, j) * g.data()[j];
        }
    }
    // Softmax backward over the attention logits.
    let inner: f64 = da.iter().zip(weights).map(|(a, w)| a * w).sum();
    let dlogits: Vec<f64> = da.iter().zip(weights).map(|(a, w)| w * (a - inner)).collect();
    let mut dq = vec![0.0; d];
    let mut dk = vec![0.0; keys.numel()];
    for i in 0..n {
        let dl = dlogits[i] * scale;
        for j in 0..d {
            dq[j] += dl * keys.at(i, j);
            dk[i * d + j] += dl * query.data()[j];
        }
    }
    (
        Tensor::from_raw(vec![d], dq),
        Tensor::from_raw(keys.shape().to_vec(), dk),
        Tensor::from_raw(values.shape().to_vec(), dv),
    )
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gradient_is_uniform() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.mean(x).unwrap();
        let grads = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn softplus_gradient_at_zero() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.softplus(x).unwrap();
        let grads = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5]);
    }

    #[test]
    fn unused_trainable_leaf_gets_zero_gradient() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::zeros(&[2, 2]));
        let y = tape.mean(x).unwrap();
        let grads = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_on_empty_tape_is_state_error() {
        let tape = GradTape::new();
        let err = tape.backward(ValueId(0), &Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn seed_shape_mismatch_rejected() {
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::zeros(&[3]));
        let y = tape.relu(x).unwrap();
        let err = tape.backward(y, &Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn cross_entropy_gradient_closed_form() {
        // Single row: gradient must be exactly softmax(logits) - one_hot.
        let mut tape = GradTape::new();
        let logits = Tensor::new(vec![1, 3], vec![0.2, -1.0, 0.7]).unwrap();
        let sm = logits.softmax().unwrap();
        let l = tape.param(logits);
        let loss = tape.cross_entropy_with_logits(l, &[1]).unwrap();
        let grads = tape.backward(loss, &Tensor::scalar(1.0)).unwrap();
        let g = grads.get(l).unwrap();
        assert_eq!(g.data()[0], sm.data()[0]);
        assert_eq!(g.data()[1], sm.data()[1] - 1.0);
        assert_eq!(g.data()[2], sm.data()[2]);
    }

    #[test]
    fn shared_input_gradients_accumulate() {
        // y = mean(x ⊙ x); dy/dx = 2x/n.
        let mut tape = GradTape::new();
        let x = tape.param(Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let y = tape.mean(sq).unwrap();
        let grads = tape.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -2.0]);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let build = || {
            let mut tape = GradTape::new();
            let a = tape.param(Tensor::new(vec![2, 2], vec![0.3, -1.2, 0.55, 2.0]).unwrap());
            let b = tape.leaf(Tensor::new(vec![2, 2], vec![1.5, 0.25, -0.75, 1.0]).unwrap());
            let c = tape.matmul(a, b).unwrap();
            let r = tape.relu(c).unwrap();
            let s = tape.softmax(r).unwrap();
            let m = tape.mean(s).unwrap();
            let g = tape.backward(m, &Tensor::scalar(1.0)).unwrap();
            g.get(a).unwrap().data().to_vec()
        };
        assert_eq!(build(), build());
    }
}
