//! Built-in verification suites: finite-difference gradient checks for every
//! kernel op, the closed-form fingerprint oracle, and the attention
//! invariants. The `selftest` CLI command and the acceptance tests both run
//! these.

use crate::dpaa::{dpaa_scores, DPAAParams, PromptSet};
use crate::encoder::{fingerprint, fingerprint_closed_form, EncoderInit, PreparedGraph};
use crate::error::Result;
use crate::graphcore::Graph;
use crate::numkernel::{GradTape, SparseMatrix, Tensor, ValueId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// One named check with its worst observed deviation.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {} (worst {:.3e}, tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance
        )
    }
}

fn random_tensor(rng: &mut ChaCha20Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_raw(
        shape.to_vec(),
        (0..shape.iter().product::<usize>())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect(),
    )
}

/// Random tensor with entries bounded away from zero (for relu-like kinks).
fn random_tensor_off_kink(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    Tensor::from_raw(
        shape.to_vec(),
        (0..shape.iter().product::<usize>())
            .map(|_| {
                let v: f64 = rng.sample::<f64, _>(StandardNormal);
                v.signum() * (v.abs() + 0.05)
            })
            .collect(),
    )
}

type Builder = Box<dyn Fn(&mut GradTape, &[ValueId]) -> Result<ValueId>>;

/// Analytic-vs-central-difference comparison for a scalar-valued graph.
fn gradient_deviation(inputs: &[Tensor], build: &Builder) -> Result<f64> {
    let forward = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = GradTape::new();
        let ids: Vec<ValueId> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &ids)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = GradTape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let grads = tape.backward(out, &Tensor::scalar(1.0))?;

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (slot, input) in inputs.iter().enumerate() {
        let analytic = grads.get(ids[slot])?;
        for entry in 0..input.numel() {
            let mut work: Vec<Tensor> = inputs.to_vec();
            work[slot].data_mut()[entry] += h;
            let plus = forward(&work)?;
            work[slot].data_mut()[entry] -= 2.0 * h;
            let minus = forward(&work)?;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic.data()[entry];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    Ok(worst)
}

fn run_op_check(
    name: &str,
    instances: usize,
    tolerance: f64,
    mut make: impl FnMut(&mut ChaCha20Rng) -> (Vec<Tensor>, Builder),
) -> Result<CheckOutcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x5EED ^ name.len() as u64);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (inputs, build) = make(&mut rng);
        worst = worst.max(gradient_deviation(&inputs, &build)?);
    }
    Ok(CheckOutcome { name: format!("gradient: {}", name), passed: worst <= tolerance, worst, tolerance })
}

/// Finite-difference checks over every op kind, ≥ `instances` random
/// instances each, relative tolerance 1e-4.
pub fn gradient_suite(instances: usize) -> Result<Vec<CheckOutcome>> {
    let tol = 1e-4;
    let mut out = Vec::new();

    out.push(run_op_check("matmul", instances, tol, |rng| {
        let a = random_tensor(rng, &[3, 4], 1.0);
        let b = random_tensor(rng, &[4, 2], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let m = tape.matmul(ids[0], ids[1])?;
            tape.mean(m)
        });
        (vec![a, b], build)
    })?);

    out.push(run_op_check("sparse_matmul", instances, tol, |rng| {
        let mut entries = vec![(0, 0, 1.0)]; // never empty
        for r in 0..4 {
            for c in 0..4 {
                if (r, c) != (0, 0) && rng.gen::<f64>() < 0.5 {
                    entries.push((r, c, rng.sample::<f64, _>(StandardNormal)));
                }
            }
        }
        let sparse = SparseMatrix::from_triplets(4, 4, entries).unwrap();
        let x = random_tensor(rng, &[4, 3], 1.0);
        let build: Builder = Box::new(move |tape, ids| {
            let y = tape.sparse_matmul(&sparse, ids[0])?;
            tape.mean(y)
        });
        (vec![x], build)
    })?);

    out.push(run_op_check("add", instances, tol, |rng| {
        let a = random_tensor(rng, &[3, 3], 1.0);
        let b = random_tensor(rng, &[3, 3], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.add(ids[0], ids[1])?;
            tape.mean(y)
        });
        (vec![a, b], build)
    })?);

    out.push(run_op_check("mul", instances, tol, |rng| {
        let a = random_tensor(rng, &[3, 3], 1.0);
        let b = random_tensor(rng, &[3, 3], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.mul(ids[0], ids[1])?;
            tape.mean(y)
        });
        (vec![a, b], build)
    })?);

    out.push(run_op_check("add_row", instances, tol, |rng| {
        let m = random_tensor(rng, &[4, 3], 1.0);
        let r = random_tensor(rng, &[3], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.add_row(ids[0], ids[1])?;
            let s = tape.softmax(y)?;
            tape.mean(s)
        });
        (vec![m, r], build)
    })?);

    out.push(run_op_check("mul_row", instances, tol, |rng| {
        let m = random_tensor(rng, &[4, 3], 1.0);
        let r = random_tensor(rng, &[3], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.mul_row(ids[0], ids[1])?;
            let s = tape.softmax(y)?;
            tape.mean(s)
        });
        (vec![m, r], build)
    })?);

    out.push(run_op_check("relu", instances, tol, |rng| {
        let x = random_tensor_off_kink(rng, &[4, 4]);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.relu(ids[0])?;
            tape.mean(y)
        });
        (vec![x], build)
    })?);

    out.push(run_op_check("softplus", instances, tol, |rng| {
        let x = random_tensor(rng, &[4, 4], 2.0);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.softplus(ids[0])?;
            tape.mean(y)
        });
        (vec![x], build)
    })?);

    out.push(run_op_check("softmax", instances, tol, |rng| {
        let x = random_tensor(rng, &[3, 5], 1.5);
        let w = random_tensor(rng, &[3, 5], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let s = tape.softmax(ids[0])?;
            // Weighted sum keeps the check sensitive to off-diagonal terms.
            let y = tape.mul(s, ids[1])?;
            tape.mean(y)
        });
        (vec![x, w], build)
    })?);

    out.push(run_op_check("conv2d", instances, tol, |rng| {
        let x = random_tensor(rng, &[2, 6, 6], 1.0);
        let k = random_tensor(rng, &[3, 2, 3, 3], 0.5);
        let b = random_tensor(rng, &[3], 0.5);
        let build: Builder = Box::new(|tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], ids[2], 2)?;
            tape.mean(y)
        });
        (vec![x, k, b], build)
    })?);

    out.push(run_op_check("flatten", instances, tol, |rng| {
        let x = random_tensor(rng, &[2, 3, 2], 1.0);
        let w = random_tensor(rng, &[12], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let f = tape.flatten(ids[0])?;
            let y = tape.mul(f, ids[1])?;
            tape.mean(y)
        });
        (vec![x, w], build)
    })?);

    out.push(run_op_check("mean", instances, tol, |rng| {
        let x = random_tensor(rng, &[5, 2], 1.0);
        let build: Builder = Box::new(|tape, ids| tape.mean(ids[0]));
        (vec![x], build)
    })?);

    out.push(run_op_check("cross_entropy_with_logits", instances, tol, |rng| {
        let x = random_tensor(rng, &[4, 3], 1.5);
        let targets: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
        let build: Builder = Box::new(move |tape, ids| tape.cross_entropy_with_logits(ids[0], &targets));
        (vec![x], build)
    })?);

    out.push(run_op_check("attention", instances, tol, |rng| {
        let q = random_tensor(rng, &[4], 1.0);
        let k = random_tensor(rng, &[5, 4], 1.0);
        let v = random_tensor(rng, &[5, 4], 1.0);
        let w = random_tensor(rng, &[4], 1.0);
        let build: Builder = Box::new(|tape, ids| {
            let a = tape.attention(ids[0], ids[1], ids[2], 0.5)?;
            let y = tape.mul(a, ids[3])?;
            tape.mean(y)
        });
        (vec![q, k, v, w], build)
    })?);

    out.push(run_op_check("matmul+relu+softmax_ce composite", instances, tol, |rng| {
        let x = random_tensor_off_kink(rng, &[3, 4]);
        let w1 = random_tensor(rng, &[4, 4], 0.7);
        let w2 = random_tensor(rng, &[4, 3], 0.7);
        let targets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..3)).collect();
        let build: Builder = Box::new(move |tape, ids| {
            let h = tape.matmul(ids[0], ids[1])?;
            let h = tape.relu(h)?;
            let logits = tape.matmul(h, ids[2])?;
            tape.cross_entropy_with_logits(logits, &targets)
        });
        (vec![x, w1, w2], build)
    })?);

    Ok(out)
}

fn random_graph(rng: &mut ChaCha20Rng, n: usize, d: usize, classes: usize) -> Graph {
    let feats = random_tensor(rng, &[n, d], 1.0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < 0.35 {
                edges.push((u, v));
            }
        }
    }
    let labels: Vec<i64> = (0..n).map(|v| (v % classes) as i64).collect();
    Graph::new(n, edges, feats, labels, classes).unwrap()
}

/// Autodiff fingerprint vs closed-form gradient on fully labeled graphs.
pub fn lemma_oracle_suite(graphs: usize) -> Result<Vec<CheckOutcome>> {
    let tol = 1e-10;
    let mut rng = ChaCha20Rng::seed_from_u64(0xFACE);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let n = rng.gen_range(4..12);
        let d_o = rng.gen_range(3..8);
        let classes = rng.gen_range(2..4);
        let d = rng.gen_range(classes..9);
        let graph = random_graph(&mut rng, n, d_o, classes);
        let prepared = PreparedGraph::new(graph);
        let theta0 = EncoderInit::from_seed(d_o, d, rng.gen());
        let labels: Vec<usize> = prepared.graph().labels().iter().map(|&l| l as usize).collect();
        let auto = fingerprint(&prepared, &prepared.graph().labeled_items(), theta0.weights(), 0.01)?;
        let closed = fingerprint_closed_form(&prepared, &labels, theta0.weights(), 0.01)?;
        for (a, b) in auto.delta.data().iter().zip(closed.delta.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(vec![CheckOutcome {
        name: format!("fingerprint closed form vs autodiff ({} graphs)", graphs),
        passed: worst <= tol,
        worst,
        tolerance: tol,
    }])
}

/// Attention invariants: support-order permutation, prompt isolation,
/// temperature argmax stability, softmax row sums.
pub fn dpaa_invariant_suite() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xD9AA);
    let d = 8;
    let params = DPAAParams::init(d, 1, 1, true, rng.gen())?;
    let mut out = Vec::new();

    // Support permutation invariance.
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mk = 6;
        let m = 3;
        let support = random_tensor(&mut rng, &[mk, d], 1.0);
        let classes: Vec<usize> = (0..mk).map(|i| i % m).collect();
        let protos = random_tensor(&mut rng, &[m, d], 1.0);
        let prompt = PromptSet::new(support.clone(), classes.clone(), protos.clone(), (0..m).collect())?;
        let z_q = random_tensor(&mut rng, &[d], 1.0);
        let base = dpaa_scores(&z_q, &prompt, &params)?;

        let mut order: Vec<usize> = (0..mk).collect();
        for i in (1..mk).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut perm_feat = Tensor::zeros(&[mk, d]);
        let mut perm_classes = vec![0usize; mk];
        for (dst, &src) in order.iter().enumerate() {
            perm_classes[dst] = classes[src];
            for j in 0..d {
                perm_feat.data_mut()[dst * d + j] = support.at(src, j);
            }
        }
        let permuted = PromptSet::new(perm_feat, perm_classes, protos, (0..m).collect())?;
        let scores = dpaa_scores(&z_q, &permuted, &params)?;
        for (a, b) in base.data().iter().zip(scores.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    out.push(CheckOutcome {
        name: "dpaa: support-order permutation invariance".into(),
        passed: worst <= 1e-12,
        worst,
        tolerance: 1e-12,
    });

    // Prompt isolation: evaluating another query cannot change this one.
    let mk = 6;
    let m = 3;
    let prompt = PromptSet::new(
        random_tensor(&mut rng, &[mk, d], 1.0),
        (0..mk).map(|i| i % m).collect(),
        random_tensor(&mut rng, &[m, d], 1.0),
        (0..m).collect(),
    )?;
    let q1 = random_tensor(&mut rng, &[d], 1.0);
    let q2 = random_tensor(&mut rng, &[d], 1.0);
    let alone = dpaa_scores(&q1, &prompt, &params)?;
    let _ = dpaa_scores(&q2, &prompt, &params)?;
    let together = dpaa_scores(&q1, &prompt, &params)?;
    let isolated = alone.data() == together.data();
    out.push(CheckOutcome {
        name: "dpaa: prompt isolation is bitwise".into(),
        passed: isolated,
        worst: if isolated { 0.0 } else { 1.0 },
        tolerance: 0.0,
    });

    // Temperature rescaling never moves an argmax.
    let mut violations = 0.0f64;
    for _ in 0..100 {
        let s = random_tensor(&mut rng, &[5], 2.0);
        let base = s
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        for tau in [0.05, 0.2, 0.5, 1.0, 5.0] {
            let sm = s.scale(1.0 / tau).softmax()?;
            let am = sm
                .data()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if am != base {
                violations += 1.0;
            }
        }
    }
    out.push(CheckOutcome {
        name: "dpaa: temperature argmax invariance".into(),
        passed: violations == 0.0,
        worst: violations,
        tolerance: 0.0,
    });

    // Softmax rows sum to one.
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_tensor(&mut rng, &[4, 6], 30.0);
        let s = x.softmax()?;
        for r in 0..4 {
            worst = worst.max((s.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(CheckOutcome {
        name: "dpaa: softmax rows sum to one".into(),
        passed: worst <= 1e-12,
        worst,
        tolerance: 1e-12,
    });

    Ok(out)
}

/// Every suite, as the `selftest` command runs them.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    let mut out = gradient_suite(20)?;
    out.extend(lemma_oracle_suite(10)?);
    out.extend(dpaa_invariant_suite()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for outcome in run_all().unwrap() {
            assert!(outcome.passed, "{}", outcome.line());
        }
    }
}
