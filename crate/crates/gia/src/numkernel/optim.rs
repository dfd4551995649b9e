//! Adaptive-moment optimizer with decoupled weight decay.

use crate::error::{Error, Result};
use crate::numkernel::tensor::Tensor;

/// Per-parameter-group optimizer state.
///
/// Weight decay is decoupled: parameters are shrunk by `lr * weight_decay`
/// before the bias-corrected moment update is applied.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the whole parameter group.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                op: "optimizer_step",
                detail: format!(
                    "{} params, {} grads, state holds {}",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::Dimension {
                    op: "optimizer_step",
                    detail: format!(
                        "param {:?}, grad {:?}, moment {:?} at slot {}",
                        p.shape(),
                        g.shape(),
                        self.first_moment[i].shape(),
                        i
                    ),
                });
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let shrink = 1.0 - self.learning_rate * self.weight_decay;
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                *pv *= shrink;
                let gv = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut params = vec![Tensor::new(vec![2], vec![1.5, -0.5]).unwrap()];
        let grads = vec![Tensor::zeros(&[2])];
        let mut state = OptimizerState::new(&params, 0.005, 0.0);
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.5, -0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_params() {
        let mut params = vec![Tensor::new(vec![1], vec![2.0]).unwrap()];
        let grads = vec![Tensor::zeros(&[1])];
        let mut state = OptimizerState::new(&params, 0.005, 0.0005);
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data()[0], 2.0 * (1.0 - 0.005 * 0.0005));
    }

    #[test]
    fn single_scalar_first_step_matches_hand_computation() {
        // p=1, g=1, lr=0.005, wd=0.0005: shrink then unit bias-corrected update.
        let mut params = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
        let grads = vec![Tensor::new(vec![1], vec![1.0]).unwrap()];
        let mut state = OptimizerState::new(&params, 0.005, 0.0005);
        state.step(&mut params, &grads).unwrap();
        let expected = 1.0 * (1.0 - 0.005 * 0.0005) - 0.005 * (1.0 / (1.0 + 1e-8));
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
        assert!((params[0].data()[0] - 0.99500).abs() < 5e-6);
    }

    #[test]
    fn identical_params_and_grads_update_identically() {
        let mut params = vec![
            Tensor::new(vec![2], vec![0.7, 0.7]).unwrap(),
            Tensor::new(vec![2], vec![0.7, 0.7]).unwrap(),
        ];
        let grads = vec![
            Tensor::new(vec![2], vec![-0.3, -0.3]).unwrap(),
            Tensor::new(vec![2], vec![-0.3, -0.3]).unwrap(),
        ];
        let mut state = OptimizerState::new(&params, 0.005, 0.0005);
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0], params[1]);
        assert_eq!(params[0].data()[0], params[0].data()[1]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::zeros(&[2])];
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = OptimizerState::new(&params, 0.005, 0.0);
        assert!(state.step(&mut params, &grads).is_err());
    }
}
