//! Adam update with bias correction.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Result};

/// Per-parameter Adam accumulators.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    /// Fresh state with the standard constants (0.9, 0.999, 1e-8).
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam step: updates moments in place and decrements `param` by
/// `lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::Contract(format!(
            "adam_step shape mismatch: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step as i32);
    let bc2 = 1.0 - state.beta2.powi(state.step as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for i in 0..param.len() {
        let g = grad.data()[i];
        let m = &mut state.m.data_mut()[i];
        *m = b1 * *m + (1.0 - b1) * g;
        let m_hat = *m / bc1;
        let v = &mut state.v.data_mut()[i];
        *v = b2 * *v + (1.0 - b2) * g * g;
        let v_hat = *v / bc2;
        param.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::from_vec(vec![1.5, -0.25]);
        let before = p.clone();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[2]);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With grad 1 and a fresh state: m_hat = 1, v_hat = 1,
        // so the step is lr / (1 + eps).
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[1]);
        adam_step(&mut p, &g, &mut st, 0.001).unwrap();
        let expect = -0.001 / (1.0 + 1e-8);
        assert!((p.item() - expect).abs() < 1e-15);
    }

    #[test]
    fn hundred_constant_steps_match_recurrence() {
        // Independent re-iteration of the closed-form recurrence.
        let lr = 0.001;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut expect = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=100u32 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[1]);
        for _ in 0..100 {
            adam_step(&mut p, &g, &mut st, lr).unwrap();
        }
        assert!((p.item() - expect).abs() < 1e-12);
        // Total decrease is ~0.1: each bias-corrected step is ~lr.
        assert!((p.item() + 0.1).abs() < 1e-6);
    }

    #[test]
    fn lr_zero_is_bit_identical() {
        let mut p = Tensor::from_vec(vec![0.3, -7.25, 1e-9]);
        let before = p.clone();
        let g = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let mut st = AdamState::new(&[3]);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let mut p = Tensor::from_vec(vec![0.0; 3]);
        let g = Tensor::from_vec(vec![0.0; 2]);
        let mut st = AdamState::new(&[3]);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 0.001),
            Err(crate::Error::Contract(_))
        ));
    }
}
