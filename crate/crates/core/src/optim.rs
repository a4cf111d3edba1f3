//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::dim(
            "adam_step",
            format!(
                "{} params, {} grads, {} states",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(TensorError::dim(
                "adam_step",
                format!(
                    "tensor {i}: param {} grad {} state {}",
                    p.len(),
                    g.len(),
                    state.m[i].len()
                ),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> Tensor {
        Tensor::vector(vec![value])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.3, -1.2]);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&[0.0, 0.0]], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), &[0.3, -1.2]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one_param(1.0);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&[1.0]], &mut st, &AdamConfig::default()).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = -lr / (1 + eps)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - 0.999).abs() < 1e-10);
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        let cfg = AdamConfig::default();
        let g = 0.37;
        let mut p = one_param(2.0);
        let mut st = AdamState::new(&[&p]);
        for _ in 0..2 {
            adam_step(&mut [&mut p], &[&[g]], &mut st, &cfg).unwrap();
        }
        let (mut w, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.001 * mh / (vh.sqrt() + 1e-8);
        }
        assert_eq!(p.data()[0], w);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut st = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &[&[1.0]], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(TensorError::Dimension { .. })));
    }
}
