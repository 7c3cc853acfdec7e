//! Adam with bias-corrected moment estimates.

use thiserror::Error;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch: {params} parameters, {grads} gradients, state of {state}")]
    Shape { params: usize, grads: usize, state: usize },
    #[error("adam step counter starts at 1")]
    ZeroStep,
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    step_size: f64,
    t: u64,
) -> Result<(), OptimError> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(OptimError::Shape { params: params.len(), grads: grads.len(), state: state.m.len() });
    }
    if t == 0 {
        return Err(OptimError::ZeroStep);
    }
    let c1 = 1.0 - BETA1.powf(t as f64);
    let c2 = 1.0 - BETA2.powf(t as f64);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= step_size * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.1, 1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_step_size() {
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &[0.5, -3.0, 7.0, 1e-3], &mut s, 0.01, 1).unwrap();
        // m̂ = g, v̂ = g², update = lr·g/(|g|+ε)
        for (x, g) in p.iter().zip([0.5f64, -3.0, 7.0, 1e-3]) {
            let want = -0.01 * g / (g.abs() + EPSILON);
            assert!((x - want).abs() < 1e-15);
            assert!((x.abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn two_steps_follow_the_recurrences() {
        let (g1, g2, lr) = (0.3f64, -0.8f64, 0.05);
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[g1], &mut s, lr, 1).unwrap();
        adam_step(&mut p, &[g2], &mut s, lr, 2).unwrap();

        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let x1 = 1.0 - lr * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let x2 = x1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - x2).abs() < 1e-14);
    }

    #[test]
    fn errors() {
        let mut s = AdamState::new(2);
        assert!(matches!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1, 1), Err(OptimError::Shape { .. })));
        assert!(matches!(adam_step(&mut [0.0; 2], &[0.0; 1], &mut s, 0.1, 1), Err(OptimError::Shape { .. })));
        assert_eq!(adam_step(&mut [0.0; 2], &[0.0; 2], &mut s, 0.1, 0), Err(OptimError::ZeroStep));
    }
}
