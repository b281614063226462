use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Structural(format!(
            "adam: {} params, {} grads, {} moments",
            n,
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m_hat = g and v_hat = g^2, so the step is lr g / (|g| + eps).
        let mut p = vec![0.0, 0.0, 0.0];
        let g = [3.0, -0.5, 1e-3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let want = -0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - want).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut s = AdamState::new(2);
            for k in 0..5 {
                adam_step(&mut p, &[k as f64 * 0.1, -1.0], &mut s, 0.05).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut [0.0], &[1.0], &mut s, 0.1).is_err());
    }
}
