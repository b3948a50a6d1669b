use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update with decoupled weight decay:
/// `p ← p − lr·(m̂ / (√v̂ + ε) + weight_decay·p)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Parameter(format!(
            "adam shapes differ: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * params[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [0.3, -2.0, 1e-3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, 0.01, 0.0).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let moved = pi - 1.0;
            let expect = -0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((moved - expect).abs() < 1e-15);
            assert!((moved + 0.01 * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_and_decay_leave_parameters() {
        let mut p = vec![0.5, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.0).unwrap();
        }
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn matches_a_scripted_reference() {
        // Reference written in the textbook per-parameter form with explicit
        // powers of the betas and no shared state.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let (lr, wd) = (0.003, 1e-3);
        let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut reference = p.clone();
        let grads: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut s = AdamState::new(n);
        for g in &grads {
            adam_step(&mut p, g, &mut s, lr, wd).unwrap();
        }
        for i in 0..n {
            let (mut m, mut v) = (0.0f64, 0.0f64);
            for (k, g) in grads.iter().enumerate() {
                let t = (k + 1) as f64;
                m = 0.9 * m + 0.1 * g[i];
                v = 0.999 * v + 0.001 * g[i] * g[i];
                let mh = m / (1.0 - 0.9f64.powf(t));
                let vh = v / (1.0 - 0.999f64.powf(t));
                reference[i] = reference[i] - lr * mh / (vh.sqrt() + 1e-8) - lr * wd * reference[i];
            }
        }
        for (a, b) in p.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        assert!(adam_step(&mut p, &[1.0], &mut AdamState::new(2), 0.1, 0.0).is_err());
    }
}
