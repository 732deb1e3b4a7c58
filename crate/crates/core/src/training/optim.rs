use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup to `base`, then a half-cosine decay reaching 0 at `total`.
/// Steps at or past `total` get 0.
pub fn lr_schedule(step: u64, base: f64, warmup: u64, total: u64) -> f64 {
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    base * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, rate: f64, hyper: AdamHyper) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient element {i} is {}", grads[i])));
    }
    state.t += 1;
    let AdamHyper { beta1, beta2, eps } = hyper;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_boundaries() {
        let (base, w, t) = (3e-5, 500, 20_000);
        assert_eq!(lr_schedule(0, base, w, t), 0.0);
        assert_eq!(lr_schedule(w, base, w, t), base);
        assert!((lr_schedule((w + t) / 2, base, w, t) - base / 2.0).abs() <= 1e-12);
        assert_eq!(lr_schedule(t, base, w, t), 0.0);
        assert_eq!(lr_schedule(t + 10, base, w, t), 0.0);
        assert!((lr_schedule(250, base, w, t) - base / 2.0).abs() <= 1e-18);
    }

    #[test]
    fn schedule_continuous_at_warmup() {
        let (base, w, t) = (1.0, 1_000_000, 2_000_000_000);
        let left = lr_schedule(w - 1, base, w, t);
        let right = lr_schedule(w + 1, base, w, t);
        assert!((left - base).abs() <= 1.0 / w as f64 + 1e-12);
        assert!((right - base).abs() <= 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, AdamHyper::default()).unwrap();
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_rate() {
        let h = AdamHyper::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.01, h).unwrap();
        assert!((p[0] + 0.01 / (1.0 + h.eps)).abs() <= 1e-15);
    }

    #[test]
    fn two_steps_against_scripted_oracle() {
        let h = AdamHyper {
            beta1: 0.8,
            beta2: 0.95,
            eps: 1e-6,
        };
        let (g, rate) = (0.37, 0.05);
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[g], &mut s, rate, h).unwrap();
        adam_step(&mut p, &[g], &mut s, rate, h).unwrap();
        let mut expect = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = h.beta1 * m + (1.0 - h.beta1) * g;
            v = h.beta2 * v + (1.0 - h.beta2) * g * g;
            let mh = m / (1.0 - h.beta1.powi(t));
            let vh = v / (1.0 - h.beta2.powi(t));
            expect -= rate * mh / (vh.sqrt() + h.eps);
        }
        assert!((p[0] - expect).abs() <= 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        let err = adam_step(&mut p, &[0.0, f64::NAN, 1.0], &mut s, 0.1, AdamHyper::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(s.t, 0);
    }
}
