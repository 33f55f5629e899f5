//! Bias-corrected Adam over an ordered collection of parameter matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// An ordered list of tensors. Parameters and their gradients must list
/// tensors in the same order with the same shapes.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Matrix>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
}

impl ParamSet for Vec<Matrix> {
    fn tensors(&self) -> Vec<&Matrix> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the global gradient norm down to this value when exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

pub fn adam_init<P: ParamSet + ?Sized>(params: &P) -> AdamState {
    let zeros: Vec<Matrix> = params.tensors().into_iter().map(Matrix::zeros_like).collect();
    AdamState {
        m: zeros.clone(),
        v: zeros,
        t: 0,
    }
}

fn global_norm(grads: &[&Matrix]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// One update: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `θ ← θ − lr · m̂ / (√v̂ + ε)` with `m̂ = m / (1−β₁ᵗ)`, `v̂ = v / (1−β₂ᵗ)`.
pub fn adam_step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
    params: &mut P,
    grads: &G,
    state: &mut AdamState,
    h: &AdamHyper,
) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Argument(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), (m, v)) in params.iter().zip(&grads).zip(state.m.iter().zip(&state.v)) {
        for other in [g.shape(), m.shape(), v.shape()] {
            if p.shape() != other {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: other,
                });
            }
        }
    }
    let clip_scale = match h.clip_norm {
        Some(max) => {
            let norm = global_norm(&grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g.data()[i] * clip_scale;
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_uniform, Rng};

    fn scalar(v: f64) -> Vec<Matrix> {
        vec![Matrix::column(vec![v])]
    }

    #[test]
    fn init_mirrors_shapes_with_zeros() {
        let params = vec![Matrix::zeros(2, 3), Matrix::zeros(4, 1)];
        let s = adam_init(&params);
        assert_eq!(s.t, 0);
        for (m, p) in s.m.iter().zip(&params) {
            assert_eq!(m.shape(), p.shape());
            assert!(m.data().iter().all(|&x| x == 0.0));
        }
        assert_eq!(s.m, s.v);
    }

    #[test]
    fn zero_gradient_step_leaves_params() {
        let mut params = vec![rng_uniform(&mut Rng::new(1), 3, 3, 1.0).unwrap()];
        let before = params.clone();
        let mut s = adam_init(&params);
        let zero = vec![Matrix::zeros(3, 3)];
        adam_step(&mut params, &zero, &mut s, &AdamHyper::default()).unwrap();
        assert_eq!(params, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let h = AdamHyper::default();
        let mut p = scalar(0.0);
        let mut s = adam_init(&p);
        adam_step(&mut p, &scalar(1.0), &mut s, &h).unwrap();
        let expect = h.lr * 1.0 / (1.0 + h.eps);
        assert!((p[0].data()[0] + expect).abs() < 1e-15);
    }

    #[test]
    fn sign_flip_flips_update() {
        let h = AdamHyper::default();
        let g = vec![rng_uniform(&mut Rng::new(2), 5, 1, 1.0).unwrap()];
        let neg = vec![g[0].scale(-1.0)];
        let (mut a, mut b) = (vec![Matrix::zeros(5, 1)], vec![Matrix::zeros(5, 1)]);
        let (mut sa, mut sb) = (adam_init(&a), adam_init(&b));
        for _ in 0..5 {
            adam_step(&mut a, &g, &mut sa, &h).unwrap();
            adam_step(&mut b, &neg, &mut sb, &h).unwrap();
        }
        for (x, y) in a[0].data().iter().zip(b[0].data()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn quadratic_converges_monotonically() {
        let h = AdamHyper::default();
        let mut theta = scalar(1.0);
        let mut s = adam_init(&theta);
        let mut prev = 1.0f64;
        let mut reached = None;
        for step in 1..=5000 {
            let g = theta.clone();
            adam_step(&mut theta, &g, &mut s, &h).unwrap();
            let cur = theta[0].data()[0].abs();
            if reached.is_none() {
                assert!(cur < prev, "step {step}: {cur} >= {prev}");
                if cur < 1e-3 {
                    reached = Some(step);
                }
            }
            prev = cur;
        }
        assert!(reached.is_some(), "|theta| = {prev}");
    }

    #[test]
    fn deterministic_over_ten_steps() {
        let run = || {
            let mut rng = Rng::new(33);
            let mut p = vec![rng_uniform(&mut rng, 4, 4, 1.0).unwrap()];
            let mut s = adam_init(&p);
            for _ in 0..10 {
                let g = vec![rng_uniform(&mut rng, 4, 4, 1.0).unwrap()];
                adam_step(&mut p, &g, &mut s, &AdamHyper::default()).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Matrix::zeros(2, 2)];
        let mut s = adam_init(&p);
        let g = vec![Matrix::zeros(2, 1)];
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &AdamHyper::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn clipping_bounds_gradient_norm() {
        let h = AdamHyper {
            clip_norm: Some(1.0),
            beta1: 0.0,
            beta2: 0.0,
            ..AdamHyper::default()
        };
        // With beta1 = beta2 = 0 the step is lr * g / (|g| + eps): clipping
        // changes nothing about the magnitude, only that v stays bounded.
        let mut p = vec![Matrix::zeros(2, 1)];
        let mut s = adam_init(&p);
        adam_step(&mut p, &vec![Matrix::column(vec![30.0, 40.0])], &mut s, &h).unwrap();
        assert!((s.v[0].data()[0] - 0.36).abs() < 1e-12);
        assert!((s.v[0].data()[1] - 0.64).abs() < 1e-12);
    }
}
