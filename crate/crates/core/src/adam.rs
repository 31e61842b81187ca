//! Adam with bias correction over a fixed list of named tensors.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::net::{FoldingNet, Params, TENSOR_NAMES};

pub const DEFAULT_LR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// One moment buffer per tensor, shaped like the tensor.
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &Params, lr: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(&shapes, lr)
    }

    /// One update. All gradients are checked before any parameter moves, so a
    /// rejected step leaves parameters and moments untouched.
    pub fn step_tensors(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], names: &[&str]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::SizeMismatch {
                left: self.first.len(),
                right: params.len().min(grads.len()),
            });
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[t].len() {
                return Err(Error::SizeMismatch {
                    left: p.len(),
                    right: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: names.get(t).map_or_else(|| alloc::format!("#{t}"), |n| n.to_string()),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(net: &mut FoldingNet, state: &mut AdamState, grads: &Params) -> Result<()> {
    let g = grads.tensors();
    let mut p = net.params_mut().tensors_mut();
    state.step_tensors(&mut p, &g, &TENSOR_NAMES)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_moves_nothing() {
        let mut x = vec![1.0, -2.0];
        let mut s = AdamState::new(&[2], DEFAULT_LR);
        s.step_tensors(&mut [&mut x], &[&[0.0, 0.0]], &["x"]).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut x = vec![0.0];
        let mut s = AdamState::new(&[1], DEFAULT_LR);
        s.step_tensors(&mut [&mut x], &[&[1.0]], &["x"]).unwrap();
        let expect = -DEFAULT_LR * 1.0 / (1.0 + 1e-8);
        assert!((x[0] - expect).abs() < 1e-15);
        let mut prev = x[0];
        for _ in 0..50 {
            s.step_tensors(&mut [&mut x], &[&[1.0]], &["x"]).unwrap();
            assert!(x[0] < prev);
            prev = x[0];
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let mut s = AdamState::new(&[1, 1], DEFAULT_LR);
        let err = s
            .step_tensors(&mut [&mut a, &mut b], &[&[0.5], &[f64::NAN]], &["alpha", "beta"])
            .unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { tensor: "beta".into() });
        assert_eq!(s.step, 0);
        assert_eq!(a, vec![0.0]);
    }

    #[test]
    fn identical_inputs_identical_steps() {
        let run = || {
            let mut x = vec![0.3, -0.7, 2.0];
            let mut s = AdamState::new(&[3], 0.01);
            for k in 0..5 {
                let g = [k as f64, -1.0, 0.5];
                s.step_tensors(&mut [&mut x], &[&g], &["x"]).unwrap();
            }
            x
        };
        assert_eq!(run(), run());
    }
}
