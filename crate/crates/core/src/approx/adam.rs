use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer over a flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Descends along `grads`. A step with any non-finite gradient is
    /// rejected and leaves both parameters and moments untouched.
    pub fn step<F: Real>(&mut self, params: &mut [F], grads: &[F]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state for {} parameters given {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} is {}", grads[i])));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = g.f64();
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            *p = F::c(p.f64() - update);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(3, 3e-4);
        let mut p = vec![1.0f32, -2.0, 0.5];
        let before = p.clone();
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is
        // lr * g / (|g| + eps).
        let mut opt = Adam::new(3, 1e-3);
        let g = [0.5f64, -3.0, 1e-2];
        let mut p = vec![0.0f64; 3];
        opt.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-12, "{pi} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut opt = Adam::new(1, 3e-4);
        let mut p = [0.0f32];
        let mut prev = p[0];
        for _ in 0..100 {
            opt.step(&mut p, &[2.0]).unwrap();
            assert!(p[0] < prev);
            prev = p[0];
        }
        assert_eq!(opt.steps(), 100);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = Adam::new(2, 1e-3);
        let mut p = [1.0f32, 1.0];
        assert!(matches!(opt.step(&mut p, &[f32::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
