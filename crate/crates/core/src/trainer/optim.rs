//! Adam with global-norm gradient clipping.

use mgsr_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global L2 norm of the gradient; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::OutOfRange { name, value: v });
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::OutOfRange { name: "eps", value: self.eps });
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::OutOfRange {
                name: "grad_clip",
                value: self.grad_clip,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, lr: f64, shapes: &[&Tensor]) -> Self {
        let zeros = || shapes.iter().map(|t| vec![0.0; t.numel()]).collect::<Vec<_>>();
        Self {
            config,
            lr,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates `params` in place. A `None` gradient leaves that tensor (and
    /// its moment estimates) untouched. Returns the pre-clipping norm.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) -> f64 {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        assert_eq!(params.len(), self.m.len(), "parameter count fixed at construction");
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            self.config.grad_clip / norm
        } else {
            1.0
        };
        self.t += 1;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gk * scale;
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.config.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first Adam step is lr · sign(g)
        let mut p = Tensor::from_slice(&[1.0, -1.0, 0.5]);
        let g = Tensor::from_slice(&[0.3, -0.2, 0.0]);
        let mut adam = Adam::new(AdamConfig { grad_clip: 0.0, ..Default::default() }, 0.1, &[&p]);
        adam.step(&mut [&mut p], &[Some(&g)]);
        let want = [0.9, -0.9, 0.5];
        for (a, b) in p.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn clipping_reports_raw_norm() {
        let mut p = Tensor::from_slice(&[0.0, 0.0]);
        let g = Tensor::from_slice(&[3.0, 4.0]);
        let mut adam = Adam::new(AdamConfig::default(), 0.1, &[&p]);
        assert_eq!(adam.step(&mut [&mut p], &[Some(&g)]), 5.0);
    }

    #[test]
    fn missing_gradient_leaves_parameter() {
        let mut a = Tensor::from_slice(&[1.0]);
        let mut b = Tensor::from_slice(&[2.0]);
        let g = Tensor::from_slice(&[1.0]);
        let mut adam = Adam::new(AdamConfig::default(), 0.1, &[&a, &b]);
        adam.step(&mut [&mut a, &mut b], &[Some(&g), None]);
        assert_ne!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 2.0);
    }
}
