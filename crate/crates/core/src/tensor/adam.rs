use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params / {} grads for {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} with grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                let mhat = *mj / c1;
                let vj = &mut v.data_mut()[j];
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let vhat = *vj / c2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.3, -1.2]);
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        adam.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 0.01;
        let g = [0.5, -2.0, 1e-3];
        let mut p = Tensor::vector(vec![1.0, 1.0, 1.0]);
        let cfg = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, [&p]);
        adam.step(&mut [&mut p], &[Tensor::vector(g.to_vec())]).unwrap();
        for (pj, gj) in p.data().iter().zip(g) {
            // mhat = g, vhat = g^2  =>  step = lr * g / (|g| + eps)
            let expected = 1.0 - lr * gj / (gj.abs() + 1e-8);
            assert!((pj - expected).abs() < 1e-15);
            assert!(((1.0 - pj).abs() - lr).abs() < 1e-7);
        }
    }

    #[test]
    fn second_moment_accumulates() {
        let g = 0.2;
        let mut p = Tensor::vector(vec![0.0]);
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        let grad = Tensor::vector(vec![g]);
        adam.step(&mut [&mut p], std::slice::from_ref(&grad)).unwrap();
        adam.step(&mut [&mut p], &[grad]).unwrap();
        // v2 = (1-b2) g^2 (b2 + 1), m2 = (1-b1) g (b1 + 1)
        let v2 = 0.001 * g * g * (0.999 + 1.0);
        let m2 = 0.1 * g * (0.9 + 1.0);
        assert!((adam.second_moments()[0].data()[0] - v2).abs() < 1e-18);
        assert!((adam.first_moments()[0].data()[0] - m2).abs() < 1e-15);
        assert_eq!(adam.steps(), 2);
        // both bias-corrected estimates equal g and g^2, so each step is ~lr
        assert!((p.data()[0] + 2.0 * 0.005).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![0.0, 1.0]);
        let mut adam = Adam::new(AdamConfig::default(), [&p]);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
    }
}
