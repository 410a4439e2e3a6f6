use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub(crate) step: u64,
    pub(crate) first: Vec<Tensor<F>>,
    pub(crate) second: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (first, second) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        AdamState {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn for_params(config: AdamConfig, params: &[Tensor<F>]) -> Self {
        Self::new(config, params.iter().map(Tensor::shape))
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<F>], &[Tensor<F>]) {
        (&self.first, &self.second)
    }

    pub(crate) fn from_parts(
        config: AdamConfig,
        step: u64,
        first: Vec<Tensor<F>>,
        second: Vec<Tensor<F>>,
    ) -> Self {
        AdamState {
            config,
            step,
            first,
            second,
        }
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Shape(format!(
                    "adam tensor {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let one = F::one();
        let bc1 = F::of(1.0 - c.beta1.powi(t));
        let bc2 = F::of(1.0 - c.beta2.powi(t));
        let lr = F::of(c.lr);
        let eps = F::of(c.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                if c.lr != 0.0 {
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
