//! AdamW with decoupled weight decay.

use crate::error::{conform, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros_like(params: &[&Tensor<T>]) -> Self {
        Self {
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

impl AdamW {
    /// Applies one update. `step` is 1-based and drives bias correction.
    ///
    /// Gradients are validated before anything is written, so a rejected
    /// step leaves parameters and moments untouched.
    pub fn step<T: Scalar>(
        &self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        moments: &mut Moments<T>,
        step: u64,
    ) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if step == 0 {
            return Err(Error::InvalidConfig("AdamW step counter is 1-based".into()));
        }
        let n = params.len();
        if grads.len() != n || moments.first.len() != n || moments.second.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{n} parameters but {} gradients and {} moment pairs",
                grads.len(),
                moments.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || moments.first[i].shape() != p.shape() {
                return Err(conform("adamw", p.shape(), g.shape()));
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter #{i} has {} at flat index {pos}; step rejected",
                    g.data()[pos]
                )));
            }
        }

        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let lr = T::lit(self.lr);
        let decay = T::lit(1.0 - self.lr * self.weight_decay);
        let bc1 = T::lit(1.0 - self.beta1.powi(step as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(step as i32));
        let eps = T::lit(self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = moments.first[i].data_mut();
            let v = moments.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
