use super::{predict_x0, NoiseEstimator};
use crate::error::{conform, Error, Result};
use crate::rng::{seeded_standard_normal, RngState};
use crate::scalar::Scalar;
use crate::schedule::BridgeSchedule;
use crate::tensor::Tensor;

/// Reverse sampler settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Number of reverse steps; must equal the bridge length.
    pub steps: usize,
    /// Replaces every noise draw with zero.
    pub deterministic: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 20, deterministic: true }
    }
}

/// One reverse transition `x_t -> x_{t-1}` given the noise estimate.
pub fn reverse_step<T: Scalar>(
    sched: &BridgeSchedule<T>,
    x_t: &Tensor<T>,
    t: usize,
    y0: &Tensor<T>,
    eps_hat: &Tensor<T>,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    let steps = sched.steps();
    if t == 0 || t > steps {
        return Err(Error::Index { index: t, max: steps });
    }
    for other in [y0, eps_hat, noise] {
        if other.shape() != x_t.shape() {
            return Err(conform("reverse_step", x_t.shape(), other.shape()));
        }
    }
    let x_bar = predict_x0(x_t, eps_hat)?;
    if t == 1 {
        return Ok(x_bar);
    }
    let m_prev = sched.m(t - 1);
    let one = T::one();
    let data = if t == steps {
        let sd = sched.sigma(steps - 1).sqrt();
        x_bar
            .data()
            .iter()
            .zip(y0.data())
            .zip(noise.data())
            .map(|((&xb, &y), &z)| (one - m_prev) * xb + m_prev * y + sd * z)
            .collect()
    } else {
        let c = sched.reverse_coefficients(t)?;
        let sd = c.sigma_tilde.sqrt();
        x_t.data()
            .iter()
            .zip(x_bar.data())
            .zip(y0.data())
            .zip(noise.data())
            .map(|(((&x, &xb), &y), &z)| {
                let prior = (one - m_prev) * xb + m_prev * y;
                c.w_x * (x - c.b * y) + c.w_prior * prior + sd * z
            })
            .collect()
    };
    Tensor::new(x_t.shape().to_vec(), data)
}

/// Runs the full reverse chain from `x_T = y0` down to `x̂0`.
///
/// `y0` is a `(B, 1, H, W)` batch; noise is drawn from `rng` unless the
/// sampler is deterministic.
pub fn sample<T: Scalar>(
    theta1: &dyn NoiseEstimator<T>,
    sched: &BridgeSchedule<T>,
    y0: &Tensor<T>,
    sampler: &SamplerConfig,
    rng: &mut RngState,
) -> Result<Tensor<T>> {
    if sampler.steps != sched.steps() {
        return Err(Error::InvalidConfig(format!(
            "sampler uses {} steps but the bridge has T = {}; step skipping is unsupported",
            sampler.steps,
            sched.steps()
        )));
    }
    if y0.rank() == 0 {
        return Err(Error::InvalidShape("sampling needs a batch".into()));
    }
    let batch = y0.shape()[0];
    let mut x = y0.clone();
    for t in (1..=sched.steps()).rev() {
        let eps_hat = theta1.estimate(&x, &vec![t; batch])?;
        let noise = if sampler.deterministic || t == 1 {
            Tensor::zeros(y0.shape())
        } else {
            seeded_standard_normal(rng, y0.shape())?
        };
        x = reverse_step(sched, &x, t, y0, &eps_hat, &noise)?;
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("reverse chain diverged at t = {t}")));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{forward_sample, AnchorOracle};

    #[test]
    fn last_step_is_deterministic_reconstruction() {
        let s = BridgeSchedule::<f64>::new(4).unwrap();
        let x = Tensor::full(&[4], 0.7);
        let out = reverse_step(&s, &x, 1, &Tensor::zeros(&[4]), &Tensor::full(&[4], 0.2), &Tensor::full(&[4], 9.0)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn noise_scale_matches_posterior() {
        let s = BridgeSchedule::<f64>::new(4).unwrap();
        let z = Tensor::zeros(&[1]);
        let one = Tensor::full(&[1], 1.0);
        let a = reverse_step(&s, &z, 2, &z, &z, &z).unwrap();
        let b = reverse_step(&s, &z, 2, &z, &z, &one).unwrap();
        assert!((b.data()[0] - a.data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_stays_on_interpolation_line() {
        let s = BridgeSchedule::<f64>::new(20).unwrap();
        let x0 = Tensor::from_f64(&[2], &[0.2, 0.9]).unwrap();
        let y0 = Tensor::from_f64(&[2], &[0.6, 0.1]).unwrap();
        let z = Tensor::zeros(&[2]);
        for t in 2..20 {
            let xt = forward_sample(&s, &x0, &y0, &[t], &z).unwrap();
            let eps = xt.zip_with(&x0, |a, b| a - b).unwrap();
            let prev = reverse_step(&s, &xt, t, &y0, &eps, &z).unwrap();
            let line = forward_sample(&s, &x0, &y0, &[t - 1], &z).unwrap();
            assert!(prev.max_abs_diff(&line).unwrap() < 1e-12);
        }
    }

    #[test]
    fn step_count_must_match() {
        let s = BridgeSchedule::<f64>::new(20).unwrap();
        let y = Tensor::zeros(&[1, 1, 2, 2]);
        let o = AnchorOracle { anchor: y.clone() };
        let cfg = SamplerConfig { steps: 10, deterministic: true };
        assert!(sample(&o, &s, &y, &cfg, &mut RngState::new(0)).is_err());
        assert!(reverse_step(&s, &y, 0, &y, &y, &y).is_err());
        assert!(reverse_step(&s, &y, 21, &y, &y, &y).is_err());
    }
}
