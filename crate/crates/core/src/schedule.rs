//! Brownian-bridge schedule tables.
//!
//! `m_t = t / T` and `sigma_t = 2 (m_t - m_t^2)`; the per-step transition
//! variance and the reverse posterior variance follow from Gaussian
//! conditioning and are tabulated once.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Precomputed bridge quantities for `t = 0..=T`.
///
/// `sigma_step[t]` and `sigma_tilde[t]` are meaningful for `t >= 1`; index 0
/// holds zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSchedule<T> {
    steps: usize,
    m: Vec<T>,
    sigma: Vec<T>,
    sigma_step: Vec<T>,
    sigma_tilde: Vec<T>,
}

/// Coefficients of one reverse transition `x_t -> x_{t-1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReverseStepCoefficients<T> {
    /// `(1 - m_t) / (1 - m_{t-1})`
    pub a: T,
    /// `m_t - m_{t-1} a`
    pub b: T,
    /// Weight on `x_t - b y0` in the posterior mean.
    pub w_x: T,
    /// Weight on the `t-1` marginal mean.
    pub w_prior: T,
    pub sigma_tilde: T,
}

impl<T: Scalar> BridgeSchedule<T> {
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidConfig(format!("bridge needs T >= 2 steps, got {steps}")));
        }
        let tt = T::lit(steps as f64);
        let two = T::lit(2.0);
        let m: Vec<T> = (0..=steps).map(|t| T::lit(t as f64) / tt).collect();
        let sigma: Vec<T> = m.iter().map(|&mt| two * (mt - mt * mt)).collect();
        let mut sigma_step = vec![T::zero(); steps + 1];
        let mut sigma_tilde = vec![T::zero(); steps + 1];
        for t in 1..=steps {
            let a = (T::one() - m[t]) / (T::one() - m[t - 1]);
            sigma_step[t] = sigma[t] - sigma[t - 1] * a * a;
            sigma_tilde[t] = if t == steps {
                // 0/0 limit: x_T carries no information, so the first reverse
                // step draws from the t = T-1 marginal.
                sigma[steps - 1]
            } else {
                sigma_step[t] * sigma[t - 1] / sigma[t]
            };
        }
        Ok(Self {
            steps,
            m,
            sigma,
            sigma_step,
            sigma_tilde,
        })
    }

    /// Number of bridge steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::Index {
                index: t,
                max: self.steps,
            });
        }
        Ok(())
    }

    /// `(m_t, sigma_t)`.
    pub fn marginal(&self, t: usize) -> Result<(T, T)> {
        self.check(t)?;
        Ok((self.m[t], self.sigma[t]))
    }

    pub fn m(&self, t: usize) -> T {
        self.m[t]
    }

    pub fn sigma(&self, t: usize) -> T {
        self.sigma[t]
    }

    pub fn sigma_step(&self, t: usize) -> T {
        self.sigma_step[t]
    }

    pub fn sigma_tilde(&self, t: usize) -> T {
        self.sigma_tilde[t]
    }

    /// Coefficients for interior steps `1 <= t <= T-1`.
    pub fn reverse_coefficients(&self, t: usize) -> Result<ReverseStepCoefficients<T>> {
        if t == 0 || t >= self.steps {
            return Err(Error::Index {
                index: t,
                max: self.steps - 1,
            });
        }
        let a = (T::one() - self.m[t]) / (T::one() - self.m[t - 1]);
        let b = self.m[t] - self.m[t - 1] * a;
        Ok(ReverseStepCoefficients {
            a,
            b,
            w_x: a * self.sigma[t - 1] / self.sigma[t],
            w_prior: self.sigma_step[t] / self.sigma[t],
            sigma_tilde: self.sigma_tilde[t],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn t20_endpoints_and_midpoint() {
        let s = BridgeSchedule::<f64>::new(20).unwrap();
        assert_eq!(s.sigma(0), 0.0);
        assert_eq!(s.sigma(20), 0.0);
        assert_eq!(s.sigma(10), 0.5);
        assert_eq!(s.marginal(0).unwrap(), (0.0, 0.0));
        assert_eq!(s.marginal(20).unwrap(), (1.0, 0.0));
        assert_eq!(s.marginal(5).unwrap(), (0.25, 0.375));
        assert!(s.marginal(21).is_err());
    }

    #[test]
    fn t4_hand_values() {
        let s = BridgeSchedule::<f64>::new(4).unwrap();
        assert_eq!(s.m(2), 0.5);
        assert_eq!(s.sigma(2), 0.5);
        assert!((s.sigma_step(2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.sigma_tilde(2) - 0.25).abs() < 1e-15);
        assert_eq!(s.sigma_tilde(1), 0.0);
        assert_eq!(s.sigma_tilde(4), s.sigma(3));
    }

    #[test]
    fn too_few_steps() {
        assert!(BridgeSchedule::<f64>::new(1).is_err());
        assert!(BridgeSchedule::<f64>::new(0).is_err());
    }

    proptest! {
        #[test]
        fn schedule_invariants(steps in 2usize..200) {
            let s = BridgeSchedule::<f64>::new(steps).unwrap();
            prop_assert_eq!(s.m(0), 0.0);
            prop_assert_eq!(s.m(steps), 1.0);
            for t in 1..=steps {
                prop_assert!(s.m(t) > s.m(t - 1));
                prop_assert!((s.sigma(t) - s.sigma(steps - t)).abs() < 1e-15);
            }
            for t in 1..steps {
                prop_assert!(s.sigma(t) > 0.0);
                let c = s.reverse_coefficients(t).unwrap();
                prop_assert!((c.a * c.a * s.sigma(t - 1) + s.sigma_step(t) - s.sigma(t)).abs() < 1e-12);
                prop_assert!((c.w_x * c.a + c.w_prior - 1.0).abs() < 1e-12);
                prop_assert!(s.sigma_tilde(t) <= s.sigma(t - 1) + 1e-15);
                prop_assert!(s.sigma_tilde(t) * c.a * c.a <= s.sigma_step(t) + 1e-15);
                if 2 * t <= steps {
                    prop_assert!(s.sigma_tilde(t) <= s.sigma_step(t) + 1e-15);
                }
            }
        }
    }
}
