//! Bridge diffusion between fully-sampled and under-sampled images: forward
//! sampling, the twin reconstruction losses, nested self-consistency,
//! training and reverse sampling.

mod sample;
mod train;

pub use sample::{reverse_step, sample, SamplerConfig};
pub use train::{LossRecord, PairedDataset, TimestepMode, TrainerState, TrainingConfig};

use crate::error::{conform, Error, Result};
use crate::scalar::Scalar;
use crate::schedule::BridgeSchedule;
use crate::tensor::{Tape, Tensor, Var};

/// An ε-predictor that records its computation on a tape.
pub trait NoisePredictor<T: Scalar> {
    fn predict(&self, tape: &mut Tape<T>, x_t: Var, t: &[usize]) -> Result<Var>;
}

/// An ε-predictor evaluated outside any training graph.
pub trait NoiseEstimator<T: Scalar> {
    fn estimate(&self, x_t: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>>;
}

/// The analytically perfect predictor for a bridge anchored at `anchor`:
/// `ε̂(x_t) = x_t - anchor`, so `x_t - ε̂` recovers the anchor exactly.
#[derive(Clone, Debug)]
pub struct AnchorOracle<T> {
    pub anchor: Tensor<T>,
}

impl<T: Scalar> NoisePredictor<T> for AnchorOracle<T> {
    fn predict(&self, tape: &mut Tape<T>, x_t: Var, _t: &[usize]) -> Result<Var> {
        let a = tape.constant(self.anchor.clone());
        tape.sub(x_t, a)
    }
}

impl<T: Scalar> NoiseEstimator<T> for AnchorOracle<T> {
    fn estimate(&self, x_t: &Tensor<T>, _t: &[usize]) -> Result<Tensor<T>> {
        x_t.zip_with(&self.anchor, |a, b| a - b)
    }
}

/// Norm applied to every loss residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossNorm {
    /// Mean absolute error.
    #[default]
    L1,
    /// Mean squared error.
    L2,
}

impl LossNorm {
    /// Scalar loss of `a - b` on the tape.
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
        let d = tape.sub(a, b)?;
        let e = match self {
            LossNorm::L1 => tape.abs(d),
            LossNorm::L2 => tape.square(d),
        };
        Ok(tape.mean(e))
    }
}

fn check_steps<T: Scalar>(sched: &BridgeSchedule<T>, t: &[usize]) -> Result<()> {
    match t.iter().find(|&&s| s > sched.steps()) {
        Some(&s) => Err(Error::Index { index: s, max: sched.steps() }),
        None => Ok(()),
    }
}

/// `c0 * a + c1 * b + c2 * e`, with coefficients chosen per sample along the
/// leading axis. A single step applies to the whole tensor.
fn lincomb<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    e: &Tensor<T>,
    t: &[usize],
    coef: impl Fn(usize) -> [T; 3],
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(conform(op, a.shape(), b.shape()));
    }
    if a.shape() != e.shape() {
        return Err(conform(op, a.shape(), e.shape()));
    }
    let chunk = chunk_len(a, t)?;
    let mut out = Vec::with_capacity(a.numel());
    for (i, &s) in t.iter().enumerate() {
        let [ca, cb, ce] = coef(s);
        let r = i * chunk..(i + 1) * chunk;
        out.extend(
            a.data()[r.clone()]
                .iter()
                .zip(&b.data()[r.clone()])
                .zip(&e.data()[r])
                .map(|((&x, &y), &z)| ca * x + cb * y + ce * z),
        );
    }
    Tensor::new(a.shape().to_vec(), out)
}

fn chunk_len<T: Scalar>(x: &Tensor<T>, t: &[usize]) -> Result<usize> {
    if t.len() == 1 {
        return Ok(x.numel());
    }
    if x.rank() == 0 || x.shape()[0] != t.len() {
        return Err(Error::InvalidShape(format!(
            "{} timesteps for a batch of shape {:?}",
            t.len(),
            x.shape()
        )));
    }
    Ok(x.numel() / t.len())
}

/// Per-sample coefficient tensor of shape `(B, 1, ..., 1)` matching `like`.
fn coefficient<T: Scalar>(like: &[usize], t: &[usize], f: impl Fn(usize) -> T) -> Tensor<T> {
    if t.len() == 1 {
        return Tensor::full(&vec![1; like.len()], f(t[0]));
    }
    let mut shape = vec![1; like.len()];
    shape[0] = t.len();
    Tensor::from_fn(&shape, |i| f(t[i]))
}

/// `x_t = (1 - m_t) x0 + m_t y0 + sqrt(σ_t) ε`. `t` holds one step for the
/// whole tensor or one per leading-axis sample.
pub fn forward_sample<T: Scalar>(
    sched: &BridgeSchedule<T>,
    x0: &Tensor<T>,
    y0: &Tensor<T>,
    t: &[usize],
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_steps(sched, t)?;
    lincomb("forward_sample", x0, y0, eps, t, |s| {
        let m = sched.m(s);
        [T::one() - m, m, sched.sigma(s).sqrt()]
    })
}

/// Regression target `m_t (y0 - x0) + sqrt(σ_t) ε`, equal to `x_t - x0`.
pub fn objective<T: Scalar>(
    sched: &BridgeSchedule<T>,
    x0: &Tensor<T>,
    y0: &Tensor<T>,
    t: &[usize],
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_steps(sched, t)?;
    lincomb("objective", x0, y0, eps, t, |s| {
        let m = sched.m(s);
        [-m, m, sched.sigma(s).sqrt()]
    })
}

/// `clamp(x_t - ε̂, 0, 1)`.
pub fn predict_x0<T: Scalar>(x_t: &Tensor<T>, eps_hat: &Tensor<T>) -> Result<Tensor<T>> {
    x_t.zip_with(eps_hat, |a, b| (a - b).max(T::zero()).min(T::one()))
}

/// Nested bridge state `(1 - m_t) anchor0 + m_t recon_end + s sqrt(σ_t) ε`.
pub fn nested_forward<T: Scalar>(
    sched: &BridgeSchedule<T>,
    anchor0: &Tensor<T>,
    recon_end: &Tensor<T>,
    t: &[usize],
    eps: &Tensor<T>,
    scale: T,
) -> Result<Tensor<T>> {
    check_steps(sched, t)?;
    lincomb("nested_forward", anchor0, recon_end, eps, t, |s| {
        let m = sched.m(s);
        [T::one() - m, m, scale * sched.sigma(s).sqrt()]
    })
}

/// Clamps to `[0, 1]` in the forward pass while passing gradients through
/// unchanged.
pub fn clamp_st<T: Scalar>(tape: &mut Tape<T>, v: Var) -> Result<Var> {
    let shift = tape
        .value(v)
        .map(|x| x.max(T::zero()).min(T::one()) - x);
    let shift = tape.constant(shift);
    tape.add(v, shift)
}

/// Outputs of the twin reconstruction step.
#[derive(Clone, Copy, Debug)]
pub struct RecLosses {
    /// θ1 loss on the bridge from x0 towards y0.
    pub rec_x: Var,
    /// θ2 loss on the bridge from y0 towards x0.
    pub rec_y: Var,
    /// Clamped reconstruction of x0 by θ1.
    pub x_bar: Var,
    /// Clamped reconstruction of y0 by θ2.
    pub y_bar: Var,
}

/// Twin reconstruction losses at steps `t1`, sharing one noise draw.
#[allow(clippy::too_many_arguments)]
pub fn rec_losses<T: Scalar>(
    theta1: &dyn NoisePredictor<T>,
    theta2: &dyn NoisePredictor<T>,
    tape: &mut Tape<T>,
    sched: &BridgeSchedule<T>,
    x0: &Tensor<T>,
    y0: &Tensor<T>,
    t1: &[usize],
    eps: &Tensor<T>,
    norm: LossNorm,
) -> Result<RecLosses> {
    let x_t = tape.constant(forward_sample(sched, x0, y0, t1, eps)?);
    let y_t = tape.constant(forward_sample(sched, y0, x0, t1, eps)?);
    let target_x = tape.constant(objective(sched, x0, y0, t1, eps)?);
    let target_y = tape.constant(objective(sched, y0, x0, t1, eps)?);

    let eps_x = theta1.predict(tape, x_t, t1)?;
    let rec_x = norm.apply(tape, eps_x, target_x)?;
    let raw_x = tape.sub(x_t, eps_x)?;
    let x_bar = clamp_st(tape, raw_x)?;

    let eps_y = theta2.predict(tape, y_t, t1)?;
    let rec_y = norm.apply(tape, eps_y, target_y)?;
    let raw_y = tape.sub(y_t, eps_y)?;
    let y_bar = clamp_st(tape, raw_y)?;

    Ok(RecLosses { rec_x, rec_y, x_bar, y_bar })
}

/// Nested state on the tape; gradients flow into `recon_end`.
fn nested_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    sched: &BridgeSchedule<T>,
    anchor0: &Tensor<T>,
    recon_end: Var,
    t2: &[usize],
    eps: &Tensor<T>,
    scale: T,
) -> Result<Var> {
    let zero = Tensor::zeros(anchor0.shape());
    let fixed = nested_forward(sched, anchor0, &zero, t2, eps, scale)?;
    let fixed = tape.constant(fixed);
    let m = tape.constant(coefficient(anchor0.shape(), t2, |s| sched.m(s)));
    let moving = tape.mul(recon_end, m)?;
    tape.add(fixed, moving)
}

/// Self-consistency losses `(‖x0 - x̿0‖, ‖y0 - y̿0‖)` through the nested
/// bridges ending at `ȳ0` and `x̄0`.
#[allow(clippy::too_many_arguments)]
pub fn selfcon_losses<T: Scalar>(
    theta1: &dyn NoisePredictor<T>,
    theta2: &dyn NoisePredictor<T>,
    tape: &mut Tape<T>,
    sched: &BridgeSchedule<T>,
    x0: &Tensor<T>,
    y0: &Tensor<T>,
    x_bar: Var,
    y_bar: Var,
    t2: &[usize],
    eps: &Tensor<T>,
    scale: T,
    norm: LossNorm,
) -> Result<(Var, Var)> {
    check_steps(sched, t2)?;
    let x_nested = nested_on_tape(tape, sched, x0, y_bar, t2, eps, scale)?;
    let eps_x = theta1.predict(tape, x_nested, t2)?;
    let x_twice = tape.sub(x_nested, eps_x)?;
    let x0v = tape.constant(x0.clone());
    let loss_x = norm.apply(tape, x0v, x_twice)?;

    let y_nested = nested_on_tape(tape, sched, y0, x_bar, t2, eps, scale)?;
    let eps_y = theta2.predict(tape, y_nested, t2)?;
    let y_twice = tape.sub(y_nested, eps_y)?;
    let y0v = tape.constant(y0.clone());
    let loss_y = norm.apply(tape, y0v, y_twice)?;
    Ok((loss_x, loss_y))
}
