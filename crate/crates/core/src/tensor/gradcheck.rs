use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn evaluate<T: Scalar, F>(f: &F, params: &[Tensor<T>]) -> Result<T>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Largest relative disagreement between reverse-mode gradients of `f` and
/// central differences with step `eps`, over every entry of every parameter.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<T: Scalar, F>(f: F, params: &[Tensor<T>], eps: T) -> Result<f64>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if eps.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item()?.is_finite() {
        return Err(Error::NonFinite("objective is not finite".into()));
    }
    let grads = tape.backward(out)?;
    drop(tape);

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe[pi].data()[i];
            probe[pi].data_mut()[i] = orig + eps;
            let up = evaluate(&f, &probe)?;
            probe[pi].data_mut()[i] = orig - eps;
            let down = evaluate(&f, &probe)?;
            probe[pi].data_mut()[i] = orig;
            let numeric = ((up - down) / (eps + eps)).to_f64_lossy();
            let a = a.to_f64_lossy();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
