use super::{resize_nearest, ContourletPyramid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// The three convolutions mapping one level's stacked subbands to encoder
/// features.
#[derive(Debug, Clone, Copy)]
pub struct CdemConvs {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

/// Resizes every subband of `level` to `height x width` and stacks them into
/// a `(B, 2^j, height, width)` batch, one pyramid per batch element.
pub fn stack_level<T: Scalar>(
    pyramids: &[ContourletPyramid<T>],
    level: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let first = pyramids
        .first()
        .ok_or_else(|| Error::InvalidShape("empty pyramid batch".into()))?;
    let bands = first
        .levels()
        .get(level)
        .ok_or(Error::Index { index: level, max: first.levels().len() })?
        .subbands
        .len();
    let mut data = Vec::with_capacity(pyramids.len() * bands * height * width);
    for pyr in pyramids {
        let lvl = pyr
            .levels()
            .get(level)
            .ok_or(Error::Index { index: level, max: pyr.levels().len() })?;
        if lvl.subbands.len() != bands {
            return Err(Error::InvalidConfig("pyramids in a batch disagree on direction counts".into()));
        }
        for s in &lvl.subbands {
            data.extend_from_slice(resize_nearest(s, height, width)?.data());
        }
    }
    Tensor::new(vec![pyramids.len(), bands, height, width], data)
}

/// Per-level CDEM features `conv3(silu(conv2(silu(conv1(stack)))))` sized to
/// each `(channels, height, width)` target.
pub fn cdem_embed<T: Scalar>(
    tape: &mut Tape<T>,
    pyramids: &[ContourletPyramid<T>],
    targets: &[(usize, usize, usize)],
    convs: &[CdemConvs],
) -> Result<Vec<Var>> {
    if targets.len() != convs.len() {
        return Err(Error::InvalidConfig(format!(
            "{} CDEM targets but {} convolution stacks",
            targets.len(),
            convs.len()
        )));
    }
    for pyr in pyramids {
        if pyr.levels().len() != targets.len() {
            return Err(Error::InvalidConfig(format!(
                "pyramid has {} levels, encoder has {}",
                pyr.levels().len(),
                targets.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(targets.len());
    for (level, (&(channels, h, w), p)) in targets.iter().zip(convs).enumerate() {
        let stacked = tape.constant(stack_level(pyramids, level, h, w)?);
        let a = tape.conv2d(stacked, p.w1, Some(p.b1))?;
        let a = tape.silu(a);
        let a = tape.conv2d(a, p.w2, Some(p.b2))?;
        let a = tape.silu(a);
        let f = tape.conv2d(a, p.w3, Some(p.b3))?;
        if tape.shape(f)[1] != channels {
            return Err(Error::InvalidConfig(format!(
                "CDEM level {level} yields {} channels, encoder expects {channels}",
                tape.shape(f)[1]
            )));
        }
        out.push(f);
    }
    Ok(out)
}
