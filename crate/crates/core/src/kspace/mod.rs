//! Accelerated-acquisition simulation: orthonormal 2-D FFT, equispaced
//! Cartesian masks, zero-filled magnitude images and ellipse phantoms.

mod fft;
mod mask;
mod phantom;

pub use fft::{fft2, ifft2, ComplexImage, Fft2};
pub use mask::{make_mask, undersample, zero_filled, SamplingMask};
pub use phantom::{generate_phantom, render_ellipses, Ellipse, PhantomSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(height, width)` of a rank-2 image tensor.
pub(crate) fn image_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize)> {
    match img.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::InvalidShape(format!("expected an H x W image, got {s:?}"))),
    }
}
