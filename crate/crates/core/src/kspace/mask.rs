use num_complex::Complex;

use super::fft::{ComplexImage, Fft2};
use super::image_dims;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Column-selection pattern for equispaced Cartesian undersampling along
/// the phase-encode (width) axis.
///
/// Columns are indexed in centred k-space order: column `c` holds spatial
/// frequency `c - W/2`, so the DC line is column `W/2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    width: usize,
    columns: Vec<bool>,
    acceleration: usize,
    center_lines: usize,
    offset: usize,
}

impl SamplingMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn center_lines(&self) -> usize {
        self.center_lines
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn selected(&self) -> usize {
        self.columns.iter().filter(|&&c| c).count()
    }

    pub fn density(&self) -> f64 {
        self.selected() as f64 / self.width as f64
    }

    /// Whether unshifted FFT column `k` is acquired.
    pub fn keeps_fft_column(&self, k: usize) -> bool {
        self.columns[(k + self.width / 2) % self.width]
    }
}

/// Builds the mask selecting every `acceleration`-th column starting at
/// `offset`, plus a centred block of `center_lines` columns.
pub fn make_mask(width: usize, acceleration: usize, center_lines: usize, offset: usize) -> Result<SamplingMask> {
    if width == 0 {
        return Err(Error::InvalidConfig("mask width must be positive".into()));
    }
    if acceleration == 0 || acceleration > width {
        return Err(Error::InvalidConfig(format!(
            "acceleration {acceleration} outside 1..={width}"
        )));
    }
    if center_lines >= width {
        return Err(Error::InvalidConfig(format!(
            "{center_lines} centre lines leave nothing to undersample in width {width}"
        )));
    }
    if offset >= acceleration {
        return Err(Error::InvalidConfig(format!(
            "offset {offset} must be below the acceleration {acceleration}"
        )));
    }
    let lo = width / 2 - center_lines / 2;
    let hi = lo + center_lines;
    let columns = (0..width)
        .map(|c| (c + acceleration - offset).is_multiple_of(acceleration) || (lo..hi).contains(&c))
        .collect();
    Ok(SamplingMask {
        width,
        columns,
        acceleration,
        center_lines,
        offset,
    })
}

/// Zero-filled complex image: `ifft2(mask * fft2(x))`.
pub fn zero_filled<T: Scalar>(x: &Tensor<T>, mask: &SamplingMask) -> Result<ComplexImage<T>> {
    let (h, w) = image_dims(x)?;
    if mask.width != w {
        return Err(Error::InvalidShape(format!(
            "mask width {} does not match image width {w}",
            mask.width
        )));
    }
    let plan = Fft2::new(h, w)?;
    let mut k = plan.forward(&ComplexImage::from_real(x)?)?;
    let zero = Complex::new(T::zero(), T::zero());
    for row in k.data_mut().chunks_mut(w) {
        for (c, v) in row.iter_mut().enumerate() {
            if !mask.keeps_fft_column(c) {
                *v = zero;
            }
        }
    }
    plan.inverse(&k)
}

/// Magnitude of the zero-filled reconstruction.
pub fn undersample<T: Scalar>(x: &Tensor<T>, mask: &SamplingMask) -> Result<Tensor<T>> {
    Ok(zero_filled(x, mask)?.magnitude())
}
