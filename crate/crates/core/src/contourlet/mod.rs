//! Contourlet decomposition: Laplacian pyramid with a wedge-mask directional
//! filter bank on every high band, plus the convolutional embedding that
//! injects subband features into the denoiser.

mod cdem;
mod dfb;
mod lp;

pub use cdem::{cdem_embed, stack_level, CdemConvs};
pub use dfb::{dfb_decompose, wedge_masks};
pub use lp::{lp_decompose, lp_reconstruct};

use dfb::DirectionalBank;

use crate::error::{Error, Result};
use crate::kspace::image_dims;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Separable lowpass kernel and decimation factor of the Laplacian pyramid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBank {
    pub lowpass: [f64; 5],
    pub factor: usize,
}

impl Default for FilterBank {
    fn default() -> Self {
        Self {
            lowpass: [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0],
            factor: 2,
        }
    }
}

/// Directional subbands of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel<T> {
    pub directions: u32,
    pub subbands: Vec<Tensor<T>>,
}

impl<T: Scalar> PyramidLevel<T> {
    /// The level's high band, recovered as the sum of its subbands.
    pub fn high(&self) -> Tensor<T> {
        let mut acc = Tensor::zeros(self.subbands[0].shape());
        for s in &self.subbands {
            for (a, &b) in acc.data_mut().iter_mut().zip(s.data()) {
                *a = *a + b;
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourletPyramid<T> {
    levels: Vec<PyramidLevel<T>>,
    lowpass: Tensor<T>,
    source_shape: (usize, usize),
}

impl<T: Scalar> ContourletPyramid<T> {
    pub fn levels(&self) -> &[PyramidLevel<T>] {
        &self.levels
    }

    pub fn lowpass(&self) -> &Tensor<T> {
        &self.lowpass
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }

    /// Inverts the decomposition: sums subbands per level and unwinds the
    /// pyramid from the coarsest level.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let mut img = self.lowpass.clone();
        for level in self.levels.iter().rev() {
            img = lp_reconstruct(&img, &level.high())?;
        }
        Ok(img)
    }
}

/// Decomposition with the FFT plans and wedge masks of every level cached for
/// one image size.
pub struct ContourletTransform<T: Scalar> {
    height: usize,
    width: usize,
    directions: Vec<u32>,
    banks: Vec<DirectionalBank<T>>,
}

impl<T: Scalar> ContourletTransform<T> {
    pub fn new(height: usize, width: usize, directions: &[u32]) -> Result<Self> {
        let levels = directions.len();
        if levels == 0 {
            return Err(Error::InvalidConfig("contourlet needs at least one level".into()));
        }
        let div = 1usize << levels;
        if height == 0 || width == 0 || !height.is_multiple_of(div) || !width.is_multiple_of(div) {
            return Err(Error::InvalidShape(format!(
                "{height} x {width} image is not divisible by 2^{levels}"
            )));
        }
        let banks = directions
            .iter()
            .enumerate()
            .map(|(l, &j)| DirectionalBank::new(height >> l, width >> l, j))
            .collect::<Result<_>>()?;
        Ok(Self { height, width, directions: directions.to_vec(), banks })
    }

    pub fn directions(&self) -> &[u32] {
        &self.directions
    }

    pub fn decompose(&self, x: &Tensor<T>) -> Result<ContourletPyramid<T>> {
        let (h, w) = image_dims(x)?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::InvalidShape(format!(
                "transform built for {} x {}, got {h} x {w}",
                self.height, self.width
            )));
        }
        let mut running = x.clone();
        let mut levels = Vec::with_capacity(self.banks.len());
        for (bank, &j) in self.banks.iter().zip(&self.directions) {
            let (low, high) = lp_decompose(&running)?;
            levels.push(PyramidLevel { directions: j, subbands: bank.decompose(&high)? });
            running = low;
        }
        Ok(ContourletPyramid { levels, lowpass: running, source_shape: (h, w) })
    }
}

/// `levels`-level contourlet decomposition with `2^j_per_level[l]` directions
/// at level `l`.
pub fn contourlet_decompose<T: Scalar>(
    x: &Tensor<T>,
    levels: usize,
    j_per_level: &[u32],
) -> Result<ContourletPyramid<T>> {
    if j_per_level.len() != levels {
        return Err(Error::InvalidConfig(format!(
            "{levels} levels but {} direction counts",
            j_per_level.len()
        )));
    }
    let (h, w) = image_dims(x)?;
    ContourletTransform::new(h, w, j_per_level)?.decompose(x)
}

/// Nearest-neighbour resampling of an image to `height x width`.
pub fn resize_nearest<T: Scalar>(img: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let (h, w) = image_dims(img)?;
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape(format!("cannot resize to {height} x {width}")));
    }
    let src = img.data();
    Ok(Tensor::from_fn(&[height, width], |i| {
        let (r, c) = (i / width, i % width);
        src[(r * h / height) * w + c * w / width]
    }))
}
