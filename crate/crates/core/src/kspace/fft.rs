use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::image_dims;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Complex `H x W` image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage<T> {
    height: usize,
    width: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexImage<T> {
    pub fn new(height: usize, width: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height} x {width} complex image with {} samples",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_real(img: &Tensor<T>) -> Result<Self> {
        let (h, w) = image_dims(img)?;
        Self::new(h, w, img.data().iter().map(|&v| Complex::new(v, T::zero())).collect())
    }

    pub fn from_parts(real: &Tensor<T>, imag: &Tensor<T>) -> Result<Self> {
        let (h, w) = image_dims(real)?;
        if real.shape() != imag.shape() {
            return Err(crate::error::conform("complex image", real.shape(), imag.shape()));
        }
        Self::new(
            h,
            w,
            real.data().iter().zip(imag.data()).map(|(&r, &i)| Complex::new(r, i)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    fn part(&self, f: impl Fn(&Complex<T>) -> T) -> Tensor<T> {
        Tensor::new(vec![self.height, self.width], self.data.iter().map(f).collect())
            .expect("shape matches")
    }

    pub fn real(&self) -> Tensor<T> {
        self.part(|c| c.re)
    }

    pub fn imag(&self) -> Tensor<T> {
        self.part(|c| c.im)
    }

    /// Elementwise modulus.
    pub fn magnitude(&self) -> Tensor<T> {
        self.part(|c| c.norm())
    }

    pub fn energy(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Planned orthonormal 2-D transform for one image size.
pub struct Fft2<T: Scalar> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::UnsupportedSize(n));
    }
    Ok(())
}

impl<T: Scalar> Fft2<T> {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        check_pow2(height)?;
        check_pow2(width)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    fn run(&self, img: &mut ComplexImage<T>, inverse: bool) -> Result<()> {
        if img.height != self.height || img.width != self.width {
            return Err(Error::InvalidShape(format!(
                "plan is {} x {}, image is {} x {}",
                self.height, self.width, img.height, img.width
            )));
        }
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process(&mut img.data);
        let (h, w) = (self.height, self.width);
        let mut column = vec![Complex::new(T::zero(), T::zero()); h];
        for c in 0..w {
            for (r, v) in column.iter_mut().enumerate() {
                *v = img.data[r * w + c];
            }
            cols.process(&mut column);
            for (r, v) in column.iter().enumerate() {
                img.data[r * w + c] = *v;
            }
        }
        let norm = T::one() / T::lit((h * w) as f64).sqrt();
        for v in img.data.iter_mut() {
            *v = *v * norm;
        }
        Ok(())
    }

    pub fn forward(&self, img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        let mut out = img.clone();
        self.run(&mut out, false)?;
        Ok(out)
    }

    pub fn inverse(&self, img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
        let mut out = img.clone();
        self.run(&mut out, true)?;
        Ok(out)
    }
}

/// Orthonormal forward transform (`1/sqrt(HW)` scaling).
pub fn fft2<T: Scalar>(img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    Fft2::new(img.height, img.width)?.forward(img)
}

/// Orthonormal inverse transform.
pub fn ifft2<T: Scalar>(img: &ComplexImage<T>) -> Result<ComplexImage<T>> {
    Fft2::new(img.height, img.width)?.inverse(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_standard_normal, RngState};

    fn random(h: usize, w: usize, seed: u64) -> ComplexImage<f64> {
        let mut rng = RngState::new(seed);
        let re = seeded_standard_normal(&mut rng, &[h, w]).unwrap();
        let im = seeded_standard_normal(&mut rng, &[h, w]).unwrap();
        ComplexImage::from_parts(&re, &im).unwrap()
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut d = Tensor::<f64>::zeros(&[8, 8]);
        d.data_mut()[0] = 1.0;
        let spec = fft2(&ComplexImage::from_real(&d).unwrap()).unwrap();
        for c in spec.data() {
            assert!((c.re - 0.125).abs() < 1e-15 && c.im.abs() < 1e-15);
        }
    }

    #[test]
    fn round_trip() {
        let z = random(32, 32, 1);
        let back = ifft2(&fft2(&z).unwrap()).unwrap();
        let err = z.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6 * z.energy().sqrt());
    }

    #[test]
    fn parseval() {
        let z = random(16, 16, 2);
        let e0 = z.energy();
        let e1 = fft2(&z).unwrap().energy();
        assert!((e0 - e1).abs() / e0 < 1e-6);
    }

    #[test]
    fn rectangular_round_trip() {
        let z = random(8, 32, 3);
        let back = ifft2(&fft2(&z).unwrap()).unwrap();
        let err = z.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let z = ComplexImage::<f64>::from_real(&Tensor::zeros(&[6, 8])).unwrap();
        assert_eq!(fft2(&z).unwrap_err(), Error::UnsupportedSize(6));
    }
}
