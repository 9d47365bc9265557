use super::FilterBank;
use crate::error::{Error, Result};
use crate::kspace::image_dims;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn at<T: Copy>(line: &[T], i: isize) -> T {
    line[i.clamp(0, line.len() as isize - 1) as usize]
}

/// Filter then keep even samples, along one line.
fn reduce_line<T: Scalar>(line: &[T], taps: &[T; 5], out: &mut [T]) {
    for (o, v) in out.iter_mut().enumerate() {
        let c = 2 * o as isize;
        *v = (0..5).map(|j| taps[j] * at(line, c + j as isize - 2)).sum();
    }
}

/// Zero-insertion upsampling followed by the gain-2 filter, in polyphase form.
fn expand_line<T: Scalar>(line: &[T], taps: &[T; 5], out: &mut [T]) {
    let two = T::lit(2.0);
    for (n, v) in out.iter_mut().enumerate() {
        let i = (n / 2) as isize;
        *v = if n % 2 == 0 {
            two * (taps[0] * at(line, i - 1) + taps[2] * at(line, i) + taps[4] * at(line, i + 1))
        } else {
            two * (taps[1] * at(line, i) + taps[3] * at(line, i + 1))
        };
    }
}

fn separable<T: Scalar>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    f: impl Fn(&[T], &mut [T]),
) -> Tensor<T> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut rows = vec![T::zero(); h * out_w];
    for r in 0..h {
        f(&img.data()[r * w..(r + 1) * w], &mut rows[r * out_w..(r + 1) * out_w]);
    }
    let mut out = vec![T::zero(); out_h * out_w];
    let mut col = vec![T::zero(); h];
    let mut res = vec![T::zero(); out_h];
    for c in 0..out_w {
        for r in 0..h {
            col[r] = rows[r * out_w + c];
        }
        f(&col, &mut res);
        for r in 0..out_h {
            out[r * out_w + c] = res[r];
        }
    }
    Tensor::new(vec![out_h, out_w], out).expect("shape matches")
}

impl FilterBank {
    fn taps<T: Scalar>(&self) -> [T; 5] {
        self.lowpass.map(T::lit)
    }

    /// Lowpass then decimate by two in both directions.
    pub fn reduce<T: Scalar>(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = image_dims(img)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape(format!(
                "Laplacian pyramid needs even extents, got {h} x {w}"
            )));
        }
        let taps = self.taps();
        Ok(separable(img, h / 2, w / 2, |l, o| reduce_line(l, &taps, o)))
    }

    /// Interpolates a half-resolution image back to `2h x 2w`.
    pub fn expand<T: Scalar>(&self, low: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = image_dims(low)?;
        let taps = self.taps();
        Ok(separable(low, 2 * h, 2 * w, |l, o| expand_line(l, &taps, o)))
    }
}

/// One pyramid level: `(low, high)` with `high = x - expand(low)`.
pub fn lp_decompose<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let bank = FilterBank::default();
    let low = bank.reduce(x)?;
    let high = x.zip_with(&bank.expand(&low)?, |a, b| a - b)?;
    Ok((low, high))
}

/// Inverse of [`lp_decompose`].
pub fn lp_reconstruct<T: Scalar>(low: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
    FilterBank::default().expand(low)?.zip_with(high, |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_standard_normal, RngState};

    #[test]
    fn perfect_reconstruction() {
        let x: Tensor<f32> = seeded_standard_normal(&mut RngState::new(4), &[64, 64]).unwrap();
        let (low, high) = lp_decompose(&x).unwrap();
        assert_eq!(low.shape(), &[32, 32]);
        assert_eq!(high.shape(), &[64, 64]);
        let back = lp_reconstruct(&low, &high).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() <= 1e-6);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let x = Tensor::<f64>::full(&[16, 8], 0.7);
        let (low, high) = lp_decompose(&x).unwrap();
        assert!(low.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        assert!(high.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn odd_extent_rejected() {
        assert!(lp_decompose(&Tensor::<f64>::zeros(&[7, 8])).is_err());
    }
}
