use std::f64::consts::PI;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::kspace::{image_dims, ComplexImage, Fft2};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Signed frequency of FFT bin `k` out of `n`, with the Nyquist bin at `-n/2`.
fn signed(k: usize, n: usize) -> i64 {
    let k = k as i64;
    let n = n as i64;
    if k < (n + 1) / 2 {
        k
    } else {
        k - n
    }
}

/// Wedge index of every FFT bin for `2^levels` directional bands.
///
/// Orientation is folded into `[0, pi)` so a bin and its negation always
/// share a wedge. Wedges `0..n/2` cover frequencies closer to the horizontal
/// axis (vertical structures), wedges `n/2..n` the rest. `None` marks DC,
/// which is split evenly across all wedges.
pub(crate) fn wedge_map(height: usize, width: usize, levels: u32) -> Vec<Option<usize>> {
    let bands = 1usize << levels;
    let mut map = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let mut u = signed(c, width);
            let mut v = signed(r, height);
            if u == 0 && v == 0 {
                map.push(None);
                continue;
            }
            // Nyquist bins are their own negation along that axis; orient
            // them from the other coordinate so the fold stays symmetric.
            let u_nyq = width.is_multiple_of(2) && u == -(width as i64) / 2;
            let v_nyq = height.is_multiple_of(2) && v == -(height as i64) / 2;
            if u_nyq && !v_nyq {
                u = if v >= 0 { -u.abs() } else { u.abs() };
            } else if v_nyq && !u_nyq {
                v = if u >= 0 { -v.abs() } else { v.abs() };
            } else if u_nyq && v_nyq {
                u = u.abs();
                v = v.abs();
            }
            if v < 0 || (v == 0 && u < 0) {
                u = -u;
                v = -v;
            }
            let theta = (v as f64 / height as f64).atan2(u as f64 / width as f64);
            let shifted = (theta + PI / 4.0).rem_euclid(PI);
            let idx = ((shifted / (PI / bands as f64)) as usize).min(bands - 1);
            map.push(Some(idx));
        }
    }
    map
}

/// Real frequency-domain masks, one per wedge, summing to one at every bin.
pub fn wedge_masks<T: Scalar>(height: usize, width: usize, levels: u32) -> Vec<Tensor<T>> {
    let bands = 1usize << levels;
    let share = T::lit(1.0 / bands as f64);
    let map = wedge_map(height, width, levels);
    (0..bands)
        .map(|b| {
            Tensor::new(
                vec![height, width],
                map.iter()
                    .map(|m| match m {
                        None => share,
                        Some(i) if *i == b => T::one(),
                        Some(_) => T::zero(),
                    })
                    .collect(),
            )
            .expect("shape matches")
        })
        .collect()
}

/// Directional filter bank with cached plan and wedge masks.
pub(crate) struct DirectionalBank<T: Scalar> {
    plan: Fft2<T>,
    masks: Vec<Tensor<T>>,
}

impl<T: Scalar> DirectionalBank<T> {
    pub(crate) fn new(height: usize, width: usize, levels: u32) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidConfig("directional filter bank needs j >= 1".into()));
        }
        if (1usize << levels) > height.min(width) {
            log::warn!(
                "{} directional bands on a {height} x {width} grid exceed its angular resolution",
                1usize << levels
            );
        }
        Ok(Self {
            plan: Fft2::new(height, width)?,
            masks: wedge_masks(height, width, levels),
        })
    }

    pub(crate) fn decompose(&self, high: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let spectrum = self.plan.forward(&ComplexImage::from_real(high)?)?;
        let (h, w) = image_dims(high)?;
        self.masks
            .iter()
            .map(|mask| {
                let data: Vec<Complex<T>> = spectrum
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&z, &m)| z * m)
                    .collect();
                Ok(self.plan.inverse(&ComplexImage::new(h, w, data)?)?.real())
            })
            .collect()
    }
}

/// Splits a highpass image into `2^levels` directional subbands whose sum is
/// the input.
pub fn dfb_decompose<T: Scalar>(high: &Tensor<T>, levels: u32) -> Result<Vec<Tensor<T>>> {
    let (h, w) = image_dims(high)?;
    DirectionalBank::new(h, w, levels)?.decompose(high)
}
