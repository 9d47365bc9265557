use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ellipse in normalised image coordinates (`[-1, 1]` on both axes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    /// Semi-axes along the rotated x and y directions.
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    /// Additive intensity; negative values carve darker regions.
    pub intensity: f64,
}

/// Recipe for a random ellipse phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    pub min_intensity: f64,
    pub max_intensity: f64,
    /// Width of the soft boundary, in pixels.
    pub edge_width: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            min_ellipses: 4,
            max_ellipses: 10,
            min_intensity: 0.1,
            max_intensity: 0.9,
            edge_width: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("phantom extents must be positive".into()));
        }
        if self.min_ellipses == 0 || self.min_ellipses > self.max_ellipses {
            return Err(Error::InvalidConfig(format!(
                "ellipse count range {}..={} is empty or allows zero ellipses",
                self.min_ellipses, self.max_ellipses
            )));
        }
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.min_intensity) || !ok(self.max_intensity) || self.min_intensity > self.max_intensity {
            return Err(Error::InvalidConfig(format!(
                "intensity range [{}, {}] must lie inside [0, 1]",
                self.min_intensity, self.max_intensity
            )));
        }
        if !(self.edge_width > 0.0) {
            return Err(Error::InvalidConfig("edge width must be positive".into()));
        }
        Ok(())
    }
}

/// Sums soft-edged ellipses and clips the result to `[0, 1]`.
pub fn render_ellipses<T: Scalar>(height: usize, width: usize, ellipses: &[Ellipse], edge_width: f64) -> Tensor<T> {
    let half = 0.5 * height.min(width) as f64;
    Tensor::from_fn(&[height, width], |i| {
        let (r, c) = (i / width, i % width);
        let py = 2.0 * (r as f64 + 0.5) / height as f64 - 1.0;
        let px = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
        let mut acc = 0.0;
        for e in ellipses {
            let (dx, dy) = (px - e.center.0, py - e.center.1);
            let (s, co) = e.angle.sin_cos();
            let u = (co * dx + s * dy) / e.axes.0;
            let v = (-s * dx + co * dy) / e.axes.1;
            let rho = (u * u + v * v).sqrt();
            // Signed distance to the boundary in pixels, approximately.
            let dist = (rho - 1.0) * e.axes.0.min(e.axes.1) * half;
            let t = (0.5 - dist / edge_width).clamp(0.0, 1.0);
            let weight = t * t * (3.0 - 2.0 * t);
            acc += weight * e.intensity;
        }
        T::lit(acc.clamp(0.0, 1.0))
    })
}

/// Deterministic random phantom: one large body ellipse plus smaller
/// inclusions of either sign.
pub fn generate_phantom<T: Scalar>(spec: &PhantomSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let mut rng = RngState::named(spec.seed, "phantom");
    let count = rng.uniform_int(spec.min_ellipses as u32, spec.max_ellipses as u32) as usize;
    let mut ellipses = Vec::with_capacity(count);
    let body = (spec.min_intensity + spec.max_intensity) * 0.5;
    ellipses.push(Ellipse {
        center: (rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)),
        axes: (rng.uniform(0.55, 0.85), rng.uniform(0.55, 0.85)),
        angle: rng.uniform(0.0, PI),
        intensity: rng.uniform(body, spec.max_intensity),
    });
    for _ in 1..count {
        let radius = rng.uniform(0.0, 0.45);
        let theta = rng.uniform(0.0, 2.0 * PI);
        let magnitude = rng.uniform(spec.min_intensity, spec.max_intensity) * 0.5;
        let sign = if rng.uniform(0.0, 1.0) < 0.35 { -1.0 } else { 1.0 };
        ellipses.push(Ellipse {
            center: (radius * theta.cos(), radius * theta.sin()),
            axes: (rng.uniform(0.04, 0.3), rng.uniform(0.04, 0.3)),
            angle: rng.uniform(0.0, PI),
            intensity: sign * magnitude,
        });
    }
    Ok(render_ellipses(spec.height, spec.width, &ellipses, spec.edge_width))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let spec = PhantomSpec { seed: 42, ..PhantomSpec::default() };
        let a: Tensor<f32> = generate_phantom(&spec).unwrap();
        let b: Tensor<f32> = generate_phantom(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.data().iter().any(|&v| v > 0.0));
        let c: Tensor<f32> = generate_phantom(&PhantomSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn full_field_ellipse_interior_is_one() {
        let e = Ellipse {
            center: (0.0, 0.0),
            axes: (2.0, 2.0),
            angle: 0.0,
            intensity: 1.0,
        };
        let img: Tensor<f64> = render_ellipses(16, 16, &[e], 1.0);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let base = PhantomSpec::default();
        assert!(PhantomSpec { min_ellipses: 0, ..base.clone() }.validate().is_err());
        assert!(PhantomSpec { max_intensity: 1.5, ..base.clone() }.validate().is_err());
        assert!(PhantomSpec { min_ellipses: 5, max_ellipses: 3, ..base }.validate().is_err());
    }
}
