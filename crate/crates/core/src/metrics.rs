//! Image quality metrics and the paired Wilcoxon signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{conform, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Largest sample size evaluated by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(conform(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / n
}

/// `10 log10(peak^2 / MSE)` in dB; identical images give `+inf`.
pub fn psnr<T: Scalar>(reference: &Tensor<T>, estimate: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("psnr", reference, estimate)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(format!("PSNR peak must be positive, got {peak}")));
    }
    let e = mse(reference, estimate);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// `‖ref - est‖² / ‖ref‖²`.
pub fn nmse<T: Scalar>(reference: &Tensor<T>, estimate: &Tensor<T>) -> Result<f64> {
    same_shape("nmse", reference, estimate)?;
    let energy: f64 = reference.data().iter().map(|&x| x.to_f64_lossy().powi(2)).sum();
    if energy == 0.0 {
        return Err(Error::UndefinedMetric("NMSE of an all-zero reference".into()));
    }
    Ok(mse(reference, estimate) * reference.numel() as f64 / energy)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-region filtering of an `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|j| k[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|j| k[j] * rows[(r + j) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all valid 11 x 11 Gaussian windows.
pub fn ssim<T: Scalar>(reference: &Tensor<T>, estimate: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("ssim", reference, estimate)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(format!("SSIM dynamic range must be positive, got {peak}")));
    }
    let (h, w) = match reference.shape() {
        &[h, w] => (h, w),
        s => return Err(Error::InvalidShape(format!("SSIM expects an H x W image, got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape(format!(
            "{h} x {w} image is smaller than the {SSIM_WINDOW} x {SSIM_WINDOW} SSIM window"
        )));
    }
    let a: Vec<f64> = reference.data().iter().map(|v| v.to_f64_lossy()).collect();
    let b: Vec<f64> = estimate.data().iter().map(|v| v.to_f64_lossy()).collect();
    let k = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, h, w, &k);
    let mu_b = filter_valid(&b, h, w, &k);
    let aa = filter_valid(&prod(&a, &a), h, w, &k);
    let bb = filter_valid(&prod(&b, &b), h, w, &k);
    let ab = filter_valid(&prod(&a, &b), h, w, &k);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Metrics of one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse: f64,
}

impl ImageMetrics {
    pub fn compute<T: Scalar>(id: impl Into<String>, reference: &Tensor<T>, estimate: &Tensor<T>, peak: f64) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            psnr_db: psnr(reference, estimate, peak)?,
            ssim: ssim(reference, estimate, peak)?,
            nmse: nmse(reference, estimate)?,
        })
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }

    /// `mean±std` with `decimals` digits.
    pub fn format(&self, decimals: usize) -> String {
        format!("{:.*}±{:.*}", decimals, self.mean, decimals, self.std)
    }
}

/// Per-image metrics with aggregates and an optional paired test.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
    pub significance: Option<WilcoxonResult>,
}

impl MetricReport {
    pub fn new(rows: Vec<ImageMetrics>) -> Self {
        Self { rows, significance: None }
    }

    pub fn psnr(&self) -> Summary {
        Summary::of(&self.rows.iter().map(|r| r.psnr_db).collect::<Vec<_>>())
    }

    pub fn ssim(&self) -> Summary {
        Summary::of(&self.rows.iter().map(|r| r.ssim).collect::<Vec<_>>())
    }

    pub fn nmse(&self) -> Summary {
        Summary::of(&self.rows.iter().map(|r| r.nmse).collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Alternative {
    #[default]
    TwoSided,
    /// First member of each pair tends to be larger.
    Greater,
    /// First member of each pair tends to be smaller.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub exact: bool,
    pub alternative: Alternative,
}

/// Average ranks (1-based) of `values`, plus the tie-group sizes.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Paired Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are dropped and tied magnitudes share their average rank.
/// Up to [`WILCOXON_EXACT_MAX`] nonzero differences the null distribution is
/// enumerated exactly; larger samples use the tie-corrected normal
/// approximation with continuity correction.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)], alternative: Alternative) -> Result<WilcoxonResult> {
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::NonFinite(format!("Wilcoxon input pair ({a}, {b})")));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::DegenerateSample(
            "every paired difference is zero".into(),
        ));
    }
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&mags);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_greater, p_less, exact) = if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let obs = (2.0 * w_plus).round() as usize;
        let ge: f64 = counts[obs..].iter().sum();
        let le: f64 = counts[..=obs].iter().sum();
        (ge / all, le / all, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let sd = var.sqrt();
        let normal = Normal::standard();
        let upper = 1.0 - normal.cdf((w_plus - mean - 0.5) / sd);
        let lower = normal.cdf((w_plus - mean + 0.5) / sd);
        (upper, lower, false)
    };
    let p_value = match alternative {
        Alternative::Greater => p_greater,
        Alternative::Less => p_less,
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        p_value,
        n,
        exact,
        alternative,
    })
}
