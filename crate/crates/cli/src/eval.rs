//! `eval`: per-image metrics, aggregates and a paired Wilcoxon test.

use std::fs;
use std::path::{Path, PathBuf};

use scndb::metrics::{wilcoxon_signed_rank, Alternative, ImageMetrics, MetricReport, WilcoxonResult};
use scndb::Tensor;

use crate::data::read_images;
use crate::error::{CliError, CliResult};

/// Images are normalized to `[0, 1]`.
pub const PEAK: f64 = 1.0;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalArgs {
    pub reference: PathBuf,
    pub estimate: PathBuf,
    /// Second method for the paired PSNR test (estimate vs baseline).
    pub baseline: Option<PathBuf>,
    pub output: PathBuf,
}

/// Outcome of the paired test; degenerate samples are kept as a message.
#[derive(Clone, Debug, PartialEq)]
pub enum Significance {
    Tested(WilcoxonResult),
    Degenerate(String),
}

impl Significance {
    pub fn is_significant(&self) -> bool {
        matches!(self, Significance::Tested(w) if w.p_value < SIGNIFICANCE_LEVEL)
    }

    pub fn describe(&self) -> String {
        match self {
            Significance::Tested(w) => format!(
                "wilcoxon W={} p={:.4e} n={} ({}): {}",
                w.statistic,
                w.p_value,
                w.n,
                if w.exact { "exact" } else { "normal approximation" },
                if self.is_significant() { "significant" } else { "not significant" }
            ),
            Significance::Degenerate(msg) => format!("wilcoxon: not significant ({msg})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub baseline: Option<MetricReport>,
    pub significance: Option<Significance>,
}

fn matched(reference: &Path, estimate: &Path) -> CliResult<Vec<ImageMetrics>> {
    let refs = read_images::<f64>(reference)?;
    let ests = read_images::<f64>(estimate)?;
    if refs.len() != ests.len() {
        return Err(CliError::Data(format!(
            "{} holds {} images but {} holds {}",
            reference.display(),
            refs.len(),
            estimate.display(),
            ests.len()
        )));
    }
    if refs.is_empty() {
        return Err(CliError::Data(format!("{} holds no images", reference.display())));
    }
    refs.iter()
        .zip(&ests)
        .map(|((rid, r), (eid, e)): (&(String, Tensor<f64>), _)| {
            if rid != eid {
                return Err(CliError::Data(format!("unmatched images {rid} and {eid}")));
            }
            ImageMetrics::compute(rid.clone(), r, e, PEAK).map_err(|err| CliError::Data(format!("{rid}: {err}")))
        })
        .collect()
}

pub fn metrics_csv(rows: &[ImageMetrics]) -> String {
    let mut out = String::from("image_id,psnr_db,ssim,nmse\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.8},{:.8e}\n", r.id, r.psnr_db, r.ssim, r.nmse));
    }
    out
}

pub fn summary_text(outcome: &EvalOutcome) -> String {
    let line = |label: &str, report: &MetricReport| {
        format!(
            "{label}: psnr_db {} ssim {} nmse {}\n",
            report.psnr().format(2),
            report.ssim().format(4),
            report.nmse().format(4)
        )
    };
    let mut out = line("estimate", &outcome.report);
    if let Some(b) = &outcome.baseline {
        out.push_str(&line("baseline", b));
    }
    if let Some(s) = &outcome.significance {
        out.push_str(&s.describe());
        out.push('\n');
    }
    out
}

/// Writes the metric CSV to `output` and the summary next to it.
pub fn eval(args: &EvalArgs) -> CliResult<EvalOutcome> {
    let mut report = MetricReport::new(matched(&args.reference, &args.estimate)?);
    let (baseline, significance) = match &args.baseline {
        Some(dir) => {
            let base = MetricReport::new(matched(&args.reference, dir)?);
            let pairs: Vec<(f64, f64)> = report
                .rows
                .iter()
                .zip(&base.rows)
                .map(|(a, b)| (a.psnr_db, b.psnr_db))
                .collect();
            let sig = match wilcoxon_signed_rank(&pairs, Alternative::TwoSided) {
                Ok(w) => {
                    report.significance = Some(w);
                    Significance::Tested(w)
                }
                Err(e) => Significance::Degenerate(e.to_string()),
            };
            (Some(base), Some(sig))
        }
        None => (None, None),
    };
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::data::create_dir(parent)?;
    }
    fs::write(&args.output, metrics_csv(&report.rows)).map_err(|e| CliError::io(&args.output, e))?;
    let outcome = EvalOutcome { report, baseline, significance };
    let summary_path = args.output.with_extension("summary.txt");
    fs::write(&summary_path, summary_text(&outcome)).map_err(|e| CliError::io(&summary_path, e))?;
    Ok(outcome)
}
