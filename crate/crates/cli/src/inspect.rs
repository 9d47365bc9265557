//! `inspect`: schedule tables, mask images and contourlet subbands.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scndb::contourlet::contourlet_decompose;
use scndb::kspace::generate_phantom;
use scndb::{BridgeSchedule, Tensor};

use crate::config::ExperimentConfig;
use crate::data::{create_dir, mask_image};
use crate::error::{CliError, CliResult};
use crate::format::{read_image, write_pgm};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subject {
    Schedule,
    Mask,
    Contourlet,
}

impl FromStr for Subject {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "schedule" => Ok(Subject::Schedule),
            "mask" => Ok(Subject::Mask),
            "contourlet" => Ok(Subject::Contourlet),
            _ => Err(CliError::Usage(format!("unknown subject {s:?}; expected schedule, mask or contourlet"))),
        }
    }
}

/// `t, m_t, sigma_t, sigma_step, sigma_tilde` for every step.
pub fn schedule_table(steps: usize) -> CliResult<String> {
    let s = BridgeSchedule::<f64>::new(steps)?;
    let mut out = String::from("t,m_t,sigma_t,sigma_step,sigma_tilde\n");
    for t in 0..=steps {
        let (step, tilde) = if t == 0 { (0.0, 0.0) } else { (s.sigma_step(t), s.sigma_tilde(t)) };
        out.push_str(&format!("{t},{:.6},{:.6},{:.6},{:.6}\n", s.m(t), s.sigma(t), step, tilde));
    }
    Ok(out)
}

/// Maps a signed band to `[0, 1]` around mid-grey.
fn signed_preview(band: &Tensor<f64>) -> Tensor<f64> {
    let peak = band.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    band.map(|v| 0.5 + v * scale)
}

/// Runs one inspection; returns the files written (or the table for
/// `schedule` when no output is given).
pub fn inspect(
    subject: Subject,
    cfg: &ExperimentConfig,
    input: Option<&Path>,
    output: Option<&Path>,
) -> CliResult<(String, Vec<PathBuf>)> {
    match subject {
        Subject::Schedule => {
            let table = schedule_table(cfg.timesteps)?;
            let mut files = Vec::new();
            if let Some(path) = output {
                fs::write(path, &table).map_err(|e| CliError::io(path, e))?;
                files.push(path.to_path_buf());
            }
            Ok((table, files))
        }
        Subject::Mask => {
            let mask = cfg.mask(cfg.acceleration)?;
            let path = output
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(format!("mask_r{}.pgm", cfg.acceleration)));
            write_pgm(&path, &mask_image(&mask, cfg.height))?;
            let text = format!("{} of {} columns acquired\n", mask.selected(), mask.width());
            Ok((text, vec![path]))
        }
        Subject::Contourlet => {
            let img: Tensor<f64> = match input {
                Some(path) => read_image(path)?,
                None => generate_phantom(&cfg.phantom_spec(cfg.seed)?)?,
            };
            let dir = output.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("contourlet"));
            create_dir(&dir)?;
            let pyr = contourlet_decompose(&img, cfg.directions.len(), &cfg.directions)?;
            let mut files = Vec::new();
            let mut text = String::new();
            for (l, level) in pyr.levels().iter().enumerate() {
                for (k, band) in level.subbands.iter().enumerate() {
                    let path = dir.join(format!("level{l}_band{k}.pgm"));
                    write_pgm(&path, &signed_preview(band))?;
                    files.push(path);
                }
                text.push_str(&format!("level {l}: {} subbands\n", level.subbands.len()));
            }
            let path = dir.join("lowpass.pgm");
            write_pgm(&path, pyr.lowpass())?;
            files.push(path);
            Ok((text, files))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_row_at_midpoint() {
        let table = schedule_table(20).unwrap();
        let row = table.lines().find(|l| l.starts_with("10,")).unwrap();
        assert_eq!(row, "10,0.500000,0.500000,0.090909,0.090000");
        assert_eq!(table.lines().count(), 22);
    }

    #[test]
    fn unknown_subject_is_usage_error() {
        assert!(matches!("weather".parse::<Subject>(), Err(CliError::Usage(_))));
    }
}
