//! `train`: runs both bridges, logging losses and checkpointing.

use std::fs;
use std::io::Write;
use std::path::Path;

use scndb::bridge::LossRecord;
use scndb::TrainerState;

use crate::checkpoint::{self, capture, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{create_dir, load_split};
use crate::error::{CliError, CliResult};

pub const LOSS_HEADER: &str = "step,rec_x,rec_y,selfcon_x,selfcon_y,total";

pub fn loss_row(r: &LossRecord) -> String {
    format!(
        "{},{:e},{:e},{:e},{:e},{:e}",
        r.step, r.rec_x, r.rec_y, r.selfcon_x, r.selfcon_y, r.total
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub step: u64,
    pub last: Option<LossRecord>,
}

/// Keeps the header and the rows up to `step`.
fn truncate_log(path: &Path, step: u64) -> CliResult<String> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut out = format!("{LOSS_HEADER}\n");
    for line in text.lines().skip(1) {
        let row_step: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Data(format!("{}: malformed row {line:?}", path.display())))?;
        if row_step <= step {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn write_log(path: &Path, text: &str) -> CliResult<fs::File> {
    let mut file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    Ok(file)
}

/// Trains until `iterations` steps; `resume` continues from the run's checkpoint.
pub fn train(cfg: &ExperimentConfig, resume: bool) -> CliResult<TrainSummary> {
    let training = cfg.training_config()?;
    let data = load_split::<f32>(cfg, "train")?;
    if data.image_shape() != (cfg.height, cfg.width) {
        return Err(CliError::Data(format!(
            "dataset images are {:?}, config expects {}x{}",
            data.image_shape(),
            cfg.height,
            cfg.width
        )));
    }
    create_dir(&cfg.run_dir)?;
    let ckpt_path = cfg.checkpoint_path();
    let log_path = cfg.run_dir.join("loss.csv");
    let mut state = if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let state = checkpoint::restore::<f32>(&ckpt, cfg)?;
        log::info!("resuming from step {}", state.step());
        state
    } else {
        TrainerState::<f32>::new(training, cfg.seed)?
    };
    let prefix = if resume {
        truncate_log(&log_path, state.step())?
    } else {
        format!("{LOSS_HEADER}\n")
    };
    let mut log_file = write_log(&log_path, &prefix)?;
    let config_path = cfg.run_dir.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|e| CliError::io(&config_path, e))?;
    if !resume {
        capture(cfg, &state).save(&ckpt_path)?;
    }

    let target = cfg.iterations as u64;
    let mut last = None;
    while state.step() < target {
        let record = match state.train_on(&data) {
            Ok(r) => r,
            Err(scndb::Error::NonFinite(msg)) => {
                log_file.flush().map_err(|e| CliError::io(&log_path, e))?;
                return Err(CliError::Numerical(format!(
                    "step {}: {msg}; last checkpoint kept at {}",
                    state.step() + 1,
                    ckpt_path.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(log_file, "{}", loss_row(&record)).map_err(|e| CliError::io(&log_path, e))?;
        let step = state.step();
        if step % 100 == 0 {
            log::info!("step {step}: total {:.5} rec_x {:.5}", record.total, record.rec_x);
        }
        if step % cfg.checkpoint_every as u64 == 0 || step == target {
            log_file.flush().map_err(|e| CliError::io(&log_path, e))?;
            capture(cfg, &state).save(&ckpt_path)?;
        }
        last = Some(record);
    }
    log_file.flush().map_err(|e| CliError::io(&log_path, e))?;
    Ok(TrainSummary { step: state.step(), last })
}
