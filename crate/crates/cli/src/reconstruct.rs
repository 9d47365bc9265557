//! `reconstruct`: reverse-chain sampling with θ1.

use std::path::{Path, PathBuf};

use scndb::bridge::{sample, SamplerConfig};
use scndb::{BridgeSchedule, Denoiser, RngState, Tensor};

use crate::checkpoint::{config_of, restore_theta1, Checkpoint};
use crate::data::{create_dir, read_images};
use crate::error::{CliError, CliResult};
use crate::format::{read_image, write_image, write_pgm};

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructArgs {
    pub checkpoint: PathBuf,
    /// Directory of under-sampled `.scnt` images.
    pub input: PathBuf,
    /// Ground truth for error maps, matched by file name.
    pub reference: Option<PathBuf>,
    pub output: PathBuf,
}

/// Writes `{id}.scnt`, `preview/{id}.pgm` and, with a reference,
/// `error/{id}.scnt|pgm` into the output directory. Returns the image count.
pub fn reconstruct(args: &ReconstructArgs) -> CliResult<usize> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = config_of(&ckpt)?;
    let training = cfg.training_config()?;
    let theta1 = restore_theta1::<f32>(&ckpt)?;
    let net = Denoiser::<f32>::new(training.denoiser.clone())?;
    let schedule = BridgeSchedule::<f32>::new(training.steps)?;
    let sampler = SamplerConfig { steps: training.steps, deterministic: cfg.sampler_deterministic };
    let estimator = net.estimator(&theta1);

    let inputs = read_images::<f32>(&args.input)?;
    if inputs.is_empty() {
        return Err(CliError::Data(format!("{} holds no images", args.input.display())));
    }
    let (h, w) = (inputs[0].1.shape()[0], inputs[0].1.shape()[1]);
    if let Some((id, t)) = inputs.iter().find(|(_, t)| t.shape() != [h, w]) {
        return Err(CliError::Data(format!("{id} has shape {:?}, expected [{h}, {w}]", t.shape())));
    }
    create_dir(&args.output.join("preview"))?;
    if args.reference.is_some() {
        create_dir(&args.output.join("error"))?;
    }

    let mut rng = RngState::named(cfg.seed, "sample");
    for chunk in inputs.chunks(cfg.sample_batch.max(1)) {
        let images: Vec<Tensor<f32>> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let y0 = Tensor::stack(&images)?.reshape(&[images.len(), 1, h, w])?;
        let x_hat = sample(&estimator, &schedule, &y0, &sampler, &mut rng)?;
        for (k, (id, _)) in chunk.iter().enumerate() {
            let img = x_hat.select(k)?.reshape(&[h, w])?;
            write_image(&args.output.join(format!("{id}.scnt")), &img)?;
            write_pgm(&args.output.join("preview").join(format!("{id}.pgm")), &img)?;
            if let Some(reference) = &args.reference {
                let truth: Tensor<f32> = read_image(&reference.join(format!("{id}.scnt")))?;
                let err = error_map(&truth, &img)?;
                write_image(&args.output.join("error").join(format!("{id}.scnt")), &err)?;
                write_pgm(&args.output.join("error").join(format!("{id}.pgm")), &err)?;
            }
        }
        log::debug!("reconstructed {} images", chunk.len());
    }
    log::info!("reconstructed {} images into {}", inputs.len(), args.output.display());
    Ok(inputs.len())
}

/// Pixelwise absolute difference.
pub fn error_map(reference: &Tensor<f32>, estimate: &Tensor<f32>) -> CliResult<Tensor<f32>> {
    reference
        .zip_with(estimate, |a, b| (a - b).abs())
        .map_err(|e| CliError::Data(format!("error map: {e}")))
}

pub fn default_output(run_dir: &Path) -> PathBuf {
    run_dir.join("recon")
}
