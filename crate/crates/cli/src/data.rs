//! `gen-data`: phantom dataset with under-sampled counterparts.
//!
//! Layout under `data_dir`:
//! `manifest.csv`, `config.txt`, `masks/r{R}.scnt|pgm`,
//! `{train,test}/full/{id}.scnt` and `{train,test}/r{R}/{id}.scnt`.

use std::fs;
use std::path::{Path, PathBuf};

use scndb::bridge::PairedDataset;
use scndb::kspace::{generate_phantom, undersample, SamplingMask};
use scndb::{RngState, Scalar, Tensor};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::format::{write_image, write_pgm, write_raw, RawTensor};

pub const SPLITS: [&str; 2] = ["train", "test"];

/// Directory holding one split's images of one kind (`full` or `r{R}`).
pub fn split_dir(data_dir: &Path, split: &str, kind: &str) -> PathBuf {
    data_dir.join(split).join(kind)
}

pub fn under_kind(acceleration: usize) -> String {
    format!("r{acceleration}")
}

pub fn image_id(index: usize) -> String {
    format!("img{index:05}")
}

pub(crate) fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Mask rendered as an `H x W` image with acquired columns at 1.
pub fn mask_image(mask: &SamplingMask, height: usize) -> Tensor<f64> {
    let w = mask.width();
    Tensor::from_fn(&[height, w], |i| if mask.columns()[i % w] { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub images: usize,
    pub accelerations: Vec<usize>,
}

/// Writes `train_count + test_count` phantoms; refuses a non-empty
/// directory unless `force`.
pub fn gen_data(cfg: &ExperimentConfig, force: bool) -> CliResult<GenSummary> {
    let dir = &cfg.data_dir;
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?.next().is_some();
        if occupied && !force {
            return Err(CliError::Usage(format!(
                "{} exists and is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    if cfg.accelerations.is_empty() {
        return Err(CliError::Usage("accelerations must list at least one factor".into()));
    }
    let masks = cfg
        .accelerations
        .iter()
        .map(|&r| cfg.mask(r))
        .collect::<CliResult<Vec<_>>>()?;
    create_dir(&dir.join("masks"))?;
    for mask in &masks {
        let name = under_kind(mask.acceleration());
        let bits = mask.columns().iter().map(|&c| u8::from(c)).collect();
        write_raw(&dir.join("masks").join(format!("{name}.scnt")), &RawTensor::u8(vec![mask.width()], bits))?;
        write_pgm(&dir.join("masks").join(format!("{name}.pgm")), &mask_image(mask, cfg.height))?;
    }
    for split in SPLITS {
        create_dir(&split_dir(dir, split, "full"))?;
        for mask in &masks {
            create_dir(&split_dir(dir, split, &under_kind(mask.acceleration())))?;
        }
    }

    let mut rng = RngState::named(cfg.seed, "data");
    let total = cfg.train_count + cfg.test_count;
    let mut manifest = String::from("id,split,phantom_seed\n");
    for index in 0..total {
        let split = if index < cfg.train_count { "train" } else { "test" };
        let hi = u64::from(rng.uniform_int(0, u32::MAX));
        let lo = u64::from(rng.uniform_int(0, u32::MAX));
        let phantom_seed = (hi << 32) | lo;
        let full: Tensor<f32> = generate_phantom(&cfg.phantom_spec(phantom_seed)?)?;
        let id = image_id(index);
        write_image(&split_dir(dir, split, "full").join(format!("{id}.scnt")), &full)?;
        for mask in &masks {
            let under = undersample(&full, mask)?.map(|v| v.min(1.0));
            let kind = under_kind(mask.acceleration());
            write_image(&split_dir(dir, split, &kind).join(format!("{id}.scnt")), &under)?;
        }
        manifest.push_str(&format!("{id},{split},{phantom_seed}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))?;
    let path = dir.join("config.txt");
    fs::write(&path, cfg.data_text()).map_err(|e| CliError::io(&path, e))?;
    log::info!("wrote {total} phantoms to {}", dir.display());
    Ok(GenSummary { images: total, accelerations: cfg.accelerations.clone() })
}

/// Sorted `(id, path)` pairs of the `.scnt` files directly inside `dir`.
pub fn list_images(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "scnt") {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_images<T: Scalar>(dir: &Path) -> CliResult<Vec<(String, Tensor<T>)>> {
    list_images(dir)?
        .into_iter()
        .map(|(id, path)| Ok((id, crate::format::read_image(&path)?)))
        .collect()
}

/// Paired `(full, under)` images of one split at one acceleration.
pub fn load_split<T: Scalar>(cfg: &ExperimentConfig, split: &str) -> CliResult<PairedDataset<T>> {
    let full_dir = split_dir(&cfg.data_dir, split, "full");
    let under_dir = split_dir(&cfg.data_dir, split, &under_kind(cfg.acceleration));
    let full = read_images::<T>(&full_dir)?;
    let under = read_images::<T>(&under_dir)?;
    let full_ids: Vec<&String> = full.iter().map(|(id, _)| id).collect();
    let under_ids: Vec<&String> = under.iter().map(|(id, _)| id).collect();
    if full_ids != under_ids {
        return Err(CliError::Data(format!(
            "{} and {} hold different image sets",
            full_dir.display(),
            under_dir.display()
        )));
    }
    if full.is_empty() {
        return Err(CliError::Data(format!("{} holds no images", full_dir.display())));
    }
    Ok(PairedDataset::new(
        full.into_iter().map(|(_, t)| t).collect(),
        under.into_iter().map(|(_, t)| t).collect(),
    )?)
}
