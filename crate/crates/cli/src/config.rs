//! Flat `key = value` experiment configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scndb::bridge::{LossNorm, TimestepMode};
use scndb::kspace::{make_mask, PhantomSpec, SamplingMask};
use scndb::optim::AdamW;
use scndb::{DenoiserConfig, TrainingConfig};

use crate::error::{CliError, CliResult};

/// Every key with its one-line description, in serialization order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed; data, init-theta1, init-theta2, train and sample streams derive from it"),
    ("data_dir", "dataset directory written by gen-data"),
    ("run_dir", "directory for checkpoints, loss log and reconstructions"),
    ("train_count", "number of training phantoms"),
    ("test_count", "number of held-out phantoms"),
    ("height", "image height (power of two)"),
    ("width", "image width (power of two)"),
    ("phantom_min_ellipses", "fewest ellipses per phantom"),
    ("phantom_max_ellipses", "most ellipses per phantom"),
    ("phantom_min_intensity", "lower bound of ellipse intensity"),
    ("phantom_max_intensity", "upper bound of ellipse intensity"),
    ("phantom_edge_width", "soft edge width in pixels"),
    ("accelerations", "acceleration factors simulated by gen-data"),
    ("acceleration", "acceleration factor used by train and reconstruct"),
    ("center_lines", "fully sampled centre columns"),
    ("mask_offset", "first sampled column of the equispaced pattern"),
    ("timesteps", "bridge length T (training and sampling steps)"),
    ("lambda", "weight of the self-consistency losses"),
    ("t_mode", "nested bridge step: tied or independent"),
    ("nested_noise_scale", "multiplier on the nested bridge noise standard deviation"),
    ("selfcon_enabled", "train with the self-consistency losses"),
    ("cdem_enabled", "feed contourlet features into the encoder"),
    ("loss_norm", "distance used by every loss: l1 or l2"),
    ("lr", "AdamW learning rate"),
    ("beta1", "AdamW first moment decay"),
    ("beta2", "AdamW second moment decay"),
    ("adam_eps", "AdamW denominator offset"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("batch_size", "images per training step"),
    ("iterations", "training steps"),
    ("checkpoint_every", "steps between checkpoints"),
    ("base_channels", "denoiser feature width"),
    ("depth", "denoiser resolution levels"),
    ("time_dim", "time embedding width"),
    ("directions", "directional levels j per pyramid level (2^j subbands)"),
    ("sample_batch", "images per reconstruction batch"),
    ("sampler_deterministic", "zero the reverse-chain noise"),
];

/// Keys read by `gen-data`.
pub const DATA_KEYS: &[&str] = &[
    "seed",
    "train_count",
    "test_count",
    "height",
    "width",
    "phantom_min_ellipses",
    "phantom_max_ellipses",
    "phantom_min_intensity",
    "phantom_max_intensity",
    "phantom_edge_width",
    "accelerations",
    "center_lines",
    "mask_offset",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub height: usize,
    pub width: usize,
    pub phantom_min_ellipses: usize,
    pub phantom_max_ellipses: usize,
    pub phantom_min_intensity: f64,
    pub phantom_max_intensity: f64,
    pub phantom_edge_width: f64,
    pub accelerations: Vec<usize>,
    pub acceleration: usize,
    pub center_lines: usize,
    pub mask_offset: usize,
    pub timesteps: usize,
    pub lambda: f64,
    pub t_mode: TimestepMode,
    pub nested_noise_scale: f64,
    pub selfcon_enabled: bool,
    pub cdem_enabled: bool,
    pub loss_norm: LossNorm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub time_dim: usize,
    pub directions: Vec<u32>,
    pub sample_batch: usize,
    pub sampler_deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let training = TrainingConfig::default();
        let phantom = PhantomSpec::default();
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            train_count: 500,
            test_count: 50,
            height: phantom.height,
            width: phantom.width,
            phantom_min_ellipses: phantom.min_ellipses,
            phantom_max_ellipses: phantom.max_ellipses,
            phantom_min_intensity: phantom.min_intensity,
            phantom_max_intensity: phantom.max_intensity,
            phantom_edge_width: phantom.edge_width,
            accelerations: vec![4, 8],
            acceleration: 4,
            center_lines: 0,
            mask_offset: 0,
            timesteps: training.steps,
            lambda: training.lambda,
            t_mode: training.t_mode,
            nested_noise_scale: training.nested_noise_scale,
            selfcon_enabled: training.selfcon_enabled,
            cdem_enabled: training.denoiser.cdem_enabled,
            loss_norm: training.loss_norm,
            lr: training.optimizer.lr,
            beta1: training.optimizer.beta1,
            beta2: training.optimizer.beta2,
            adam_eps: training.optimizer.eps,
            weight_decay: training.optimizer.weight_decay,
            batch_size: training.batch_size,
            iterations: training.iterations,
            checkpoint_every: 1000,
            base_channels: training.denoiser.base_channels,
            depth: training.denoiser.depth,
            time_dim: training.denoiser.time_dim,
            directions: training.denoiser.directions,
            sample_batch: 10,
            sampler_deterministic: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key} = {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn is_key(key: &str) -> bool {
        KEYS.iter().any(|(k, _)| *k == key)
    }

    /// Canonical text of one value.
    pub fn get(&self, key: &str) -> CliResult<String> {
        Ok(match key {
            "seed" => self.seed.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "run_dir" => self.run_dir.display().to_string(),
            "train_count" => self.train_count.to_string(),
            "test_count" => self.test_count.to_string(),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "phantom_min_ellipses" => self.phantom_min_ellipses.to_string(),
            "phantom_max_ellipses" => self.phantom_max_ellipses.to_string(),
            "phantom_min_intensity" => self.phantom_min_intensity.to_string(),
            "phantom_max_intensity" => self.phantom_max_intensity.to_string(),
            "phantom_edge_width" => self.phantom_edge_width.to_string(),
            "accelerations" => join(&self.accelerations),
            "acceleration" => self.acceleration.to_string(),
            "center_lines" => self.center_lines.to_string(),
            "mask_offset" => self.mask_offset.to_string(),
            "timesteps" => self.timesteps.to_string(),
            "lambda" => self.lambda.to_string(),
            "t_mode" => match self.t_mode {
                TimestepMode::Tied => "tied".into(),
                TimestepMode::Independent => "independent".into(),
            },
            "nested_noise_scale" => self.nested_noise_scale.to_string(),
            "selfcon_enabled" => self.selfcon_enabled.to_string(),
            "cdem_enabled" => self.cdem_enabled.to_string(),
            "loss_norm" => match self.loss_norm {
                LossNorm::L1 => "l1".into(),
                LossNorm::L2 => "l2".into(),
            },
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "iterations" => self.iterations.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "base_channels" => self.base_channels.to_string(),
            "depth" => self.depth.to_string(),
            "time_dim" => self.time_dim.to_string(),
            "directions" => join(&self.directions),
            "sample_batch" => self.sample_batch.to_string(),
            "sampler_deterministic" => self.sampler_deterministic.to_string(),
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "run_dir" => self.run_dir = PathBuf::from(v),
            "train_count" => self.train_count = parse(key, v)?,
            "test_count" => self.test_count = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "phantom_min_ellipses" => self.phantom_min_ellipses = parse(key, v)?,
            "phantom_max_ellipses" => self.phantom_max_ellipses = parse(key, v)?,
            "phantom_min_intensity" => self.phantom_min_intensity = parse(key, v)?,
            "phantom_max_intensity" => self.phantom_max_intensity = parse(key, v)?,
            "phantom_edge_width" => self.phantom_edge_width = parse(key, v)?,
            "accelerations" => self.accelerations = parse_list(key, v)?,
            "acceleration" => self.acceleration = parse(key, v)?,
            "center_lines" => self.center_lines = parse(key, v)?,
            "mask_offset" => self.mask_offset = parse(key, v)?,
            "timesteps" => self.timesteps = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "t_mode" => {
                self.t_mode = match v {
                    "tied" => TimestepMode::Tied,
                    "independent" => TimestepMode::Independent,
                    _ => return Err(CliError::Usage(format!("t_mode must be tied or independent, got {v:?}"))),
                }
            }
            "nested_noise_scale" => self.nested_noise_scale = parse(key, v)?,
            "selfcon_enabled" => self.selfcon_enabled = parse(key, v)?,
            "cdem_enabled" => self.cdem_enabled = parse(key, v)?,
            "loss_norm" => {
                self.loss_norm = match v {
                    "l1" => LossNorm::L1,
                    "l2" => LossNorm::L2,
                    _ => return Err(CliError::Usage(format!("loss_norm must be l1 or l2, got {v:?}"))),
                }
            }
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "base_channels" => self.base_channels = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "time_dim" => self.time_dim = parse(key, v)?,
            "directions" => self.directions = parse_list(key, v)?,
            "sample_batch" => self.sample_batch = parse(key, v)?,
            "sampler_deterministic" => self.sampler_deterministic = parse(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(CliError::Usage(format!("line {}: duplicate key {key:?}", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Usage(format!("line {}: {e}", n + 1)))?;
            seen.push(key);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its description, one per line.
    pub fn to_text(&self) -> String {
        self.keys_text(KEYS.iter().map(|(k, _)| *k))
    }

    /// The keys that determine generated data; paths are left out so the
    /// dataset does not depend on where it is written.
    pub fn data_text(&self) -> String {
        self.keys_text(DATA_KEYS.iter().copied())
    }

    fn keys_text<'a>(&self, keys: impl Iterator<Item = &'a str>) -> String {
        let mut out = String::new();
        for key in keys {
            let doc = KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d).expect("listed key");
            let value = self.get(key).expect("listed key");
            out.push_str(&format!("# {doc}\n{key} = {value}\n"));
        }
        out
    }

    pub fn training_config(&self) -> CliResult<TrainingConfig> {
        let cfg = TrainingConfig {
            steps: self.timesteps,
            lambda: self.lambda,
            t_mode: self.t_mode,
            nested_noise_scale: self.nested_noise_scale,
            selfcon_enabled: self.selfcon_enabled,
            loss_norm: self.loss_norm,
            optimizer: AdamW {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                weight_decay: self.weight_decay,
            },
            batch_size: self.batch_size,
            iterations: self.iterations,
            denoiser: DenoiserConfig {
                base_channels: self.base_channels,
                depth: self.depth,
                time_dim: self.time_dim,
                cdem_enabled: self.cdem_enabled,
                directions: self.directions.clone(),
            },
        };
        cfg.validate()?;
        if self.checkpoint_every == 0 {
            return Err(CliError::Usage("checkpoint_every must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn phantom_spec(&self, seed: u64) -> CliResult<PhantomSpec> {
        let spec = PhantomSpec {
            seed,
            height: self.height,
            width: self.width,
            min_ellipses: self.phantom_min_ellipses,
            max_ellipses: self.phantom_max_ellipses,
            min_intensity: self.phantom_min_intensity,
            max_intensity: self.phantom_max_intensity,
            edge_width: self.phantom_edge_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mask(&self, acceleration: usize) -> CliResult<SamplingMask> {
        Ok(make_mask(self.width, acceleration, self.center_lines, self.mask_offset)?)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.run_dir.join("checkpoint.scndb")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_key_is_readable_and_writable() {
        let mut cfg = ExperimentConfig::default();
        for (key, _) in KEYS {
            let value = cfg.get(key).unwrap();
            cfg.set(key, &value).unwrap();
        }
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn edited_config_round_trips() {
        let text = "seed = 7\nlr = 0.00123\nt_mode = independent\nloss_norm = l2\ndirections = 2, 1\n# note\nselfcon_enabled = false # off\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lr, 0.00123);
        assert_eq!(cfg.directions, vec![2, 1]);
        assert!(!cfg.selfcon_enabled);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(matches!(ExperimentConfig::parse("colour = red"), Err(CliError::Usage(_))));
        assert!(matches!(ExperimentConfig::parse("seed"), Err(CliError::Usage(_))));
        assert!(matches!(ExperimentConfig::parse("seed = x"), Err(CliError::Usage(_))));
        assert!(matches!(ExperimentConfig::parse("seed = 1\nseed = 2"), Err(CliError::Usage(_))));
        assert!(matches!(ExperimentConfig::parse("t_mode = sometimes"), Err(CliError::Usage(_))));
    }

    #[test]
    fn invalid_training_values_rejected() {
        let cfg = ExperimentConfig { timesteps: 1, ..Default::default() };
        assert!(matches!(cfg.training_config(), Err(CliError::Usage(_))));
        let cfg = ExperimentConfig { phantom_max_intensity: 1.5, ..Default::default() };
        assert!(cfg.phantom_spec(0).is_err());
    }
}
