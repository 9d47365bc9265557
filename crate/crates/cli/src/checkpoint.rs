//! `SCNDB1` checkpoints: config text, tensor table and a trailing CRC32.

use std::fs;
use std::io::Write;
use std::path::Path;

use scndb::optim::Moments;
use scndb::{ParamSet, RngState, Scalar, TrainerState};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::format::{RawTensor, Reader};

pub const MAGIC: &[u8; 6] = b"SCNDB1";
pub const VERSION: u32 = 1;

/// Decoded checkpoint: configuration text plus named tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, RawTensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> CliResult<&RawTensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CliError::Data(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| CliError::Data(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            t.write_body(&mut out);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Verifies magic and checksum before decoding any tensor.
    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CliError::Data("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(CliError::Data("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader::new(body);
        r.take(MAGIC.len())?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Data(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CliError::Data("checkpoint config is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| CliError::Data("tensor name is not UTF-8".into()))?;
            tensors.push((name, RawTensor::read_body(&mut r)?));
        }
        if r.remaining() != 0 {
            return Err(CliError::Data(format!("{} unexpected bytes after tensor table", r.remaining())));
        }
        Ok(Self { config_text, tensors })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Writes next to `path` and renames, so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        let mut file = fs::File::create(tmp).map_err(|e| CliError::io(tmp, e))?;
        file.write_all(&bytes).map_err(|e| CliError::io(tmp, e))?;
        file.sync_all().map_err(|e| CliError::io(tmp, e))?;
        fs::rename(tmp, path).map_err(|e| CliError::io(path, e))
    }
}

fn push_set<T: Scalar>(out: &mut Vec<(String, RawTensor)>, prefix: &str, set: &ParamSet<T>) {
    for (name, t) in set.iter() {
        out.push((format!("{prefix}.{name}"), RawTensor::from_tensor(t)));
    }
}

fn push_moments<T: Scalar>(out: &mut Vec<(String, RawTensor)>, prefix: &str, set: &ParamSet<T>, m: &Moments<T>) {
    for (name, (first, second)) in set.names().zip(m.first.iter().zip(&m.second)) {
        out.push((format!("{prefix}.m.{name}"), RawTensor::from_tensor(first)));
        out.push((format!("{prefix}.v.{name}"), RawTensor::from_tensor(second)));
    }
}

/// Captures parameters, optimizer moments, step counter and RNG position.
pub fn capture<T: Scalar>(config: &ExperimentConfig, state: &TrainerState<T>) -> Checkpoint {
    let mut tensors = Vec::new();
    push_set(&mut tensors, "theta1", state.theta1());
    push_set(&mut tensors, "theta2", state.theta2());
    let (m1, m2) = state.moments();
    push_moments(&mut tensors, "adam1", state.theta1(), m1);
    push_moments(&mut tensors, "adam2", state.theta2(), m2);
    tensors.push(("step".into(), RawTensor::u64(vec![1], vec![state.step()])));
    tensors.push(("rng".into(), RawTensor::u64(vec![3], state.rng().to_words().to_vec())));
    Checkpoint { config_text: config.to_text(), tensors }
}

fn read_set<T: Scalar>(ckpt: &Checkpoint, prefix: &str, names: &[String]) -> CliResult<ParamSet<T>> {
    let mut set = ParamSet::new();
    for name in names {
        set.insert(name.clone(), ckpt.get(&format!("{prefix}.{name}"))?.to_tensor()?);
    }
    Ok(set)
}

fn read_moments<T: Scalar>(ckpt: &Checkpoint, prefix: &str, names: &[String]) -> CliResult<Moments<T>> {
    let load = |kind: &str| -> CliResult<Vec<_>> {
        names
            .iter()
            .map(|n| ckpt.get(&format!("{prefix}.{kind}.{n}"))?.to_tensor())
            .collect()
    };
    Ok(Moments { first: load("m")?, second: load("v")? })
}

/// Parameter names of θ1, in file order.
fn theta_names(ckpt: &Checkpoint) -> Vec<String> {
    ckpt.tensors
        .iter()
        .filter_map(|(n, _)| n.strip_prefix("theta1.").map(str::to_string))
        .collect()
}

/// Embedded configuration.
pub fn config_of(ckpt: &Checkpoint) -> CliResult<ExperimentConfig> {
    ExperimentConfig::parse(&ckpt.config_text)
        .map_err(|e| CliError::Data(format!("checkpoint config: {e}")))
}

/// θ1 alone, for reconstruction.
pub fn restore_theta1<T: Scalar>(ckpt: &Checkpoint) -> CliResult<ParamSet<T>> {
    read_set(ckpt, "theta1", &theta_names(ckpt))
}

/// Full trainer state under `config` (which must describe the same network).
pub fn restore<T: Scalar>(ckpt: &Checkpoint, config: &ExperimentConfig) -> CliResult<TrainerState<T>> {
    let names = theta_names(ckpt);
    let theta1 = read_set(ckpt, "theta1", &names)?;
    let theta2 = read_set(ckpt, "theta2", &names)?;
    let m1 = read_moments(ckpt, "adam1", &names)?;
    let m2 = read_moments(ckpt, "adam2", &names)?;
    let step = match ckpt.get("step")?.as_u64()? {
        &[s] => s,
        other => return Err(CliError::Data(format!("step tensor has {} entries", other.len()))),
    };
    let rng = match *ckpt.get("rng")?.as_u64()? {
        [a, b, c] => RngState::from_words([a, b, c]),
        ref other => return Err(CliError::Data(format!("rng tensor has {} entries", other.len()))),
    };
    TrainerState::from_parts(config.training_config()?, theta1, theta2, m1, m2, step, rng)
        .map_err(|e| CliError::Data(format!("checkpoint does not match the configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use scndb::Tensor;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            base_channels: 4,
            depth: 2,
            time_dim: 4,
            directions: vec![1, 1],
            batch_size: 1,
            ..Default::default()
        }
    }

    #[test]
    fn state_round_trip_is_bit_exact() {
        let cfg = tiny_config();
        let mut state = TrainerState::<f32>::new(cfg.training_config().unwrap(), 3).unwrap();
        let x0 = Tensor::<f32>::from_fn(&[1, 1, 8, 8], |i| (i % 5) as f32 / 5.0);
        let y0 = Tensor::<f32>::from_fn(&[1, 1, 8, 8], |i| (i % 3) as f32 / 3.0);
        state.train_step(&x0, &y0).unwrap();
        let ckpt = capture(&cfg, &state);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(config_of(&back).unwrap(), cfg);
        let restored = restore::<f32>(&back, &cfg).unwrap();
        assert_eq!(restored.step(), 1);
        assert_eq!(restored.rng(), state.rng());
        for ((_, a), (_, b)) in restored.theta1().iter().zip(state.theta1().iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(restored.moments(), state.moments());
    }

    #[test]
    fn corruption_detected_before_decoding() {
        let cfg = tiny_config();
        let state = TrainerState::<f32>::new(cfg.training_config().unwrap(), 0).unwrap();
        let bytes = capture(&cfg, &state).to_bytes().unwrap();
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CliError::Data(m)) if m.contains("checksum")));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(CliError::Data(m)) if m.contains("magic")));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn mismatched_network_rejected() {
        let cfg = tiny_config();
        let state = TrainerState::<f32>::new(cfg.training_config().unwrap(), 0).unwrap();
        let ckpt = capture(&cfg, &state);
        let wider = ExperimentConfig { base_channels: 8, ..cfg };
        assert!(matches!(restore::<f32>(&ckpt, &wider), Err(CliError::Data(_))));
    }
}
