use super::{rec_losses, selfcon_losses, LossNorm, NoisePredictor};
use crate::denoiser::{init_params_with, Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::optim::{AdamW, Moments};
use crate::params::ParamSet;
use crate::rng::{seeded_standard_normal, RngState};
use crate::scalar::Scalar;
use crate::schedule::BridgeSchedule;
use crate::tensor::{Tape, Tensor};

/// How the nested-bridge step `t2` relates to `t1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimestepMode {
    /// `t2 = t1`.
    #[default]
    Tied,
    /// `t2` drawn independently of `t1`.
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Bridge length `T`.
    pub steps: usize,
    /// Weight of the self-consistency terms.
    pub lambda: f64,
    pub t_mode: TimestepMode,
    /// Multiplier on the nested-bridge noise standard deviation.
    pub nested_noise_scale: f64,
    pub selfcon_enabled: bool,
    pub loss_norm: LossNorm,
    pub optimizer: AdamW,
    pub batch_size: usize,
    pub iterations: usize,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            lambda: 1.0,
            t_mode: TimestepMode::Tied,
            nested_noise_scale: 1.2,
            selfcon_enabled: true,
            loss_norm: LossNorm::L1,
            optimizer: AdamW::default(),
            batch_size: 4,
            iterations: 10_000,
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidConfig(format!("T must be at least 2, got {}", self.steps)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.nested_noise_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "nested noise scale must be > 0, got {}",
                self.nested_noise_scale
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.optimizer.lr
            )));
        }
        self.denoiser.validate()
    }
}

/// The four loss components of one step and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub rec_x: f64,
    pub rec_y: f64,
    pub selfcon_x: f64,
    pub selfcon_y: f64,
    pub total: f64,
}

/// Fully-sampled / under-sampled image pairs, each `H x W`.
#[derive(Clone, Debug)]
pub struct PairedDataset<T> {
    full: Vec<Tensor<T>>,
    under: Vec<Tensor<T>>,
}

impl<T: Scalar> PairedDataset<T> {
    pub fn new(full: Vec<Tensor<T>>, under: Vec<Tensor<T>>) -> Result<Self> {
        if full.len() != under.len() || full.is_empty() {
            return Err(Error::InvalidShape(format!(
                "{} fully-sampled vs {} under-sampled images",
                full.len(),
                under.len()
            )));
        }
        let shape = full[0].shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape(format!("expected H x W images, got {shape:?}")));
        }
        if let Some(bad) = full.iter().chain(&under).find(|t| t.shape() != shape.as_slice()) {
            return Err(crate::error::conform("dataset", &shape, bad.shape()));
        }
        Ok(Self { full, under })
    }

    pub fn len(&self) -> usize {
        self.full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.full[0].shape()[0], self.full[0].shape()[1])
    }

    pub fn full(&self) -> &[Tensor<T>] {
        &self.full
    }

    pub fn under(&self) -> &[Tensor<T>] {
        &self.under
    }

    /// `(x0, y0)` batches of shape `(B, 1, H, W)`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let (h, w) = self.image_shape();
        let pick = |set: &[Tensor<T>]| -> Result<Tensor<T>> {
            let items = indices
                .iter()
                .map(|&i| {
                    set.get(i)
                        .cloned()
                        .ok_or(Error::Index { index: i, max: set.len() })
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor::stack(&items)?.reshape(&[indices.len(), 1, h, w])
        };
        Ok((pick(&self.full)?, pick(&self.under)?))
    }
}

/// Everything needed to continue training bit-exactly.
pub struct TrainerState<T: Scalar> {
    config: TrainingConfig,
    schedule: BridgeSchedule<T>,
    net: Denoiser<T>,
    theta1: ParamSet<T>,
    theta2: ParamSet<T>,
    moments1: Moments<T>,
    moments2: Moments<T>,
    step: u64,
    rng: RngState,
}

impl<T: Scalar> TrainerState<T> {
    /// Fresh state: θ1 and θ2 from the `init-theta1` / `init-theta2` streams,
    /// step randomness from the `train` stream of `seed`.
    pub fn new(config: TrainingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let theta1 = init_params_with(&mut RngState::named(seed, "init-theta1"), &config.denoiser)?;
        let theta2 = init_params_with(&mut RngState::named(seed, "init-theta2"), &config.denoiser)?;
        let moments1 = Moments::zeros_like(&theta1.tensors());
        let moments2 = Moments::zeros_like(&theta2.tensors());
        Self::from_parts(
            config,
            theta1,
            theta2,
            moments1,
            moments2,
            0,
            RngState::named(seed, "train"),
        )
    }

    /// Reassembles a saved state, checking it against the configuration.
    pub fn from_parts(
        config: TrainingConfig,
        theta1: ParamSet<T>,
        theta2: ParamSet<T>,
        moments1: Moments<T>,
        moments2: Moments<T>,
        step: u64,
        rng: RngState,
    ) -> Result<Self> {
        config.validate()?;
        let reference = init_params_with::<T>(&mut RngState::new(0), &config.denoiser)?;
        for (label, set, moments) in [("theta1", &theta1, &moments1), ("theta2", &theta2, &moments2)] {
            let names: Vec<&str> = set.names().collect();
            let expected: Vec<&str> = reference.names().collect();
            if names != expected {
                return Err(Error::InvalidConfig(format!(
                    "{label} parameter names do not match the denoiser configuration"
                )));
            }
            for ((name, t), (_, r)) in set.iter().zip(reference.iter()) {
                if t.shape() != r.shape() {
                    return Err(Error::InvalidConfig(format!(
                        "{label}.{name} has shape {:?}, configuration expects {:?}",
                        t.shape(),
                        r.shape()
                    )));
                }
            }
            let n = set.len();
            if moments.first.len() != n || moments.second.len() != n {
                return Err(Error::InvalidConfig(format!("{label} moment count mismatch")));
            }
            for (p, (m, v)) in set.tensors().iter().zip(moments.first.iter().zip(&moments.second)) {
                if p.shape() != m.shape() || p.shape() != v.shape() {
                    return Err(Error::InvalidConfig(format!("{label} moment shape mismatch")));
                }
            }
        }
        Ok(Self {
            schedule: BridgeSchedule::new(config.steps)?,
            net: Denoiser::new(config.denoiser.clone())?,
            config,
            theta1,
            theta2,
            moments1,
            moments2,
            step,
            rng,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn schedule(&self) -> &BridgeSchedule<T> {
        &self.schedule
    }

    pub fn network(&self) -> &Denoiser<T> {
        &self.net
    }

    pub fn theta1(&self) -> &ParamSet<T> {
        &self.theta1
    }

    pub fn theta2(&self) -> &ParamSet<T> {
        &self.theta2
    }

    pub fn moments(&self) -> (&Moments<T>, &Moments<T>) {
        (&self.moments1, &self.moments2)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn rng(&self) -> &RngState {
        &self.rng
    }

    fn draw_steps(&mut self, n: usize) -> Vec<usize> {
        let hi = self.config.steps as u32;
        (0..n).map(|_| self.rng.uniform_int(1, hi) as usize).collect()
    }

    /// Draws a batch from `data` and trains on it.
    pub fn train_on(&mut self, data: &PairedDataset<T>) -> Result<LossRecord> {
        let saved = self.rng.clone();
        let hi = (data.len() - 1) as u32;
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.uniform_int(0, hi) as usize)
            .collect();
        let (x0, y0) = data.batch(&idx)?;
        self.train_step(&x0, &y0).inspect_err(|_| self.rng = saved)
    }

    /// One optimizer step of both networks on a `(B, 1, H, W)` batch.
    ///
    /// A non-finite loss or gradient leaves the state untouched.
    pub fn train_step(&mut self, x0: &Tensor<T>, y0: &Tensor<T>) -> Result<LossRecord> {
        let saved = self.rng.clone();
        let result = self.try_step(x0, y0);
        if result.is_err() {
            self.rng = saved;
        }
        result
    }

    fn try_step(&mut self, x0: &Tensor<T>, y0: &Tensor<T>) -> Result<LossRecord> {
        if x0.shape() != y0.shape() {
            return Err(crate::error::conform("train_step", x0.shape(), y0.shape()));
        }
        let batch = match x0.shape() {
            &[b, 1, _, _] => b,
            s => return Err(Error::InvalidShape(format!("expected (B, 1, H, W) batch, got {s:?}"))),
        };
        let t1 = self.draw_steps(batch);
        let t2 = match self.config.t_mode {
            TimestepMode::Tied => t1.clone(),
            TimestepMode::Independent => self.draw_steps(batch),
        };
        let eps: Tensor<T> = seeded_standard_normal(&mut self.rng, x0.shape())?;

        let mut tape = Tape::new();
        let theta1 = self.net.bind(self.theta1.bind(&mut tape, true));
        let theta2 = self.net.bind(self.theta2.bind(&mut tape, true));
        let norm = self.config.loss_norm;
        let rec = rec_losses(&theta1, &theta2, &mut tape, &self.schedule, x0, y0, &t1, &eps, norm)?;
        let rec_sum = tape.add(rec.rec_x, rec.rec_y)?;
        let (total, selfcon) = if self.config.selfcon_enabled {
            let (sx, sy) = selfcon_losses(
                &theta1 as &dyn NoisePredictor<T>,
                &theta2,
                &mut tape,
                &self.schedule,
                x0,
                y0,
                rec.x_bar,
                rec.y_bar,
                &t2,
                &eps,
                T::lit(self.config.nested_noise_scale),
                norm,
            )?;
            let s = tape.add(sx, sy)?;
            let s = tape.scale(s, T::lit(self.config.lambda));
            (tape.add(s, rec_sum)?, Some((sx, sy)))
        } else {
            (rec_sum, None)
        };

        let value = |v| tape.value(v).item().map(|x: T| x.to_f64_lossy());
        let record = LossRecord {
            step: self.step + 1,
            rec_x: value(rec.rec_x)?,
            rec_y: value(rec.rec_y)?,
            selfcon_x: selfcon.map(|(sx, _)| value(sx)).transpose()?.unwrap_or(0.0),
            selfcon_y: selfcon.map(|(_, sy)| value(sy)).transpose()?.unwrap_or(0.0),
            total: value(total)?,
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is {} at step {}; update rejected",
                record.total, record.step
            )));
        }

        let mut grads = tape.backward(total)?;
        let g1 = theta1.params().gradients(&mut grads)?;
        let g2 = theta2.params().gradients(&mut grads)?;
        if !g1.iter().chain(&g2).all(Tensor::is_finite) {
            return Err(Error::NonFinite(format!(
                "non-finite gradient at step {}; update rejected",
                record.step
            )));
        }
        let opt = self.config.optimizer;
        opt.step(
            &mut self.theta1.tensors_mut(),
            &g1.iter().collect::<Vec<_>>(),
            &mut self.moments1,
            record.step,
        )?;
        opt.step(
            &mut self.theta2.tensors_mut(),
            &g2.iter().collect::<Vec<_>>(),
            &mut self.moments2,
            record.step,
        )?;
        self.step = record.step;
        Ok(record)
    }
}
