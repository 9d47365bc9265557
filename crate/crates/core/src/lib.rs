//! Self-consistent nested diffusion bridges for undersampled MRI
//! reconstruction, at desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, Brownian-bridge
//! schedules, a Cartesian k-space simulator, a contourlet decomposition, a
//! time-conditioned U-Net denoiser, the nested bridge training procedure and
//! reconstruction metrics. Numerical code is generic over [`Scalar`]; the
//! aliases below fix the precision.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod contourlet;
pub mod denoiser;
pub mod error;
pub mod kspace;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use bridge::{NoiseEstimator, NoisePredictor, TrainerState, TrainingConfig};
pub use denoiser::{Denoiser, DenoiserConfig};
pub use error::{Error, Result};
pub use params::ParamSet;
pub use rng::{seeded_standard_normal, RngState};
pub use scalar::Scalar;
pub use schedule::{BridgeSchedule, ReverseStepCoefficients};
pub use tensor::{Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Schedule32 = BridgeSchedule<f32>;
pub type Schedule64 = BridgeSchedule<f64>;
pub type Denoiser32 = Denoiser<f32>;
pub type Denoiser64 = Denoiser<f64>;
pub type Trainer32 = TrainerState<f32>;
pub type Trainer64 = TrainerState<f64>;
