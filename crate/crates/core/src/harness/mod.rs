//! Toy end-to-end training: a 16x16 insertion task, a small denoiser with a
//! hand-written backward pass, the composed objective, and gradient checks.

pub mod denoiser;
pub mod gradcheck;
pub mod objective;
pub mod task;
pub mod train;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use gradcheck::{gradcheck_all, gradcheck_with, CheckResult, GradCheckSummary};
pub use objective::{ObjectiveConfig, ObjectiveKind, Projection};
pub use task::{forward_noise, NoiseSchedule, ToySample, ToyTask};
pub use train::{train_demo, LogRow, TrainConfig, TrainLog, Trainer};
