use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::denoiser::{Denoiser, DenoiserConfig};
use super::objective::{batch_loss, Batch, BatchLoss, NoisedSample, ObjectiveConfig, ObjectiveKind, Projection};
use super::task::{forward_noise_with, NoiseSchedule, ToyTask};
use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;

// independent RNG streams derived from one seed
const STREAM_INIT: u64 = 0;
const STREAM_PROJECTION: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_EVAL: u64 = 3;

const EVAL_BATCHES: usize = 16;

/// Narrower widths cannot carry the near-identity map from `z_t` to the noise
/// through the tanh layer and stall near MSE 1.
pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub schedule: ScheduleConfig,
    pub lambda_face: f64,
    pub use_ffip: bool,
    pub seed: u64,
    pub objective: ObjectiveKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1.0,
            batch_size: 8,
            hidden: DEFAULT_HIDDEN,
            schedule: ScheduleConfig::default(),
            lambda_face: crate::losses::DEFAULT_LAMBDA_FACE,
            use_ffip: true,
            seed: 0,
            objective: ObjectiveKind::Weighted,
        }
    }
}

impl TrainConfig {
    /// Same run with uniform weighting and no identity term.
    pub fn uniform(&self) -> Self {
        Self {
            schedule: ScheduleConfig {
                lambda_max: 1.0,
                lambda_min: 1.0,
                ..self.schedule
            },
            lambda_face: 0.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size and hidden must be >= 1".into()));
        }
        if !(self.lambda_face >= 0.0 && self.lambda_face.is_finite()) {
            return Err(Error::Config(format!("lambda_face must be finite and >= 0, got {}", self.lambda_face)));
        }
        self.schedule.validate()
    }

    fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            kind: self.objective,
            schedule: self.schedule,
            lambda_face: self.lambda_face,
            use_ffip: self.use_ffip,
        }
    }
}

/// One CSV row. `ffip` is empty when the identity term was not evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub t: u32,
    pub hbaf: f64,
    pub ffip: Option<f64>,
    pub total: f64,
    pub mse: f64,
    pub fg_mse: f64,
    pub bg_mse: f64,
}

/// Unweighted errors over the held-out set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mse: f64,
    pub fg_mse: f64,
    pub bg_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub final_eval: EvalSummary,
}

impl TrainLog {
    /// Header: `step,t,hbaf,ffip,total,mse,fg_mse,bg_mse`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct Trainer {
    cfg: TrainConfig,
    objective: ObjectiveConfig,
    task: ToyTask,
    pub model: Denoiser,
    pub projection: Projection,
    data_rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Denoiser::init(DenoiserConfig { hidden: cfg.hidden }, &mut stream(cfg.seed, STREAM_INIT));
        let projection = Projection::init(&mut stream(cfg.seed, STREAM_PROJECTION));
        Ok(Self {
            cfg,
            objective: cfg.objective(),
            task: ToyTask {
                schedule: NoiseSchedule::linear(cfg.schedule.t_max),
            },
            model,
            projection,
            data_rng: stream(cfg.seed, STREAM_DATA),
            step: 0,
        })
    }

    fn draw_batch<R: Rng>(task: &ToyTask, batch_size: usize, rng: &mut R) -> Batch {
        let t = rng.random_range(1..=task.schedule.t_max());
        let alpha_bar = task.schedule.alpha_bar(t);
        let samples = (0..batch_size)
            .map(|_| {
                let sample = task.sample(rng);
                let (z, eps) = forward_noise_with(alpha_bar, &sample.x0, rng);
                NoisedSample { sample, alpha_bar, z, eps }
            })
            .collect();
        Batch { t, samples }
    }

    /// Next training batch; `t` uniform over `[1, t_max]`.
    pub fn sample_batch(&mut self) -> Batch {
        Self::draw_batch(&self.task, self.cfg.batch_size, &mut self.data_rng)
    }

    /// Fixed held-out batches, identical for every run sharing the seed.
    pub fn eval_set(&self) -> Vec<Batch> {
        let mut rng = stream(self.cfg.seed, STREAM_EVAL);
        (0..EVAL_BATCHES)
            .map(|_| Self::draw_batch(&self.task, self.cfg.batch_size, &mut rng))
            .collect()
    }

    pub fn loss(&self, batch: &Batch, with_grad: bool) -> Result<BatchLoss> {
        batch_loss(self.model.cfg, &self.model.params, &self.objective, &self.projection, batch, with_grad)
    }

    pub fn apply(&mut self, grad: &[f64]) {
        let lr = self.cfg.lr;
        for (p, g) in self.model.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }

    pub fn step(&mut self) -> Result<LogRow> {
        let batch = self.sample_batch();
        let step = self.step;
        let loss = match self.loss(&batch, true) {
            // overflowing activations surface as these before the loss itself goes non-finite
            Err(Error::Numerical(_) | Error::DegenerateEmbedding(_)) => return Err(Error::Divergence { step }),
            other => other?,
        };
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step });
        }
        self.apply(loss.grad.as_deref().expect("gradient requested"));
        if !self.model.is_finite() {
            return Err(Error::Divergence { step });
        }
        self.step += 1;
        Ok(LogRow {
            step,
            t: batch.t,
            hbaf: loss.hbaf,
            ffip: loss.ffip,
            total: loss.total,
            mse: loss.mse,
            fg_mse: loss.fg_mse,
            bg_mse: loss.bg_mse,
        })
    }

    pub fn evaluate(&self, set: &[Batch]) -> Result<EvalSummary> {
        let (mut mse, mut fg, mut bg) = (0.0, 0.0, 0.0);
        for b in set {
            let l = self.loss(b, false)?;
            mse += l.mse;
            fg += l.fg_mse;
            bg += l.bg_mse;
        }
        let n = set.len() as f64;
        Ok(EvalSummary {
            mse: mse / n,
            fg_mse: fg / n,
            bg_mse: bg / n,
        })
    }
}

pub fn train_demo(cfg: TrainConfig) -> Result<TrainLog> {
    let mut trainer = Trainer::new(cfg)?;
    let rows = (0..cfg.steps).map(|_| trainer.step()).collect::<Result<Vec<_>>>()?;
    let final_eval = trainer.evaluate(&trainer.eval_set())?;
    Ok(TrainLog { rows, final_eval })
}
