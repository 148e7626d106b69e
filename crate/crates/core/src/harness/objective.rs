//! The training objective composed through the toy denoiser.
//!
//! The predicted noise feeds the region-weighted loss directly. For the
//! identity term, the one-step clean estimate
//! `x0_hat = (z_t - sqrt(1 - a) * eps_hat) / sqrt(a)` is masked to the person
//! rectangle and projected by a frozen random matrix to an 8-dim "identity
//! embedding"; the source embedding is the same projection of the clean
//! person. Each toy image has exactly one face, the known rectangle.

use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::{backward_with, forward_with, Denoiser, DenoiserConfig};
use super::task::{ToySample, PIXELS};
use crate::error::{Error, Result};
use crate::losses::{ffip_loss, hbaf_loss, total_loss, HbafBatch, LossValue};
use crate::matching::{match_faces, FaceSet};
use crate::numerics::Tensor;
use crate::schedule::ScheduleConfig;

pub const EMBED_DIM: usize = 8;

/// Frozen linear map from a masked 16x16 patch to an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    weights: Vec<f64>,
}

impl Projection {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let scale = 1.0 / (PIXELS as f64).sqrt();
        Self {
            weights: (0..EMBED_DIM * PIXELS)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    pub fn embed(&self, patch: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(PIXELS)
            .map(|row| row.iter().zip(patch).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// `P^T g`.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; PIXELS];
        for (row, &gi) in self.weights.chunks_exact(PIXELS).zip(g) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += gi * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Region-weighted loss plus the gated identity term.
    Weighted,
    /// Unweighted mean squared error on the noise, nothing else.
    PlainMse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub schedule: ScheduleConfig,
    pub lambda_face: f64,
    pub use_ffip: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Weighted,
            schedule: ScheduleConfig::default(),
            lambda_face: crate::losses::DEFAULT_LAMBDA_FACE,
            use_ffip: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub sample: ToySample,
    pub alpha_bar: f64,
    pub z: Tensor,
    pub eps: Tensor,
}

impl NoisedSample {
    pub fn input(&self, t: u32, t_max: u32) -> Vec<f64> {
        Denoiser::input(self.z.data(), &self.sample.condition, f64::from(t) / f64::from(t_max))
    }
}

/// A batch sharing one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub t: u32,
    pub samples: Vec<NoisedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub hbaf: f64,
    pub ffip: Option<f64>,
    pub total: f64,
    pub mse: f64,
    pub fg_sq: f64,
    pub fg_n: usize,
    pub bg_sq: f64,
    pub bg_n: usize,
    /// `d total / d prediction`.
    pub d_prediction: Option<Vec<f64>>,
}

fn masked(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect()
}

/// Loss of one noise prediction for one sample at timestep `t`.
pub fn sample_loss(
    cfg: &ObjectiveConfig,
    projection: &Projection,
    s: &NoisedSample,
    t: u32,
    prediction: &[f64],
    with_grad: bool,
) -> Result<SampleLoss> {
    if prediction.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite noise prediction".into()));
    }
    let mask = &s.sample.mask;
    let n = prediction.len() as f64;
    let mut mse = 0.0;
    let (mut fg_sq, mut fg_n, mut bg_sq, mut bg_n) = (0.0, 0, 0.0, 0);
    for ((&p, &e), &m) in prediction.iter().zip(s.eps.data()).zip(mask.cells()) {
        let r2 = (p - e) * (p - e);
        mse += r2;
        if m {
            fg_sq += r2;
            fg_n += 1;
        } else {
            bg_sq += r2;
            bg_n += 1;
        }
    }
    mse /= n;

    let (hbaf, ffip, total, d_prediction) = match cfg.kind {
        ObjectiveKind::PlainMse => {
            let grad = with_grad.then(|| {
                prediction
                    .iter()
                    .zip(s.eps.data())
                    .map(|(&p, &e)| (p - e) * (2.0 / n))
                    .collect()
            });
            (mse, None, mse, grad)
        }
        ObjectiveKind::Weighted => {
            let pred = Tensor::new(s.eps.shape().to_vec(), prediction.to_vec())?;
            let batch = HbafBatch {
                prediction: &pred,
                target: &s.eps,
                latent_mask: mask,
                t: i64::from(t),
                cfg: &cfg.schedule,
            };
            let hbaf = hbaf_loss(&batch, with_grad)?;

            let gated = cfg.use_ffip && cfg.schedule.face_term_active(t);
            let (ffip, x0_scale) = if gated {
                let (s0, s1) = (s.alpha_bar.sqrt(), (1.0 - s.alpha_bar).sqrt());
                if s0 == 0.0 {
                    return Err(Error::Numerical(format!("clean estimate undefined at t={t}")));
                }
                let x0_hat: Vec<f64> = s
                    .z
                    .data()
                    .iter()
                    .zip(prediction)
                    .map(|(&z, &e)| (z - s1 * e) / s0)
                    .collect();
                let e_pred = vec![projection.embed(&masked(&x0_hat, mask.cells()))];
                let e_src = vec![projection.embed(&masked(s.sample.x0.data(), mask.cells()))];
                let m = match_faces(
                    &FaceSet::from_embeddings(e_pred.clone())?,
                    &FaceSet::from_embeddings(e_src.clone())?,
                )?;
                (ffip_loss(&e_pred, &e_src, &m, with_grad)?, -s1 / s0)
            } else {
                (LossValue::scalar(0.0), 0.0)
            };

            let total = total_loss(&hbaf, &ffip, i64::from(t), &cfg.schedule, cfg.lambda_face)?;
            let d_prediction = total.grad_prediction.as_ref().map(|g| {
                let mut d = g.data().to_vec();
                if let Some(ge) = &total.grad_embeddings {
                    let back = projection.pullback(ge.data());
                    for ((di, &b), &m) in d.iter_mut().zip(&back).zip(mask.cells()) {
                        if m {
                            *di += x0_scale * b;
                        }
                    }
                }
                d
            });
            (total.hbaf, total.ffip.filter(|_| gated), total.value, d_prediction)
        }
    };

    Ok(SampleLoss {
        hbaf,
        ffip,
        total,
        mse,
        fg_sq,
        fg_n,
        bg_sq,
        bg_n,
        d_prediction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub hbaf: f64,
    pub ffip: Option<f64>,
    pub total: f64,
    pub mse: f64,
    pub fg_mse: f64,
    pub bg_mse: f64,
    /// Gradient of `total` with respect to the flat denoiser parameters.
    pub grad: Option<Vec<f64>>,
}

/// Batch means of the per-sample losses, and the parameter gradient of the
/// mean total.
pub fn batch_loss(
    model_cfg: DenoiserConfig,
    params: &[f64],
    cfg: &ObjectiveConfig,
    projection: &Projection,
    batch: &Batch,
    with_grad: bool,
) -> Result<BatchLoss> {
    let t_max = cfg.schedule.t_max;
    let b = batch.samples.len();
    if b == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grad = with_grad.then(|| vec![0.0; model_cfg.n_params()]);
    let (mut hbaf, mut ffip, mut total, mut mse) = (0.0, None::<f64>, 0.0, 0.0);
    let (mut fg_sq, mut fg_n, mut bg_sq, mut bg_n) = (0.0, 0usize, 0.0, 0usize);
    for s in &batch.samples {
        let input = s.input(batch.t, t_max);
        let cache = forward_with(model_cfg, params, &input);
        let l = sample_loss(cfg, projection, s, batch.t, &cache.output, with_grad)?;
        hbaf += l.hbaf;
        total += l.total;
        mse += l.mse;
        if let Some(f) = l.ffip {
            *ffip.get_or_insert(0.0) += f;
        }
        fg_sq += l.fg_sq;
        fg_n += l.fg_n;
        bg_sq += l.bg_sq;
        bg_n += l.bg_n;
        if let (Some(g), Some(d)) = (grad.as_mut(), l.d_prediction) {
            let d: Vec<f64> = d.iter().map(|v| v / b as f64).collect();
            backward_with(model_cfg, params, &input, &cache, &d, g);
        }
    }
    let bf = b as f64;
    Ok(BatchLoss {
        hbaf: hbaf / bf,
        ffip: ffip.map(|f| f / bf),
        total: total / bf,
        mse: mse / bf,
        fg_mse: if fg_n > 0 { fg_sq / fg_n as f64 } else { 0.0 },
        bg_mse: if bg_n > 0 { bg_sq / bg_n as f64 } else { 0.0 },
        grad,
    })
}

/// Parameter gradients of the region-weighted term split into the part
/// flowing from person cells and the part from background cells.
pub fn region_gradients(
    model: &Denoiser,
    schedule: &ScheduleConfig,
    s: &NoisedSample,
    t: u32,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let input = s.input(t, schedule.t_max);
    let cache = model.forward(&input);
    let pred = Tensor::new(s.eps.shape().to_vec(), cache.output.clone())?;
    let batch = HbafBatch {
        prediction: &pred,
        target: &s.eps,
        latent_mask: &s.sample.mask,
        t: i64::from(t),
        cfg: schedule,
    };
    let g = hbaf_loss(&batch, true)?.grad.expect("gradient requested");
    let cells = s.sample.mask.cells();
    let fg_out = masked(g.data(), cells);
    let inv: Vec<bool> = cells.iter().map(|m| !m).collect();
    let bg_out = masked(g.data(), &inv);
    let mut fg = vec![0.0; model.cfg.n_params()];
    let mut bg = vec![0.0; model.cfg.n_params()];
    model.backward(&input, &cache, &fg_out, &mut fg);
    model.backward(&input, &cache, &bg_out, &mut bg);
    Ok((fg, bg))
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
