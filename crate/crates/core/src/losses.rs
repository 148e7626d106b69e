//! Region-weighted denoising loss, matched-face identity loss and their gated
//! sum, each with an analytic gradient.

use crate::error::{Error, Result};
use crate::masks::BinaryMask;
use crate::matching::MatchResult;
use crate::numerics::{dot, norm, Tensor};
use crate::schedule::{lambda_at, weight_from_lambda, ScheduleConfig};

pub const DEFAULT_LAMBDA_FACE: f64 = 0.02;

/// One denoising sample: prediction and target are `(C, H, W)`, the mask is
/// `(H, W)` and is shared by every channel.
#[derive(Debug, Clone, Copy)]
pub struct HbafBatch<'a> {
    pub prediction: &'a Tensor,
    pub target: &'a Tensor,
    pub latent_mask: &'a BinaryMask,
    pub t: i64,
    pub cfg: &'a ScheduleConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient with respect to the prediction (the predicted embeddings for
    /// the identity loss, shaped `(N_p, D)`).
    pub grad: Option<Tensor>,
    /// Set when the identity loss had no matched pairs.
    pub no_matches: bool,
}

impl LossValue {
    pub fn scalar(value: f64) -> Self {
        Self {
            value,
            grad: None,
            no_matches: false,
        }
    }
}

/// Weight tensor of shape `(1, H, W)` for the batch's timestep.
pub fn weight_mask(batch: &HbafBatch<'_>) -> Result<Tensor> {
    let lambda = lambda_at(batch.cfg, batch.t)?;
    let m = batch.latent_mask;
    let mask = m.to_tensor().reshape(vec![1, m.height(), m.width()])?;
    weight_from_lambda(lambda, &mask)
}

fn check_batch(batch: &HbafBatch<'_>) -> Result<()> {
    let shape = batch.prediction.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("prediction must be (C, H, W), got {shape:?}")));
    }
    if batch.target.shape() != shape {
        return Err(Error::Shape(format!(
            "target shape {:?} differs from prediction shape {shape:?}",
            batch.target.shape()
        )));
    }
    let m = batch.latent_mask;
    if [m.height(), m.width()] != shape[1..] {
        return Err(Error::Shape(format!(
            "mask is {}x{} but latent spatial dims are {:?}",
            m.height(),
            m.width(),
            &shape[1..]
        )));
    }
    Ok(())
}

/// `(1/N) * sum(M_t * (pred - target)^2)` with `N = C*H*W`.
///
/// Gradient: `(2/N) * M_t * (pred - target)`.
pub fn hbaf_loss(batch: &HbafBatch<'_>, with_grad: bool) -> Result<LossValue> {
    check_batch(batch)?;
    let weight = weight_mask(batch)?;
    let residual = batch.prediction.sub(batch.target)?;
    let n = residual.numel() as f64;
    let plane = weight.numel();

    let mut sum = 0.0;
    for (k, &r) in residual.data().iter().enumerate() {
        sum += weight.data()[k % plane] * (r * r);
    }
    let grad = with_grad
        .then(|| residual.mul(&weight).map(|g| g.scale(2.0 / n)))
        .transpose()?;
    Ok(LossValue {
        value: sum / n,
        grad,
        no_matches: false,
    })
}

fn check_vectors(name: &str, vs: &[Vec<f64>]) -> Result<Option<usize>> {
    let Some(first) = vs.first() else {
        return Ok(None);
    };
    let dim = first.len();
    if dim == 0 {
        return Err(Error::Shape(format!("{name} embeddings are empty")));
    }
    if let Some(i) = vs.iter().position(|v| v.len() != dim) {
        return Err(Error::Shape(format!(
            "{name} embedding {i} has length {}, expected {dim}",
            vs[i].len()
        )));
    }
    Ok(Some(dim))
}

fn unit(v: &[f64], what: &str) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateEmbedding(format!("{what} has norm {n}")));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Mean over matched pairs of `1 - cos(pred_i, src_j)`.
///
/// Inputs are raw vectors; normalization happens here, so the gradient with
/// respect to a predicted vector `v` is `-(s - (v̂·s) v̂) / (|M| ‖v‖)` where `s`
/// is the unit source vector. Unmatched predictions get zero gradient. With no
/// pairs the loss is 0 and `no_matches` is set.
pub fn ffip_loss(
    pred_embeddings: &[Vec<f64>],
    src_embeddings: &[Vec<f64>],
    matches: &MatchResult,
    with_grad: bool,
) -> Result<LossValue> {
    let pred_dim = check_vectors("predicted", pred_embeddings)?;
    let src_dim = check_vectors("source", src_embeddings)?;
    if let (Some(a), Some(b)) = (pred_dim, src_dim) {
        if a != b {
            return Err(Error::Shape(format!("embedding lengths differ: {a} vs {b}")));
        }
    }
    let mut seen_pred = vec![false; pred_embeddings.len()];
    let mut seen_src = vec![false; src_embeddings.len()];
    for &(i, j) in &matches.pairs {
        if i >= pred_embeddings.len() || j >= src_embeddings.len() {
            return Err(Error::Shape(format!(
                "pair ({i}, {j}) is out of range for {} predicted and {} source faces",
                pred_embeddings.len(),
                src_embeddings.len()
            )));
        }
        if std::mem::replace(&mut seen_pred[i], true) || std::mem::replace(&mut seen_src[j], true) {
            return Err(Error::Shape(format!("pair ({i}, {j}) breaks one-to-one matching")));
        }
    }

    let mut grad = match (with_grad, pred_dim) {
        (true, Some(d)) => Some(vec![0.0; pred_embeddings.len() * d]),
        _ => None,
    };
    if matches.is_empty() {
        return Ok(LossValue {
            value: 0.0,
            grad: grad.map(|g| Tensor::new(vec![pred_embeddings.len(), pred_dim.unwrap_or(1)], g)).transpose()?,
            no_matches: true,
        });
    }

    let count = matches.len() as f64;
    let mut sum = 0.0;
    for &(i, j) in &matches.pairs {
        let (v_hat, v_norm) = unit(&pred_embeddings[i], &format!("predicted embedding {i}"))?;
        let (s_hat, _) = unit(&src_embeddings[j], &format!("source embedding {j}"))?;
        let c = dot(&v_hat, &s_hat).clamp(-1.0, 1.0);
        sum += 1.0 - c;
        if let (Some(g), Some(d)) = (grad.as_mut(), pred_dim) {
            let row = &mut g[i * d..(i + 1) * d];
            let k = -1.0 / (count * v_norm);
            for ((gi, &s), &v) in row.iter_mut().zip(&s_hat).zip(&v_hat) {
                *gi += k * (s - c * v);
            }
        }
    }
    let grad = match (grad, pred_dim) {
        (Some(g), Some(d)) => Some(Tensor::new(vec![pred_embeddings.len(), d], g)?),
        _ => None,
    };
    Ok(LossValue {
        value: sum / count,
        grad,
        no_matches: false,
    })
}

/// Denoising loss plus the identity loss, the latter only when `t <= t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub hbaf: f64,
    /// Raw identity loss, present only when the gate is open.
    pub ffip: Option<f64>,
    pub grad_prediction: Option<Tensor>,
    /// `lambda_face` times the identity-loss gradient when the gate is open,
    /// zero otherwise.
    pub grad_embeddings: Option<Tensor>,
}

impl TotalLoss {
    pub fn ffip_active(&self) -> bool {
        self.ffip.is_some()
    }
}

pub fn total_loss(
    hbaf: &LossValue,
    ffip: &LossValue,
    t: i64,
    cfg: &ScheduleConfig,
    lambda_face: f64,
) -> Result<TotalLoss> {
    if !(lambda_face >= 0.0 && lambda_face.is_finite()) {
        return Err(Error::Config(format!("lambda_face must be finite and >= 0, got {lambda_face}")));
    }
    let t = cfg.check_timestep(t)?;
    let active = cfg.face_term_active(t);
    let (value, grad_embeddings) = if active {
        (
            hbaf.value + lambda_face * ffip.value,
            ffip.grad.as_ref().map(|g| g.scale(lambda_face)),
        )
    } else {
        (hbaf.value, ffip.grad.as_ref().map(Tensor::zeros_like))
    };
    Ok(TotalLoss {
        value,
        hbaf: hbaf.value,
        ffip: active.then_some(ffip.value),
        grad_prediction: hbaf.grad.clone(),
        grad_embeddings,
    })
}
