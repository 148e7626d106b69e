//! Central-difference gradient verification.

use serde::Serialize;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Pass threshold on the largest relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so coordinates whose true
    /// gradient is zero are judged on absolute error instead of amplified noise.
    pub scale_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-5,
            scale_floor: 1.0,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub worst_index: usize,
    pub passed: bool,
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate `i` of `x`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, scale_floor)`.
pub fn grad_check<F>(
    mut f: F,
    x: &Tensor,
    analytic: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> f64,
{
    if x.shape() != analytic.shape() {
        return Err(Error::Shape(format!(
            "analytic gradient shape {:?} differs from input shape {:?}",
            analytic.shape(),
            x.shape()
        )));
    }
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::Config(format!("step must be positive, got {}", cfg.step)));
    }
    let shape = x.shape().to_vec();
    let mut probe = x.data().to_vec();
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_index: 0,
        passed: false,
    };
    let mut eval = |data: &[f64], i: usize| -> Result<f64> {
        let t = Tensor::new(shape.clone(), data.to_vec())?;
        let v = f(&t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!(
                "objective returned {v} while probing coordinate {i}"
            )))
        }
    };
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + cfg.step;
        let plus = eval(&probe, i)?;
        probe[i] = orig - cfg.step;
        let minus = eval(&probe, i)?;
        probe[i] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic.data()[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(cfg.scale_floor);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_err <= cfg.tol;
    Ok(report)
}
