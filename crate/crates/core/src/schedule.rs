//! Timestep-dependent weight for the human region and the weight mask built
//! from it.
//!
//! The weight holds at `lambda_max` for `t > t_start`, falls linearly to
//! `lambda_min` over `(t_end, t_start]`, and stays at `lambda_min` for
//! `t <= t_end`. A fixed weight is the special case `lambda_max == lambda_min`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub t_start: u32,
    pub t_end: u32,
    /// Total number of diffusion steps; valid timesteps are `0..=t_max`.
    pub t_max: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lambda_max: 2.5,
            lambda_min: 1.0,
            t_start: 900,
            t_end: 808,
            t_max: 1000,
        }
    }
}

impl ScheduleConfig {
    pub fn new(lambda_max: f64, lambda_min: f64, t_start: u32, t_end: u32) -> Result<Self> {
        let cfg = Self {
            lambda_max,
            lambda_min,
            t_start,
            t_end,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same weight at every timestep.
    pub fn uniform(lambda: f64) -> Self {
        Self {
            lambda_max: lambda,
            lambda_min: lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max.is_finite() && self.lambda_min.is_finite()) {
            return Err(Error::Config("lambda values must be finite".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_max > 0.0) {
            return Err(Error::Config(format!(
                "lambda values must be positive, got min {} max {}",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.lambda_min > self.lambda_max {
            return Err(Error::Config(format!(
                "lambda_min {} exceeds lambda_max {}",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.t_end < self.t_start && self.t_start <= self.t_max) {
            return Err(Error::Config(format!(
                "need t_end < t_start <= t_max, got {} / {} / {}",
                self.t_end, self.t_start, self.t_max
            )));
        }
        Ok(())
    }

    pub fn check_timestep(&self, t: i64) -> Result<u32> {
        if t < 0 || t > i64::from(self.t_max) {
            return Err(Error::Timestep {
                t,
                min: 0,
                max: i64::from(self.t_max),
            });
        }
        Ok(t as u32)
    }

    /// `true` when the face identity term is switched on.
    pub fn face_term_active(&self, t: u32) -> bool {
        t <= self.t_end
    }
}

pub fn lambda_at(cfg: &ScheduleConfig, t: i64) -> Result<f64> {
    let t = cfg.check_timestep(t)?;
    Ok(if t > cfg.t_start {
        cfg.lambda_max
    } else if t > cfg.t_end {
        let frac = f64::from(t - cfg.t_end) / f64::from(cfg.t_start - cfg.t_end);
        cfg.lambda_min + frac * (cfg.lambda_max - cfg.lambda_min)
    } else {
        cfg.lambda_min
    })
}

/// `1 + (lambda(t) - 1) * mask`: background cells stay at exactly 1.
pub fn adaptive_mask(cfg: &ScheduleConfig, t: i64, latent_mask: &Tensor) -> Result<Tensor> {
    let lambda = lambda_at(cfg, t)?;
    weight_from_lambda(lambda, latent_mask)
}

pub(crate) fn weight_from_lambda(lambda: f64, latent_mask: &Tensor) -> Result<Tensor> {
    if let Some(i) = latent_mask.data().iter().position(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::Mask(format!(
            "mask entry {} at flat index {i} is not 0 or 1",
            latent_mask.data()[i]
        )));
    }
    Ok(latent_mask.map(|m| if m == 1.0 { lambda } else { 1.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: u32,
    pub lambda: f64,
}

pub fn emit_schedule_curve(cfg: &ScheduleConfig, stride: u32) -> Result<Vec<CurvePoint>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    (0..=cfg.t_max)
        .step_by(stride as usize)
        .map(|t| {
            Ok(CurvePoint {
                t,
                lambda: lambda_at(cfg, i64::from(t))?,
            })
        })
        .collect()
}

/// Writes the curve as CSV with header `t,lambda`.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_cfg() -> ScheduleConfig {
        ScheduleConfig::new(2.5, 1.0, 900, 808).unwrap()
    }

    #[test]
    fn lambda_fixtures() {
        let cfg = default_cfg();
        assert_eq!(lambda_at(&cfg, 950).unwrap(), 2.5);
        assert_eq!(lambda_at(&cfg, 808).unwrap(), 1.0);
        assert_eq!(lambda_at(&cfg, 854).unwrap(), 1.75);
        assert_eq!(lambda_at(&cfg, 900).unwrap(), 2.5);
        assert_eq!(lambda_at(&cfg, 0).unwrap(), 1.0);
    }

    #[test]
    fn timestep_out_of_range() {
        let cfg = default_cfg();
        assert!(matches!(lambda_at(&cfg, -1), Err(Error::Timestep { .. })));
        assert!(matches!(lambda_at(&cfg, 1001), Err(Error::Timestep { .. })));
        assert!(lambda_at(&cfg, 1000).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(ScheduleConfig::new(1.0, 2.0, 900, 808).is_err());
        assert!(ScheduleConfig::new(2.5, 1.0, 808, 808).is_err());
        assert!(ScheduleConfig::new(2.5, 1.0, 1001, 808).is_err());
        assert!(ScheduleConfig::new(2.5, 0.0, 900, 808).is_err());
        assert_eq!(ScheduleConfig::default(), default_cfg());
    }

    #[test]
    fn mask_fixtures() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w = weight_from_lambda(2.0, &m).unwrap();
        assert_eq!(w.data(), &[2.0, 1.0, 1.0, 2.0]);

        let cfg = default_cfg();
        let ones = adaptive_mask(&cfg, 500, &m).unwrap();
        assert_eq!(ones.data(), &[1.0; 4]);

        let single = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert_eq!(adaptive_mask(&cfg, 854, &single).unwrap().data(), &[1.75]);
    }

    #[test]
    fn non_binary_mask_rejected() {
        let m = Tensor::new(vec![2], vec![1.0, 0.5]).unwrap();
        assert!(matches!(adaptive_mask(&default_cfg(), 900, &m), Err(Error::Mask(_))));
    }

    #[test]
    fn curve_endpoints() {
        let cfg = default_cfg();
        let pts = emit_schedule_curve(&cfg, 1000).unwrap();
        assert_eq!(
            pts,
            vec![CurvePoint { t: 0, lambda: 1.0 }, CurvePoint { t: 1000, lambda: 2.5 }]
        );
        let flat = emit_schedule_curve(&ScheduleConfig::uniform(1.0), 100).unwrap();
        assert_eq!(flat.len(), 11);
        assert!(flat.iter().all(|p| p.lambda == 1.0));
        assert!(emit_schedule_curve(&cfg, 0).is_err());
    }

    #[test]
    fn curve_csv_format() {
        let pts = emit_schedule_curve(&default_cfg(), 1000).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,lambda\n0,1.0\n1000,2.5\n");
    }

    #[test]
    fn monotone_and_continuous_over_full_range() {
        let cfg = default_cfg();
        let slope = (cfg.lambda_max - cfg.lambda_min) / f64::from(cfg.t_start - cfg.t_end);
        let vals: Vec<f64> = (0..=1000).map(|t| lambda_at(&cfg, t).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
            assert!(w[1] - w[0] <= slope + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn mask_values_bounded(
            lmax in 1.0f64..5.0,
            lfrac in 0.0f64..1.0,
            t in 0i64..=1000,
            bits in prop::collection::vec(any::<bool>(), 1..32),
        ) {
            let lmin = 1.0 + (lmax - 1.0) * lfrac;
            let cfg = ScheduleConfig::new(lmax, lmin, 900, 808).unwrap();
            let m = Tensor::new(vec![bits.len()], bits.iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap();
            let w = adaptive_mask(&cfg, t, &m).unwrap();
            for (wi, mi) in w.data().iter().zip(m.data()) {
                if *mi == 0.0 {
                    prop_assert_eq!(*wi, 1.0);
                } else {
                    prop_assert!(*wi >= lmin && *wi <= lmax);
                }
            }
        }

        #[test]
        fn degenerate_schedule_is_all_ones(t in 0i64..=1000, bits in prop::collection::vec(any::<bool>(), 1..16)) {
            let cfg = ScheduleConfig::uniform(1.0);
            let m = Tensor::new(vec![bits.len()], bits.iter().map(|&b| f64::from(u8::from(b))).collect()).unwrap();
            let w = adaptive_mask(&cfg, t, &m).unwrap();
            prop_assert!(w.data().iter().all(|&v| v == 1.0));
        }

        #[test]
        fn monotone_for_random_configs(
            lmax in 1.0f64..5.0,
            t_end in 0u32..500,
            gap in 1u32..400,
            t1 in 0i64..=1000,
            t2 in 0i64..=1000,
        ) {
            let cfg = ScheduleConfig::new(lmax, 1.0, t_end + gap, t_end).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(lambda_at(&cfg, lo).unwrap() <= lambda_at(&cfg, hi).unwrap());
        }
    }
}
