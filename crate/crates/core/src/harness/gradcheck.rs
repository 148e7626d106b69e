//! Finite-difference verification of every analytic gradient, from the bare
//! losses up to the denoiser parameters.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::denoiser::{Denoiser, DenoiserConfig};
use super::objective::{batch_loss, region_gradients, Batch, NoisedSample, ObjectiveConfig, Projection};
use super::task::{forward_noise_with, ToyTask};
use crate::error::Result;
use crate::losses::{ffip_loss, hbaf_loss, HbafBatch};
use crate::masks::BinaryMask;
use crate::matching::{hungarian_max, SimilarityMatrix};
use crate::numerics::{cosine, grad_check, GradCheckConfig, Tensor};
use crate::schedule::ScheduleConfig;

pub const DEFAULT_TRIALS: usize = 100;
/// Hidden width for the repeated composed trials; `check_all_params` uses the
/// default width.
pub const TRIAL_HIDDEN: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} trials={:<4} failures={:<3} max_rel_err={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.failures,
            self.max_rel_err
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckSummary {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl GradCheckSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for GradCheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "some checks FAILED" })
    }
}

/// Test hook: distorts an analytic gradient before it is compared.
pub type Corruption = fn(&mut [f64]);

struct Tally {
    result: CheckResult,
}

impl Tally {
    fn new(name: &str) -> Self {
        Self {
            result: CheckResult {
                name: name.into(),
                trials: 0,
                failures: 0,
                max_rel_err: 0.0,
            },
        }
    }

    fn record(&mut self, passed: bool, rel_err: f64) {
        let r = &mut self.result;
        r.trials += 1;
        r.failures += usize::from(!passed);
        r.max_rel_err = r.max_rel_err.max(rel_err);
    }
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_mask<R: Rng>(rng: &mut R, h: usize, w: usize) -> BinaryMask {
    BinaryMask::from_cells(h, w, (0..h * w).map(|_| rng.random_bool(0.4)).collect()).expect("sized")
}

/// Region-weighted loss with respect to the prediction, random shapes,
/// masks, schedules and timesteps.
pub fn check_hbaf<R: Rng>(rng: &mut R, trials: usize) -> Result<CheckResult> {
    let gc = GradCheckConfig::default();
    let mut tally = Tally::new("hbaf_loss");
    for _ in 0..trials {
        let (c, h, w) = (rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5));
        let shape = vec![c, h, w];
        let pred = Tensor::new(shape.clone(), random_vec(rng, c * h * w))?;
        let target = Tensor::new(shape, random_vec(rng, c * h * w))?;
        let mask = random_mask(rng, h, w);
        let cfg = ScheduleConfig::new(rng.random_range(1.0..4.0), 1.0, 900, 808)?;
        let t = rng.random_range(0..=1000);
        let batch = HbafBatch { prediction: &pred, target: &target, latent_mask: &mask, t, cfg: &cfg };
        let grad = hbaf_loss(&batch, true)?.grad.expect("gradient requested");
        let f = |p: &Tensor| {
            let b = HbafBatch { prediction: p, ..batch };
            hbaf_loss(&b, false).map(|l| l.value).unwrap_or(f64::NAN)
        };
        let r = grad_check(f, &pred, &grad, &gc)?;
        tally.record(r.passed, r.max_rel_err);
    }
    Ok(tally.result)
}

/// Identity loss with respect to the raw predicted embeddings, matching held
/// fixed at the one found for the unperturbed input.
pub fn check_ffip<R: Rng>(rng: &mut R, trials: usize) -> Result<CheckResult> {
    let gc = GradCheckConfig::default();
    let mut tally = Tally::new("ffip_loss");
    for _ in 0..trials {
        let (np, ns, d) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(2..=8));
        let pred: Vec<Vec<f64>> = (0..np).map(|_| random_vec(rng, d)).collect();
        let src: Vec<Vec<f64>> = (0..ns).map(|_| random_vec(rng, d)).collect();
        let mut sim = Vec::with_capacity(np * ns);
        for p in &pred {
            for s in &src {
                sim.push(cosine(p, s)?);
            }
        }
        let m = hungarian_max(&SimilarityMatrix::new(np, ns, sim)?)?;
        let grad = ffip_loss(&pred, &src, &m, true)?.grad.expect("gradient requested");
        let x = Tensor::new(vec![np, d], pred.concat())?;
        let f = |p: &Tensor| {
            let rows: Vec<Vec<f64>> = p.data().chunks(d).map(<[f64]>::to_vec).collect();
            ffip_loss(&rows, &src, &m, false).map(|l| l.value).unwrap_or(f64::NAN)
        };
        let r = grad_check(f, &x, &grad, &gc)?;
        tally.record(r.passed, r.max_rel_err);
    }
    Ok(tally.result)
}

fn noised_batch<R: Rng>(task: &ToyTask, t: u32, size: usize, rng: &mut R) -> Batch {
    let alpha_bar = task.schedule.alpha_bar(t);
    let samples = (0..size)
        .map(|_| {
            let sample = task.sample(rng);
            let (z, eps) = forward_noise_with(alpha_bar, &sample.x0, rng);
            NoisedSample { sample, alpha_bar, z, eps }
        })
        .collect();
    Batch { t, samples }
}

fn check_params<R: Rng>(
    rng: &mut R,
    hidden: usize,
    t: u32,
    batch_size: usize,
    corrupt: Option<Corruption>,
) -> Result<(bool, f64)> {
    let task = ToyTask::default();
    let cfg = DenoiserConfig { hidden };
    let model = Denoiser::init(cfg, rng);
    let projection = Projection::init(rng);
    let objective = ObjectiveConfig::default();
    let batch = noised_batch(&task, t, batch_size, rng);
    let mut grad = batch_loss(cfg, &model.params, &objective, &projection, &batch, true)?
        .grad
        .expect("gradient requested");
    if let Some(c) = corrupt {
        c(&mut grad);
    }
    let n = cfg.n_params();
    let x = Tensor::new(vec![n], model.params.clone())?;
    let g = Tensor::new(vec![n], grad)?;
    let f = |p: &Tensor| {
        batch_loss(cfg, p.data(), &objective, &projection, &batch, false)
            .map(|l| l.total)
            .unwrap_or(f64::NAN)
    };
    let r = grad_check(f, &x, &g, &GradCheckConfig::default())?;
    Ok((r.passed, r.max_rel_err))
}

/// Total objective through the denoiser, all parameters perturbed. Timesteps
/// alternate between the gated-on range `[1, T_end]` and `(T_end, t_max]`.
pub fn check_composed<R: Rng>(
    rng: &mut R,
    trials: usize,
    hidden: usize,
    corrupt: Option<Corruption>,
) -> Result<CheckResult> {
    let sched = ScheduleConfig::default();
    let mut tally = Tally::new("composed_objective");
    for i in 0..trials {
        let t = if i % 2 == 0 {
            rng.random_range(1..=sched.t_end)
        } else {
            rng.random_range(sched.t_end + 1..=sched.t_max)
        };
        let (passed, err) = check_params(rng, hidden, t, 2, corrupt)?;
        tally.record(passed, err);
    }
    Ok(tally.result)
}

/// Width-32 denoiser, every parameter, one gated-on and one gated-off
/// timestep.
pub fn check_all_params(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("composed_all_params");
    let hidden = DenoiserConfig::default().hidden;
    for t in [600, 950] {
        let (passed, err) = check_params(&mut rng, hidden, t, 1, None)?;
        tally.record(passed, err);
    }
    Ok(tally.result)
}

/// Person-region parameter gradients under the dynamic schedule versus
/// uniform weighting on identical residuals. Each must be exactly `lambda(t)`
/// times the uniform one; background contributions must be identical. The
/// reported error is the worst relative deviation.
pub fn check_region_ratio(seed: u64, t: u32) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dynamic = ScheduleConfig::default();
    let uniform = ScheduleConfig::uniform(1.0);
    let expected = crate::schedule::lambda_at(&dynamic, i64::from(t))?;
    let task = ToyTask::default();
    let model = Denoiser::init(DenoiserConfig::default(), &mut rng);
    let batch = noised_batch(&task, t, 1, &mut rng);
    let s = &batch.samples[0];
    let (fg_d, bg_d) = region_gradients(&model, &dynamic, s, t)?;
    let (fg_u, bg_u) = region_gradients(&model, &uniform, s, t)?;
    let mut worst = 0.0f64;
    for (d, u) in fg_d.iter().zip(&fg_u) {
        worst = worst.max((d - expected * u).abs() / (expected * u).abs().max(1e-300));
    }
    for (d, u) in bg_d.iter().zip(&bg_u) {
        worst = worst.max((d - u).abs() / u.abs().max(1e-300));
    }
    let norm_ratio = super::objective::l2(&fg_d) / super::objective::l2(&fg_u);
    worst = worst.max((norm_ratio - expected).abs() / expected);
    let mut tally = Tally::new(&format!("region_ratio_t{t}"));
    tally.record(worst <= 1e-12, worst);
    Ok(tally.result)
}

/// Every check at its default size.
pub fn gradcheck_all(seed: u64) -> Result<GradCheckSummary> {
    gradcheck_with(seed, DEFAULT_TRIALS, None)
}

pub fn gradcheck_with(seed: u64, trials: usize, corrupt: Option<Corruption>) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        check_hbaf(&mut rng, trials)?,
        check_ffip(&mut rng, trials)?,
        check_composed(&mut rng, trials, TRIAL_HIDDEN, corrupt)?,
        check_region_ratio(seed, 854)?,
        check_region_ratio(seed, 950)?,
    ];
    Ok(GradCheckSummary { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes() {
        let s = gradcheck_with(0, 10, None).unwrap();
        assert!(s.passed(), "{s}");
    }

    #[test]
    fn corrupted_backward_is_reported() {
        fn halve_biases(g: &mut [f64]) {
            let n = g.len();
            for v in &mut g[n - 256..] {
                *v *= 0.5;
            }
        }
        let s = gradcheck_with(0, 4, Some(halve_biases)).unwrap();
        assert!(!s.passed());
        let composed = s.checks.iter().find(|c| c.name == "composed_objective").unwrap();
        assert_eq!(composed.failures, 4);
    }

    #[test]
    fn ratio_at_854_is_one_point_seven_five() {
        assert!(check_region_ratio(7, 854).unwrap().passed());
    }
}
