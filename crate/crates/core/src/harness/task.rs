use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::masks::{rasterize_union, BBox, BinaryMask};
use crate::numerics::Tensor;

pub const GRID: usize = 16;
pub const PIXELS: usize = GRID * GRID;

/// Cumulative signal fractions `alpha_bar[t]` for `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_bar[t] = 1 - t / t_max`: clean at 0, pure noise at `t_max`.
    pub fn linear(t_max: u32) -> Self {
        let n = f64::from(t_max);
        Self {
            alpha_bar: (0..=t_max).map(|t| 1.0 - f64::from(t) / n).collect(),
        }
    }

    pub fn from_alpha_bars(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Config("noise schedule needs at least two entries".into()));
        }
        if alpha_bar.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("alpha_bar values must lie in [0, 1]".into()));
        }
        Ok(Self { alpha_bar })
    }

    pub fn t_max(&self) -> u32 {
        (self.alpha_bar.len() - 1) as u32
    }

    pub fn alpha_bar(&self, t: u32) -> f64 {
        self.alpha_bar[t as usize]
    }

    pub fn check_timestep(&self, t: i64) -> Result<u32> {
        let max = i64::from(self.t_max());
        if !(1..=max).contains(&t) {
            return Err(Error::Timestep { t, min: 1, max });
        }
        Ok(t as u32)
    }
}

/// One synthetic insertion example on a 16x16 grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    /// Background with the person composited in, shape `(1, 16, 16)`.
    pub x0: Tensor,
    /// Background alone, flattened; the denoiser's conditioning input.
    pub condition: Vec<f64>,
    pub person: BBox,
    pub mask: BinaryMask,
}

/// Generator for the toy insertion task: a textured rectangle ("person") over
/// a textured background.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub schedule: NoiseSchedule,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::linear(1000),
        }
    }
}

impl ToyTask {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ToySample {
        // background: low-amplitude plane wave in [0.05, 0.45]
        let fx = rng.random_range(0.2..0.9);
        let fy = rng.random_range(0.2..0.9);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let background: Vec<f64> = (0..PIXELS)
            .map(|i| {
                let (r, c) = ((i / GRID) as f64, (i % GRID) as f64);
                0.25 + 0.2 * (fx * c + fy * r + phase).sin()
            })
            .collect();

        let w = rng.random_range(3..=7u32);
        let h = rng.random_range(4..=10u32);
        let x0 = rng.random_range(0..=GRID as u32 - w);
        let y0 = rng.random_range(0..=GRID as u32 - h);
        let person = BBox::new(x0, y0, x0 + w, y0 + h);
        let mask = rasterize_union(&[person], GRID, GRID).expect("box inside the grid");

        // person: bright vertical gradient in [0.6, 1.0]
        let base = rng.random_range(0.6..0.8);
        let mut image = background.clone();
        for (i, px) in image.iter_mut().enumerate() {
            if mask.cells()[i] {
                let rel = ((i / GRID) as u32 - y0) as f64 / f64::from(h);
                *px = base + 0.2 * rel;
            }
        }
        ToySample {
            x0: Tensor::new(vec![1, GRID, GRID], image).expect("grid shape"),
            condition: background,
            person,
            mask,
        }
    }
}

/// `z_t = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`, `eps ~ N(0, I)`.
pub fn forward_noise_with<R: Rng + ?Sized>(alpha_bar: f64, x0: &Tensor, rng: &mut R) -> (Tensor, Tensor) {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let eps: Vec<f64> = (0..x0.numel()).map(|_| rng.sample(StandardNormal)).collect();
    let z: Vec<f64> = x0.data().iter().zip(&eps).map(|(&x, &e)| a * x + b * e).collect();
    let shape = x0.shape().to_vec();
    (
        Tensor::new(shape.clone(), z).expect("same shape as x0"),
        Tensor::new(shape, eps).expect("same shape as x0"),
    )
}

pub fn forward_noise<R: Rng + ?Sized>(task: &ToyTask, x0: &Tensor, t: i64, rng: &mut R) -> Result<(Tensor, Tensor)> {
    let t = task.schedule.check_timestep(t)?;
    Ok(forward_noise_with(task.schedule.alpha_bar(t), x0, rng))
}
