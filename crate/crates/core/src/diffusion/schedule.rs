use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Linear β endpoints at 1000 steps.
pub const REFERENCE_STEPS: usize = 1000;
pub const REFERENCE_BETA_START: f64 = 8.5e-5;
pub const REFERENCE_BETA_END: f64 = 1.2e-2;

/// Default step count for desk-scale runs.
pub const TOY_STEPS: usize = 200;

/// β/α/ᾱ tables for a `T`-step forward process. Index 0 of `alpha_bars`
/// is 1; `betas`/`alphas` are indexed `1..=T` with a padding entry at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// β linear in `t` from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::arg("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::arg(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
        }
        let mut betas = vec![0.0; steps + 1];
        for (t, beta) in betas.iter_mut().enumerate().skip(1) {
            *beta = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
            };
        }
        // pin the last entry so the endpoint is exact
        if steps > 1 {
            betas[steps] = beta_end;
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = vec![1.0; steps + 1];
        for t in 1..=steps {
            alpha_bars[t] = alpha_bars[t - 1] * alphas[t];
        }
        Ok(Self { steps, betas, alphas, alpha_bars })
    }

    /// The 1000-step endpoints rescaled to `steps` so that Σβ stays roughly constant.
    pub fn rescaled(steps: usize) -> Result<Self> {
        let (start, end) = rescaled_endpoints(steps);
        Self::linear(steps, start, end)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// ᾱ_t for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Posterior variance β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t).
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t])
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::arg(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }
}

pub fn rescaled_endpoints(steps: usize) -> (f64, f64) {
    let factor = REFERENCE_STEPS as f64 / steps as f64;
    (REFERENCE_BETA_START * factor, REFERENCE_BETA_END * factor)
}

/// Closed-form marginal `x_t = √ᾱ_t x0 + √(1−ᾱ_t) ε`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt())
}
