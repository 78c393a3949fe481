use rand::Rng;

use super::schedule::{forward_diffuse, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Anything that predicts the injected noise at step `t`.
///
/// `step_index` is the 0-based position inside the current sampling loop;
/// schedules that interleave contexts over steps key off it.
pub trait EpsPredictor {
    fn predict(&self, x_t: &Tensor, t: usize, step_index: usize) -> Result<Tensor>;
}

impl<F> EpsPredictor for F
where
    F: Fn(&Tensor, usize, usize) -> Result<Tensor>,
{
    fn predict(&self, x_t: &Tensor, t: usize, step_index: usize) -> Result<Tensor> {
        self(x_t, t, step_index)
    }
}

/// ε-prediction training objective: mean squared error between the injected
/// noise and the model's prediction on `forward_diffuse(x0, t, eps)`.
pub fn eps_loss<F>(
    graph: &mut Graph,
    predict: F,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    if eps.shape() != x0.shape() {
        return Err(Error::dim(format!("eps {:?} vs x0 {:?}", eps.shape(), x0.shape())));
    }
    let x_t = forward_diffuse(x0, t, eps, sched)?;
    let x_t = graph.constant(x_t);
    let pred = predict(graph, x_t)?;
    if graph.shape(pred) != eps.shape() {
        return Err(Error::dim(format!("prediction {:?} vs eps {:?}", graph.shape(pred), eps.shape())));
    }
    graph.mse(pred, eps)
}

/// Ancestral step with fixed variance β̃_t. No noise is added at `t = 1`.
pub fn ddpm_step<P, R>(
    model: &P,
    x_t: &Tensor,
    t: usize,
    step_index: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor>
where
    P: EpsPredictor + ?Sized,
    R: Rng + ?Sized,
{
    sched.check_step(t)?;
    let eps = model.predict(x_t, t, step_index)?;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let mean = x_t.lincomb(1.0, &eps, -coef)?.scale(1.0 / sched.alpha(t).sqrt());
    if t == 1 {
        return Ok(mean);
    }
    let sigma = sched.posterior_variance(t).sqrt();
    let z = Tensor::randn(x_t.shape(), rng);
    mean.lincomb(1.0, &z, sigma)
}

/// Deterministic step from `t` to `t_prev < t` (`t_prev = 0` lands on x̂0).
pub fn ddim_step<P>(
    model: &P,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    step_index: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor>
where
    P: EpsPredictor + ?Sized,
{
    sched.check_step(t)?;
    if t_prev >= t {
        return Err(Error::arg(format!("ddim step needs t_prev < t, got {t_prev} >= {t}")));
    }
    let eps = model.predict(x_t, t, step_index)?;
    ddim_update(x_t, &eps, t, t_prev, sched)
}

pub(crate) fn ddim_update(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let x0 = x_t.lincomb(1.0, eps, -(1.0 - ab).sqrt())?.scale(1.0 / ab.sqrt());
    if t_prev == 0 {
        return Ok(x0);
    }
    x0.lincomb(ab_prev.sqrt(), eps, (1.0 - ab_prev).sqrt())
}

/// Evenly spaced DDIM timesteps `ceil(i·T/steps)` for `i = steps..1`, descending.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::arg(format!("ddim steps {steps} must be in 1..={total}")));
    }
    Ok((1..=steps).rev().map(|i| (i * total).div_ceil(steps)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// Ancestral sampling over every step `T..1`.
    Ddpm,
    /// Deterministic sampling over `steps` evenly spaced timesteps.
    Ddim { steps: usize },
}

impl Sampler {
    /// Timesteps visited, in sampling order.
    pub fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>> {
        match *self {
            Sampler::Ddpm => Ok((1..=sched.steps()).rev().collect()),
            Sampler::Ddim { steps } => ddim_timesteps(sched.steps(), steps),
        }
    }

    /// Runs the reverse chain from pure Gaussian noise.
    pub fn sample<P, R>(&self, model: &P, shape: &[usize], sched: &NoiseSchedule, rng: &mut R) -> Result<Tensor>
    where
        P: EpsPredictor + ?Sized,
        R: Rng + ?Sized,
    {
        let x_t = Tensor::randn(shape, rng);
        self.run_from(model, x_t, sched, rng)
    }

    /// Runs the reverse chain from a given `x_T`.
    pub fn run_from<P, R>(&self, model: &P, mut x: Tensor, sched: &NoiseSchedule, rng: &mut R) -> Result<Tensor>
    where
        P: EpsPredictor + ?Sized,
        R: Rng + ?Sized,
    {
        let ts = self.timesteps(sched)?;
        for (i, &t) in ts.iter().enumerate() {
            x = match self {
                Sampler::Ddpm => ddpm_step(model, &x, t, i, sched, rng)?,
                Sampler::Ddim { .. } => {
                    let t_prev = ts.get(i + 1).copied().unwrap_or(0);
                    ddim_step(model, &x, t, t_prev, i, sched)?
                }
            };
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("sample diverged at step {t}")));
            }
        }
        Ok(x)
    }
}
