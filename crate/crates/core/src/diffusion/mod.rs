//! Noise schedule, forward process, ε-prediction loss, samplers and guidance.

mod guidance;
mod sampler;
mod schedule;

pub use guidance::{cfg_combine, uncond_context, Guidance, UncondMode};
pub use sampler::{ddim_step, ddim_timesteps, ddpm_step, eps_loss, EpsPredictor, Sampler};
pub use schedule::{
    forward_diffuse, rescaled_endpoints, NoiseSchedule, REFERENCE_BETA_END, REFERENCE_BETA_START, REFERENCE_STEPS,
    TOY_STEPS,
};
