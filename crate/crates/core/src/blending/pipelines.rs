use rand::Rng;

use super::predictor::{sample_flow, sample_mixed, GuidanceSetup};
use super::schedule::{MixStrategy, MixingPlan};
use crate::attrs::{AttrPrompt, Attrs};
use crate::context::{
    concat_contexts, edit_text_latent, pca_disentangle, ContextEmbedding, ContextEncoder, TextCodec, TextLatent,
};
use crate::diffusion::{NoiseSchedule, Sampler};
use crate::error::Result;
use crate::flow::{FlowSpec, Modality};
use crate::net::Diffuser;
use crate::numerics::Tensor;

/// Share of the edited text context when it is mixed with the style context.
pub const EDIT_MIX_RATE: f64 = 0.66;
/// Disentanglement level of the style context (keep the top two components).
pub const STYLE_LEVEL: i32 = 2;

/// Image variation from a raw render at a disentanglement level.
#[allow(clippy::too_many_arguments)]
pub fn image_variation<R: Rng + ?Sized>(
    model: &Diffuser,
    encoder: &ContextEncoder,
    raw: &Tensor,
    level: i32,
    guide: &GuidanceSetup,
    sampler: Sampler,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let ctx = pca_disentangle(&encoder.encode_image(raw)?, level)?;
    sample_flow(model, FlowSpec::IV, &ctx, guide, sampler, sched, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditOptions {
    pub rate: f64,
    pub style_level: i32,
    pub strategy: MixStrategy,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self { rate: EDIT_MIX_RATE, style_level: STYLE_LEVEL, strategy: MixStrategy::Attention }
    }
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    /// Attributes read off the image by the image-to-text flow.
    pub caption: Attrs,
    pub latent: TextLatent,
    pub edited_latent: TextLatent,
    pub edited: Attrs,
    /// Image latent from the text-to-image pass.
    pub image: Tensor,
}

/// Image → text → edited text → image.
///
/// The edited prompt's context is followed by the positive prompt's context;
/// that text context is mixed with the style-level image context.
#[allow(clippy::too_many_arguments)]
pub fn i2t2i<R: Rng + ?Sized>(
    model: &Diffuser,
    encoder: &ContextEncoder,
    codec: &TextCodec,
    raw: &Tensor,
    neg: &AttrPrompt,
    pos: &AttrPrompt,
    opts: &EditOptions,
    guide: &GuidanceSetup,
    sampler: Sampler,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<EditOutcome> {
    model.routes().route(FlowSpec::I2T)?;
    model.routes().route(FlowSpec::T2I)?;
    let image_ctx = encoder.encode_image(raw)?;
    let z = TextLatent(sample_flow(model, FlowSpec::I2T, &image_ctx, guide, sampler, sched, rng)?);
    let caption = codec.decode(&z)?;
    let edited_latent = edit_text_latent(&z, &codec.encode_prompt(neg), &codec.encode_prompt(pos))?;
    let edited = codec.decode(&edited_latent)?;
    let text_ctx = edit_context(encoder, edited, pos)?;
    let style = pca_disentangle(&image_ctx, opts.style_level)?;
    let plan = MixingPlan::new(opts.strategy, opts.rate)?;
    let image = sample_mixed(model, Modality::Image, [&style, &text_ctx], plan, guide, sampler, sched, rng)?;
    Ok(EditOutcome { caption, latent: z, edited_latent, edited, image })
}

/// Context of the edited caption with the positive prompt's context appended.
pub fn edit_context(encoder: &ContextEncoder, edited: Attrs, pos: &AttrPrompt) -> Result<ContextEmbedding> {
    let a = encoder.encode_text(&edited.prompt())?;
    let b = encoder.encode_text(pos)?;
    concat_contexts(&[&a, &b], &[1.0, 1.0])
}
