use rand::Rng;

use super::schedule::{interleave, layer_schedule, MixStrategy, MixingPlan};
use crate::context::{ContextEmbedding, ContextEncoder};
use crate::diffusion::{cfg_combine, uncond_context, EpsPredictor, Guidance, NoiseSchedule, Sampler};
use crate::error::{Error, Result};
use crate::flow::{FlowSpec, Modality};
use crate::net::{Diffuser, DiffuserConfig, SiteContext, SitePlan, NUM_SITES};
use crate::numerics::Tensor;

/// Guidance scale plus the unconditional embedding for each modality.
#[derive(Debug, Clone)]
pub struct GuidanceSetup {
    pub guidance: Guidance,
    image: ContextEmbedding,
    text: ContextEmbedding,
}

impl GuidanceSetup {
    pub fn new(guidance: Guidance, encoder: &ContextEncoder) -> Result<Self> {
        Ok(Self {
            guidance,
            image: uncond_context(guidance.mode, Modality::Image, encoder)?,
            text: uncond_context(guidance.mode, Modality::Text, encoder)?,
        })
    }

    /// Unguided conditional sampling.
    pub fn none(encoder: &ContextEncoder) -> Result<Self> {
        Self::new(Guidance::none(), encoder)
    }

    pub fn uncond(&self, m: Modality) -> &ContextEmbedding {
        match m {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }
}

#[derive(Debug, Clone)]
enum Mode<'a> {
    Single(&'a ContextEmbedding),
    ModelA([&'a ContextEmbedding; 2], Vec<bool>),
    ModelB([&'a ContextEmbedding; 2], f64),
    Layer([&'a ContextEmbedding; 2], Vec<Vec<bool>>),
    Attention(Vec<(&'a ContextEmbedding, f64)>),
}

/// Noise predictor for one output modality under a (possibly mixed) context.
#[derive(Debug, Clone)]
pub struct MixedPredictor<'a> {
    model: &'a Diffuser,
    output: Modality,
    guide: &'a GuidanceSetup,
    mode: Mode<'a>,
}

impl<'a> MixedPredictor<'a> {
    pub fn single(model: &'a Diffuser, output: Modality, ctx: &'a ContextEmbedding, guide: &'a GuidanceSetup) -> Self {
        Self { model, output, guide, mode: Mode::Single(ctx) }
    }

    /// Two-context predictor; `steps` is the number of reverse steps the
    /// sampler will take.
    pub fn two(
        model: &'a Diffuser,
        output: Modality,
        contexts: [&'a ContextEmbedding; 2],
        plan: MixingPlan,
        steps: usize,
        guide: &'a GuidanceSetup,
    ) -> Result<Self> {
        MixingPlan::new(plan.strategy, plan.rate)?;
        let mode = match plan.strategy {
            MixStrategy::ModelA => Mode::ModelA(contexts, interleave(steps, plan.rate)),
            MixStrategy::ModelB => Mode::ModelB(contexts, plan.rate),
            MixStrategy::Layer => {
                let sites = DiffuserConfig::sites(output).len();
                Mode::Layer(contexts, layer_schedule(steps, sites, plan.rate))
            }
            MixStrategy::Attention => {
                let [w1, w2] = plan.weights();
                Mode::Attention(vec![(contexts[0], w1), (contexts[1], w2)])
            }
        };
        Ok(Self { model, output, guide, mode })
    }

    /// Attention-level mixing over any number of contexts. Weights must be
    /// non-negative and sum to one.
    pub fn attention(
        model: &'a Diffuser,
        output: Modality,
        contexts: Vec<(&'a ContextEmbedding, f64)>,
        guide: &'a GuidanceSetup,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::arg("attention mixing needs at least one context"));
        }
        Ok(Self { model, output, guide, mode: Mode::Attention(contexts) })
    }

    fn eps(&self, x: &Tensor, t: usize, plan: &SitePlan<'_>) -> Result<Tensor> {
        self.model.denoise_routed(self.output, x, t, plan)
    }

    /// Guidance around a single-context prediction.
    fn guided_single(&self, x: &Tensor, t: usize, ctx: &ContextEmbedding) -> Result<Tensor> {
        let cond = self.eps(x, t, &single_plan(ctx))?;
        if !self.guide.guidance.needs_uncond() {
            return Ok(cond);
        }
        let un = self.eps(x, t, &single_plan(self.guide.uncond(ctx.modality())))?;
        cfg_combine(&un, &cond, self.guide.guidance.scale)
    }

    /// Guidance applied once around a site-mixed pass; the unconditional pass
    /// mirrors the plan with each context swapped for its modality's
    /// unconditional embedding.
    fn guided_plan<'s>(
        &'s self,
        x: &Tensor,
        t: usize,
        build: impl Fn(&dyn Fn(&'s ContextEmbedding) -> &'s ContextEmbedding) -> SitePlan<'s>,
    ) -> Result<Tensor> {
        let cond = self.eps(x, t, &build(&|c| c))?;
        if !self.guide.guidance.needs_uncond() {
            return Ok(cond);
        }
        let un = self.eps(x, t, &build(&|c| self.guide.uncond(c.modality())))?;
        cfg_combine(&un, &cond, self.guide.guidance.scale)
    }
}

fn single_plan(ctx: &ContextEmbedding) -> SitePlan<'_> {
    std::array::from_fn(|_| SiteContext::Single(ctx))
}

fn pick<'c>(contexts: &[&'c ContextEmbedding; 2], second: bool) -> &'c ContextEmbedding {
    if second {
        contexts[1]
    } else {
        contexts[0]
    }
}

impl EpsPredictor for MixedPredictor<'_> {
    fn predict(&self, x_t: &Tensor, t: usize, step_index: usize) -> Result<Tensor> {
        match &self.mode {
            Mode::Single(c) => self.guided_single(x_t, t, c),
            Mode::ModelA(cs, sched) => {
                let second = *sched
                    .get(step_index)
                    .ok_or_else(|| Error::arg(format!("step {step_index} beyond the mixing schedule")))?;
                self.guided_single(x_t, t, pick(cs, second))
            }
            Mode::ModelB(cs, r) => {
                if *r == 0.0 {
                    return self.guided_single(x_t, t, cs[0]);
                }
                if *r == 1.0 {
                    return self.guided_single(x_t, t, cs[1]);
                }
                let e1 = self.guided_single(x_t, t, cs[0])?;
                let e2 = self.guided_single(x_t, t, cs[1])?;
                e1.lincomb(1.0 - r, &e2, *r)
            }
            Mode::Layer(cs, sched) => {
                let row = sched
                    .get(step_index)
                    .ok_or_else(|| Error::arg(format!("step {step_index} beyond the mixing schedule")))?;
                let sites = DiffuserConfig::sites(self.output);
                self.guided_plan(x_t, t, |f| {
                    let mut plan: SitePlan<'_> = std::array::from_fn(|_| SiteContext::Single(f(cs[0])));
                    for (j, &site) in sites.iter().enumerate() {
                        plan[site] = SiteContext::Single(f(pick(cs, row[j])));
                    }
                    plan
                })
            }
            Mode::Attention(list) => self.guided_plan(x_t, t, |f| {
                std::array::from_fn::<_, NUM_SITES, _>(|_| {
                    SiteContext::Blend(list.iter().map(|&(c, w)| (f(c), w)).collect())
                })
            }),
        }
    }
}

/// Samples one flow from pure noise under a single context.
pub fn sample_flow<R: Rng + ?Sized>(
    model: &Diffuser,
    flow: FlowSpec,
    ctx: &ContextEmbedding,
    guide: &GuidanceSetup,
    sampler: Sampler,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    if ctx.modality() != flow.context {
        return Err(Error::Routing { expected: flow.context, got: ctx.modality() });
    }
    model.routes().route(flow)?;
    let p = MixedPredictor::single(model, flow.output, ctx, guide);
    sampler.sample(&p, &model.config().latent_shape(flow.output), sched, rng)
}

/// Samples `output` from pure noise under two mixed contexts.
#[allow(clippy::too_many_arguments)]
pub fn sample_mixed<R: Rng + ?Sized>(
    model: &Diffuser,
    output: Modality,
    contexts: [&ContextEmbedding; 2],
    plan: MixingPlan,
    guide: &GuidanceSetup,
    sampler: Sampler,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let steps = sampler.timesteps(sched)?.len();
    let p = MixedPredictor::two(model, output, contexts, plan, steps, guide)?;
    sampler.sample(&p, &model.config().latent_shape(output), sched, rng)
}
