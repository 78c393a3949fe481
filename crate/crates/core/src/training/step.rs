use rand::Rng;

use super::grads::{apply_grad_scales, GradScaleConfig, GradientStore};
use super::optimizer::Optimizer;
use crate::context::ContextEmbedding;
use crate::diffusion::{eps_loss, NoiseSchedule};
use crate::error::{Error, Result};
use crate::flow::{FlowSpec, Modality};
use crate::net::{Diffuser, ParamBinder};
use crate::numerics::{stream_rng, Graph, Tensor};

/// One image-text pair with both modalities already in latent and context form.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub image: Tensor,
    pub text: Tensor,
    pub image_ctx: ContextEmbedding,
    pub text_ctx: ContextEmbedding,
}

impl PairedSample {
    pub fn latent(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn context(&self, m: Modality) -> &ContextEmbedding {
        match m {
            Modality::Image => &self.image_ctx,
            Modality::Text => &self.text_ctx,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PairedDataset {
    samples: Vec<PairedSample>,
}

impl PairedDataset {
    pub fn new(samples: Vec<PairedSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&PairedSample> {
        self.samples.get(i)
    }

    pub fn samples(&self) -> &[PairedSample] {
        &self.samples
    }
}

/// A fully drawn training example for one flow.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x0: Tensor,
    pub ctx: ContextEmbedding,
    pub t: usize,
    pub eps: Tensor,
}

#[derive(Debug, Clone)]
pub struct FlowBatch {
    pub flow: FlowSpec,
    pub items: Vec<TrainItem>,
}

/// Randomness knobs for turning dataset rows into training items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawConfig {
    pub seed: u64,
    /// Probability of replacing a context with the all-zero embedding.
    pub ctx_dropout: f64,
}

impl Default for DrawConfig {
    fn default() -> Self {
        Self { seed: 0, ctx_dropout: 0.1 }
    }
}

/// Row indices for a step, drawn with replacement from the first `pool` rows.
pub fn draw_indices(seed: u64, stage: u64, step: u64, pool: usize, count: usize) -> Result<Vec<usize>> {
    if pool == 0 {
        return Err(Error::Config("cannot draw a batch from an empty dataset".into()));
    }
    let mut rng = stream_rng(seed, &[stage, step]);
    Ok((0..count).map(|_| rng.gen_range(0..pool)).collect())
}

/// Builds per-flow batches over shared rows. Timesteps, noise and dropout
/// come from a stream keyed by `(step, flow, element)`.
pub fn draw_batches(
    data: &PairedDataset,
    flows: &[FlowSpec],
    indices: &[usize],
    step: u64,
    sched: &NoiseSchedule,
    draw: &DrawConfig,
) -> Result<Vec<FlowBatch>> {
    flows
        .iter()
        .enumerate()
        .map(|(fi, &flow)| {
            let items = indices
                .iter()
                .enumerate()
                .map(|(e, &row)| {
                    let sample = data
                        .get(row)
                        .ok_or_else(|| Error::arg(format!("row {row} outside dataset of {}", data.len())))?;
                    let mut rng = stream_rng(draw.seed, &[step, fi as u64, e as u64]);
                    let t = rng.gen_range(1..=sched.steps());
                    let x0 = sample.latent(flow.output).clone();
                    let eps = Tensor::randn(x0.shape(), &mut rng);
                    let ctx = sample.context(flow.context);
                    let ctx = if draw.ctx_dropout > 0.0 && rng.gen::<f64>() < draw.ctx_dropout {
                        ContextEmbedding::zeros(ctx.len(), ctx.dim(), flow.context)
                    } else {
                        ctx.clone()
                    };
                    Ok(TrainItem { x0, ctx, t, eps })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FlowBatch { flow, items })
        })
        .collect()
}

/// Alg. 1 inner loops: per flow, per item, backward the item's share of the
/// flow's mean loss and add it into `grads`. Returns each flow's mean loss.
///
/// `chunk` is the per-worker batch; items are processed in consecutive chunks
/// so the accumulation order matches a gradient-accumulation loop.
pub fn accumulate_flow_grads(
    model: &Diffuser,
    batches: &[FlowBatch],
    sched: &NoiseSchedule,
    chunk: usize,
    grads: &mut GradientStore,
) -> Result<Vec<(FlowSpec, f64)>> {
    let chunk = chunk.max(1);
    let mut losses = Vec::with_capacity(batches.len());
    for batch in batches {
        if batch.items.is_empty() {
            return Err(Error::arg(format!("no data for flow {}", batch.flow)));
        }
        let n = batch.items.len() as f64;
        let mut total = 0.0;
        for part in batch.items.chunks(chunk) {
            for item in part {
                let mut g = Graph::new();
                let mut p = ParamBinder::new(model.params());
                let loss = eps_loss(
                    &mut g,
                    |g, xt| model.eps_graph(g, &mut p, batch.flow, xt, item.t, &item.ctx),
                    &item.x0,
                    item.t,
                    &item.eps,
                    sched,
                )?;
                let value = g.value(loss).item()?;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss of flow {} at t={}", batch.flow, item.t)));
                }
                total += value;
                let share = g.scale(loss, 1.0 / n)?;
                g.backward(share)?;
                grads.accumulate(&g, &p)?;
            }
        }
        losses.push((batch.flow, total / n));
    }
    Ok(losses)
}

/// Gradients of the summed per-flow mean losses from one combined graph.
/// Reference for the accumulated path.
pub fn combined_loss_grads(
    model: &Diffuser,
    batches: &[FlowBatch],
    sched: &NoiseSchedule,
) -> Result<(f64, GradientStore)> {
    let mut g = Graph::new();
    let mut p = ParamBinder::new(model.params());
    let mut terms = Vec::new();
    for batch in batches {
        let n = batch.items.len() as f64;
        for item in &batch.items {
            let loss = eps_loss(
                &mut g,
                |g, xt| model.eps_graph(g, &mut p, batch.flow, xt, item.t, &item.ctx),
                &item.x0,
                item.t,
                &item.eps,
                sched,
            )?;
            terms.push(g.scale(loss, 1.0 / n)?);
        }
    }
    let mut acc = *terms.first().ok_or_else(|| Error::arg("no training items"))?;
    for &term in &terms[1..] {
        acc = g.add(acc, term)?;
    }
    let total = g.value(acc).item()?;
    g.backward(acc)?;
    let mut grads = GradientStore::zeros_like(model.params());
    grads.accumulate(&g, &p)?;
    Ok((total, grads))
}

/// One multi-flow update: accumulate every flow's gradients, scale per group,
/// update once. `grads` is reset before returning.
pub fn train_step(
    model: &mut Diffuser,
    batches: &[FlowBatch],
    sched: &NoiseSchedule,
    scales: &GradScaleConfig,
    opt: &mut Optimizer,
    chunk: usize,
    grads: &mut GradientStore,
) -> Result<Vec<(FlowSpec, f64)>> {
    grads.reset();
    let losses = accumulate_flow_grads(model, batches, sched, chunk, grads)?;
    apply_grad_scales(grads, scales, model.params())?;
    opt.update(model.params_mut(), grads)?;
    grads.reset();
    Ok(losses)
}

/// Number of accumulation passes per update.
pub fn accumulation_loop(effective_batch: usize, batch_per_worker: usize, workers: usize) -> Result<usize> {
    let per_pass = batch_per_worker * workers;
    if effective_batch == 0 || per_pass == 0 {
        return Err(Error::Config("batch sizes and worker count must be positive".into()));
    }
    if !effective_batch.is_multiple_of(per_pass) {
        return Err(Error::Config(format!(
            "effective batch {effective_batch} is not a multiple of {batch_per_worker} x {workers}"
        )));
    }
    Ok(effective_batch / per_pass)
}
