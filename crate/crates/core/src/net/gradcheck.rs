//! Finite-difference checks over every layer kind and the full one-step
//! training loss.

use super::diffuser::{Diffuser, DiffuserConfig};
use super::layers::{
    cross_attention, cross_attention_params, fc_res_block, fc_res_block_params, res_block, res_block_params,
    time_embed, time_embed_params, HiddenShape, ParamSpec,
};
use super::store::VarMap;
use crate::context::ContextEmbedding;
use crate::diffusion::{eps_loss, NoiseSchedule};
use crate::error::Result;
use crate::flow::FlowSpec;
use crate::numerics::{finite_diff_check, stream_rng, GradCheckOptions, GradCheckReport, Graph, Tensor, Var};

/// Names of the checks run by [`gradcheck_suite`], in order.
pub const GRADCHECK_KINDS: [&str; 6] =
    ["time_embed", "res_block", "fc_res_block", "cross_attention", "diffuser_loss_image", "diffuser_loss_text"];

fn map_from(vars: &[Var], names: &[String]) -> VarMap {
    VarMap(names.iter().cloned().zip(vars.iter().copied()).collect())
}

/// Initial values plus a perturbation, so zero-initialized projections
/// still carry gradient signal.
fn live_values(specs: &[ParamSpec], seed: u64) -> Vec<Tensor> {
    let mut rng = stream_rng(seed, &[]);
    specs
        .iter()
        .map(|s| {
            let t = s.initialize(&mut rng);
            t.lincomb(1.0, &Tensor::randn(&s.shape, &mut rng), 0.3).expect("same shape")
        })
        .collect()
}

fn names(specs: &[ParamSpec]) -> Vec<String> {
    specs.iter().map(|s| s.name.clone()).collect()
}

fn mean_square(g: &mut Graph, y: Var) -> Result<Var> {
    let sq = g.mul(y, y)?;
    g.mean(sq)
}

/// Small diffuser used for the end-to-end loss check.
pub fn gradcheck_config() -> DiffuserConfig {
    DiffuserConfig {
        image_shape: [2, 6, 6],
        text_dim: 6,
        text_hidden: 4,
        text_positions: 2,
        ctx_tokens: 3,
        ctx_dim: 5,
        channels: [4, 4],
        heads: 2,
        time_dim: 4,
        norm_groups: 2,
        steps: 50,
        flows: FlowSpec::ALL.to_vec(),
    }
}

fn diffuser_loss(seed: u64, flow: FlowSpec, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = gradcheck_config();
    let mut model = Diffuser::new(cfg.clone(), seed)?;
    model.params_mut().perturb(0.2, &mut stream_rng(seed, &[1]));
    let sched = NoiseSchedule::rescaled(cfg.steps)?;
    let mut rng = stream_rng(seed, &[2]);
    let shape = cfg.latent_shape(flow.output);
    let x0 = Tensor::randn(&shape, &mut rng);
    let eps = Tensor::randn(&shape, &mut rng);
    let ctx = ContextEmbedding::new(Tensor::randn(&[cfg.ctx_tokens, cfg.ctx_dim], &mut rng), flow.context)?;
    let active = model.routes().params_for(flow, model.params())?;
    let values: Vec<Tensor> = active.iter().map(|n| model.params().value(n).cloned()).collect::<Result<_>>()?;
    finite_diff_check(
        |g, vars| {
            let mut m = map_from(vars, &active);
            eps_loss(g, |g, xt| model.eps_graph(g, &mut m, flow, xt, 17, &ctx), &x0, 17, &eps, &sched)
        },
        &values,
        opts,
    )
}

/// Runs the central-difference oracle over every layer kind and the full
/// diffuser loss for both output modalities. `coords` caps the coordinates
/// checked per parameter tensor.
pub fn gradcheck_suite(seed: u64, coords: Option<usize>) -> Result<Vec<(&'static str, GradCheckReport)>> {
    // exactly-zero gradients (key biases under softmax) leave only round-off
    let opts = GradCheckOptions { eps: 1e-5, floor: 1e-5, max_coords_per_param: coords, seed };
    let mut rng = stream_rng(seed, &[3]);
    let temb = Tensor::randn(&[1, 6], &mut rng);
    let mut out = Vec::new();

    let specs = time_embed_params("time", 8, 6);
    let n = names(&specs);
    let r = finite_diff_check(
        |g, vars| {
            let e = time_embed(g, &mut map_from(vars, &n), "time", 17, 200, 8)?;
            mean_square(g, e)
        },
        &live_values(&specs, seed),
        &opts,
    )?;
    out.push((GRADCHECK_KINDS[0], r));

    let specs = res_block_params("rb", 4, 8, 6);
    let n = names(&specs);
    let x = Tensor::randn(&[4, 6, 6], &mut rng);
    let r = finite_diff_check(
        |g, vars| {
            let xv = g.constant(x.clone());
            let tv = g.constant(temb.clone());
            let y = res_block(g, &mut map_from(vars, &n), "rb", xv, tv, 2)?;
            mean_square(g, y)
        },
        &live_values(&specs, seed + 1),
        &opts,
    )?;
    out.push((GRADCHECK_KINDS[1], r));

    let hidden = HiddenShape { channels: 4, positions: 4 };
    let specs = fc_res_block_params("fc", 10, hidden, 6);
    let n = names(&specs);
    let x = Tensor::randn(&[1, 10], &mut rng);
    let r = finite_diff_check(
        |g, vars| {
            let xv = g.constant(x.clone());
            let tv = g.constant(temb.clone());
            let y = fc_res_block(g, &mut map_from(vars, &n), "fc", xv, tv, hidden, 2)?;
            mean_square(g, y)
        },
        &live_values(&specs, seed + 2),
        &opts,
    )?;
    out.push((GRADCHECK_KINDS[2], r));

    let specs = cross_attention_params("xa", 4, 6);
    let n = names(&specs);
    let x = Tensor::randn(&[5, 4], &mut rng);
    let c = Tensor::randn(&[3, 6], &mut rng);
    let r = finite_diff_check(
        |g, vars| {
            let xv = g.constant(x.clone());
            let cv = g.constant(c.clone());
            let y = cross_attention(g, &mut map_from(vars, &n), "xa", xv, cv, 2)?;
            mean_square(g, y)
        },
        &live_values(&specs, seed + 3),
        &opts,
    )?;
    out.push((GRADCHECK_KINDS[3], r));

    out.push((GRADCHECK_KINDS[4], diffuser_loss(seed, FlowSpec::T2I, &opts)?));
    out.push((GRADCHECK_KINDS[5], diffuser_loss(seed, FlowSpec::I2T, &opts)?));
    Ok(out)
}
