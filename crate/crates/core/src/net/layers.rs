//! The four layer kinds. Each function reads its parameters by name from a
//! [`ParamSource`] under a common prefix; each `*_params` function lists the
//! shapes and initializers those names need.

use super::store::ParamSource;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(prefix: &str, local: &str, shape: &[usize], init: Init) -> Self {
        Self { name: format!("{prefix}.{local}"), shape: shape.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn initialize<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        match self.init {
            Init::FanIn(fan_in) => Tensor::randn(&self.shape, rng).scale(1.0 / (fan_in as f64).sqrt()),
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::ones(&self.shape),
        }
    }
}

pub(crate) fn linear(g: &mut Graph, p: &mut impl ParamSource, prefix: &str, x: Var) -> Result<Var> {
    let w = p.param(g, &format!("{prefix}.w"))?;
    let b = p.param(g, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_row_bias(y, b)
}

pub(crate) fn linear_params(prefix: &str, input: usize, output: usize, zero: bool) -> Vec<ParamSpec> {
    let w_init = if zero { Init::Zeros } else { Init::FanIn(input) };
    vec![ParamSpec::new(prefix, "w", &[input, output], w_init), ParamSpec::new(prefix, "b", &[output], Init::Zeros)]
}

pub(crate) fn norm_params(prefix: &str, channels: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(prefix, "gamma", &[channels], Init::Ones),
        ParamSpec::new(prefix, "beta", &[channels], Init::Zeros),
    ]
}

fn norm(g: &mut Graph, p: &mut impl ParamSource, prefix: &str, x: Var, groups: usize) -> Result<Var> {
    let gamma = p.param(g, &format!("{prefix}.gamma"))?;
    let beta = p.param(g, &format!("{prefix}.beta"))?;
    g.group_norm(x, groups, gamma, beta)
}

fn conv(g: &mut Graph, p: &mut impl ParamSource, prefix: &str, x: Var) -> Result<Var> {
    let w = p.param(g, &format!("{prefix}.w"))?;
    let b = p.param(g, &format!("{prefix}.b"))?;
    g.conv2d_3x3(x, w, b)
}

pub(crate) fn conv_params(prefix: &str, cin: usize, cout: usize, zero: bool) -> Vec<ParamSpec> {
    let w_init = if zero { Init::Zeros } else { Init::FanIn(cin * 9) };
    vec![ParamSpec::new(prefix, "w", &[cout, cin, 3, 3], w_init), ParamSpec::new(prefix, "b", &[cout], Init::Zeros)]
}

/// Sinusoidal features of `t`: `[sin(t·f_i), cos(t·f_i)]` with geometric frequencies.
pub fn sinusoid(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    Tensor::from_parts(vec![1, dim], out)
}

pub fn time_embed_params(prefix: &str, time_dim: usize, embed_dim: usize) -> Vec<ParamSpec> {
    let mut v = linear_params(&format!("{prefix}.lin1"), time_dim, embed_dim, false);
    v.extend(linear_params(&format!("{prefix}.lin2"), embed_dim, embed_dim, false));
    v
}

/// Two-layer MLP over sinusoidal features; returns a `[1 × embed]` row.
pub fn time_embed(
    g: &mut Graph,
    p: &mut impl ParamSource,
    prefix: &str,
    t: usize,
    steps: usize,
    time_dim: usize,
) -> Result<Var> {
    if t == 0 || t > steps {
        return Err(Error::arg(format!("time step {t} outside 1..={steps}")));
    }
    let feats = g.constant(sinusoid(t, time_dim));
    let h = linear(g, p, &format!("{prefix}.lin1"), feats)?;
    let h = g.silu(h)?;
    linear(g, p, &format!("{prefix}.lin2"), h)
}

pub fn res_block_params(prefix: &str, cin: usize, cout: usize, embed_dim: usize) -> Vec<ParamSpec> {
    let mut v = norm_params(&format!("{prefix}.norm1"), cin);
    v.extend(conv_params(&format!("{prefix}.conv1"), cin, cout, false));
    v.extend(linear_params(&format!("{prefix}.time"), embed_dim, cout, false));
    v.extend(norm_params(&format!("{prefix}.norm2"), cout));
    v.extend(conv_params(&format!("{prefix}.conv2"), cout, cout, true));
    if cin != cout {
        v.push(ParamSpec::new(prefix, "skip.w", &[cout, cin], Init::FanIn(cin)));
        v.push(ParamSpec::new(prefix, "skip.b", &[cout], Init::Zeros));
    }
    v
}

/// `GN→SiLU→conv→(+time)→GN→SiLU→conv` plus a skip (1×1 projection when
/// channels change). `temb` is the activated `[1 × E]` time embedding.
pub fn res_block(
    g: &mut Graph,
    p: &mut impl ParamSource,
    prefix: &str,
    x: Var,
    temb: Var,
    groups: usize,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(format!("res_block expects C×H×W, got {shape:?}")));
    }
    let (cin, hw) = (shape[0], shape[1] * shape[2]);
    let h = norm(g, p, &format!("{prefix}.norm1"), x, groups)?;
    let h = g.silu(h)?;
    let h = conv(g, p, &format!("{prefix}.conv1"), h)?;
    let cout = g.shape(h)[0];
    let tp = linear(g, p, &format!("{prefix}.time"), temb)?;
    let tp = g.reshape(tp, &[cout])?;
    let h = g.add_channel_bias(h, tp)?;
    let h = norm(g, p, &format!("{prefix}.norm2"), h, groups)?;
    let h = g.silu(h)?;
    let h = conv(g, p, &format!("{prefix}.conv2"), h)?;
    let skip = if cin == cout {
        x
    } else {
        let w = p.param(g, &format!("{prefix}.skip.w"))?;
        let b = p.param(g, &format!("{prefix}.skip.b"))?;
        let flat = g.reshape(x, &[cin, hw])?;
        let s = g.matmul(w, flat)?;
        let s = g.add_channel_bias(s, b)?;
        g.reshape(s, &[cout, shape[1], shape[2]])?
    };
    g.add(h, skip)
}

/// Layout of the text path's hidden feature: `channels × positions`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiddenShape {
    pub channels: usize,
    pub positions: usize,
}

impl HiddenShape {
    pub fn numel(self) -> usize {
        self.channels * self.positions
    }
}

pub fn fc_res_block_params(prefix: &str, input: usize, hidden: HiddenShape, embed_dim: usize) -> Vec<ParamSpec> {
    let n = hidden.numel();
    let mut v = linear_params(&format!("{prefix}.fc1"), input, n, false);
    v.extend(norm_params(&format!("{prefix}.norm1"), hidden.channels));
    v.extend(linear_params(&format!("{prefix}.time"), embed_dim, hidden.channels, false));
    v.extend(linear_params(&format!("{prefix}.fc2"), n, n, true));
    v.extend(norm_params(&format!("{prefix}.norm2"), hidden.channels));
    if input != n {
        v.extend(linear_params(&format!("{prefix}.skip"), input, n, false));
    }
    v
}

/// Fully connected residual block on a `[1 × input]` row, returning a
/// `[1 × channels·positions]` row: `FC→GN→SiLU→(+time)→FC→GN→SiLU` plus a
/// skip (a projection on the expanding block).
pub fn fc_res_block(
    g: &mut Graph,
    p: &mut impl ParamSource,
    prefix: &str,
    x: Var,
    temb: Var,
    hidden: HiddenShape,
    groups: usize,
) -> Result<Var> {
    let input = match g.shape(x) {
        [1, n] => *n,
        s => return Err(Error::dim(format!("fc_res_block expects a 1×n row, got {s:?}"))),
    };
    let n = hidden.numel();
    let grid = [hidden.channels, hidden.positions];
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.reshape(h, &grid)?;
    let h = norm(g, p, &format!("{prefix}.norm1"), h, groups)?;
    let h = g.silu(h)?;
    let tp = linear(g, p, &format!("{prefix}.time"), temb)?;
    let tp = g.reshape(tp, &[hidden.channels])?;
    let h = g.add_channel_bias(h, tp)?;
    let h = g.reshape(h, &[1, n])?;
    let h = linear(g, p, &format!("{prefix}.fc2"), h)?;
    let h = g.reshape(h, &grid)?;
    let h = norm(g, p, &format!("{prefix}.norm2"), h, groups)?;
    let h = g.silu(h)?;
    let h = g.reshape(h, &[1, n])?;
    let skip = if input == n { x } else { linear(g, p, &format!("{prefix}.skip"), x)? };
    g.add(h, skip)
}

pub fn cross_attention_params(prefix: &str, dim: usize, ctx_dim: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(prefix, "q.w", &[dim, dim], Init::FanIn(dim)),
        ParamSpec::new(prefix, "k.w", &[ctx_dim, dim], Init::FanIn(ctx_dim)),
        ParamSpec::new(prefix, "k.b", &[dim], Init::Zeros),
        ParamSpec::new(prefix, "v.w", &[ctx_dim, dim], Init::FanIn(ctx_dim)),
        ParamSpec::new(prefix, "v.b", &[dim], Init::Zeros),
        ParamSpec::new(prefix, "o.w", &[dim, dim], Init::Zeros),
        ParamSpec::new(prefix, "o.b", &[dim], Init::Zeros),
    ]
}

/// Multi-head attention from `x[L × D]` queries onto `ctx[K × D_C]`, projected
/// back to `D` and added to `x`.
pub fn cross_attention(
    g: &mut Graph,
    p: &mut impl ParamSource,
    prefix: &str,
    x: Var,
    ctx: Var,
    heads: usize,
) -> Result<Var> {
    let out = attention_delta(g, p, prefix, x, ctx, heads)?;
    g.add(x, out)
}

/// The attention branch alone, without the residual.
pub fn attention_delta(
    g: &mut Graph,
    p: &mut impl ParamSource,
    prefix: &str,
    x: Var,
    ctx: Var,
    heads: usize,
) -> Result<Var> {
    let dim = match g.shape(x) {
        [_, d] => *d,
        s => return Err(Error::dim(format!("attention expects L×D tokens, got {s:?}"))),
    };
    if heads == 0 || dim % heads != 0 {
        return Err(Error::dim(format!("{heads} heads do not divide width {dim}")));
    }
    let wq = p.param(g, &format!("{prefix}.q.w"))?;
    let q = g.matmul(x, wq)?;
    let k = linear(g, p, &format!("{prefix}.k"), ctx)?;
    let v = linear(g, p, &format!("{prefix}.v"), ctx)?;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.narrow(q, 1, h * dh, dh)?, g.narrow(k, 1, h * dh, dh)?, g.narrow(v, 1, h * dh, dh)?)
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax_lastdim(scores)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let o = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, p, &format!("{prefix}.o"), o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::store::VarMap;
    use crate::numerics::{finite_diff_check, stream_rng, GradCheckOptions};

    /// Leaves for every spec, initialized then perturbed so zero-init weights are live.
    fn bind(g: &mut Graph, specs: &[ParamSpec], seed: u64, live: bool) -> (VarMap, Vec<Var>) {
        let mut rng = stream_rng(seed, &[]);
        let mut map = VarMap::default();
        let mut vars = Vec::new();
        for s in specs {
            let mut t = s.initialize(&mut rng);
            if live {
                t = t.lincomb(1.0, &Tensor::randn(&s.shape, &mut rng), 0.3).unwrap();
            }
            let v = g.leaf(t);
            map.0.insert(s.name.clone(), v);
            vars.push(v);
        }
        (map, vars)
    }

    fn values(specs: &[ParamSpec], seed: u64) -> Vec<Tensor> {
        let mut g = Graph::new();
        let (_, vars) = bind(&mut g, specs, seed, true);
        vars.iter().map(|&v| g.value(v).clone()).collect()
    }

    fn map_from(vars: &[Var], specs: &[ParamSpec]) -> VarMap {
        VarMap(specs.iter().zip(vars).map(|(s, &v)| (s.name.clone(), v)).collect())
    }

    fn opts() -> GradCheckOptions {
        GradCheckOptions { max_coords_per_param: Some(12), ..GradCheckOptions::default() }
    }

    #[test]
    fn sinusoid_is_injective_over_toy_steps() {
        let feats: Vec<Tensor> = (1..=200).map(|t| sinusoid(t, 32)).collect();
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                assert!(feats[i].max_abs_diff(&feats[j]).unwrap() > 1e-6);
            }
        }
    }

    #[test]
    fn zero_final_conv_gives_skip() {
        let specs = res_block_params("rb", 4, 4, 8);
        let mut g = Graph::new();
        let (mut map, _) = bind(&mut g, &specs, 1, false);
        let x = g.leaf(Tensor::randn(&[4, 5, 5], &mut stream_rng(2, &[])));
        let temb = g.leaf(Tensor::randn(&[1, 8], &mut stream_rng(3, &[])));
        let y = res_block(&mut g, &mut map, "rb", x, temb, 2).unwrap();
        assert!(g.value(y).bit_eq(g.value(x)));
    }

    #[test]
    fn time_changes_res_block_output() {
        let specs = res_block_params("rb", 4, 6, 8);
        let mut g = Graph::new();
        let (mut map, _) = bind(&mut g, &specs, 1, true);
        let x = g.constant(Tensor::randn(&[4, 5, 5], &mut stream_rng(2, &[])));
        let t1 = g.constant(Tensor::randn(&[1, 8], &mut stream_rng(3, &[])));
        let t2 = g.constant(Tensor::randn(&[1, 8], &mut stream_rng(4, &[])));
        let a = res_block(&mut g, &mut map, "rb", x, t1, 2).unwrap();
        let b = res_block(&mut g, &mut map, "rb", x, t2, 2).unwrap();
        assert_eq!(g.shape(a), &[6, 5, 5]);
        assert!(g.value(a).max_abs_diff(g.value(b)).unwrap() > 1e-6);
    }

    #[test]
    fn zero_final_fc_gives_skip() {
        let hidden = HiddenShape { channels: 4, positions: 4 };
        let specs = fc_res_block_params("fc", 16, hidden, 8);
        let mut g = Graph::new();
        let (mut map, _) = bind(&mut g, &specs, 1, false);
        let x = g.leaf(Tensor::randn(&[1, 16], &mut stream_rng(2, &[])));
        let temb = g.leaf(Tensor::randn(&[1, 8], &mut stream_rng(3, &[])));
        let y = fc_res_block(&mut g, &mut map, "fc", x, temb, hidden, 2).unwrap();
        assert!(g.value(y).bit_eq(g.value(x)));
    }

    #[test]
    fn expanding_fc_block_shape() {
        let hidden = HiddenShape { channels: 16, positions: 4 };
        let specs = fc_res_block_params("fc", 32, hidden, 8);
        let mut g = Graph::new();
        let (mut map, _) = bind(&mut g, &specs, 1, true);
        let x = g.leaf(Tensor::randn(&[1, 32], &mut stream_rng(2, &[])));
        let temb = g.leaf(Tensor::randn(&[1, 8], &mut stream_rng(3, &[])));
        let y = fc_res_block(&mut g, &mut map, "fc", x, temb, hidden, 4).unwrap();
        assert_eq!(g.shape(y), &[1, 64]);
    }

    #[test]
    fn attention_on_zero_context_is_the_bias_path() {
        let specs = cross_attention_params("xa", 4, 6);
        let mut g = Graph::new();
        let (mut map, _) = bind(&mut g, &specs, 5, true);
        let x = g.constant(Tensor::randn(&[3, 4], &mut stream_rng(6, &[])));
        let ctx = g.constant(Tensor::zeros(&[5, 6]));
        let y = cross_attention(&mut g, &mut map, "xa", x, ctx, 2).unwrap();
        // uniform weights over identical values give v.b, then the output projection
        let vb = g.value(map.0["xa.v.b"]).clone();
        let ow = g.value(map.0["xa.o.w"]).clone();
        let ob = g.value(map.0["xa.o.b"]).clone();
        for l in 0..3 {
            for d in 0..4 {
                let delta: f64 = (0..4).map(|i| vb.data()[i] * ow.data()[i * 4 + d]).sum::<f64>() + ob.data()[d];
                let want = g.value(x).data()[l * 4 + d] + delta;
                assert!((g.value(y).data()[l * 4 + d] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_context_gets_all_attention() {
        let specs = cross_attention_params("xa", 4, 6);
        let mut g = Graph::new();
        let (map, _) = bind(&mut g, &specs, 5, true);
        let x = g.constant(Tensor::randn(&[3, 4], &mut stream_rng(6, &[])));
        let ctx = g.constant(Tensor::randn(&[1, 6], &mut stream_rng(7, &[])));
        let q = g.matmul(x, map.0["xa.q.w"]).unwrap();
        let k = g.matmul(ctx, map.0["xa.k.w"]).unwrap();
        let kt = g.transpose(k).unwrap();
        let s = g.matmul(q, kt).unwrap();
        let a = g.softmax_lastdim(s).unwrap();
        assert!(g.value(a).data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn gradcheck_every_layer_kind() {
        // time embedding
        let specs = time_embed_params("time", 8, 6);
        let report = finite_diff_check(
            |g, vars| {
                let mut m = map_from(vars, &specs);
                let e = time_embed(g, &mut m, "time", 17, 200, 8)?;
                let sq = g.mul(e, e)?;
                g.sum(sq)
            },
            &values(&specs, 1),
            &opts(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "time {report:?}");

        // residual block with channel change
        let specs = res_block_params("rb", 4, 8, 6);
        let x = Tensor::randn(&[4, 6, 6], &mut stream_rng(2, &[]));
        let temb = Tensor::randn(&[1, 6], &mut stream_rng(3, &[]));
        let report = finite_diff_check(
            |g, vars| {
                let mut m = map_from(vars, &specs);
                let xv = g.constant(x.clone());
                let tv = g.constant(temb.clone());
                let y = res_block(g, &mut m, "rb", xv, tv, 2)?;
                let sq = g.mul(y, y)?;
                g.mean(sq)
            },
            &values(&specs, 4),
            &opts(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "res {report:?}");

        // expanding FC block
        let hidden = HiddenShape { channels: 4, positions: 4 };
        let specs = fc_res_block_params("fc", 10, hidden, 6);
        let x = Tensor::randn(&[1, 10], &mut stream_rng(5, &[]));
        let report = finite_diff_check(
            |g, vars| {
                let mut m = map_from(vars, &specs);
                let xv = g.constant(x.clone());
                let tv = g.constant(temb.clone());
                let y = fc_res_block(g, &mut m, "fc", xv, tv, hidden, 2)?;
                let sq = g.mul(y, y)?;
                g.mean(sq)
            },
            &values(&specs, 6),
            &opts(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "fc {report:?}");

        // cross-attention
        let specs = cross_attention_params("xa", 4, 6);
        let x = Tensor::randn(&[5, 4], &mut stream_rng(7, &[]));
        let c = Tensor::randn(&[3, 6], &mut stream_rng(8, &[]));
        let report = finite_diff_check(
            |g, vars| {
                let mut m = map_from(vars, &specs);
                let xv = g.constant(x.clone());
                let cv = g.constant(c.clone());
                let y = cross_attention(g, &mut m, "xa", xv, cv, 2)?;
                let sq = g.mul(y, y)?;
                g.mean(sq)
            },
            &values(&specs, 9),
            &opts(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "attn {report:?}");
    }
}
