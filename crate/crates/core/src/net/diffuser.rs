use indexmap::IndexMap;

use super::layers::{
    attention_delta, conv_params, cross_attention_params, fc_res_block, fc_res_block_params, linear, linear_params,
    norm_params, res_block, res_block_params, time_embed, time_embed_params, HiddenShape, ParamSpec,
};
use super::store::{LayerGroup, ParamBinder, ParamSource, ParameterStore};
use crate::context::ContextEmbedding;
use crate::error::{Error, Result};
use crate::flow::{FlowSpec, Modality};
use crate::numerics::{stream_rng, Graph, Tensor, Var};

/// Cross-attention sites visited by the image path, in order.
pub const IMAGE_SITES: [usize; 4] = [0, 1, 2, 3];
/// Cross-attention sites visited by the text path, in order.
pub const TEXT_SITES: [usize; 2] = [0, 3];
pub const NUM_SITES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffuserConfig {
    /// Image latent `C × H × W`.
    pub image_shape: [usize; 3],
    pub text_dim: usize,
    /// FC block hidden feature is `text_hidden × text_positions`.
    pub text_hidden: usize,
    pub text_positions: usize,
    pub ctx_tokens: usize,
    pub ctx_dim: usize,
    /// UNet widths at full and half resolution.
    pub channels: [usize; 2],
    pub heads: usize,
    pub time_dim: usize,
    pub norm_groups: usize,
    /// Diffusion steps `T`; bounds the time-embedding input.
    pub steps: usize,
    pub flows: Vec<FlowSpec>,
}

impl Default for DiffuserConfig {
    fn default() -> Self {
        Self {
            image_shape: [4, 16, 16],
            text_dim: 32,
            text_hidden: 16,
            text_positions: 4,
            ctx_tokens: 9,
            ctx_dim: 32,
            channels: [16, 32],
            heads: 2,
            time_dim: 32,
            norm_groups: 4,
            steps: crate::diffusion::TOY_STEPS,
            flows: FlowSpec::ALL.to_vec(),
        }
    }
}

impl DiffuserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let [c, h, w] = self.image_shape;
        let [c0, c1] = self.channels;
        let dims = [c, h, w, self.text_dim, self.text_hidden, self.text_positions, self.ctx_tokens, self.ctx_dim];
        if dims.contains(&0) || c0 == 0 || c1 == 0 || self.heads == 0 || self.time_dim == 0 || self.steps == 0 {
            return bad(format!("all diffuser dims must be positive: {self:?}"));
        }
        if self.flows.is_empty() {
            return bad("diffuser needs at least one flow".into());
        }
        for (i, f) in self.flows.iter().enumerate() {
            if self.flows[..i].contains(f) {
                return bad(format!("flow {f} listed twice"));
            }
        }
        if h % 2 != 0 || w % 2 != 0 || h < 6 || w < 6 {
            return bad(format!("image latent {h}x{w} must be even and at least 6 per side"));
        }
        if !self.time_dim.is_multiple_of(2) {
            return bad("time_dim must be even".into());
        }
        if self.text_hidden != c0 {
            return bad(format!(
                "text hidden width {} must equal the base channel width {c0}: the two paths share context layers",
                self.text_hidden
            ));
        }
        let g = self.norm_groups;
        for width in [c0, c1, c0 + c1, self.text_hidden] {
            if g == 0 || width % g != 0 {
                return bad(format!("norm groups {g} must divide width {width}"));
            }
        }
        for width in [c0, c1] {
            if width % self.heads != 0 {
                return bad(format!("{} heads must divide width {width}", self.heads));
            }
        }
        Ok(())
    }

    pub fn has_output(&self, m: Modality) -> bool {
        self.flows.iter().any(|f| f.output == m)
    }

    pub fn has_context(&self, m: Modality) -> bool {
        self.flows.iter().any(|f| f.context == m)
    }

    pub fn hidden(&self) -> HiddenShape {
        HiddenShape { channels: self.text_hidden, positions: self.text_positions }
    }

    pub fn latent_shape(&self, m: Modality) -> Vec<usize> {
        match m {
            Modality::Image => self.image_shape.to_vec(),
            Modality::Text => vec![self.text_dim],
        }
    }

    pub fn sites(m: Modality) -> &'static [usize] {
        match m {
            Modality::Image => &IMAGE_SITES,
            Modality::Text => &TEXT_SITES,
        }
    }

    fn site_dim(&self, site: usize) -> usize {
        let [c0, c1] = self.channels;
        [c0, c1, c1, c0][site]
    }

    /// Groups this configuration instantiates.
    pub fn groups(&self) -> Vec<LayerGroup> {
        let mut out = vec![LayerGroup::Global];
        for m in Modality::ALL {
            if self.has_output(m) {
                out.push(LayerGroup::Data(m));
            }
        }
        for m in Modality::ALL {
            if self.has_context(m) {
                out.push(LayerGroup::Ctx(m));
            }
        }
        out
    }
}

fn ctx_layer(m: Modality, site: usize) -> String {
    format!("ctx_{}.site{site}", m.name())
}

/// A named layer: its group and the parameters it owns.
#[derive(Debug, Clone)]
pub struct LayerDef {
    pub name: String,
    pub group: LayerGroup,
    pub params: Vec<ParamSpec>,
}

/// Fixed row/column ramps appended to the image latent; convolutions alone
/// cannot tell where in the frame they are.
pub const COORD_CHANNELS: usize = 2;

/// `[2, h·w]` ramps in `[-1, 1]`: row coordinate, then column.
pub fn coord_channels(h: usize, w: usize) -> Tensor {
    let ramp = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend((0..h * w).map(|k| ramp(k / w, h)));
    data.extend((0..h * w).map(|k| ramp(k % w, w)));
    Tensor::new(&[2, h * w], data).expect("coordinate shape")
}

/// `y + s(t)·x_t` with the scalar gate `s` read off the time embedding. At
/// high noise ε is close to `x_t`, which the deep path alone carries poorly.
fn gated_skip(g: &mut Graph, p: &mut impl ParamSource, prefix: &str, y: Var, x_t: Var, temb: Var) -> Result<Var> {
    let gate = linear(g, p, prefix, temb)?;
    let shape = g.shape(x_t).to_vec();
    let col = g.reshape(x_t, &[shape.iter().product(), 1])?;
    let scaled = g.matmul(col, gate)?;
    let scaled = g.reshape(scaled, &shape)?;
    g.add(y, scaled)
}

/// `[h·w, d]` sinusoids of the row (first half of the width) and column
/// (second half), added to image queries so attention can depend on where a
/// pixel sits.
pub fn query_positions(h: usize, w: usize, d: usize) -> Tensor {
    let half = d / 2;
    let wave = |out: &mut [f64], u: f64| {
        for (i, v) in out.iter_mut().enumerate() {
            let freq = std::f64::consts::FRAC_PI_2 * (i / 2 + 1) as f64;
            *v = if i % 2 == 0 { (freq * u).sin() } else { (freq * u).cos() };
        }
    };
    let mut data = vec![0.0; h * w * d];
    for (k, row) in data.chunks_exact_mut(d).enumerate() {
        let (y, x) = (k / w, k % w);
        wave(&mut row[..half], (y as f64 + 0.5) / h as f64);
        wave(&mut row[half..2 * half], (x as f64 + 0.5) / w as f64);
    }
    Tensor::new(&[h * w, d], data).expect("query position shape")
}

/// Every layer the configuration instantiates, in a fixed order.
pub fn layer_defs(cfg: &DiffuserConfig) -> Result<Vec<LayerDef>> {
    cfg.validate()?;
    let e = cfg.time_dim;
    let [c, _, _] = cfg.image_shape;
    let [c0, c1] = cfg.channels;
    let mut out = Vec::new();
    let mut push = |name: &str, group, params| out.push(LayerDef { name: name.to_string(), group, params });
    push("time", LayerGroup::Global, time_embed_params("time", cfg.time_dim, e));

    let di = LayerGroup::Data(Modality::Image);
    if cfg.has_output(Modality::Image) {
        push("image.conv_in", di, conv_params("image.conv_in", c + COORD_CHANNELS, c0, false));
        push("image.down0.res", di, res_block_params("image.down0.res", c0, c0, e));
        push("image.mid.res0", di, res_block_params("image.mid.res0", c0, c1, e));
        push("image.mid.res1", di, res_block_params("image.mid.res1", c1, c1, e));
        push("image.up0.res", di, res_block_params("image.up0.res", c0 + c1, c0, e));
        let mut p = norm_params("image.out.norm", c0);
        p.extend(conv_params("image.out.conv", c0, c, true));
        p.extend(linear_params("image.out.skip", e, 1, true));
        push("image.out", di, p);
    }
    let dt = LayerGroup::Data(Modality::Text);
    if cfg.has_output(Modality::Text) {
        let hidden = cfg.hidden();
        for b in 0..4 {
            let name = format!("text.block{b}");
            let input = if b == 0 { cfg.text_dim } else { hidden.numel() };
            push(&name, dt, fc_res_block_params(&name, input, hidden, e));
        }
        let mut p = linear_params("text.out", hidden.numel(), cfg.text_dim, true);
        p.extend(linear_params("text.out.skip", e, 1, true));
        push("text.out", dt, p);
    }
    for m in Modality::ALL {
        if !cfg.has_context(m) {
            continue;
        }
        for site in 0..NUM_SITES {
            let used = Modality::ALL.iter().any(|&o| cfg.has_output(o) && DiffuserConfig::sites(o).contains(&site));
            if used {
                let name = ctx_layer(m, site);
                let params = cross_attention_params(&name, cfg.site_dim(site), cfg.ctx_dim);
                push(&name, LayerGroup::Ctx(m), params);
            }
        }
    }
    Ok(out)
}

/// Flow → the ordered layers its forward pass runs through.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    routes: IndexMap<FlowSpec, Vec<String>>,
    layers: IndexMap<String, LayerGroup>,
}

impl RoutingTable {
    pub fn new(cfg: &DiffuserConfig) -> Result<Self> {
        let layers: IndexMap<String, LayerGroup> = layer_defs(cfg)?.into_iter().map(|l| (l.name, l.group)).collect();
        let mut routes = IndexMap::new();
        for &flow in &cfg.flows {
            let ctx = |site| ctx_layer(flow.context, site);
            let route: Vec<String> = match flow.output {
                Modality::Image => vec![
                    "time".into(),
                    "image.conv_in".into(),
                    "image.down0.res".into(),
                    ctx(0),
                    "image.mid.res0".into(),
                    ctx(1),
                    "image.mid.res1".into(),
                    ctx(2),
                    "image.up0.res".into(),
                    ctx(3),
                    "image.out".into(),
                ],
                Modality::Text => vec![
                    "time".into(),
                    "text.block0".into(),
                    ctx(0),
                    "text.block1".into(),
                    "text.block2".into(),
                    ctx(3),
                    "text.block3".into(),
                    "text.out".into(),
                ],
            };
            routes.insert(flow, route);
        }
        Ok(Self { routes, layers })
    }

    pub fn flows(&self) -> impl Iterator<Item = FlowSpec> + '_ {
        self.routes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn route(&self, flow: FlowSpec) -> Result<&[String]> {
        self.routes
            .get(&flow)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingGroup(format!("flow {flow} is not configured")))
    }

    pub fn layer_group(&self, layer: &str) -> Option<LayerGroup> {
        self.layers.get(layer).copied()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, LayerGroup)> {
        self.layers.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// The layer owning a parameter name.
    pub fn layer_of<'a>(&'a self, param: &str) -> Option<&'a str> {
        self.layers
            .keys()
            .filter(|l| param.len() > l.len() && param.starts_with(l.as_str()) && param.as_bytes()[l.len()] == b'.')
            .max_by_key(|l| l.len())
            .map(String::as_str)
    }

    /// Parameter names of `store` that `flow` activates.
    pub fn params_for(&self, flow: FlowSpec, store: &ParameterStore) -> Result<Vec<String>> {
        let route = self.route(flow)?;
        Ok(store
            .names()
            .filter(|n| self.layer_of(n).is_some_and(|l| route.iter().any(|r| r == l)))
            .map(str::to_string)
            .collect())
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Builds freshly initialized parameters and the routing table.
///
/// Each parameter draws from its own stream keyed by `(seed, name)`, so a
/// parameter's initial value does not depend on which flows are configured.
pub fn assemble(cfg: &DiffuserConfig, seed: u64) -> Result<(ParameterStore, RoutingTable)> {
    let mut store = ParameterStore::new();
    for layer in layer_defs(cfg)? {
        for spec in &layer.params {
            let mut rng = stream_rng(seed, &[name_hash(&spec.name)]);
            store.insert(spec.name.clone(), spec.initialize(&mut rng), layer.group)?;
        }
    }
    Ok((store, RoutingTable::new(cfg)?))
}

/// Which context each cross-attention site attends to.
#[derive(Debug, Clone)]
pub enum SiteContext<'a> {
    Single(&'a ContextEmbedding),
    /// Weighted sum of the site's outputs against several contexts; weights
    /// must sum to one.
    Blend(Vec<(&'a ContextEmbedding, f64)>),
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// One entry per site, indexed by site id.
pub type SitePlan<'a> = [SiteContext<'a>; NUM_SITES];

pub fn uniform_sites(ctx: &ContextEmbedding) -> SitePlan<'_> {
    std::array::from_fn(|_| SiteContext::Single(ctx))
}

/// The multi-flow diffuser: configuration, parameters and routing.
#[derive(Debug, Clone)]
pub struct Diffuser {
    config: DiffuserConfig,
    params: ParameterStore,
    routes: RoutingTable,
}

impl Diffuser {
    pub fn new(config: DiffuserConfig, seed: u64) -> Result<Self> {
        let (params, routes) = assemble(&config, seed)?;
        Ok(Self { config, params, routes })
    }

    /// Wraps existing parameters, checking names, groups and shapes against the config.
    pub fn from_parts(config: DiffuserConfig, params: ParameterStore) -> Result<Self> {
        let defs = layer_defs(&config)?;
        let expected: usize = defs.iter().map(|l| l.params.len()).sum();
        if expected != params.len() {
            return Err(Error::Checkpoint(format!("config expects {expected} parameters, store has {}", params.len())));
        }
        for layer in &defs {
            for spec in &layer.params {
                let p = params
                    .get(&spec.name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{}'", spec.name)))?;
                if p.value.shape() != spec.shape.as_slice() || p.group != layer.group {
                    return Err(Error::Checkpoint(format!(
                        "parameter '{}' is {:?}/{} but config needs {:?}/{}",
                        spec.name,
                        p.value.shape(),
                        p.group,
                        spec.shape,
                        layer.group
                    )));
                }
            }
        }
        let routes = RoutingTable::new(&config)?;
        Ok(Self { config, params, routes })
    }

    pub fn config(&self) -> &DiffuserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterStore {
        self.params
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    fn check_latent(&self, output: Modality, shape: &[usize]) -> Result<()> {
        if !self.config.has_output(output) {
            return Err(Error::MissingGroup(format!("no {} data layers in this model", output.name())));
        }
        let want = self.config.latent_shape(output);
        if shape != want.as_slice() {
            return Err(Error::dim(format!("{} latent {:?} vs {:?}", output.name(), shape, want)));
        }
        Ok(())
    }

    /// Predicted noise for `flow`, recorded on `g`.
    pub fn eps_graph(
        &self,
        g: &mut Graph,
        p: &mut impl ParamSource,
        flow: FlowSpec,
        x_t: Var,
        t: usize,
        ctx: &ContextEmbedding,
    ) -> Result<Var> {
        if ctx.modality() != flow.context {
            return Err(Error::Routing { expected: flow.context, got: ctx.modality() });
        }
        self.routes.route(flow)?;
        self.eps_graph_routed(g, p, flow.output, x_t, t, &uniform_sites(ctx))
    }

    /// Predicted noise with an explicit per-site context plan. The context
    /// layers used at a site follow each context's own modality.
    pub fn eps_graph_routed(
        &self,
        g: &mut Graph,
        p: &mut impl ParamSource,
        output: Modality,
        x_t: Var,
        t: usize,
        sites: &SitePlan<'_>,
    ) -> Result<Var> {
        self.check_latent(output, g.shape(x_t))?;
        let cfg = &self.config;
        let temb = time_embed(g, p, "time", t, cfg.steps, cfg.time_dim)?;
        let temb = g.silu(temb)?;
        let groups = cfg.norm_groups;
        match output {
            Modality::Image => {
                let [_, h, w] = cfg.image_shape;
                let [c0, c1] = cfg.channels;
                let [c, _, _] = cfg.image_shape;
                let a = g.reshape(x_t, &[c, h * w])?;
                let coords = g.constant(coord_channels(h, w));
                let x = g.concat(&[a, coords], 0)?;
                let x = g.reshape(x, &[c + COORD_CHANNELS, h, w])?;
                let x = conv_layer(g, p, "image.conv_in", x)?;
                let x = res_block(g, p, "image.down0.res", x, temb, groups)?;
                let x = self.attend_image(g, p, 0, x, &sites[0])?;
                let skip = x;
                let x = g.avg_pool2(x)?;
                let x = res_block(g, p, "image.mid.res0", x, temb, groups)?;
                let x = self.attend_image(g, p, 1, x, &sites[1])?;
                let x = res_block(g, p, "image.mid.res1", x, temb, groups)?;
                let x = self.attend_image(g, p, 2, x, &sites[2])?;
                let x = g.upsample2(x)?;
                let a = g.reshape(x, &[c1, h * w])?;
                let b = g.reshape(skip, &[c0, h * w])?;
                let x = g.concat(&[a, b], 0)?;
                let x = g.reshape(x, &[c0 + c1, h, w])?;
                let x = res_block(g, p, "image.up0.res", x, temb, groups)?;
                let x = self.attend_image(g, p, 3, x, &sites[3])?;
                let gamma = p.param(g, "image.out.norm.gamma")?;
                let beta = p.param(g, "image.out.norm.beta")?;
                let x = g.group_norm(x, groups, gamma, beta)?;
                let x = g.silu(x)?;
                let y = conv_layer(g, p, "image.out.conv", x)?;
                gated_skip(g, p, "image.out.skip", y, x_t, temb)
            }
            Modality::Text => {
                let hidden = cfg.hidden();
                let x = g.reshape(x_t, &[1, cfg.text_dim])?;
                let x = fc_res_block(g, p, "text.block0", x, temb, hidden, groups)?;
                let x = self.attend_text(g, p, 0, x, &sites[0])?;
                let x = fc_res_block(g, p, "text.block1", x, temb, hidden, groups)?;
                let x = fc_res_block(g, p, "text.block2", x, temb, hidden, groups)?;
                let x = self.attend_text(g, p, 3, x, &sites[3])?;
                let x = fc_res_block(g, p, "text.block3", x, temb, hidden, groups)?;
                let wo = p.param(g, "text.out.w")?;
                let bo = p.param(g, "text.out.b")?;
                let y = g.matmul(x, wo)?;
                let y = g.add_row_bias(y, bo)?;
                let y = g.reshape(y, &[cfg.text_dim])?;
                gated_skip(g, p, "text.out.skip", y, x_t, temb)
            }
        }
    }

    fn attend_image(
        &self,
        g: &mut Graph,
        p: &mut impl ParamSource,
        site: usize,
        x: Var,
        ctx: &SiteContext<'_>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let flat = g.reshape(x, &[shape[0], shape[1] * shape[2]])?;
        let tokens = g.transpose(flat)?;
        let pos = g.constant(query_positions(shape[1], shape[2], shape[0]));
        let out = self.attend(g, p, site, tokens, Some(pos), ctx)?;
        let back = g.transpose(out)?;
        g.reshape(back, &shape)
    }

    fn attend_text(
        &self,
        g: &mut Graph,
        p: &mut impl ParamSource,
        site: usize,
        x: Var,
        ctx: &SiteContext<'_>,
    ) -> Result<Var> {
        let h = self.config.hidden();
        let grid = g.reshape(x, &[h.channels, h.positions])?;
        let tokens = g.transpose(grid)?;
        let out = self.attend(g, p, site, tokens, None, ctx)?;
        let back = g.transpose(out)?;
        g.reshape(back, &[1, h.numel()])
    }

    /// Residual plus the (possibly blended) attention branch at one site.
    /// `pos` is added to the query input only.
    fn attend(
        &self,
        g: &mut Graph,
        p: &mut impl ParamSource,
        site: usize,
        tokens: Var,
        pos: Option<Var>,
        ctx: &SiteContext<'_>,
    ) -> Result<Var> {
        let query = match pos {
            Some(pos) => g.add(tokens, pos)?,
            None => tokens,
        };
        let parts: Vec<(&ContextEmbedding, f64)> = match ctx {
            SiteContext::Single(c) => vec![(*c, 1.0)],
            SiteContext::Blend(list) => {
                if list.is_empty() {
                    return Err(Error::arg("blend at a site needs at least one context"));
                }
                let total: f64 = list.iter().map(|(_, w)| w).sum();
                if list.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::arg(format!("site weights must be non-negative and sum to 1, got {total}")));
                }
                list.iter().filter(|(_, w)| *w != 0.0).copied().collect()
            }
        };
        let mut acc: Option<Var> = None;
        for (c, w) in parts {
            let layer = ctx_layer(c.modality(), site);
            if self.routes.layer_group(&layer).is_none() {
                return Err(Error::MissingGroup(format!("no {} context layer at site {site}", c.modality().name())));
            }
            if c.dim() != self.config.ctx_dim {
                return Err(Error::dim(format!("context dim {} vs {}", c.dim(), self.config.ctx_dim)));
            }
            let cv = g.constant(c.tokens().clone());
            let delta = attention_delta(g, p, &layer, query, cv, self.config.heads)?;
            let y = g.add(tokens, delta)?;
            let term = if w == 1.0 { y } else { g.scale(y, w)? };
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        Ok(acc.expect("at least one context"))
    }

    /// Output of one cross-attention site (residual included) for a
    /// `[N, width]` token matrix, without query positions.
    pub fn site_attention(&self, site: usize, tokens: &Tensor, ctx: &SiteContext<'_>) -> Result<Tensor> {
        if site >= NUM_SITES {
            return Err(Error::arg(format!("site {site} out of range")));
        }
        let mut g = Graph::new();
        let mut p = ParamBinder::frozen(&self.params);
        let x = g.constant(tokens.clone());
        let y = self.attend(&mut g, &mut p, site, x, None, ctx)?;
        Ok(g.value(y).clone())
    }

    /// Inference-only noise prediction for a flow.
    pub fn denoise(&self, flow: FlowSpec, x_t: &Tensor, t: usize, ctx: &ContextEmbedding) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut p = ParamBinder::frozen(&self.params);
        let x = g.constant(x_t.clone());
        let y = self.eps_graph(&mut g, &mut p, flow, x, t, ctx)?;
        Ok(g.value(y).clone())
    }

    pub fn denoise_routed(&self, output: Modality, x_t: &Tensor, t: usize, sites: &SitePlan<'_>) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut p = ParamBinder::frozen(&self.params);
        let x = g.constant(x_t.clone());
        let y = self.eps_graph_routed(&mut g, &mut p, output, x, t, sites)?;
        Ok(g.value(y).clone())
    }
}

fn conv_layer(g: &mut Graph, p: &mut impl ParamSource, prefix: &str, x: Var) -> Result<Var> {
    let w = p.param(g, &format!("{prefix}.w"))?;
    let b = p.param(g, &format!("{prefix}.b"))?;
    g.conv2d_3x3(x, w, b)
}

/// Parameter counts and the comparison with one model per flow.
#[derive(Debug, Clone, PartialEq)]
pub struct SharingReport {
    pub counts: IndexMap<LayerGroup, usize>,
    pub total: usize,
    /// Parameters of separate single-flow models, one per configured flow.
    pub naive_total: usize,
    pub ratio: f64,
}

pub fn sharing_report(cfg: &DiffuserConfig) -> Result<SharingReport> {
    let mut counts: IndexMap<LayerGroup, usize> = LayerGroup::ALL.iter().map(|&g| (g, 0)).collect();
    for layer in layer_defs(cfg)? {
        counts[&layer.group] += layer.params.iter().map(ParamSpec::numel).sum::<usize>();
    }
    let total = counts.values().sum();
    let naive_total = cfg
        .flows
        .iter()
        .map(|f| {
            counts[&LayerGroup::Global] + counts[&LayerGroup::Data(f.output)] + counts[&LayerGroup::Ctx(f.context)]
        })
        .sum();
    Ok(SharingReport { counts, total, naive_total, ratio: total as f64 / naive_total as f64 })
}

impl std::fmt::Display for SharingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (g, n) in &self.counts {
            writeln!(f, "{:<12} {n}", g.key())?;
        }
        writeln!(f, "{:<12} {}", "total", self.total)?;
        writeln!(f, "{:<12} {}", "naive", self.naive_total)?;
        write!(f, "{:<12} {:.6}", "ratio", self.ratio)
    }
}
