//! Run configuration: UTF-8 `key = value` lines, `#` comments, dotted keys.
//!
//! Unknown keys are rejected. `render` writes every key in a fixed order, so
//! `render(parse(text))` is the normal form of `text`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::context::{ContextEncoder, EncoderConfig, TextCodec};
use crate::datagen::Modalities;
use crate::diffusion::{rescaled_endpoints, NoiseSchedule, TOY_STEPS};
use crate::error::{Error, Result};
use crate::flow::{parse_flow_list, render_flow_list, FlowSpec};
use crate::net::{DiffuserConfig, LayerGroup};
use crate::training::{CurriculumStage, GradScaleConfig, Progress};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: DiffuserConfig,
    pub beta_start: f64,
    pub beta_end: f64,
    pub patch_grid: [usize; 2],
    pub encoder_seed: u64,
    pub pos_scale: f64,
    pub bias_scale: f64,
    pub codec_seed: u64,
    pub codec_noise: f64,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
    /// Seed of batch draws, timesteps, noise and dropout.
    pub train_seed: u64,
    pub ctx_dropout: f64,
    pub stages: Vec<CurriculumStage>,
    /// Overrides applied on top of each stage's preset scales.
    pub scales: IndexMap<LayerGroup, f64>,
    /// Dataset directory; relative paths resolve against the config file.
    pub data_dir: PathBuf,
    pub data_filter: bool,
    /// Where training stopped; only set in checkpoints of unfinished runs.
    pub resume: Option<Progress>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let (beta_start, beta_end) = rescaled_endpoints(TOY_STEPS);
        Self {
            model: DiffuserConfig::default(),
            beta_start,
            beta_end,
            patch_grid: enc.patch_grid,
            encoder_seed: enc.seed,
            pos_scale: enc.pos_scale,
            bias_scale: enc.bias_scale,
            codec_seed: 1,
            codec_noise: TextCodec::DEFAULT_NOISE,
            init_seed: 0,
            train_seed: 0,
            ctx_dropout: 0.1,
            stages: CurriculumStage::default_order(),
            scales: IndexMap::new(),
            data_dir: PathBuf::from("data"),
            data_filter: true,
            resume: None,
        }
    }
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| err(line, format!("bad value '{v}' for {key}")))
}

fn list<const N: usize>(line: usize, key: &str, v: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = v.split(',').map(|p| num(line, key, p.trim())).collect::<Result<_>>()?;
    parts.try_into().map_err(|_| err(line, format!("{key} needs {N} comma-separated integers")))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err(line, format!("{key} must be true or false, got '{v}'"))),
    }
}

/// `key = value` pairs with line numbers; duplicate keys are an error.
fn pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(i + 1, format!("expected 'key = value', got '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err(i + 1, "empty key"));
        }
        if out.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
            return Err(err(i + 1, format!("duplicate key '{k}'")));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = pairs(text)?;
        let mut c = RunConfig::default();

        // the stage count first, so stage keys can be checked against it
        if let Some((line, v)) = kv.remove("curriculum.stages") {
            let n: usize = num(line, "curriculum.stages", &v)?;
            let four = CurriculumStage::new(FlowSpec::ALL.to_vec());
            c.stages.resize(n, four);
        }
        let mut resume: [Option<usize>; 2] = [None, None];

        for (key, (line, v)) in kv {
            let v = v.as_str();
            let m = &mut c.model;
            match key.as_str() {
                "model.image_shape" => m.image_shape = list(line, &key, v)?,
                "model.text_dim" => m.text_dim = num(line, &key, v)?,
                "model.text_hidden" => m.text_hidden = num(line, &key, v)?,
                "model.text_positions" => m.text_positions = num(line, &key, v)?,
                "model.ctx_tokens" => m.ctx_tokens = num(line, &key, v)?,
                "model.ctx_dim" => m.ctx_dim = num(line, &key, v)?,
                "model.channels" => m.channels = list(line, &key, v)?,
                "model.heads" => m.heads = num(line, &key, v)?,
                "model.time_dim" => m.time_dim = num(line, &key, v)?,
                "model.norm_groups" => m.norm_groups = num(line, &key, v)?,
                "model.flows" => m.flows = parse_flow_list(v).map_err(|e| err(line, e))?,
                "schedule.steps" => m.steps = num(line, &key, v)?,
                "schedule.beta_start" => c.beta_start = num(line, &key, v)?,
                "schedule.beta_end" => c.beta_end = num(line, &key, v)?,
                "encoder.patch_grid" => c.patch_grid = list(line, &key, v)?,
                "encoder.seed" => c.encoder_seed = num(line, &key, v)?,
                "encoder.pos_scale" => c.pos_scale = num(line, &key, v)?,
                "encoder.bias_scale" => c.bias_scale = num(line, &key, v)?,
                "codec.seed" => c.codec_seed = num(line, &key, v)?,
                "codec.noise" => c.codec_noise = num(line, &key, v)?,
                "seed.init" => c.init_seed = num(line, &key, v)?,
                "seed.train" => c.train_seed = num(line, &key, v)?,
                "train.ctx_dropout" => c.ctx_dropout = num(line, &key, v)?,
                "paths.data" => c.data_dir = PathBuf::from(v),
                "data.filter" => c.data_filter = boolean(line, &key, v)?,
                "resume.stage" => resume[0] = Some(num(line, &key, v)?),
                "resume.step" => resume[1] = Some(num(line, &key, v)?),
                k => {
                    if let Some(group) = k.strip_prefix("scales.") {
                        let g: LayerGroup = group.parse().map_err(|e| err(line, e))?;
                        c.scales.insert(g, num(line, &key, v)?);
                    } else if let Some(rest) = k.strip_prefix("stage.") {
                        let (idx, field) =
                            rest.split_once('.').ok_or_else(|| err(line, format!("unknown key '{k}'")))?;
                        let idx: usize = num(line, &key, idx)?;
                        let n = c.stages.len();
                        let stage = c
                            .stages
                            .get_mut(idx)
                            .ok_or_else(|| err(line, format!("stage {idx} beyond curriculum.stages = {n}")))?;
                        set_stage_field(stage, field, line, &key, v)?;
                    } else {
                        return Err(err(line, format!("unknown key '{k}'")));
                    }
                }
            }
        }
        c.resume = match resume {
            [None, None] => None,
            [Some(stage), Some(step)] => Some(Progress { stage, step }),
            _ => return Err(Error::Config("resume.stage and resume.step must be given together".into())),
        };
        c.scales.sort_keys();
        for (g, s) in &c.scales {
            if !(s.is_finite() && *s > 0.0) {
                return Err(Error::Config(format!("gradient scale for {g} must be > 0, got {s}")));
            }
        }
        Ok(c)
    }

    pub fn render(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("model.image_shape", join(&m.image_shape));
        put("model.text_dim", m.text_dim.to_string());
        put("model.text_hidden", m.text_hidden.to_string());
        put("model.text_positions", m.text_positions.to_string());
        put("model.ctx_tokens", m.ctx_tokens.to_string());
        put("model.ctx_dim", m.ctx_dim.to_string());
        put("model.channels", join(&m.channels));
        put("model.heads", m.heads.to_string());
        put("model.time_dim", m.time_dim.to_string());
        put("model.norm_groups", m.norm_groups.to_string());
        put("model.flows", render_flow_list(&m.flows));
        put("schedule.steps", m.steps.to_string());
        put("schedule.beta_start", self.beta_start.to_string());
        put("schedule.beta_end", self.beta_end.to_string());
        put("encoder.patch_grid", join(&self.patch_grid));
        put("encoder.seed", self.encoder_seed.to_string());
        put("encoder.pos_scale", self.pos_scale.to_string());
        put("encoder.bias_scale", self.bias_scale.to_string());
        put("codec.seed", self.codec_seed.to_string());
        put("codec.noise", self.codec_noise.to_string());
        put("seed.init", self.init_seed.to_string());
        put("seed.train", self.train_seed.to_string());
        put("train.ctx_dropout", self.ctx_dropout.to_string());
        put("paths.data", self.data_dir.display().to_string());
        put("data.filter", self.data_filter.to_string());
        for (g, v) in &self.scales {
            put(&format!("scales.{g}"), v.to_string());
        }
        put("curriculum.stages", self.stages.len().to_string());
        for (i, st) in self.stages.iter().enumerate() {
            put(&format!("stage.{i}.flows"), render_flow_list(&st.flows));
            put(&format!("stage.{i}.samples"), st.samples.to_string());
            put(&format!("stage.{i}.epochs"), st.epochs.to_string());
            put(&format!("stage.{i}.lr"), st.lr.to_string());
            put(&format!("stage.{i}.batch"), st.batch.to_string());
            put(&format!("stage.{i}.effective_batch"), st.effective_batch.to_string());
            put(&format!("stage.{i}.decay"), st.decay.to_string());
            if let Some(sc) = &st.scales {
                for (g, v) in sc.iter() {
                    put(&format!("stage.{i}.scales.{g}"), v.to_string());
                }
            }
        }
        if let Some(p) = self.resume {
            put("resume.stage", p.stage.to_string());
            put("resume.step", p.step.to_string());
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::parse(&std::fs::read_to_string(path)?)?;
        if c.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                c.data_dir = dir.join(&c.data_dir);
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.encoder_config().validate()?;
        self.schedule()?;
        if !(0.0..1.0).contains(&self.ctx_dropout) {
            return Err(Error::Config(format!("context dropout {} outside [0, 1)", self.ctx_dropout)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.model.steps, self.beta_start, self.beta_end)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            tokens: self.model.ctx_tokens,
            dim: self.model.ctx_dim,
            image_shape: self.model.image_shape,
            patch_grid: self.patch_grid,
            seed: self.encoder_seed,
            pos_scale: self.pos_scale,
            bias_scale: self.bias_scale,
        }
    }

    pub fn modalities(&self) -> Result<Modalities> {
        let encoder = ContextEncoder::new(self.encoder_config())?;
        let text = TextCodec::new(self.model.text_dim, self.codec_seed)?.with_noise(self.codec_noise);
        Ok(Modalities::new(encoder, text))
    }

    /// Stages with the global scale overrides folded into stages that do
    /// not set their own scales.
    pub fn resolved_stages(&self) -> Result<Vec<CurriculumStage>> {
        self.stages
            .iter()
            .map(|st| {
                let mut st = st.clone();
                if st.scales.is_none() && !self.scales.is_empty() {
                    let mut sc = st.grad_scales();
                    for (&g, &v) in &self.scales {
                        if sc.get(g).is_some() {
                            sc.set(g, v)?;
                        }
                    }
                    st.scales = Some(sc);
                }
                Ok(st)
            })
            .collect()
    }
}

fn set_stage_field(stage: &mut CurriculumStage, field: &str, line: usize, key: &str, v: &str) -> Result<()> {
    match field {
        "flows" => stage.flows = parse_flow_list(v).map_err(|e| err(line, e))?,
        "samples" => stage.samples = num(line, key, v)?,
        "epochs" => stage.epochs = num(line, key, v)?,
        "lr" => stage.lr = num(line, key, v)?,
        "batch" => stage.batch = num(line, key, v)?,
        "effective_batch" => stage.effective_batch = num(line, key, v)?,
        "decay" => stage.decay = boolean(line, key, v)?,
        f => {
            let group = f.strip_prefix("scales.").ok_or_else(|| err(line, format!("unknown key '{key}'")))?;
            let g: LayerGroup = group.parse().map_err(|e| err(line, e))?;
            let value: f64 = num(line, key, v)?;
            let mut sc = stage.scales.clone().unwrap_or_else(|| GradScaleConfig::preset(&stage.flows));
            sc.set(g, value).map_err(|e| err(line, e))?;
            stage.scales = Some(sc);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let text = c.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.render(), text);
        c.validate().unwrap();
    }

    #[test]
    fn comments_order_and_spacing_normalize() {
        let text = "# toy run\nstage.1.lr=0.0005   # slower\n\nscales.data_image = 0.2\n  seed.train = 9\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.stages[1].lr, 5e-4);
        assert_eq!(c.train_seed, 9);
        assert_eq!(c.scales[&LayerGroup::Data(crate::flow::Modality::Image)], 0.2);
        let norm = c.render();
        assert_eq!(RunConfig::parse(&norm).unwrap().render(), norm);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        for bad in [
            "scales.data_imag = 0.2",
            "model.widht = 3",
            "stage.3.lr = 0.1",
            "stage.0.scales.ctx = 1",
            "seed.init = -1",
            "model.channels = 16",
            "data.filter = yes",
            "no equals sign",
            "seed.init = 1\nseed.init = 2",
            "resume.stage = 1",
            "scales.global = 0",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn stage_count_and_overrides() {
        let c = RunConfig::parse("curriculum.stages = 0").unwrap();
        assert!(c.stages.is_empty());
        let c = RunConfig::parse("curriculum.stages = 4\nstage.3.flows = t2i\nstage.0.scales.global = 0.5").unwrap();
        assert_eq!(c.stages[3].flows, vec![FlowSpec::T2I]);
        assert_eq!(c.stages[0].scales.as_ref().unwrap().get(LayerGroup::Global), Some(0.5));
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn global_scale_overrides_fold_into_presets() {
        let c = RunConfig::parse("scales.data_image = 0.3").unwrap();
        let st = c.resolved_stages().unwrap();
        for s in &st {
            assert_eq!(s.grad_scales().get(LayerGroup::Data(crate::flow::Modality::Image)), Some(0.3));
        }
        assert_eq!(st[2].grad_scales().get(LayerGroup::Data(crate::flow::Modality::Text)), Some(1.0));
    }

    #[test]
    fn schedule_defaults_match_the_rescaled_schedule() {
        let c = RunConfig::default();
        let a = c.schedule().unwrap();
        let b = NoiseSchedule::rescaled(TOY_STEPS).unwrap();
        assert_eq!(a.alpha_bars(), b.alpha_bars());
    }
}
