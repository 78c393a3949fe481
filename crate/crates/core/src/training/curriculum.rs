use std::fmt;
use std::str::FromStr;

use super::grads::{GradScaleConfig, GradientStore};
use super::optimizer::{AdamWConfig, Optimizer};
use super::step::{accumulation_loop, draw_batches, draw_indices, train_step, DrawConfig, PairedDataset};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::flow::FlowSpec;
use crate::net::{Diffuser, DiffuserConfig, ParameterStore};

/// One training phase over a fixed flow set.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumStage {
    pub flows: Vec<FlowSpec>,
    /// Rows of the dataset this stage draws from.
    pub samples: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Per-worker batch.
    pub batch: usize,
    pub effective_batch: usize,
    /// `None` uses the preset for the flow set.
    pub scales: Option<GradScaleConfig>,
    /// Decay the learning rate linearly to zero over the stage.
    pub decay: bool,
}

impl CurriculumStage {
    pub fn new(flows: Vec<FlowSpec>) -> Self {
        Self { flows, samples: 5000, epochs: 3, lr: 1e-3, batch: 8, effective_batch: 8, scales: None, decay: false }
    }

    /// Optimizer updates in this stage for a dataset of `available` rows.
    pub fn steps(&self, available: usize) -> usize {
        let seen = self.samples.min(available) * self.epochs;
        seen.div_ceil(self.effective_batch.max(1))
    }

    /// Learning rate of update `step` out of `steps`.
    pub fn lr_at(&self, step: usize, steps: usize) -> f64 {
        if self.decay && steps > 0 {
            self.lr * (steps - step) as f64 / steps as f64
        } else {
            self.lr
        }
    }

    pub fn grad_scales(&self) -> GradScaleConfig {
        self.scales.clone().unwrap_or_else(|| GradScaleConfig::preset(&self.flows))
    }

    /// Image variation first, then text-to-image, then all four flows.
    pub fn default_order() -> Vec<Self> {
        use FlowSpec as F;
        vec![Self::new(vec![F::IV]), Self::new(vec![F::IV, F::T2I]), Self::new(F::ALL.to_vec())]
    }

    /// Text-to-image as the beginning task.
    pub fn alt_order() -> Vec<Self> {
        use FlowSpec as F;
        vec![Self::new(vec![F::T2I]), Self::new(vec![F::T2I, F::IV]), Self::new(F::ALL.to_vec())]
    }
}

/// Position inside a curriculum: the next step to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub stage: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub flow: FlowSpec,
    pub loss: f64,
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {} flow {} loss {}", self.step, self.flow, self.loss)
    }
}

impl FromStr for LossRecord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::Format(format!("malformed loss line '{s}'"));
        match parts.as_slice() {
            ["step", n, "flow", flow, "loss", loss] => Ok(LossRecord {
                step: n.parse().map_err(|_| bad())?,
                flow: flow.parse().map_err(|_| bad())?,
                loss: loss.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Parses a loss log, skipping blank lines.
pub fn parse_loss_log(text: &str) -> Result<Vec<LossRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// Mean loss of `flow` over its first and last `window` records.
pub fn loss_windows(log: &[LossRecord], flow: FlowSpec, window: usize) -> Option<(f64, f64)> {
    let series: Vec<f64> = log.iter().filter(|r| r.flow == flow).map(|r| r.loss).collect();
    if series.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(series.len());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Some((mean(&series[..w]), mean(&series[series.len() - w..])))
}

/// Copies every parameter of `to` that also exists in `from`. Returns the
/// number of tensors copied.
pub fn transfer_shared(from: &ParameterStore, to: &mut ParameterStore) -> Result<usize> {
    let mut copied = 0;
    for (name, param) in to.iter_mut() {
        if let Some(src) = from.get(name) {
            if src.value.shape() != param.value.shape() {
                return Err(Error::dim(format!(
                    "'{name}' is {:?} in the source and {:?} in the target",
                    src.value.shape(),
                    param.value.shape()
                )));
            }
            if src.group != param.group {
                return Err(Error::Checkpoint(format!("'{name}' changed group from {} to {}", src.group, param.group)));
            }
            param.value = src.value.clone();
            copied += 1;
        }
    }
    Ok(copied)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumOptions {
    pub seed: u64,
    pub ctx_dropout: f64,
    /// Run at most this many updates in this call.
    pub stop_after: Option<usize>,
    /// Where to continue; the initial model must belong to that stage.
    pub resume: Option<Progress>,
}

impl Default for CurriculumOptions {
    fn default() -> Self {
        Self { seed: 0, ctx_dropout: 0.1, stop_after: None, resume: None }
    }
}

/// Hooks called while a curriculum runs.
pub trait CurriculumObserver {
    fn record(&mut self, _record: &LossRecord) {}
    fn transition(&mut self, _stage: usize, _previous: &Diffuser, _next: &Diffuser) {}
}

impl CurriculumObserver for () {}

pub struct CurriculumOutcome {
    pub model: Diffuser,
    pub log: Vec<LossRecord>,
    /// Next step to run; `stage == stages.len()` once everything finished.
    pub progress: Progress,
}

impl CurriculumOutcome {
    pub fn finished(&self, stages: usize) -> bool {
        self.progress.stage >= stages
    }
}

fn validate_stages(stages: &[CurriculumStage]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Config("curriculum has no stages".into()));
    }
    for (k, s) in stages.iter().enumerate() {
        if s.flows.is_empty() {
            return Err(Error::Config(format!("stage {k} has no flows")));
        }
        if !(s.lr.is_finite() && s.lr > 0.0) {
            return Err(Error::Config(format!("stage {k} learning rate must be positive")));
        }
        accumulation_loop(s.effective_batch, s.batch, 1)?;
        if k > 0 {
            if let Some(f) = stages[k - 1].flows.iter().find(|f| !s.flows.contains(f)) {
                return Err(Error::Config(format!("stage {k} drops flow {f}; stages may only add flows")));
            }
        }
    }
    Ok(())
}

fn global_offset(stages: &[CurriculumStage], stage: usize, available: usize) -> usize {
    stages[..stage].iter().map(|s| s.steps(available)).sum()
}

/// Runs the stages in order. Each stage builds a model for its flow set,
/// copies every parameter it shares with the previous model and freshly
/// initializes the rest. Optimizer state starts empty at every stage.
#[allow(clippy::too_many_arguments)]
pub fn run_curriculum(
    base: &DiffuserConfig,
    stages: &[CurriculumStage],
    data: &PairedDataset,
    sched: &NoiseSchedule,
    init: Option<Diffuser>,
    init_seed: u64,
    opts: &CurriculumOptions,
    observer: &mut dyn CurriculumObserver,
) -> Result<CurriculumOutcome> {
    validate_stages(stages)?;
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let start = opts.resume.unwrap_or_default();
    if start.stage > stages.len() {
        return Err(Error::Config(format!("resume stage {} beyond {} stages", start.stage, stages.len())));
    }
    if let (Some(_), Some(m)) = (opts.resume, init.as_ref()) {
        if start.stage < stages.len() && m.config().flows != stages[start.stage].flows {
            return Err(Error::Config(format!(
                "checkpoint flows [{}] do not match stage {} flows [{}]",
                crate::flow::render_flow_list(&m.config().flows),
                start.stage,
                crate::flow::render_flow_list(&stages[start.stage].flows)
            )));
        }
    }
    let draw = DrawConfig { seed: opts.seed, ctx_dropout: opts.ctx_dropout };
    let mut log = Vec::new();
    let mut budget = opts.stop_after.unwrap_or(usize::MAX);
    let mut current = init;

    for (k, stage) in stages.iter().enumerate().skip(start.stage) {
        let cfg = DiffuserConfig { flows: stage.flows.clone(), ..base.clone() };
        let mut model = Diffuser::new(cfg, init_seed)?;
        if let Some(prev) = current.take() {
            transfer_shared(prev.params(), model.params_mut())?;
            if k != start.stage || opts.resume.is_none() {
                observer.transition(k, &prev, &model);
            }
        }
        let available = stage.samples.min(data.len());
        let steps = stage.steps(data.len());
        let offset = global_offset(stages, k, data.len());
        let first = if k == start.stage { start.step } else { 0 };
        let scales = stage.grad_scales();
        let mut opt = Optimizer::adamw(AdamWConfig::with_lr(stage.lr));
        let mut grads = GradientStore::zeros_like(model.params());
        for step in first..steps {
            if budget == 0 {
                return Ok(CurriculumOutcome { model, log, progress: Progress { stage: k, step } });
            }
            opt.set_lr(stage.lr_at(step, steps));
            let global = offset + step;
            let idx = draw_indices(opts.seed, k as u64, step as u64, available, stage.effective_batch)?;
            let batches = draw_batches(data, &stage.flows, &idx, global as u64, sched, &draw)?;
            let losses = train_step(&mut model, &batches, sched, &scales, &mut opt, stage.batch, &mut grads)?;
            for (flow, loss) in losses {
                let rec = LossRecord { step: global, flow, loss };
                observer.record(&rec);
                log.push(rec);
            }
            budget -= 1;
        }
        current = Some(model);
    }
    let model = match current {
        Some(m) => m,
        None => return Err(Error::Config("resume point is past the last stage and no model was given".into())),
    };
    Ok(CurriculumOutcome { model, log, progress: Progress { stage: stages.len(), step: 0 } })
}
