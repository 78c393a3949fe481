use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::checkpoint::{stored_crc, Checkpoint};
use super::config::RunConfig;
use crate::attrs::AttrPrompt;
use crate::blending::{
    i2t2i, image_variation, sample_flow, sample_mixed, EditOptions, GuidanceSetup, MixStrategy, MixingPlan,
};
use crate::context::{concat_contexts, ContextEmbedding, MaskSpec, TextLatent};
use crate::datagen::{
    classify, encode_ppm, generate_dataset, read_dataset_files, read_vdim, samples_from_files, write_dataset_files,
    write_vdim, DatasetSpec, Modalities, Sample,
};
use crate::diffusion::{Guidance, NoiseSchedule, Sampler, UncondMode};
use crate::error::{Error, Result};
use crate::flow::{FlowSpec, Modality};
use crate::net::{gradcheck_suite, sharing_report, Diffuser};
use crate::numerics::{stream_rng, Tensor};
use crate::training::{parse_loss_log, run_curriculum, CurriculumObserver, CurriculumOptions, LossRecord};

/// Gradcheck pass threshold on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "multiflow", version, about = "Multi-flow multimodal diffusion on toy shapes and captions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic paired dataset (manifest.tsv + images/).
    GenData(GenDataArgs),
    /// Run the training curriculum from a config file.
    Train(TrainArgs),
    /// Sample one flow from a checkpoint.
    Sample(SampleArgs),
    /// Image variation at a disentanglement level.
    Variation(VariationArgs),
    /// Dual-context image generation.
    Blend(BlendArgs),
    /// Image to text, edit the text, back to image.
    Edit(EditArgs),
    /// Finite-difference check over every layer kind.
    Gradcheck(GradcheckArgs),
    /// Parameter sharing report of a config.
    ParamsReport(ParamsReportArgs),
    /// Convert a loss log into `step,flow,loss` CSV.
    PlotLoss(PlotLossArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub noise_frac: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log path; defaults to the checkpoint path with `.losses` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stop after this many optimizer updates and record where to resume.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

/// Sampler and guidance flags shared by the generating commands.
#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// DDIM steps; ancestral sampling always runs all T steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub ddim: bool,
    #[arg(long, default_value_t = 1.0)]
    pub guidance_scale: f64,
    #[arg(long, default_value = "zero")]
    pub uncond_mode: UncondMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of samples.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write enlarged PPM previews of image outputs.
    #[arg(long)]
    pub ppm: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub flow: FlowSpec,
    /// Attribute words for text contexts, e.g. "red circle left".
    #[arg(long)]
    pub text: Option<String>,
    /// VDIM render for image contexts.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct VariationArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true, value_parser = clap::value_parser!(i32).range(-2..=2))]
    pub level: i32,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// VDIM renders used as image contexts.
    #[arg(long = "ctx", num_args = 1..)]
    pub ctx: Vec<PathBuf>,
    /// Attribute words; when given, the text is the first context.
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long, default_value = "attention")]
    pub strategy: MixStrategy,
    #[arg(long)]
    pub rate: f64,
    /// Patch mask for the first image context: whitespace-separated 0/1.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Multiplier on the image context tokens.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub neg: String,
    #[arg(long)]
    pub pos: String,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinates checked per parameter tensor (all when omitted).
    #[arg(long, default_value_t = 16)]
    pub coords: usize,
}

#[derive(Debug, Args)]
pub struct ParamsReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotLossArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a command, writing human-readable output to `out`. Returns the
/// process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::GenData(a) => gen_data(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Sample(a) => sample(&a, out),
        Command::Variation(a) => variation(&a, out),
        Command::Blend(a) => blend(&a, out),
        Command::Edit(a) => edit(&a, out),
        Command::Gradcheck(a) => gradcheck(&a, out),
        Command::ParamsReport(a) => params_report(&a, out),
        Command::PlotLoss(a) => plot_loss(&a, out),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::arg(e.to_string()))?;
    run(cli, out)
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = DatasetSpec { n: a.n, seed: a.seed, noise_frac: a.noise_frac, ..DatasetSpec::default() };
    let samples = generate_dataset(&spec)?;
    let rows: Vec<_> = samples.iter().map(Sample::manifest_row).collect();
    let images: Vec<Tensor> = samples.into_iter().map(|s| s.image).collect();
    write_dataset_files(&a.out, &rows, &images)?;
    let kept = rows.iter().filter(|r| r.meta.passes()).count();
    writeln!(out, "wrote {} rows to {} ({} pass the metadata filter)", rows.len(), a.out.display(), kept)?;
    Ok(0)
}

/// Streams loss lines to the log file.
struct LogObserver<W: Write> {
    log: W,
    err: Option<std::io::Error>,
}

impl<W: Write> CurriculumObserver for LogObserver<W> {
    fn record(&mut self, rec: &LossRecord) {
        if self.err.is_none() {
            if let Err(e) = writeln!(self.log, "{rec}") {
                self.err = Some(e);
            }
        }
    }

    fn transition(&mut self, _stage: usize, _from: &Diffuser, _to: &Diffuser) {}
}

fn loss_log_path(a: &TrainArgs) -> PathBuf {
    a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".losses");
        PathBuf::from(s)
    })
}

fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let (rows, images) = read_dataset_files(dir)?;
    Ok(samples_from_files(rows, images))
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(&a.config)?;
    cfg.validate()?;
    let stages = cfg.resolved_stages()?;
    if stages.is_empty() {
        return Err(Error::Config("curriculum has no stages".into()));
    }
    let (init, resume) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (Some(ck.model()?), ck.config.resume)
        }
        None => (None, None),
    };
    let sched = cfg.schedule()?;
    let mods = cfg.modalities()?;
    let samples = load_samples(&cfg.data_dir)?;
    let data = mods.paired(&samples, cfg.train_seed, cfg.data_filter)?;
    writeln!(out, "training on {} of {} rows, {} stages", data.len(), samples.len(), stages.len())?;

    let log_path = loss_log_path(a);
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)?;
    let mut obs = LogObserver { log: BufWriter::new(file), err: None };
    let opts =
        CurriculumOptions { seed: cfg.train_seed, ctx_dropout: cfg.ctx_dropout, stop_after: a.stop_after, resume };
    let outcome = run_curriculum(&cfg.model, &stages, &data, &sched, init, cfg.init_seed, &opts, &mut obs)?;
    if let Some(e) = obs.err.take() {
        return Err(e.into());
    }
    obs.log.flush()?;

    let mut ck_cfg = cfg.clone();
    ck_cfg.resume = (!outcome.finished(stages.len())).then_some(outcome.progress);
    Checkpoint::from_model(&ck_cfg, &outcome.model).save(&a.out)?;
    match ck_cfg.resume {
        Some(p) => writeln!(out, "stopped at stage {} step {}; checkpoint {}", p.stage, p.step, a.out.display())?,
        None => writeln!(out, "finished; checkpoint {}", a.out.display())?,
    }
    writeln!(out, "loss log {} ({} records)", log_path.display(), outcome.log.len())?;
    Ok(0)
}

/// Everything the generating commands need from a checkpoint.
struct Loaded {
    model: Diffuser,
    mods: Modalities,
    sched: NoiseSchedule,
    crc: u32,
}

fn load_ckpt(path: &Path) -> Result<Loaded> {
    let bytes = fs::read(path)?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    Ok(Loaded {
        model: ck.model()?,
        mods: ck.config.modalities()?,
        sched: ck.config.schedule()?,
        crc: stored_crc(&bytes).unwrap_or(0),
    })
}

impl SamplingArgs {
    fn sampler(&self, sched: &NoiseSchedule) -> Result<Sampler> {
        match (self.ddim, self.steps) {
            (true, steps) => Ok(Sampler::Ddim { steps: steps.unwrap_or(50) }),
            (false, Some(k)) if k != sched.steps() => Err(Error::arg(format!(
                "ancestral sampling runs all {} steps; pass --ddim to sample with {k}",
                sched.steps()
            ))),
            (false, _) => Ok(Sampler::Ddpm),
        }
    }

    fn guide(&self, l: &Loaded) -> Result<GuidanceSetup> {
        GuidanceSetup::new(Guidance::new(self.guidance_scale, self.uncond_mode), &l.mods.encoder)
    }

    fn provenance(&self, cmd: &str, l: &Loaded, sampler: Sampler, extra: &str) -> String {
        let sampler = match sampler {
            Sampler::Ddpm => "ddpm".to_string(),
            Sampler::Ddim { steps } => format!("ddim:{steps}"),
        };
        format!(
            "provenance multiflow {} cmd={cmd} ckpt_crc={:08x} sampler={sampler} guidance={} uncond={} seed={} count={}{extra}",
            env!("CARGO_PKG_VERSION"),
            l.crc,
            self.guidance_scale,
            self.uncond_mode,
            self.seed,
            self.count
        )
    }
}

fn prompt(text: &str) -> Result<AttrPrompt> {
    let p = AttrPrompt::from_caption(text);
    if p.is_empty() {
        return Err(Error::arg(format!("'{text}' names no shape, colour or position")));
    }
    Ok(p)
}

/// Writes a decoded image latent as VDIM (and PPM) and returns its
/// classifier reading.
fn write_image(l: &Loaded, a: &SamplingArgs, stem: &str, latent: &Tensor) -> Result<String> {
    let raw = l.mods.image.decode(latent);
    write_vdim(&a.out.join(format!("{stem}.vdim")), &raw)?;
    if a.ppm {
        fs::write(a.out.join(format!("{stem}.ppm")), encode_ppm(&raw, 8)?)?;
    }
    Ok(match classify(&raw) {
        Ok(Some(attrs)) => attrs.caption(),
        _ => "unreadable".into(),
    })
}

fn finish(a: &SamplingArgs, lines: &[String], provenance: &str, out: &mut dyn Write) -> Result<i32> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(a.out.join("samples.txt"), &text)?;
    fs::write(a.out.join("provenance.txt"), format!("{provenance}\n"))?;
    out.write_all(text.as_bytes())?;
    writeln!(out, "{provenance}")?;
    Ok(0)
}

fn sample(a: &SampleArgs, out: &mut dyn Write) -> Result<i32> {
    let s = &a.sampling;
    let l = load_ckpt(&a.ckpt)?;
    l.model.routes().route(a.flow)?;
    let sampler = s.sampler(&l.sched)?;
    let guide = s.guide(&l)?;
    let (ctx, source) = match a.flow.context {
        Modality::Text => {
            let text = a.text.as_deref().ok_or_else(|| Error::arg(format!("--text is required for {}", a.flow)))?;
            (l.mods.encoder.encode_text(&prompt(text)?)?, format!(" text=\"{text}\""))
        }
        Modality::Image => {
            let input = a.input.as_ref().ok_or_else(|| Error::arg(format!("--input is required for {}", a.flow)))?;
            (l.mods.encoder.encode_image(&read_vdim(input)?)?, format!(" input={}", input.display()))
        }
    };
    fs::create_dir_all(&s.out)?;
    let mut lines = Vec::new();
    for i in 0..s.count {
        let mut rng = stream_rng(s.seed, &[i as u64]);
        let z = sample_flow(&l.model, a.flow, &ctx, &guide, sampler, &l.sched, &mut rng)?;
        let line = match a.flow.output {
            Modality::Image => write_image(&l, s, &format!("sample_{i:03}"), &z)?,
            Modality::Text => l.mods.text.decode(&TextLatent(z))?.caption(),
        };
        lines.push(line);
    }
    let prov = s.provenance("sample", &l, sampler, &format!(" flow={}{source}", a.flow));
    finish(s, &lines, &prov, out)
}

fn variation(a: &VariationArgs, out: &mut dyn Write) -> Result<i32> {
    let s = &a.sampling;
    let l = load_ckpt(&a.ckpt)?;
    let sampler = s.sampler(&l.sched)?;
    let guide = s.guide(&l)?;
    let raw = read_vdim(&a.input)?;
    fs::create_dir_all(&s.out)?;
    let mut lines = Vec::new();
    for i in 0..s.count {
        let mut rng = stream_rng(s.seed, &[i as u64]);
        let z = image_variation(&l.model, &l.mods.encoder, &raw, a.level, &guide, sampler, &l.sched, &mut rng)?;
        lines.push(write_image(&l, s, &format!("variation_{i:03}"), &z)?);
    }
    let prov = s.provenance("variation", &l, sampler, &format!(" level={} input={}", a.level, a.input.display()));
    finish(s, &lines, &prov, out)
}

/// Contexts of `blend`: the text (if any) first, then the image contexts
/// concatenated with the scale applied.
fn blend_contexts(a: &BlendArgs, l: &Loaded) -> Result<[ContextEmbedding; 2]> {
    let enc = &l.mods.encoder;
    let mut images = Vec::new();
    for (i, path) in a.ctx.iter().enumerate() {
        let raw = read_vdim(path)?;
        let ctx = match (&a.mask, i) {
            (Some(m), 0) => enc.masked_encode(&raw, &fs::read_to_string(m)?.parse::<MaskSpec>()?)?,
            _ => enc.encode_image(&raw)?,
        };
        images.push(ctx);
    }
    let scaled = |ctxs: &[ContextEmbedding]| -> Result<ContextEmbedding> {
        let refs: Vec<&ContextEmbedding> = ctxs.iter().collect();
        concat_contexts(&refs, &vec![a.scale; refs.len()])
    };
    match &a.text {
        Some(text) => {
            if images.is_empty() {
                return Err(Error::arg("blend needs at least one --ctx image"));
            }
            Ok([enc.encode_text(&prompt(text)?)?, scaled(&images)?])
        }
        None => {
            if images.len() < 2 {
                return Err(Error::arg("blend needs --text or at least two --ctx images"));
            }
            let first = images.remove(0);
            Ok([first, scaled(&images)?])
        }
    }
}

fn blend(a: &BlendArgs, out: &mut dyn Write) -> Result<i32> {
    let s = &a.sampling;
    let l = load_ckpt(&a.ckpt)?;
    let sampler = s.sampler(&l.sched)?;
    let guide = s.guide(&l)?;
    let plan = MixingPlan::new(a.strategy, a.rate)?;
    let [c1, c2] = blend_contexts(a, &l)?;
    fs::create_dir_all(&s.out)?;
    let mut lines = Vec::new();
    for i in 0..s.count {
        let mut rng = stream_rng(s.seed, &[i as u64]);
        let z = sample_mixed(&l.model, Modality::Image, [&c1, &c2], plan, &guide, sampler, &l.sched, &mut rng)?;
        lines.push(write_image(&l, s, &format!("blend_{i:03}"), &z)?);
    }
    let extra = format!(" strategy={} rate={} scale={} contexts={}", a.strategy, a.rate, a.scale, a.ctx.len());
    let prov = s.provenance("blend", &l, sampler, &extra);
    finish(s, &lines, &prov, out)
}

fn edit(a: &EditArgs, out: &mut dyn Write) -> Result<i32> {
    let s = &a.sampling;
    let l = load_ckpt(&a.ckpt)?;
    let sampler = s.sampler(&l.sched)?;
    let guide = s.guide(&l)?;
    let raw = read_vdim(&a.input)?;
    let (neg, pos) = (prompt(&a.neg)?, prompt(&a.pos)?);
    fs::create_dir_all(&s.out)?;
    let mut lines = Vec::new();
    for i in 0..s.count {
        let mut rng = stream_rng(s.seed, &[i as u64]);
        let r = i2t2i(
            &l.model,
            &l.mods.encoder,
            &l.mods.text,
            &raw,
            &neg,
            &pos,
            &EditOptions::default(),
            &guide,
            sampler,
            &l.sched,
            &mut rng,
        )?;
        let seen = write_image(&l, s, &format!("edit_{i:03}"), &r.image)?;
        lines.push(format!("{} -> {} -> {seen}", r.caption.caption(), r.edited.caption()));
    }
    let extra = format!(" input={} neg=\"{}\" pos=\"{}\"", a.input.display(), a.neg, a.pos);
    let prov = s.provenance("edit", &l, sampler, &extra);
    finish(s, &lines, &prov, out)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let coords = (a.coords > 0).then_some(a.coords);
    let reports = gradcheck_suite(a.seed, coords)?;
    let mut worst: f64 = 0.0;
    for (kind, r) in &reports {
        writeln!(out, "{kind:<22} max_rel_err {:.3e} ({} coords)", r.max_rel_error, r.coords_checked)?;
        worst = worst.max(r.max_rel_error);
    }
    let ok = worst < GRADCHECK_TOLERANCE;
    writeln!(out, "max_rel_err {worst:.3e} {}", if ok { "PASS" } else { "FAIL" })?;
    Ok(if ok { 0 } else { 1 })
}

fn params_report(a: &ParamsReportArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.model.validate()?;
    writeln!(out, "{}", sharing_report(&cfg.model)?)?;
    Ok(0)
}

/// `step,flow,loss` lines with a header.
pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,flow,loss\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.step, r.flow, r.loss));
    }
    s
}

fn plot_loss(a: &PlotLossArgs, out: &mut dyn Write) -> Result<i32> {
    let log = parse_loss_log(&fs::read_to_string(&a.log)?)?;
    fs::write(&a.out, loss_csv(&log))?;
    writeln!(out, "wrote {} rows to {}", log.len(), a.out.display())?;
    Ok(0)
}
