//! Runs the three-stage curriculum (IV, then IV+T2I, then all four flows) on
//! generated data and saves a checkpoint.
//!
//!     cargo run --release --example train -- model.vdck 2000

use std::path::PathBuf;

use multiflow::cli::{Checkpoint, RunConfig};
use multiflow::datagen::{generate_dataset, DatasetSpec};
use multiflow::net::Diffuser;
use multiflow::training::{loss_windows, run_curriculum, CurriculumObserver, CurriculumOptions, LossRecord};
use multiflow::FlowSpec;

struct Progress;

impl CurriculumObserver for Progress {
    fn record(&mut self, r: &LossRecord) {
        if r.step.is_multiple_of(50) && r.flow == FlowSpec::IV {
            eprintln!("step {:>4}  iv loss {:.4}", r.step, r.loss);
        }
    }

    fn transition(&mut self, stage: usize, _previous: &Diffuser, next: &Diffuser) {
        eprintln!("stage {stage}: {} flows", next.config().flows.len());
    }
}

fn main() -> multiflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "model.vdck".into()));
    let n = args.next().map_or(Ok(2000), |s| s.parse()).expect("row count");

    let mut cfg = RunConfig::default();
    for stage in &mut cfg.stages {
        stage.samples = n;
    }
    let mods = cfg.modalities()?;
    let sched = cfg.schedule()?;
    let samples = generate_dataset(&DatasetSpec { n, ..DatasetSpec::default() })?;
    let data = mods.paired(&samples, cfg.train_seed, cfg.data_filter)?;
    println!("{} of {n} rows pass the filter", data.len());

    let opts = CurriculumOptions { seed: cfg.train_seed, ctx_dropout: cfg.ctx_dropout, ..Default::default() };
    let stages = cfg.resolved_stages()?;
    let run = run_curriculum(&cfg.model, &stages, &data, &sched, None, cfg.init_seed, &opts, &mut Progress)?;
    for flow in FlowSpec::ALL {
        if let Some((first, last)) = loss_windows(&run.log, flow, 50) {
            println!("{flow}: {first:.4} -> {last:.4}");
        }
    }
    Checkpoint::from_model(&cfg, &run.model).save(&out)?;
    println!("saved {}", out.display());
    Ok(())
}
