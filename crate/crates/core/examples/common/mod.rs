//! Helpers shared by the examples: a model from a checkpoint path given as
//! the first argument, or a short four-flow run when none is given.

#![allow(dead_code)]

use std::path::Path;

use multiflow::cli::{Checkpoint, RunConfig};
use multiflow::datagen::{generate_dataset, DatasetSpec, Modalities};
use multiflow::diffusion::NoiseSchedule;
use multiflow::net::Diffuser;
use multiflow::training::{run_curriculum, CurriculumOptions, CurriculumStage};
use multiflow::FlowSpec;

pub struct Setup {
    pub config: RunConfig,
    pub model: Diffuser,
    pub mods: Modalities,
    pub sched: NoiseSchedule,
}

pub fn setup() -> multiflow::Result<Setup> {
    match std::env::args().nth(1) {
        Some(path) => {
            let ck = Checkpoint::load(Path::new(&path))?;
            Ok(Setup {
                model: ck.model()?,
                mods: ck.config.modalities()?,
                sched: ck.config.schedule()?,
                config: ck.config,
            })
        }
        None => quick_train(1000, 1),
    }
}

/// Trains every flow in one stage on `n` generated rows.
pub fn quick_train(n: usize, epochs: usize) -> multiflow::Result<Setup> {
    let config = RunConfig::default();
    let mods = config.modalities()?;
    let sched = config.schedule()?;
    let samples = generate_dataset(&DatasetSpec { n, ..DatasetSpec::default() })?;
    let data = mods.paired(&samples, config.train_seed, false)?;
    let mut stage = CurriculumStage::new(FlowSpec::ALL.to_vec());
    stage.epochs = epochs;
    stage.lr = 2e-3;
    eprintln!("no checkpoint given; training a small model on {n} rows");
    let opts = CurriculumOptions { seed: config.train_seed, ctx_dropout: config.ctx_dropout, ..Default::default() };
    let out = run_curriculum(&config.model, &[stage], &data, &sched, None, config.init_seed, &opts, &mut ())?;
    Ok(Setup { config, model: out.model, mods, sched })
}

/// Coarse text rendering of an image: one character per pixel by coverage.
pub fn ascii(img: &multiflow::numerics::Tensor) -> String {
    let [_, h, w] = [img.shape()[0], img.shape()[1], img.shape()[2]];
    let cover = &img.data()[3 * h * w..4 * h * w];
    let mut s = String::new();
    for y in 0..h {
        for x in 0..w {
            s.push(if cover[y * w + x] > 0.5 { '#' } else { '.' });
        }
        s.push('\n');
    }
    s
}
