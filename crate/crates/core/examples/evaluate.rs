//! Exact-tuple accuracy of both cross-modal flows over all 27 attribute
//! tuples, with and without guidance.

mod common;

use multiflow::blending::GuidanceSetup;
use multiflow::diffusion::{Guidance, Sampler, UncondMode};
use multiflow::eval::{i2t_accuracy, t2i_accuracy};

fn main() -> multiflow::Result<()> {
    let s = common::setup()?;
    let sampler = Sampler::Ddim { steps: 25 };
    for scale in [1.0, 5.0] {
        let guide = GuidanceSetup::new(Guidance::new(scale, UncondMode::ZeroEmbedding), &s.mods.encoder)?;
        println!("guidance {scale}");
        println!("  t2i {}", t2i_accuracy(&s.model, &s.mods, &guide, sampler, &s.sched, 7, 1)?);
        println!("  i2t {}", i2t_accuracy(&s.model, &s.mods, &guide, sampler, &s.sched, 7, 1)?);
    }
    Ok(())
}
