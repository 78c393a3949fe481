//! Text-to-image sampling with classifier-free guidance. Pass a checkpoint
//! path to use a trained model; without one a small model is trained first.
//!
//!     cargo run --release --example text_to_image -- model.vdck

mod common;

use multiflow::attrs::AttrPrompt;
use multiflow::blending::{sample_flow, GuidanceSetup};
use multiflow::datagen::classify;
use multiflow::diffusion::{Guidance, Sampler, UncondMode};
use multiflow::numerics::stream_rng;
use multiflow::FlowSpec;

fn main() -> multiflow::Result<()> {
    let s = common::setup()?;
    let prompt: AttrPrompt = "red,triangle,left".parse()?;
    let ctx = s.mods.encoder.encode_text(&prompt)?;
    for scale in [1.0, 3.0, 5.0] {
        let guide = GuidanceSetup::new(Guidance::new(scale, UncondMode::ZeroEmbedding), &s.mods.encoder)?;
        let z = sample_flow(
            &s.model,
            FlowSpec::T2I,
            &ctx,
            &guide,
            Sampler::Ddim { steps: 25 },
            &s.sched,
            &mut stream_rng(5, &[]),
        )?;
        let img = s.mods.image.decode(&z);
        let read = classify(&img)?.map_or("nothing".to_string(), |a| a.to_string());
        println!("guidance {scale}: prompt '{prompt}', classifier reads {read}\n{}", common::ascii(&img));
    }
    Ok(())
}
