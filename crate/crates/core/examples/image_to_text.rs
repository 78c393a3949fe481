//! Image-to-text: renders a few shapes and decodes the sampled text latents.

mod common;

use multiflow::attrs::Attrs;
use multiflow::blending::{sample_flow, GuidanceSetup};
use multiflow::context::TextLatent;
use multiflow::datagen::render;
use multiflow::diffusion::{Guidance, Sampler, UncondMode};
use multiflow::numerics::stream_rng;
use multiflow::FlowSpec;

fn main() -> multiflow::Result<()> {
    let s = common::setup()?;
    let [_, h, w] = s.model.config().image_shape;
    let guide = GuidanceSetup::new(Guidance::new(5.0, UncondMode::ZeroEmbedding), &s.mods.encoder)?;
    let mut hits = 0;
    let shown: Vec<Attrs> = Attrs::all().into_iter().step_by(3).collect();
    for (i, &a) in shown.iter().enumerate() {
        let ctx = s.mods.encoder.encode_image(&render(a, h, w, i as u64)?)?;
        let z = sample_flow(
            &s.model,
            FlowSpec::I2T,
            &ctx,
            &guide,
            Sampler::Ddim { steps: 25 },
            &s.sched,
            &mut stream_rng(9, &[i as u64]),
        )?;
        let read = s.mods.text.decode(&TextLatent(z))?;
        hits += (read == a) as usize;
        println!("{a:<28} -> {read}");
    }
    println!("{hits}/{} exact", shown.len());
    Ok(())
}
