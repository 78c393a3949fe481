//! Image variation at every disentanglement level: positive levels keep the
//! leading principal directions of the context, negative levels drop them.

mod common;

use multiflow::attrs::Attrs;
use multiflow::blending::{image_variation, GuidanceSetup};
use multiflow::datagen::{classify, render};
use multiflow::diffusion::{Guidance, Sampler, UncondMode};
use multiflow::numerics::stream_rng;

fn main() -> multiflow::Result<()> {
    let s = common::setup()?;
    let [_, h, w] = s.model.config().image_shape;
    let source: Attrs = "blue square left".parse()?;
    let raw = render(source, h, w, 0)?;
    let guide = GuidanceSetup::new(Guidance::new(3.0, UncondMode::ZeroEmbedding), &s.mods.encoder)?;
    println!("source {source}\n{}", common::ascii(&raw));
    for level in [-2, -1, 0, 1, 2] {
        let mut rng = stream_rng(4, &[]);
        let z = image_variation(
            &s.model,
            &s.mods.encoder,
            &raw,
            level,
            &guide,
            Sampler::Ddim { steps: 25 },
            &s.sched,
            &mut rng,
        )?;
        let img = s.mods.image.decode(&z);
        let read = classify(&img)?.map_or("nothing".to_string(), |a| a.to_string());
        println!("level {level:+}: {read}\n{}", common::ascii(&img));
    }
    Ok(())
}
