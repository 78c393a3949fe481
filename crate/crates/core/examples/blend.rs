//! Mixes a text context with an image context under each strategy, sweeping
//! the mixing rate from all-text to all-image.

mod common;

use multiflow::attrs::Attrs;
use multiflow::blending::{sample_mixed, GuidanceSetup, MixStrategy, MixingPlan};
use multiflow::datagen::{classify, render};
use multiflow::diffusion::{Guidance, Sampler, UncondMode};
use multiflow::numerics::stream_rng;
use multiflow::Modality;

fn main() -> multiflow::Result<()> {
    let s = common::setup()?;
    let [_, h, w] = s.model.config().image_shape;
    let text = s.mods.encoder.encode_text(&"green,circle,right".parse()?)?;
    let image: Attrs = "red square left".parse()?;
    let style = s.mods.encoder.encode_image(&render(image, h, w, 0)?)?;
    let guide = GuidanceSetup::new(Guidance::new(3.0, UncondMode::ZeroEmbedding), &s.mods.encoder)?;
    println!("text 'green circle right' mixed with an image of {image}");
    for strategy in MixStrategy::ALL {
        let mut row = Vec::new();
        for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let plan = MixingPlan::new(strategy, r)?;
            let z = sample_mixed(
                &s.model,
                Modality::Image,
                [&text, &style],
                plan,
                &guide,
                Sampler::Ddim { steps: 25 },
                &s.sched,
                &mut stream_rng(2, &[]),
            )?;
            let read = classify(&s.mods.image.decode(&z))?.map_or("-".to_string(), |a| a.to_string());
            row.push(format!("r={r}: {read}"));
        }
        println!("{:<10} {}", strategy.to_string(), row.join(" | "));
    }
    Ok(())
}
