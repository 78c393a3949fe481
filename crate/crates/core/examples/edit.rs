//! Image to text to edited text to image: reads a caption off an image,
//! swaps one attribute in latent space and renders the edited caption in
//! the style of the source.

mod common;

use multiflow::attrs::Attrs;
use multiflow::blending::{i2t2i, EditOptions, GuidanceSetup};
use multiflow::datagen::{classify, render};
use multiflow::diffusion::{Guidance, Sampler, UncondMode};
use multiflow::numerics::stream_rng;

fn main() -> multiflow::Result<()> {
    let s = common::setup()?;
    let [_, h, w] = s.model.config().image_shape;
    let source: Attrs = "red circle center".parse()?;
    let raw = render(source, h, w, 0)?;
    let guide = GuidanceSetup::new(Guidance::new(3.0, UncondMode::ZeroEmbedding), &s.mods.encoder)?;
    let (neg, pos) = ("red".parse()?, "blue".parse()?);
    let out = i2t2i(
        &s.model,
        &s.mods.encoder,
        &s.mods.text,
        &raw,
        &neg,
        &pos,
        &EditOptions::default(),
        &guide,
        Sampler::Ddim { steps: 25 },
        &s.sched,
        &mut stream_rng(6, &[]),
    )?;
    let img = s.mods.image.decode(&out.image);
    let read = classify(&img)?.map_or("nothing".to_string(), |a| a.to_string());
    println!("source {source}; caption read back: {}", out.caption);
    println!("edited caption {} ; image reads {read}\n{}", out.edited, common::ascii(&img));
    Ok(())
}
