//! Context embeddings without a model: principal-component disentanglement,
//! concatenation, patch masks and latent text editing.

use multiflow::attrs::Attrs;
use multiflow::context::{
    concat_contexts, edit_text_latent, pca_disentangle, ContextEncoder, EncoderConfig, MaskSpec, PcaBasis, TextCodec,
};
use multiflow::datagen::render;

fn main() -> multiflow::Result<()> {
    let enc = ContextEncoder::new(EncoderConfig::default())?;
    let a: Attrs = "green triangle right".parse()?;
    let raw = render(a, 16, 16, 0)?;
    let ctx = enc.encode_image(&raw)?;
    println!("image context: {} tokens of width {}", ctx.len(), ctx.dim());

    let basis = PcaBasis::fit(&ctx)?;
    println!("{} principal directions over the local tokens", basis.components().len());
    for level in [-2, -1, 1, 2] {
        let out = pca_disentangle(&ctx, level)?;
        let moved = out.tokens().max_abs_diff(ctx.tokens())?;
        println!("level {level:+}: max token change {moved:.4}");
    }

    let text = enc.encode_text(&a.prompt())?;
    let both = concat_contexts(&[&text, &ctx], &[1.0, 0.5])?;
    println!("text + image context: {} tokens", both.len());

    let mask: MaskSpec = "1 1 0 0 1 1 0 0".parse()?;
    let masked = enc.masked_encode(&raw, &mask)?;
    println!("half-masked context differs by {:.4}", masked.tokens().max_abs_diff(ctx.tokens())?);

    let codec = TextCodec::new(32, 1)?;
    let z = codec.encode(a);
    let edited = edit_text_latent(&z, &codec.encode_prompt(&"green".parse()?), &codec.encode_prompt(&"red".parse()?))?;
    println!("latent edit green -> red decodes as {}", codec.decode(&edited)?);
    Ok(())
}
