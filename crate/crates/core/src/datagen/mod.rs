//! Synthetic paired data: shape renders with attributes, noisy captions and
//! metadata, plus the caption cleaner, metadata filter and file formats.

mod captions;
mod io;
mod meta;
mod render;

use rand::Rng;

pub use captions::{clean_caption, pollute};
pub use io::{
    decode_vdim, encode_ppm, encode_vdim, image_file, image_path, parse_manifest, read_dataset_files, read_vdim,
    render_manifest, write_dataset_files, write_vdim, ManifestRow, IMAGE_DIR, MANIFEST_FILE, MANIFEST_HEADER,
    VDIM_HEADER_LEN, VDIM_MAGIC, VDIM_VERSION,
};
pub use meta::{
    filter_meta, MetaRecord, MAX_ASPECT, MAX_NSFW, MAX_WATERMARK, META_FAIL_RATE, MIN_AREA, MIN_ASPECT, MIN_CLIP_SIM,
};
pub use render::{classify, render, RENDER_CHANNELS};

use crate::attrs::{AttrPrompt, Attrs};
use crate::context::{ContextEncoder, ImageCodec, TextCodec, TextLatent};
use crate::error::{Error, Result};
use crate::numerics::{stream_rng, Tensor};
use crate::training::{PairedDataset, PairedSample};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n: usize,
    pub seed: u64,
    /// Fraction of captions polluted with web-scrape artefacts.
    pub noise_frac: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { n: 5000, seed: 0, noise_frac: 0.2, height: 16, width: 16 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// `[4, H, W]` render in `[0, 1]`.
    pub image: Tensor,
    pub attrs: Attrs,
    pub caption: String,
    pub meta: MetaRecord,
}

impl Sample {
    pub fn manifest_row(&self) -> ManifestRow {
        ManifestRow { id: self.id, caption: self.caption.clone(), meta: self.meta, attrs: self.attrs }
    }
}

/// Deterministic in `spec`; row `i` depends only on `(seed, i)`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&spec.noise_frac) {
        return Err(Error::arg(format!("noise fraction {} outside [0, 1]", spec.noise_frac)));
    }
    (0..spec.n)
        .map(|id| {
            let mut rng = stream_rng(spec.seed, &[id as u64]);
            let attrs = Attrs::from_index(rng.gen_range(0..Attrs::COUNT));
            let image = render(attrs, spec.height, spec.width, rng.gen())?;
            let clean = attrs.caption();
            let caption = if rng.gen::<f64>() < spec.noise_frac { pollute(&clean, &mut rng) } else { clean };
            let meta = MetaRecord::generate(&mut rng, META_FAIL_RATE);
            Ok(Sample { id, image, attrs, caption, meta })
        })
        .collect()
}

pub fn samples_from_files(rows: Vec<ManifestRow>, images: Vec<Tensor>) -> Vec<Sample> {
    rows.into_iter()
        .zip(images)
        .map(|(r, image)| Sample { id: r.id, image, attrs: r.attrs, caption: r.caption, meta: r.meta })
        .collect()
}

/// Attributes a caption describes after cleaning; falls back to the stored
/// attributes for slots the caption does not name.
pub fn caption_attrs(sample: &Sample) -> Attrs {
    let p = AttrPrompt::from_caption(&clean_caption(&sample.caption));
    Attrs::new(
        p.shape.unwrap_or(sample.attrs.shape),
        p.color.unwrap_or(sample.attrs.color),
        p.position.unwrap_or(sample.attrs.position),
    )
}

/// Encoders and codecs shared by training and sampling.
#[derive(Debug, Clone)]
pub struct Modalities {
    pub encoder: ContextEncoder,
    pub text: TextCodec,
    pub image: ImageCodec,
}

impl Modalities {
    pub fn new(encoder: ContextEncoder, text: TextCodec) -> Self {
        Self { encoder, text, image: ImageCodec }
    }

    /// Noisy text latent of a sample's cleaned caption.
    pub fn text_latent(&self, sample: &Sample, seed: u64) -> TextLatent {
        self.text.encode_noisy(caption_attrs(sample), &mut stream_rng(seed, &[sample.id as u64, 0x7e47]))
    }

    /// Latents and contexts for training. Rows failing the metadata filter
    /// are dropped when `filter` is set.
    pub fn paired(&self, samples: &[Sample], seed: u64, filter: bool) -> Result<PairedDataset> {
        let rows = samples
            .iter()
            .filter(|s| !filter || s.meta.passes())
            .map(|s| {
                let attrs = caption_attrs(s);
                Ok(PairedSample {
                    image: self.image.encode(&s.image),
                    text: self.text_latent(s, seed).0,
                    image_ctx: self.encoder.encode_image(&s.image)?,
                    text_ctx: self.encoder.encode_text(&attrs.prompt())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairedDataset::new(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::EncoderConfig;

    #[test]
    fn datasets_are_deterministic_and_balanced() {
        let spec = DatasetSpec { n: 10_000, seed: 4, ..DatasetSpec::default() };
        let a = generate_dataset(&spec).unwrap();
        assert_eq!(a, generate_dataset(&spec).unwrap());
        let mut counts = [[0usize; 3]; 3];
        for s in &a {
            for (slot, v) in s.attrs.slots().iter().enumerate() {
                counts[slot][*v] += 1;
            }
        }
        for slot in counts {
            for c in slot {
                assert!((c as f64 / 1e4 - 1.0 / 3.0).abs() < 0.02, "{c}");
            }
        }
        let dirty = a.iter().filter(|s| s.caption != s.attrs.caption()).count() as f64 / 1e4;
        assert!((dirty - 0.2).abs() < 0.02, "{dirty}");
        assert!(a.iter().all(|s| caption_attrs(s) == s.attrs));
    }

    #[test]
    fn clean_settings_give_clean_captions() {
        let spec = DatasetSpec { n: 200, noise_frac: 0.0, ..DatasetSpec::default() };
        for s in generate_dataset(&spec).unwrap() {
            assert_eq!(clean_caption(&s.caption), s.caption);
            assert_eq!(classify(&s.image).unwrap(), Some(s.attrs));
        }
        assert!(generate_dataset(&DatasetSpec { n: 0, ..spec }).unwrap().is_empty());
    }

    #[test]
    fn paired_rows_decode_to_their_attributes() {
        let spec = DatasetSpec { n: 60, ..DatasetSpec::default() };
        let samples = generate_dataset(&spec).unwrap();
        let m = Modalities::new(ContextEncoder::new(EncoderConfig::default()).unwrap(), TextCodec::new(32, 1).unwrap());
        let all = m.paired(&samples, 2, false).unwrap();
        assert_eq!(all.len(), 60);
        for (s, p) in samples.iter().zip(all.samples()) {
            assert_eq!(m.text.decode(&TextLatent(p.text.clone())).unwrap(), s.attrs);
            assert_eq!(p.image.shape(), &[4, 16, 16]);
        }
        let kept = m.paired(&samples, 2, true).unwrap().len();
        assert_eq!(kept, samples.iter().filter(|s| s.meta.passes()).count());
    }
}
