//! Toy-scale evaluation: exact-tuple accuracy of text-to-image samples read
//! by the render classifier, and of image-to-text samples read by the codec.

use crate::attrs::Attrs;
use crate::blending::{sample_flow, GuidanceSetup};
use crate::context::TextLatent;
use crate::datagen::{classify, render, Modalities};
use crate::diffusion::{NoiseSchedule, Sampler};
use crate::error::Result;
use crate::flow::FlowSpec;
use crate::net::Diffuser;
use crate::numerics::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub exact: usize,
    /// Per-slot hits in (shape, color, position) order.
    pub slots: [usize; 3],
    pub total: usize,
}

impl Accuracy {
    fn new() -> Self {
        Self { exact: 0, slots: [0; 3], total: 0 }
    }

    fn add(&mut self, want: Attrs, got: Option<Attrs>) {
        self.total += 1;
        let Some(got) = got else { return };
        self.exact += (got == want) as usize;
        for (i, (a, b)) in want.slots().iter().zip(got.slots()).enumerate() {
            self.slots[i] += (*a == b) as usize;
        }
    }

    pub fn rate(&self) -> f64 {
        self.exact as f64 / self.total.max(1) as f64
    }

    pub fn slot_rates(&self) -> [f64; 3] {
        self.slots.map(|s| s as f64 / self.total.max(1) as f64)
    }
}

impl std::fmt::Display for Accuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [s, c, p] = self.slot_rates();
        write!(f, "{}/{} exact ({:.3}); shape {s:.3} color {c:.3} position {p:.3}", self.exact, self.total, self.rate())
    }
}

/// Samples every attribute tuple `per_tuple` times from its caption and
/// classifies the decoded renders.
pub fn t2i_accuracy(
    model: &Diffuser,
    mods: &Modalities,
    guide: &GuidanceSetup,
    sampler: Sampler,
    sched: &NoiseSchedule,
    seed: u64,
    per_tuple: usize,
) -> Result<Accuracy> {
    let mut acc = Accuracy::new();
    for a in Attrs::all() {
        let ctx = mods.encoder.encode_text(&a.prompt())?;
        for k in 0..per_tuple {
            let mut rng = stream_rng(seed, &[a.index() as u64, k as u64]);
            let z = sample_flow(model, FlowSpec::T2I, &ctx, guide, sampler, sched, &mut rng)?;
            acc.add(a, classify(&mods.image.decode(&z))?);
        }
    }
    Ok(acc)
}

/// Captions fresh renders of every tuple `per_tuple` times and decodes the
/// sampled text latents.
pub fn i2t_accuracy(
    model: &Diffuser,
    mods: &Modalities,
    guide: &GuidanceSetup,
    sampler: Sampler,
    sched: &NoiseSchedule,
    seed: u64,
    per_tuple: usize,
) -> Result<Accuracy> {
    let [_, h, w] = model.config().image_shape;
    let mut acc = Accuracy::new();
    for a in Attrs::all() {
        for k in 0..per_tuple {
            let raw = render(a, h, w, seed ^ (1000 + k as u64))?;
            let ctx = mods.encoder.encode_image(&raw)?;
            let mut rng = stream_rng(seed, &[a.index() as u64, k as u64, 1]);
            let z = sample_flow(model, FlowSpec::I2T, &ctx, guide, sampler, sched, &mut rng)?;
            acc.add(a, Some(mods.text.decode(&TextLatent(z))?));
        }
    }
    Ok(acc)
}
