use rand::Rng;

use super::encoder::random_orthonormal;
use crate::attrs::{AttrPrompt, Attrs, Color, Position, Shape, SLOTS, VALUES};
use crate::error::{Error, Result};
use crate::numerics::{stream_rng, Tensor};

/// A point in the text-latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct TextLatent(pub Tensor);

impl TextLatent {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let t = Tensor::from_vec(values);
        if !t.is_finite() {
            return Err(Error::NonFinite("text latent".into()));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub fn dim(&self) -> usize {
        self.0.numel()
    }
}

/// Invertible toy text VAE: an attribute tuple maps to a scaled one-hot
/// lattice point rotated by a seeded orthogonal matrix.
#[derive(Debug, Clone)]
pub struct TextCodec {
    rotation: Tensor,
    amplitude: f64,
    noise: f64,
}

impl TextCodec {
    pub const DEFAULT_NOISE: f64 = 0.1;

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < SLOTS * VALUES {
            return Err(Error::Config(format!("text latent dim {dim} is below {}", SLOTS * VALUES)));
        }
        let rotation = random_orthonormal(dim, dim, &mut stream_rng(seed, &[1]));
        // three active coordinates of this size give unit variance per dimension
        let amplitude = (dim as f64 / SLOTS as f64).sqrt();
        Ok(Self { rotation, amplitude, noise: Self::DEFAULT_NOISE })
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn dim(&self) -> usize {
        self.rotation.shape()[0]
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    fn rotate(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.rotation.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    fn unrotate(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (i, zi) in z.iter().enumerate() {
            out.iter_mut().zip(self.rotation.row(i)).for_each(|(o, q)| *o += q * zi);
        }
        out
    }

    /// Latent of a possibly partial prompt; unspecified slots contribute nothing.
    pub fn encode_prompt(&self, prompt: &AttrPrompt) -> TextLatent {
        let mut v = vec![0.0; self.dim()];
        for (slot, value) in prompt.slots().iter().enumerate() {
            if let Some(value) = value {
                v[slot * VALUES + value] = self.amplitude;
            }
        }
        TextLatent(Tensor::from_vec(self.rotate(&v)))
    }

    pub fn encode(&self, attrs: Attrs) -> TextLatent {
        self.encode_prompt(&attrs.prompt())
    }

    /// Lattice point plus per-coordinate noise bounded by the codec's noise level.
    pub fn encode_noisy<R: Rng + ?Sized>(&self, attrs: Attrs, rng: &mut R) -> TextLatent {
        let clean = self.encode(attrs);
        if self.noise == 0.0 {
            return clean;
        }
        let data = clean.0.data().iter().map(|v| v + rng.gen_range(-self.noise..=self.noise)).collect();
        TextLatent(Tensor::from_vec(data))
    }

    /// Nearest lattice point, decided slot by slot.
    pub fn decode(&self, z: &TextLatent) -> Result<Attrs> {
        if z.dim() != self.dim() {
            return Err(Error::dim(format!("latent dim {} vs codec {}", z.dim(), self.dim())));
        }
        let v = self.unrotate(z.values());
        let pick = |slot: usize| {
            let block = &v[slot * VALUES..(slot + 1) * VALUES];
            (0..VALUES).fold(0, |best, i| if block[i] > block[best] { i } else { best })
        };
        Ok(Attrs::new(Shape::ALL[pick(0)], Color::ALL[pick(1)], Position::ALL[pick(2)]))
    }
}

/// Maps raw `[0, 1]` renders to zero-centred latents and back.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImageCodec;

impl ImageCodec {
    pub fn encode(&self, raw: &Tensor) -> Tensor {
        raw.map(|x| 2.0 * x - 1.0)
    }

    pub fn decode(&self, latent: &Tensor) -> Tensor {
        latent.map(|x| ((x + 1.0) / 2.0).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tuple_round_trips_with_noise() {
        let codec = TextCodec::new(32, 7).unwrap();
        let mut rng = stream_rng(1, &[]);
        for a in Attrs::all() {
            assert_eq!(codec.decode(&codec.encode(a)).unwrap(), a);
            for _ in 0..20 {
                let z = codec.encode_noisy(a, &mut rng);
                assert_eq!(codec.decode(&z).unwrap(), a);
            }
        }
    }

    #[test]
    fn latents_have_unit_scale_and_isometric_rotation() {
        let codec = TextCodec::new(32, 7).unwrap();
        let a = Attrs::from_index(5);
        let z = codec.encode(a);
        assert!((z.0.norm() - 32f64.sqrt()).abs() < 1e-12);
        assert!(codec.decode(&TextLatent::new(vec![0.0; 31]).unwrap()).is_err());
        assert!(TextCodec::new(8, 0).is_err());
    }

    #[test]
    fn image_codec_round_trip() {
        let raw = Tensor::from_vec(vec![0.0, 0.25, 1.0]);
        let z = ImageCodec.encode(&raw);
        assert_eq!(z.data(), &[-1.0, -0.5, 1.0]);
        assert!(ImageCodec.decode(&z).bit_eq(&raw));
        assert_eq!(ImageCodec.decode(&Tensor::from_vec(vec![3.0])).data(), &[1.0]);
    }
}
