use std::fmt;
use std::str::FromStr;

use crate::context::{ContextEmbedding, ContextEncoder};
use crate::error::{Error, Result};
use crate::flow::Modality;
use crate::numerics::Tensor;

/// `y_u + (y_c − y_u)·s`, returning `y_c` / `y_u` themselves at `s = 1` / `s = 0`.
pub fn cfg_combine(y_u: &Tensor, y_c: &Tensor, s: f64) -> Result<Tensor> {
    if y_u.shape() != y_c.shape() {
        return Err(Error::dim(format!("guidance shapes {:?} vs {:?}", y_u.shape(), y_c.shape())));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::arg(format!("guidance scale must be finite and >= 0, got {s}")));
    }
    if s == 1.0 {
        return Ok(y_c.clone());
    }
    if s == 0.0 {
        return Ok(y_u.clone());
    }
    y_u.zip_map(y_c, |u, c| u + (c - u) * s)
}

/// How the unconditional context is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UncondMode {
    /// The encoder applied to an all-zero input.
    EmptyInput,
    /// An all-zero token matrix.
    #[default]
    ZeroEmbedding,
}

impl fmt::Display for UncondMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UncondMode::EmptyInput => "empty",
            UncondMode::ZeroEmbedding => "zero",
        })
    }
}

impl FromStr for UncondMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" | "empty-input" => Ok(UncondMode::EmptyInput),
            "zero" | "zero-embedding" => Ok(UncondMode::ZeroEmbedding),
            other => Err(Error::arg(format!("unknown unconditional mode '{other}'"))),
        }
    }
}

pub fn uncond_context(mode: UncondMode, modality: Modality, encoder: &ContextEncoder) -> Result<ContextEmbedding> {
    match mode {
        UncondMode::EmptyInput => encoder.encode_empty(modality),
        UncondMode::ZeroEmbedding => Ok(ContextEmbedding::zeros(encoder.tokens(), encoder.dim(), modality)),
    }
}

/// Scale and unconditional-context choice for classifier-free guidance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guidance {
    pub scale: f64,
    pub mode: UncondMode,
}

impl Guidance {
    pub fn none() -> Self {
        Self { scale: 1.0, mode: UncondMode::ZeroEmbedding }
    }

    pub fn new(scale: f64, mode: UncondMode) -> Self {
        Self { scale, mode }
    }

    /// Whether an unconditional pass is needed at all.
    pub fn needs_uncond(&self) -> bool {
        self.scale != 1.0
    }
}

impl Default for Guidance {
    fn default() -> Self {
        Self::none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::EncoderConfig;
    use crate::numerics::stream_rng;

    #[test]
    fn combine_examples() {
        let mut rng = stream_rng(1, &[]);
        let u = Tensor::randn(&[5], &mut rng);
        let c = Tensor::randn(&[5], &mut rng);
        assert!(cfg_combine(&u, &c, 1.0).unwrap().bit_eq(&c));
        assert!(cfg_combine(&u, &c, 0.0).unwrap().bit_eq(&u));
        let v = Tensor::from_vec(vec![1.5, -2.0]);
        let z = Tensor::zeros(&[2]);
        assert_eq!(cfg_combine(&z, &v, 2.0).unwrap().data(), &[3.0, -4.0]);
        assert!(cfg_combine(&z, &u, 2.0).is_err());
        assert!(cfg_combine(&z, &v, -1.0).is_err());
    }

    #[test]
    fn uncond_modes() {
        let enc = ContextEncoder::new(EncoderConfig::default()).unwrap();
        for m in Modality::ALL {
            let zero = uncond_context(UncondMode::ZeroEmbedding, m, &enc).unwrap();
            assert!(zero.tokens().data().iter().all(|&v| v == 0.0));
            assert_eq!(zero.tokens().shape(), &[9, 32]);
            let empty = uncond_context(UncondMode::EmptyInput, m, &enc).unwrap();
            assert!(empty.tokens().bit_eq(zero.tokens()));
        }
        let biased = ContextEncoder::new(EncoderConfig { bias_scale: 0.3, ..EncoderConfig::default() }).unwrap();
        let a = uncond_context(UncondMode::EmptyInput, Modality::Image, &biased).unwrap();
        let b = uncond_context(UncondMode::ZeroEmbedding, Modality::Image, &biased).unwrap();
        assert!(!a.tokens().bit_eq(b.tokens()));
    }
}
