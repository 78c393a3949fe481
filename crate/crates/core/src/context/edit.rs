use super::TextLatent;
use crate::error::{Error, Result};

/// `z − (z·n̂)n̂ + z_pos` with `n̂ = z_neg / |z_neg|`.
pub fn edit_text_latent(z: &TextLatent, z_neg: &TextLatent, z_pos: &TextLatent) -> Result<TextLatent> {
    if z.dim() != z_neg.dim() || z.dim() != z_pos.dim() {
        return Err(Error::dim(format!("latent dims {}, {}, {} differ", z.dim(), z_neg.dim(), z_pos.dim())));
    }
    let norm = z_neg.tensor().norm();
    if norm == 0.0 {
        return Err(Error::arg("negative prompt latent is zero"));
    }
    let n: Vec<f64> = z_neg.values().iter().map(|v| v / norm).collect();
    let proj: f64 = z.values().iter().zip(&n).map(|(a, b)| a * b).sum();
    let out = z.values().iter().zip(&n).zip(z_pos.values()).map(|((zi, ni), pi)| zi - proj * ni + pi).collect();
    TextLatent::new(out)
}
