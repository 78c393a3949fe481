//! Context embeddings, the toy encoders and codecs, and the embedding-level
//! edits: PCA disentanglement, concatenation, masking and latent editing.

mod codec;
mod edit;
mod encoder;
mod pca;

use std::fmt;
use std::str::FromStr;

pub use codec::{ImageCodec, TextCodec, TextLatent};
pub use edit::edit_text_latent;
pub use encoder::{ContextEncoder, EncoderConfig};
pub use pca::{pca_disentangle, PcaBasis, KEEP_MANY, MAX_COMPONENTS};

use crate::error::{Error, Result};
use crate::flow::Modality;
use crate::numerics::Tensor;

/// `K × D` token matrix: row 0 is the global vector, rows `1..K` are local.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    tokens: Tensor,
    modality: Modality,
}

impl ContextEmbedding {
    pub fn new(tokens: Tensor, modality: Modality) -> Result<Self> {
        if tokens.rank() != 2 {
            return Err(Error::dim(format!("context tokens must be K×D, got {:?}", tokens.shape())));
        }
        if !tokens.is_finite() {
            return Err(Error::NonFinite("context tokens".into()));
        }
        Ok(Self { tokens, modality })
    }

    pub fn zeros(k: usize, d: usize, modality: Modality) -> Self {
        Self { tokens: Tensor::zeros(&[k, d]), modality }
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn into_tokens(self) -> Tensor {
        self.tokens
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn global(&self) -> &[f64] {
        self.tokens.row(0)
    }

    pub fn local(&self, j: usize) -> &[f64] {
        self.tokens.row(j + 1)
    }

    pub fn num_local(&self) -> usize {
        self.len() - 1
    }

    pub fn max_token_norm(&self) -> f64 {
        (0..self.len()).map(|i| self.tokens.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }
}

/// Stacks contexts along the token axis, multiplying each block by its scale.
///
/// The result carries the first context's modality tag.
pub fn concat_contexts(ctxs: &[&ContextEmbedding], scales: &[f64]) -> Result<ContextEmbedding> {
    let first = ctxs.first().ok_or_else(|| Error::arg("concat_contexts needs at least one context"))?;
    if scales.len() != ctxs.len() {
        return Err(Error::arg(format!("{} contexts but {} scales", ctxs.len(), scales.len())));
    }
    let d = first.dim();
    let mut data = Vec::new();
    let mut k = 0;
    for (c, &s) in ctxs.iter().zip(scales) {
        if c.dim() != d {
            return Err(Error::dim(format!("context dim {} vs {}", c.dim(), d)));
        }
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("context scale {s}")));
        }
        data.extend(c.tokens.data().iter().map(|v| v * s));
        k += c.len();
    }
    ContextEmbedding::new(Tensor::new(&[k, d], data)?, first.modality)
}

/// Which local patches survive masking; `true` keeps a patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    keep: Vec<bool>,
}

impl MaskSpec {
    pub fn new(keep: Vec<bool>) -> Self {
        Self { keep }
    }

    pub fn all(len: usize, value: bool) -> Self {
        Self { keep: vec![value; len] }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }
}

impl FromStr for MaskSpec {
    type Err = Error;

    /// Whitespace-separated `0`/`1` entries in row-major patch order.
    fn from_str(s: &str) -> Result<Self> {
        let keep = s
            .split_whitespace()
            .map(|w| match w {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Format(format!("mask entry '{other}' is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { keep })
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<&str> = self.keep.iter().map(|&k| if k { "1" } else { "0" }).collect();
        writeln!(f, "{}", words.join(" "))
    }
}
