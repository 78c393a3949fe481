use rand::Rng;

use super::{ContextEmbedding, MaskSpec};
use crate::attrs::{AttrPrompt, SLOTS, VALUES};
use crate::error::{Error, Result};
use crate::flow::Modality;
use crate::numerics::{stream_rng, Tensor};

/// Shape of the toy encoders' output and the image patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub tokens: usize,
    pub dim: usize,
    pub image_shape: [usize; 3],
    /// Patch grid rows × cols; their product must be `tokens - 1`.
    pub patch_grid: [usize; 2],
    pub seed: u64,
    /// Magnitude of the additive per-patch positional encodings (0 disables them).
    pub pos_scale: f64,
    /// Magnitude of the shared additive bias (0 disables it).
    pub bias_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            tokens: 9,
            dim: 32,
            image_shape: [4, 16, 16],
            patch_grid: [2, 4],
            seed: 0x5eed_c0de,
            pos_scale: 0.0,
            bias_scale: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.image_shape;
        let [pr, pc] = self.patch_grid;
        if self.tokens < 2 || self.dim == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("encoder needs K >= 2 and positive dims, got {self:?}")));
        }
        if pr * pc != self.tokens - 1 {
            return Err(Error::Config(format!(
                "patch grid {pr}x{pc} does not give K-1 = {} local tokens",
                self.tokens - 1
            )));
        }
        if h % pr != 0 || w % pc != 0 {
            return Err(Error::Config(format!("patch grid {pr}x{pc} does not tile {h}x{w}")));
        }
        if self.dim < VALUES {
            return Err(Error::Config("context dim must be at least 3".into()));
        }
        Ok(())
    }

    pub fn patch_size(&self) -> [usize; 2] {
        [self.image_shape[1] / self.patch_grid[0], self.image_shape[2] / self.patch_grid[1]]
    }

    fn patch_features(&self) -> usize {
        let [ph, pw] = self.patch_size();
        self.image_shape[0] * ph * pw
    }
}

/// Seeded random matrix with orthonormal rows (`rows <= cols`) or columns.
pub(crate) fn random_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = Tensor::randn(&[len], rng).into_data();
        // two passes of modified Gram-Schmidt keep the basis orthogonal to round-off
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut out = Tensor::zeros(&[rows, cols]);
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            let (r, c) = if rows <= cols { (i, j) } else { (j, i) };
            out.data_mut()[r * cols + c] = x;
        }
    }
    out
}

fn matvec(m: &Tensor, v: &[f64], out: &mut [f64]) {
    let cols = m.shape()[1];
    for (o, row) in out.iter_mut().zip(m.data().chunks(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Deterministic stand-in for a pretrained contrastive encoder.
///
/// Every local slot has its own orthonormal projection, so position is
/// carried by which slot a feature lands in. Tokens are L2-normalized with
/// zero vectors left at zero.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    cfg: EncoderConfig,
    image_proj: Vec<Tensor>,
    text_proj: Vec<Tensor>,
    pos: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl ContextEncoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let locals = cfg.tokens - 1;
        let f = cfg.patch_features();
        let mut rng = stream_rng(cfg.seed, &[0]);
        let image_proj = (0..locals).map(|_| random_orthonormal(cfg.dim, f, &mut rng)).collect();
        let text_proj = (0..locals).map(|_| random_orthonormal(cfg.dim, VALUES, &mut rng)).collect();
        let pos = (0..locals).map(|_| Tensor::randn(&[cfg.dim], &mut rng).scale(cfg.pos_scale).into_data()).collect();
        let bias = Tensor::randn(&[cfg.dim], &mut rng).scale(cfg.bias_scale).into_data();
        Ok(Self { cfg, image_proj, text_proj, pos, bias })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn tokens(&self) -> usize {
        self.cfg.tokens
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn encode_image(&self, raw: &Tensor) -> Result<ContextEmbedding> {
        self.masked_encode(raw, &MaskSpec::all(self.cfg.tokens - 1, true))
    }

    /// Encodes an image with masked-out patches contributing nothing: their
    /// projected features and positional encodings are zeroed before pooling.
    pub fn masked_encode(&self, raw: &Tensor, mask: &MaskSpec) -> Result<ContextEmbedding> {
        if raw.shape() != self.cfg.image_shape {
            return Err(Error::dim(format!("image {:?} vs encoder {:?}", raw.shape(), self.cfg.image_shape)));
        }
        if mask.len() != self.cfg.tokens - 1 {
            return Err(Error::dim(format!("mask length {} vs {} patches", mask.len(), self.cfg.tokens - 1)));
        }
        if !raw.is_finite() {
            return Err(Error::NonFinite("image input".into()));
        }
        let [c, h, w] = self.cfg.image_shape;
        let [ph, pw] = self.cfg.patch_size();
        let cols = self.cfg.patch_grid[1];
        let mut pre = Vec::with_capacity(mask.len());
        for (j, &keep) in mask.keep().iter().enumerate() {
            if !keep {
                pre.push(None);
                continue;
            }
            let (py, px) = (j / cols, j % cols);
            let mut feat = Vec::with_capacity(c * ph * pw);
            for ch in 0..c {
                for y in 0..ph {
                    let row = (ch * h + py * ph + y) * w + px * pw;
                    feat.extend_from_slice(&raw.data()[row..row + pw]);
                }
            }
            let mut tok = self.bias.clone();
            tok.iter_mut().zip(&self.pos[j]).for_each(|(t, p)| *t += p);
            matvec(&self.image_proj[j], &feat, &mut tok);
            pre.push(Some(tok));
        }
        self.assemble(pre, Modality::Image)
    }

    pub fn encode_text(&self, prompt: &AttrPrompt) -> Result<ContextEmbedding> {
        let slots = prompt.slots();
        let pre = (0..self.cfg.tokens - 1)
            .map(|j| {
                let mut tok = self.bias.clone();
                if let Some(v) = slots[j % SLOTS] {
                    let mut onehot = [0.0; VALUES];
                    onehot[v] = 1.0;
                    matvec(&self.text_proj[j], &onehot, &mut tok);
                }
                Some(tok)
            })
            .collect();
        self.assemble(pre, Modality::Text)
    }

    /// The encoder applied to the all-zero input of a modality.
    pub fn encode_empty(&self, modality: Modality) -> Result<ContextEmbedding> {
        match modality {
            Modality::Image => self.encode_image(&Tensor::zeros(&self.cfg.image_shape)),
            Modality::Text => self.encode_text(&AttrPrompt::empty()),
        }
    }

    fn assemble(&self, pre: Vec<Option<Vec<f64>>>, modality: Modality) -> Result<ContextEmbedding> {
        let d = self.cfg.dim;
        let mut mean = vec![0.0; d];
        let mut kept = 0usize;
        for tok in pre.iter().flatten() {
            mean.iter_mut().zip(tok).for_each(|(m, t)| *m += t);
            kept += 1;
        }
        if kept > 0 {
            mean.iter_mut().for_each(|m| *m /= kept as f64);
        }
        let mut data = normalized(&mean);
        for tok in &pre {
            match tok {
                Some(t) => data.extend(normalized(t)),
                None => data.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        ContextEmbedding::new(Tensor::new(&[self.cfg.tokens, d], data)?, modality)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs::{Color, Shape};

    fn encoder() -> ContextEncoder {
        ContextEncoder::new(EncoderConfig::default()).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, &[]);
        Tensor::randn(&[4, 16, 16], &mut rng).map(|x| x.abs())
    }

    #[test]
    fn orthonormal_rows_and_columns() {
        let mut rng = stream_rng(3, &[]);
        for (r, c) in [(4, 10), (10, 4), (5, 5)] {
            let m = random_orthonormal(r, c, &mut rng);
            let gram = if r <= c {
                crate::numerics::Tensor::from_vec(
                    (0..r * r).map(|ij| m.row(ij / r).iter().zip(m.row(ij % r)).map(|(a, b)| a * b).sum()).collect(),
                )
            } else {
                let t = m.transpose2().unwrap();
                crate::numerics::Tensor::from_vec(
                    (0..c * c).map(|ij| t.row(ij / c).iter().zip(t.row(ij % c)).map(|(a, b)| a * b).sum()).collect(),
                )
            };
            let n = r.min(c);
            for (ij, g) in gram.data().iter().enumerate() {
                let want = if ij / n == ij % n { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoding_is_deterministic_and_normalized() {
        let e = encoder();
        let x = image(1);
        let a = e.encode_image(&x).unwrap();
        let b = encoder().encode_image(&x).unwrap();
        assert_eq!(a.tokens().shape(), &[9, 32]);
        assert!(a.tokens().bit_eq(b.tokens()));
        assert!(a.max_token_norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_tokens() {
        let e = encoder();
        let z = e.encode_empty(Modality::Image).unwrap();
        assert!(z.tokens().data().iter().all(|&v| v == 0.0));
        let t = e.encode_empty(Modality::Text).unwrap();
        assert!(t.tokens().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masks_zero_only_their_patches_and_the_global_token() {
        let e = encoder();
        let x = image(2);
        let full = e.encode_image(&x).unwrap();
        let all = e.masked_encode(&x, &MaskSpec::all(8, true)).unwrap();
        assert!(full.tokens().bit_eq(all.tokens()));

        let none = e.masked_encode(&x, &MaskSpec::all(8, false)).unwrap();
        assert!(none.tokens().bit_eq(e.encode_empty(Modality::Image).unwrap().tokens()));

        let half = MaskSpec::new(vec![true, false, true, false, true, false, true, false]);
        let m = e.masked_encode(&x, &half).unwrap();
        assert_ne!(m.global(), full.global());
        for j in 0..8 {
            if half.keep()[j] {
                assert_eq!(m.local(j), full.local(j));
            } else {
                assert!(m.local(j).iter().all(|&v| v == 0.0));
            }
        }
        assert!(e.masked_encode(&x, &MaskSpec::all(7, true)).is_err());
    }

    #[test]
    fn biased_encoder_gives_nonzero_empty_embedding() {
        let e = ContextEncoder::new(EncoderConfig { bias_scale: 0.5, ..EncoderConfig::default() }).unwrap();
        let z = e.encode_empty(Modality::Image).unwrap();
        assert!(z.tokens().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn text_prompts_place_attributes_in_fixed_slots() {
        let e = encoder();
        let red = AttrPrompt { color: Some(Color::Red), ..AttrPrompt::empty() };
        let t = e.encode_text(&red).unwrap();
        // slots 1, 4, 7 (0-based locals) carry color
        for j in 0..8 {
            let nonzero = t.local(j).iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, j % 3 == 1, "slot {j}");
        }
        let circle = AttrPrompt { shape: Some(Shape::Circle), ..red };
        let square = AttrPrompt { shape: Some(Shape::Square), ..red };
        assert_ne!(e.encode_text(&circle).unwrap(), e.encode_text(&square).unwrap());
    }

    #[test]
    fn config_validation() {
        let bad = EncoderConfig { patch_grid: [4, 4], ..EncoderConfig::default() };
        assert!(ContextEncoder::new(bad).is_err());
        let bad = EncoderConfig { patch_grid: [3, 3], tokens: 10, ..EncoderConfig::default() };
        assert!(ContextEncoder::new(bad).is_err());
    }
}
