use nalgebra::{DMatrix, SymmetricEigen};

use super::ContextEmbedding;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Principal components considered at most.
pub const MAX_COMPONENTS: usize = 50;
/// Components kept at level +1.
pub const KEEP_MANY: usize = 10;

/// Mean-centred principal directions of a context's local tokens.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    mean: Vec<f64>,
    /// Unit directions, strongest first.
    components: Vec<Vec<f64>>,
    centered: Vec<Vec<f64>>,
}

impl PcaBasis {
    pub fn fit(ctx: &ContextEmbedding) -> Result<Self> {
        let n = ctx.num_local();
        if n == 0 {
            return Err(Error::arg("context has no local tokens"));
        }
        let d = ctx.dim();
        let mut mean = vec![0.0; d];
        for j in 0..n {
            mean.iter_mut().zip(ctx.local(j)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered: Vec<Vec<f64>> =
            (0..n).map(|j| ctx.local(j).iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();

        let x = DMatrix::from_fn(n, d, |i, j| centered[i][j]);
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = order
            .into_iter()
            .take(MAX_COMPONENTS.min(n).min(d))
            .map(|c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        Ok(Self { mean, components, centered })
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Centred local tokens projected onto the top `m` components.
    pub fn project_top(&self, m: usize) -> Vec<Vec<f64>> {
        let comps = &self.components[..m.min(self.components.len())];
        self.centered
            .iter()
            .map(|x| {
                let mut out = vec![0.0; x.len()];
                for c in comps {
                    let coef: f64 = x.iter().zip(c).map(|(a, b)| a * b).sum();
                    out.iter_mut().zip(c).for_each(|(o, ci)| *o += coef * ci);
                }
                out
            })
            .collect()
    }
}

/// Keeps or removes major principal components of the local tokens.
///
/// Level 0 is the identity; +1 keeps the top 10 components, +2 the top 2;
/// −1 and −2 remove the top 1 and 2. The mean and the global token are kept.
pub fn pca_disentangle(ctx: &ContextEmbedding, level: i32) -> Result<ContextEmbedding> {
    if !(-2..=2).contains(&level) {
        return Err(Error::arg(format!("disentanglement level {level} outside -2..=2")));
    }
    if level == 0 {
        return Ok(ctx.clone());
    }
    let basis = PcaBasis::fit(ctx)?;
    let (m, keep) = match level {
        1 => (KEEP_MANY, true),
        2 => (2, true),
        -1 => (1, false),
        _ => (2, false),
    };
    let proj = basis.project_top(m);
    let d = ctx.dim();
    let mut data = ctx.tokens().data().to_vec();
    for (j, p) in proj.iter().enumerate() {
        let row = &mut data[(j + 1) * d..(j + 2) * d];
        for k in 0..d {
            let centered = if keep { p[k] } else { basis.centered[j][k] - p[k] };
            row[k] = basis.mean[k] + centered;
        }
    }
    ContextEmbedding::new(Tensor::new(&[ctx.len(), d], data)?, ctx.modality())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Modality;
    use crate::numerics::stream_rng;

    fn random_ctx(seed: u64) -> ContextEmbedding {
        ContextEmbedding::new(Tensor::randn(&[9, 32], &mut stream_rng(seed, &[])), Modality::Image).unwrap()
    }

    #[test]
    fn level_zero_is_identity_and_global_is_untouched() {
        let c = random_ctx(1);
        assert!(pca_disentangle(&c, 0).unwrap().tokens().bit_eq(c.tokens()));
        for level in [-2, -1, 1, 2] {
            let out = pca_disentangle(&c, level).unwrap();
            assert_eq!(out.global(), c.global());
        }
        assert!(pca_disentangle(&c, 3).is_err());
    }

    #[test]
    fn keep_is_idempotent() {
        let c = random_ctx(2);
        for level in [1, 2] {
            let once = pca_disentangle(&c, level).unwrap();
            let twice = pca_disentangle(&once, level).unwrap();
            let diff = once.tokens().max_abs_diff(twice.tokens()).unwrap();
            assert!(diff < 1e-10, "level {level}: {diff}");
        }
    }

    #[test]
    fn removed_direction_is_orthogonal() {
        let c = random_ctx(3);
        let basis = PcaBasis::fit(&c).unwrap();
        let out = pca_disentangle(&c, -1).unwrap();
        let pc = &basis.components()[0];
        for j in 0..8 {
            let dot: f64 = out.local(j).iter().zip(basis.mean()).zip(pc).map(|((v, m), p)| (v - m) * p).sum();
            assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn tiny_contexts_are_handled() {
        let one = ContextEmbedding::new(Tensor::randn(&[2, 4], &mut stream_rng(5, &[])), Modality::Text).unwrap();
        // a single local token has no spread: removal leaves it, keeping returns it
        let out = pca_disentangle(&one, -1).unwrap();
        assert!(out.tokens().max_abs_diff(one.tokens()).unwrap() < 1e-12);
        let none = ContextEmbedding::new(Tensor::zeros(&[1, 4]), Modality::Text).unwrap();
        assert!(pca_disentangle(&none, 1).is_err());
    }
}
