//! Dense tensors, reverse-mode autodiff and the finite-difference oracle.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var, GROUP_NORM_EPS};
pub use tensor::Tensor;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent, reproducible stream keyed by `(seed, ids...)`.
pub fn stream_rng(seed: u64, ids: &[u64]) -> Rng {
    let key = ids.iter().fold(splitmix64(seed), |acc, &id| splitmix64(acc ^ splitmix64(id)));
    ChaCha8Rng::seed_from_u64(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, &mut stream_rng(seed, &[]))
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let eye = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let r = g.matmul(a, eye).unwrap();
        assert_eq!(g.value(r).data(), &[1., 2., 3., 4.]);

        let d = g.constant(t(&[2, 2], &[1., 0., 0., 2.]));
        let col = g.constant(t(&[2, 1], &[3., 4.]));
        let r = g.matmul(d, col).unwrap();
        assert_eq!(g.value(r).data(), &[3., 8.]);

        let z = g.constant(Tensor::zeros(&[3, 4]));
        let any = g.constant(rand_tensor(&[4, 2], 1));
        let r = g.matmul(z, any).unwrap();
        assert_eq!(g.value(r).shape(), &[3, 2]);
        assert!(g.value(r).data().iter().all(|&v| v == 0.0));

        assert!(matches!(g.matmul(a, any), Err(crate::Error::Dimension(_))));
    }

    fn direct_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let o = w.shape()[0];
        let mut out = vec![0.0; o * h * wd];
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((oc * c + ic) * 3 + ky) * 3 + kx]
                                    * x.data()[(ic * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                    out[(oc * h + y) * wd + xx] = acc;
                }
            }
        }
        Tensor::new(&[o, h, wd], out).unwrap()
    }

    #[test]
    fn conv_identity_kernel_and_constant_bias() {
        let x = rand_tensor(&[2, 5, 4], 3);
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        for c in 0..2 {
            w.data_mut()[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w);
        let bv = g.constant(Tensor::zeros(&[2]));
        let y = g.conv2d_3x3(xv, wv, bv).unwrap();
        assert!(g.value(y).bit_eq(&x));

        let w0 = g.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let bc = g.constant(Tensor::full(&[3], 0.7));
        let y = g.conv2d_3x3(xv, w0, bc).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn conv_ones_matches_direct_oracle() {
        let x = Tensor::ones(&[1, 5, 5]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let want = direct_conv(&x, &w, &b);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d_3x3(xv, wv, bv).unwrap();
        assert!(g.value(y).max_abs_diff(&want).unwrap() < 1e-12);
        // interior entries see the full 3×3 window
        for yy in 1..4 {
            for xx in 1..4 {
                assert_eq!(g.value(y).data()[yy * 5 + xx], 9.0);
            }
        }
        assert_eq!(g.value(y).data()[0], 4.0);

        let x = rand_tensor(&[3, 4, 6], 9);
        let w = rand_tensor(&[2, 3, 3, 3], 10);
        let b = rand_tensor(&[2], 11);
        let want = direct_conv(&x, &w, &b);
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let y = g.conv2d_3x3(xv, wv, bv).unwrap();
        assert!(g.value(y).max_abs_diff(&want).unwrap() < 1e-12);

        let bad = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
        assert!(g.conv2d_3x3(xv, bad, bv).is_err());
    }

    #[test]
    fn norm_activation_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[4, 3], 2.5));
        let gamma = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let beta = g.constant(Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]));
        let y = g.group_norm(x, 2, gamma, beta).unwrap();
        for c in 0..4 {
            for s in 0..3 {
                assert_eq!(g.value(y).data()[c * 3 + s], [0.1, 0.2, 0.3, 0.4][c]);
            }
        }
        assert!(g.group_norm(x, 3, gamma, beta).is_err());

        let z = g.constant(Tensor::from_vec(vec![0.0]));
        let s = g.silu(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.0]);

        let zz = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let sm = g.softmax_lastdim(zz).unwrap();
        assert_eq!(g.value(sm).data(), &[0.5, 0.5]);

        // rows sum to 1 and large logits stay finite
        let big = g.constant(t(&[2, 3], &[1000., 1001., 999., -5., 0., 5.]));
        let sm = g.softmax_lastdim(big).unwrap();
        for r in 0..2 {
            let s: f64 = g.value(sm).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!(g.value(sm).is_finite());
    }

    #[test]
    fn group_norm_standardizes_each_group() {
        let x = rand_tensor(&[4, 5], 21);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let gamma = g.constant(Tensor::ones(&[4]));
        let beta = g.constant(Tensor::zeros(&[4]));
        let y = g.group_norm(xv, 2, gamma, beta).unwrap();
        for grp in g.value(y).data().chunks(10) {
            let mean = grp.iter().sum::<f64>() / 10.0;
            let var = grp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_trivial_gradients() {
        let p = rand_tensor(&[3, 2], 5);
        let mut g = Graph::new();
        let pv = g.leaf(p.clone());
        let s = g.sum(pv).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(pv).data().iter().all(|&v| v == 1.0));

        let mut g = Graph::new();
        let pv = g.leaf(p.clone());
        let sq = g.mul(pv, pv).unwrap();
        let s = g.sum(sq).unwrap();
        let half = g.scale(s, 0.5).unwrap();
        g.backward(half).unwrap();
        assert!(g.grad(pv).max_abs_diff(&p).unwrap() < 1e-15);

        let v = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(v).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_exact_zero_grad() {
        let mut g = Graph::new();
        let used = g.leaf(rand_tensor(&[3], 1));
        let unused = g.leaf(rand_tensor(&[4], 2));
        let _noise = g.scale(unused, 3.0).unwrap();
        let loss = g.sum(used).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(unused).bit_eq(&Tensor::zeros(&[4])));
    }

    #[test]
    fn replay_is_bit_exact_and_tracks_new_leaves() {
        let x = rand_tensor(&[2, 4, 4], 7);
        let w = rand_tensor(&[3, 2, 3, 3], 8);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let wv = g.leaf(w);
        let bv = g.leaf(Tensor::zeros(&[3]));
        let y = g.conv2d_3x3(xv, wv, bv).unwrap();
        let s = g.silu(y).unwrap();
        let loss = g.mean(s).unwrap();
        let before = g.value(loss).clone();
        g.replay().unwrap();
        assert!(g.value(loss).bit_eq(&before));

        g.set_leaf(xv, x.scale(2.0)).unwrap();
        g.replay().unwrap();
        assert!(!g.value(loss).bit_eq(&before));
        assert!(g.set_leaf(y, Tensor::zeros(&[3, 4, 4])).is_err());
    }

    #[test]
    fn quadratic_gradcheck_is_tight() {
        let p = rand_tensor(&[5], 12);
        let report = finite_diff_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let s = g.sum(sq)?;
                g.scale(s, 0.5)
            },
            &[p],
            &GradCheckOptions { eps: 1e-5, ..Default::default() },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 5);
    }

    #[test]
    fn gradcheck_edge_cases() {
        let r = finite_diff_check(|g, _| Ok(g.constant(Tensor::scalar(1.0))), &[], &Default::default()).unwrap();
        assert_eq!(r.max_rel_error, 0.0);

        let bad_eps = GradCheckOptions { eps: 1e-2, ..Default::default() };
        assert!(finite_diff_check(|g, v| g.sum(v[0]), &[Tensor::ones(&[2])], &bad_eps).is_err());

        let nan = finite_diff_check(
            |g, v| {
                let s = g.sum(v[0])?;
                g.scale(s, f64::NAN)
            },
            &[Tensor::ones(&[2])],
            &Default::default(),
        );
        assert!(matches!(nan, Err(crate::Error::NonFinite(_))));
    }

    /// Every primitive against central differences on random inputs.
    #[test]
    fn every_primitive_matches_finite_differences() {
        type Build = Box<dyn Fn(&mut Graph, &[Var]) -> crate::Result<Var>>;
        let weight = |seed: u64, shape: &[usize]| rand_tensor(shape, seed);
        let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
            (
                "add",
                vec![weight(1, &[3]), weight(2, &[3])],
                Box::new(|g, v| {
                    let a = g.add(v[0], v[1])?;
                    let m = g.mul(a, a)?;
                    g.sum(m)
                }),
            ),
            (
                "sub_mul",
                vec![weight(3, &[4]), weight(4, &[4])],
                Box::new(|g, v| {
                    let a = g.sub(v[0], v[1])?;
                    let m = g.mul(a, v[0])?;
                    g.sum(m)
                }),
            ),
            (
                "scale_add_scalar",
                vec![weight(5, &[3])],
                Box::new(|g, v| {
                    let a = g.scale(v[0], -1.7)?;
                    let b = g.add_scalar(a, 0.3)?;
                    let m = g.mul(b, b)?;
                    g.mean(m)
                }),
            ),
            (
                "matmul",
                vec![weight(6, &[3, 4]), weight(7, &[4, 2])],
                Box::new(|g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    let m = g.mul(y, y)?;
                    g.sum(m)
                }),
            ),
            (
                "row_bias",
                vec![weight(8, &[3, 4]), weight(9, &[4])],
                Box::new(|g, v| {
                    let y = g.add_row_bias(v[0], v[1])?;
                    let m = g.mul(y, y)?;
                    g.sum(m)
                }),
            ),
            (
                "channel_bias",
                vec![weight(10, &[2, 3, 3]), weight(11, &[2])],
                Box::new(|g, v| {
                    let y = g.add_channel_bias(v[0], v[1])?;
                    let m = g.mul(y, y)?;
                    g.sum(m)
                }),
            ),
            (
                "conv",
                vec![weight(12, &[2, 4, 5]), weight(13, &[3, 2, 3, 3]), weight(14, &[3])],
                Box::new(|g, v| {
                    let y = g.conv2d_3x3(v[0], v[1], v[2])?;
                    let m = g.mul(y, y)?;
                    g.sum(m)
                }),
            ),
            (
                "group_norm",
                vec![weight(15, &[4, 6]), weight(16, &[4]), weight(17, &[4])],
                Box::new(|g, v| {
                    let y = g.group_norm(v[0], 2, v[1], v[2])?;
                    let w = g.constant(rand_tensor(&[4, 6], 99));
                    let m = g.mul(y, w)?;
                    g.sum(m)
                }),
            ),
            (
                "silu",
                vec![weight(18, &[6])],
                Box::new(|g, v| {
                    let y = g.silu(v[0])?;
                    let m = g.mul(y, y)?;
                    g.sum(m)
                }),
            ),
            (
                "softmax",
                vec![weight(19, &[3, 5])],
                Box::new(|g, v| {
                    let y = g.softmax_lastdim(v[0])?;
                    let w = g.constant(rand_tensor(&[3, 5], 98));
                    let m = g.mul(y, w)?;
                    g.sum(m)
                }),
            ),
            (
                "transpose_reshape",
                vec![weight(20, &[2, 6])],
                Box::new(|g, v| {
                    let y = g.transpose(v[0])?;
                    let r = g.reshape(y, &[3, 4])?;
                    let w = g.constant(rand_tensor(&[3, 4], 97));
                    let m = g.mul(r, w)?;
                    let s = g.mul(m, m)?;
                    g.sum(s)
                }),
            ),
            (
                "concat_narrow",
                vec![weight(21, &[2, 3]), weight(22, &[2, 2])],
                Box::new(|g, v| {
                    let c = g.concat(&[v[0], v[1]], 1)?;
                    let n = g.narrow(c, 1, 1, 3)?;
                    let r = g.concat(&[n, n], 0)?;
                    let w = g.constant(rand_tensor(&[4, 3], 96));
                    let m = g.mul(r, w)?;
                    let s = g.mul(m, m)?;
                    g.sum(s)
                }),
            ),
            (
                "pool_upsample",
                vec![weight(23, &[2, 4, 4])],
                Box::new(|g, v| {
                    let p = g.avg_pool2(v[0])?;
                    let u = g.upsample2(p)?;
                    let w = g.constant(rand_tensor(&[2, 4, 4], 95));
                    let m = g.mul(u, w)?;
                    let s = g.mul(m, v[0])?;
                    g.sum(s)
                }),
            ),
            ("mse", vec![weight(24, &[5])], Box::new(|g, v| g.mse(v[0], &rand_tensor(&[5], 94)))),
        ];
        let opts = GradCheckOptions { eps: 1e-6, ..Default::default() };
        for (name, params, build) in cases {
            let report = finite_diff_check(build, &params, &opts).unwrap();
            assert!(report.max_rel_error < 1e-4, "{name}: {report:?}");
        }
    }
}
