use proptest::prelude::*;

use multiflow::context::{concat_contexts, edit_text_latent, pca_disentangle, ContextEmbedding, TextLatent};
use multiflow::datagen::{clean_caption, decode_vdim, encode_vdim, filter_meta, pollute, MetaRecord, MIN_AREA};
use multiflow::diffusion::{cfg_combine, NoiseSchedule};
use multiflow::numerics::{stream_rng, Tensor};
use multiflow::Modality;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n = shape.iter().product::<usize>();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |v| Tensor::new(shape, v).unwrap())
}

fn context(k: usize, d: usize) -> impl Strategy<Value = ContextEmbedding> {
    prop::collection::vec(-2.0f64..2.0, k * d)
        .prop_map(move |v| ContextEmbedding::new(Tensor::new(&[k, d], v).unwrap(), Modality::Image).unwrap())
}

fn record() -> impl Strategy<Value = MetaRecord> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.3f64..3.0, 0u64..200_000)
        .prop_map(|(clip_sim, nsfw, watermark, aspect, area)| MetaRecord { clip_sim, nsfw, watermark, aspect, area })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cleaning_is_idempotent(s in "\\PC{0,60}") {
        let once = clean_caption(&s);
        prop_assert_eq!(clean_caption(&once), once);
    }

    #[test]
    fn cleaning_polluted_captions_is_idempotent(seed in any::<u64>(), words in "[a-z]{1,8}( [a-z]{1,8}){0,4}") {
        let dirty = pollute(&words, &mut stream_rng(seed, &[]));
        let once = clean_caption(&dirty);
        prop_assert_eq!(clean_caption(&once), once);
    }

    #[test]
    fn possessives_survive(name in "[A-Za-z]{1,10}", rest in "[a-z]{1,8}") {
        let caption = format!("{name}'s {rest}");
        prop_assert_eq!(clean_caption(&caption), caption.clone());
        prop_assert_eq!(clean_caption(&format!("{name}\u{2019}s {rest}")), caption);
    }

    #[test]
    fn plain_words_are_untouched(words in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
        prop_assert_eq!(clean_caption(&words), words);
    }

    #[test]
    fn filter_matches_thresholds(recs in prop::collection::vec(record(), 0..20)) {
        let kept = filter_meta(&recs);
        prop_assert_eq!(kept.len(), recs.len());
        for (r, k) in recs.iter().zip(kept) {
            let want = r.clip_sim > 0.3 && r.nsfw < 0.3 && r.watermark < 0.3
                && (0.6..=1.6667).contains(&r.aspect) && r.area > MIN_AREA;
            prop_assert_eq!(k, want);
            prop_assert_eq!(r.passes(), want);
        }
    }

    #[test]
    fn guidance_endpoints_are_exact(u in tensor(&[2, 3]), c in tensor(&[2, 3]), s in 0.0f64..8.0) {
        prop_assert!(cfg_combine(&u, &c, 0.0).unwrap().bit_eq(&u));
        prop_assert!(cfg_combine(&u, &c, 1.0).unwrap().bit_eq(&c));
        let y = cfg_combine(&u, &c, s).unwrap();
        let want = u.lincomb(1.0 - s, &c, s).unwrap();
        prop_assert!(y.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn pca_keeps_global_and_complements(ctx in context(9, 6), level in -2i32..=2) {
        let out = pca_disentangle(&ctx, level).unwrap();
        prop_assert_eq!(out.global(), ctx.global());
        if level == 0 {
            prop_assert!(out.tokens().bit_eq(ctx.tokens()));
        }
        let (keep, remove) = (pca_disentangle(&ctx, 2).unwrap(), pca_disentangle(&ctx, -2).unwrap());
        let n = ctx.num_local();
        for d in 0..ctx.dim() {
            let mean = (0..n).map(|j| ctx.local(j)[d]).sum::<f64>() / n as f64;
            for j in 0..n {
                prop_assert!((keep.local(j)[d] + remove.local(j)[d] - mean - ctx.local(j)[d]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn edit_removes_negative_direction(z in tensor(&[8]), neg in tensor(&[8]), pos in tensor(&[8])) {
        prop_assume!(neg.norm() > 1e-3);
        let out = edit_text_latent(&TextLatent(z), &TextLatent(neg.clone()), &TextLatent(pos.clone())).unwrap();
        let resid = out.tensor().sub(&pos).unwrap();
        prop_assert!(resid.dot(&neg).unwrap().abs() / neg.norm() < 1e-9);
    }

    #[test]
    fn concat_adds_token_counts(a in 1usize..12, b in 1usize..12) {
        let (x, y) = (ContextEmbedding::zeros(a, 4, Modality::Text), ContextEmbedding::zeros(b, 4, Modality::Image));
        let both = concat_contexts(&[&x, &y], &[1.0, 0.5]).unwrap();
        prop_assert_eq!(both.len(), a + b);
        prop_assert_eq!(both.modality(), Modality::Text);
    }

    #[test]
    fn vdim_round_trips(t in tensor(&[4, 3, 5])) {
        // pixels are stored as f32
        let once = decode_vdim(&encode_vdim(&t).unwrap()).unwrap();
        prop_assert!(once.max_abs_diff(&t).unwrap() < 1e-6);
        prop_assert!(decode_vdim(&encode_vdim(&once).unwrap()).unwrap().bit_eq(&once));
    }

    #[test]
    fn rescaled_schedules_decay(steps in 25usize..400) {
        let s = NoiseSchedule::rescaled(steps).unwrap();
        let bars = s.alpha_bars();
        prop_assert!(bars.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(bars.len(), steps + 1);
        prop_assert_eq!(bars[0], 1.0);
        prop_assert!(bars[1..].iter().all(|&a| a > 0.0 && a < 1.0));
    }
}
