use proptest::prelude::*;

use captain_core::formats::{decode_index, decode_latent, encode_index, encode_latent};
use captain_core::inject::inject;
use captain_core::latent::{Latent, SoftMap};
use captain_core::reference::score::{argmax_total, CandidateScore};
use captain_core::reference::{phash64, uniqueness_h3, Embedding, GrayImage, VectorIndex};
use captain_core::spatial::{threshold_product, BinaryMask};
use captain_core::spectral::{frequency_blend_init, make_frequency_masks};

fn latent(c: usize, h: usize, w: usize) -> impl Strategy<Value = Latent> {
    prop::collection::vec(-3.0f64..3.0, c * h * w).prop_map(move |d| Latent::new(c, h, w, d).unwrap())
}

fn soft(n: usize) -> impl Strategy<Value = SoftMap> {
    prop::collection::vec(0.0f64..=1.0, n * n).prop_map(move |v| SoftMap::new(n, n, v).unwrap())
}

proptest! {
    #[test]
    fn blend_pair_sums_to_inputs(eps in latent(2, 6, 8), xr in latent(2, 6, 8), cutoff in 0.05f64..0.95) {
        let m = make_frequency_masks(6, 8, cutoff).unwrap();
        let a = frequency_blend_init(&eps, &xr, &m).unwrap();
        let b = frequency_blend_init(&xr, &eps, &m).unwrap();
        let sum = a.add(&b).unwrap();
        prop_assert!(sum.max_abs_diff(&eps.add(&xr).unwrap()).unwrap() < 1e-10);
    }

    #[test]
    fn mask_shrinks_as_tau_grows(be in soft(6), concept in soft(6)) {
        let taus = [0.1, 0.2, 0.3, 0.4, 0.5];
        let masks: Vec<Vec<bool>> = taus.iter().map(|&t| threshold_product(&be, &concept, t).unwrap()).collect();
        for pair in masks.windows(2) {
            prop_assert!(pair[0].iter().zip(&pair[1]).all(|(lo, hi)| *lo || !*hi));
        }
    }

    #[test]
    fn injection_leaves_unmasked_bits(x in latent(2, 4, 4), r in latent(2, 4, 4),
                                      bits in prop::collection::vec(any::<bool>(), 16), delta in 0.0f64..=1.0) {
        let m = BinaryMask::new(4, 4, bits.clone(), 0.1, false).unwrap();
        let out = inject(&x, &r, &m, delta).unwrap();
        for (i, (o, v)) in out.as_slice().iter().zip(x.as_slice()).enumerate() {
            if !bits[i % 16] {
                prop_assert_eq!(o.to_bits(), v.to_bits());
            }
        }
        prop_assert_eq!(inject(&x, &r, &m, 0.0).unwrap(), x);
    }

    #[test]
    fn phash_ignores_positive_scale(pixels in prop::collection::vec(0.0f64..1.0, 40 * 36), k in -6i32..6) {
        let img = GrayImage::new(40, 36, pixels).unwrap();
        prop_assert_eq!(phash64(&img), phash64(&img.scaled(2f64.powi(k))));
    }

    #[test]
    fn uniqueness_in_unit_range(h in any::<u64>(), corpus in prop::collection::vec(any::<u64>(), 1..8)) {
        let u = uniqueness_h3(h, &corpus).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn argmax_survives_uniform_lambda_scaling(parts in prop::collection::vec((-1.0f64..1.0, 0.0f64..2.0, 0.0f64..1.0), 1..12),
                                              k in 1u32..9) {
        let lam = [0.3, 0.4, 0.3];
        let scale = f64::from(k) / 4.0;
        let scaled = lam.map(|l| l * scale);
        let a: Vec<_> = parts.iter().map(|&(x, y, z)| CandidateScore::from_parts(x, y, z, lam)).collect();
        let b: Vec<_> = parts.iter().map(|&(x, y, z)| CandidateScore::from_parts(x, y, z, scaled)).collect();
        prop_assert_eq!(argmax_total(&a), argmax_total(&b));
    }

    #[test]
    fn raising_a_winner_keeps_it(parts in prop::collection::vec((-1.0f64..1.0, 0.0f64..2.0, 0.0f64..1.0), 1..12),
                                 which in 0usize..3, bump in 0.0f64..1.0) {
        let lam = [0.3, 0.4, 0.3];
        let scores: Vec<_> = parts.iter().map(|&(x, y, z)| CandidateScore::from_parts(x, y, z, lam)).collect();
        let w = argmax_total(&scores).unwrap();
        let mut raised = parts.clone();
        match which {
            0 => raised[w].0 += bump,
            1 => raised[w].1 += bump,
            _ => raised[w].2 += bump,
        }
        let again: Vec<_> = raised.iter().map(|&(x, y, z)| CandidateScore::from_parts(x, y, z, lam)).collect();
        prop_assert_eq!(argmax_total(&again), Some(w));
    }

    #[test]
    fn latent_codec_round_trips(l in latent(3, 5, 2)) {
        let once = decode_latent(&encode_latent(&l)).unwrap();
        prop_assert_eq!(encode_latent(&once), encode_latent(&l));
        prop_assert!(once.max_abs_diff(&l).unwrap() < 1e-6);
    }

    #[test]
    fn index_codec_is_bit_exact(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..20)) {
        let embs: Vec<Embedding> = rows.into_iter().filter_map(|r| Embedding::normalize(r).ok()).collect();
        prop_assume!(!embs.is_empty());
        let idx = VectorIndex::build(&embs).unwrap();
        let bytes = encode_index(&idx);
        prop_assert_eq!(encode_index(&decode_index(&bytes).unwrap()), bytes);
    }
}
