mod common;

use anomaly_elbo::data::{
    load_idx, loco_split, make_anomaly_corpus, rescale, write_idx, AnomalyParams, MIN_ANOMALOUS_PIXELS,
};
use anomaly_elbo::eval::{auroc, calibrate_threshold, dice, quantile_candidates, LabeledScores, ScoredMask};
use anomaly_elbo::scoring::{score_images, Images, ScoringOptions};
use anomaly_elbo::vae::{init_params, kl_term, Posterior, VaeConfig};
use anomaly_elbo::SplitTag;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pair-counting AUROC: P(pos > neg) + 0.5 P(pos = neg).
fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn both_classes() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=50)
        .prop_flat_map(|n| (prop::collection::vec(-5i32..5, n), prop::collection::vec(0u8..=1, n)))
        .prop_map(|(s, mut l)| {
            l[0] = 0;
            l[1] = 1;
            (s.into_iter().map(|v| v as f64 * 0.5).collect(), l)
        })
}

fn tie_free() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=50)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(0u8..=1, n), any::<u64>()))
        .prop_map(|(n, mut l, seed)| {
            l[0] = 0;
            l[1] = 1;
            let mut s: Vec<f64> = (0..n).map(|i| i as f64 - n as f64 / 3.0).collect();
            rand::seq::SliceRandom::shuffle(&mut s[..], &mut ChaCha8Rng::seed_from_u64(seed));
            (s, l)
        })
}

fn mask_pair() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)))
}

proptest! {
    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-3.0f64..3.0, 1..6), lv_seed in any::<u64>()) {
        let lv: Vec<f64> = {
            use rand::Rng;
            let mut r = ChaCha8Rng::seed_from_u64(lv_seed);
            mu.iter().map(|_| r.random_range(-4.0..3.0)).collect()
        };
        let post = Posterior { mu: mu.clone(), log_var: lv };
        prop_assert!(kl_term(&post).unwrap() >= 0.0);
        let zero = Posterior { mu: vec![0.0; mu.len()], log_var: vec![0.0; mu.len()] };
        prop_assert_eq!(kl_term(&zero).unwrap(), 0.0);
    }

    #[test]
    fn auroc_matches_pair_counting((s, l) in both_classes()) {
        let ls = LabeledScores::new(s.clone(), l.clone()).unwrap();
        prop_assert_eq!(auroc(&ls).unwrap(), brute_auroc(&s, &l));
    }

    #[test]
    fn auroc_invariant_under_increasing_maps((s, l) in both_classes(), a in 0.01f64..10.0, b in -10.0f64..10.0) {
        let base = auroc(&LabeledScores::new(s.clone(), l.clone()).unwrap()).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(auroc(&LabeledScores::new(affine, l.clone()).unwrap()).unwrap(), base);
        prop_assert_eq!(auroc(&LabeledScores::new(exp, l).unwrap()).unwrap(), base);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement((s, l) in tie_free()) {
        let up = auroc(&LabeledScores::new(s.clone(), l.clone()).unwrap()).unwrap();
        let down = auroc(&LabeledScores::new(s.iter().map(|v| -v).collect(), l).unwrap()).unwrap();
        prop_assert!((up + down - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dice_symmetric_and_one_iff_identical((a, b) in mask_pair()) {
        let ab = dice(&a, &b).unwrap();
        prop_assert_eq!(ab, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 1.0, a == b);
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn calibrated_threshold_beats_every_candidate(seed in any::<u64>(), images in 1usize..6, side in 2usize..6) {
        use rand::Rng;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let d = side * side;
        let maps: Vec<Vec<f64>> = (0..images).map(|_| (0..d).map(|_| (r.random_range(0..20) as f64) / 4.0).collect()).collect();
        let mut masks: Vec<Vec<bool>> = (0..images).map(|_| (0..d).map(|_| r.random_bool(0.3)).collect()).collect();
        masks[0][0] = true;
        let set: Vec<ScoredMask> = maps.iter().zip(&masks).map(|(s, m)| ScoredMask { scores: s, mask: m }).collect();
        let cal = calibrate_threshold(&set).unwrap();
        // independent oracle: threshold every map directly
        let mean_dice = |t: f64| -> f64 {
            maps.iter().zip(&masks).map(|(s, m)| {
                let pred: Vec<bool> = s.iter().map(|&v| v >= t).collect();
                dice(&pred, m).unwrap()
            }).sum::<f64>() / images as f64
        };
        prop_assert!((mean_dice(cal.threshold) - cal.dice).abs() < 1e-12);
        let candidates = quantile_candidates(&set);
        for &t in &candidates {
            prop_assert!(cal.dice >= mean_dice(t) - 1e-12);
        }
        let first_best = candidates.iter().copied().find(|&t| mean_dice(t) >= cal.dice - 1e-12).unwrap();
        prop_assert_eq!(cal.threshold, first_best);
    }

    #[test]
    fn loco_split_partitions(seed in any::<u64>(), held in 0u8..4, frac in 0.05f64..0.9) {
        let data = common::shapes(7, 4, 4, seed);
        let s = loco_split(&data, held, frac, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.heldout.len(), data.len());
        prop_assert!(s.heldout.labels().iter().all(|&l| l == held));
        prop_assert!(s.train.labels().iter().chain(s.val.labels()).all(|&l| l != held));
        // every image appears exactly once
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for part in [&s.train, &s.val, &s.heldout] {
            for i in 0..part.len() {
                seen.push(part.image(i).iter().map(|v| v.to_bits()).collect());
            }
        }
        let mut all: Vec<Vec<u64>> = (0..data.len()).map(|i| data.image(i).iter().map(|v| v.to_bits()).collect()).collect();
        seen.sort();
        all.sort();
        prop_assert_eq!(seen, all);
    }

    #[test]
    fn rescale_keeps_range(seed in any::<u64>(), factor in 0.25f64..3.0) {
        let data = common::shapes(2, 3, 6, seed);
        let out = rescale(&data, factor).unwrap();
        prop_assert!(out.images().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out.len(), data.len());
        prop_assert_eq!(out.height(), (6.0 * factor).round() as usize);
    }

    #[test]
    fn anomaly_corpus_labels_follow_mask_rule(seed in any::<u64>(), rate in 0.0f64..=1.0) {
        let clean = common::shapes(6, 2, 14, seed);
        let donors = common::shapes(4, 4, 14, seed ^ 1).subset(&[3, 7, 11], SplitTag::Test);
        let c = make_anomaly_corpus(&clean, &donors, &AnomalyParams { corruption_rate: rate, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(c.len(), clean.len());
        for i in 0..c.len() {
            let n = c.mask(i).iter().filter(|&&m| m).count();
            prop_assert_eq!(c.image_labels()[i], (n >= MIN_ANOMALOUS_PIXELS) as u8);
            prop_assert!(c.image(i).iter().all(|v| (0.0..=1.0).contains(v)));
            for (p, &m) in c.mask(i).iter().enumerate() {
                if !m {
                    prop_assert_eq!(c.image(i)[p], clean.image(i)[p]);
                }
            }
        }
    }

    #[test]
    fn scoring_identities_hold_on_random_models(seed in any::<u64>(), n in 1usize..6) {
        let config = VaeConfig { input_dim: 16, hidden_dim: 6, latent_dim: 3, c: 0.8, seed };
        let params = init_params(&config).unwrap();
        let data = common::shapes(n, 1, 4, seed);
        let r = score_images(Images::from(&data), &params, 0.8, &ScoringOptions::default()).unwrap();
        for s in &r.samples {
            prop_assert_eq!(s.neg_elbo, s.kl + s.neg_rec);
        }
        for g in &r.gradients {
            let scale = g.elbo.iter().chain(&g.kl).chain(&g.rec).fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..16 {
                prop_assert!((g.elbo[i] - (g.rec[i] - g.kl[i])).abs() <= 4.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE));
            }
        }
    }
}

#[test]
fn idx_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = common::shapes(5, 3, 7, 42);
    let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
    write_idx(&data, &ip, &lp).unwrap();
    let back = load_idx(&ip, &lp).unwrap();
    assert_eq!(back, data);
    let (ip2, lp2) = (dir.path().join("i2"), dir.path().join("l2"));
    write_idx(&back, &ip2, &lp2).unwrap();
    assert_eq!(std::fs::read(&ip).unwrap(), std::fs::read(&ip2).unwrap());
    assert_eq!(std::fs::read(&lp).unwrap(), std::fs::read(&lp2).unwrap());
}

#[test]
fn full_corruption_on_28_pixel_images_labels_everything() {
    let clean = common::shapes(10, 2, 28, 3);
    let donors = common::shapes(5, 4, 28, 4).subset(&[1, 3], SplitTag::Test);
    let params = AnomalyParams { corruption_rate: 1.0, ..Default::default() };
    let c = make_anomaly_corpus(&clean, &donors, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(c.image_labels().iter().all(|&l| l == 1));
    let none = make_anomaly_corpus(&clean, &donors, &AnomalyParams { corruption_rate: 0.0, ..params }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(none.image_labels().iter().all(|&l| l == 0));
    assert!(none.masks().iter().all(|&m| !m));
}
