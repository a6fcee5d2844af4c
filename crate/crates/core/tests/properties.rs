use proptest::prelude::*;

use spinekpt_core::codec::{
    decode_landmarks, encode_targets, extract_peaks, CodecConfig, PredictionMaps,
};
use spinekpt_core::losses::{focal_loss, masked_l1, total_loss, FocalParams, LossWeights};
use spinekpt_core::metrics::{cobb_angles, error_dec, smape, AngleTriple};
use spinekpt_core::net::{AdamConfig, AdamState, ModelParams};
use spinekpt_core::synth::{
    augment, generate_sample, randomized_config, AugmentConfig, CurveRanges, SpineGenConfig,
};
use spinekpt_core::types::validate_annotation;
use spinekpt_core::{Point2, SpineAnnotation, Tensor, VERTEBRA_COUNT};

fn synthetic(seed: u64) -> SpineAnnotation {
    let cfg = randomized_config(&SpineGenConfig::default(), &CurveRanges::default(), seed).unwrap();
    generate_sample(&cfg).unwrap().1
}

fn codec() -> CodecConfig {
    CodecConfig::for_input(64, 128).unwrap()
}

fn map(values: Vec<f64>, c: usize) -> Tensor {
    Tensor::from_vec(&[c, 32, 16], values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codec_round_trip(seed in any::<u64>()) {
        let ann = synthetic(seed);
        let t = encode_targets(&ann, &codec()).unwrap();
        let d = decode_landmarks(&t.as_prediction(), &codec()).unwrap();
        prop_assert!(d.is_complete());
        for (a, b) in d.annotation.landmarks().iter().zip(ann.landmarks()) {
            prop_assert!(a.distance(b) < 1e-9);
        }
    }

    #[test]
    fn heatmap_range_and_center_cells(seed in any::<u64>()) {
        let ann = synthetic(seed);
        let cfg = codec();
        let t = encode_targets(&ann, &cfg).unwrap();
        prop_assert!(t.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let ones: Vec<usize> = (0..t.heatmap.len()).filter(|&i| t.heatmap.data()[i] == 1.0).collect();
        prop_assert_eq!(ones.len(), VERTEBRA_COUNT);
        for (i, (&h, &m)) in t.heatmap.data().iter().zip(t.center_mask.data()).enumerate() {
            prop_assert_eq!(m == 1.0, h == 1.0, "cell {}", i);
        }
        let mut peaks: Vec<usize> = extract_peaks(&t.heatmap, &cfg)
            .unwrap()
            .iter()
            .map(|p| p.cy * cfg.out_width + p.cx)
            .collect();
        peaks.sort_unstable();
        prop_assert_eq!(peaks, ones);
    }

    #[test]
    fn heatmap_falls_off_along_rows(seed in any::<u64>()) {
        let ann = synthetic(seed);
        let cfg = codec();
        let t = encode_targets(&ann, &cfg).unwrap();
        let n = cfg.n as f64;
        let cells: Vec<(i64, i64)> = ann
            .centers()
            .iter()
            .map(|c| ((c.x / n).floor() as i64, (c.y / n).floor() as i64))
            .collect();
        for &(cx, cy) in &cells {
            for dir in [-1i64, 1] {
                let mut prev = 1.0;
                for k in 1..cfg.out_width as i64 {
                    let x = cx + dir * k;
                    if x < 0 || x >= cfg.out_width as i64 {
                        break;
                    }
                    // Stay inside this center's disk: stop once another center is as close.
                    let d2 = k * k;
                    if cells.iter().any(|&(ox, oy)| (ox, oy) != (cx, cy) && (ox - x).pow(2) + (oy - cy).pow(2) <= d2) {
                        break;
                    }
                    let v = t.heatmap.at3(0, cy as usize, x as usize);
                    prop_assert!(v <= prev, "row {} col {}: {} > {}", cy, x, v, prev);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn decoded_order_follows_refined_y(
        heat in prop::collection::vec(0.001f64..0.999, 512),
        center in prop::collection::vec(0.0f64..1.0, 1024),
        corner in prop::collection::vec(-3.0f64..3.0, 4096),
    ) {
        let pred = PredictionMaps {
            heatmap: map(heat, 1),
            center_offset: map(center, 2),
            corner_offset: map(corner, 8),
        };
        let d = decode_landmarks(&pred, &codec()).unwrap();
        prop_assert!(d.centers.windows(2).all(|w| w[0].y <= w[1].y));
        prop_assert!(d.found() <= VERTEBRA_COUNT);
    }

    #[test]
    fn losses_are_nonnegative_and_decompose(
        heat in prop::collection::vec(0.001f64..0.999, 512),
        target in prop::collection::vec(0.0f64..0.999, 512),
        offsets in prop::collection::vec(-2.0f64..2.0, 1024),
        ones in prop::collection::vec(0usize..512, 1..20),
        weights in (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0),
    ) {
        let mut target = map(target, 1);
        let mut mask = Tensor::zeros(&[1, 32, 16]);
        for i in ones {
            target.data_mut()[i] = 1.0;
            mask.data_mut()[i] = 1.0;
        }
        let pred_hm = map(heat, 1);
        let fp = FocalParams::default();
        let hm = focal_loss(&pred_hm, &target, &fp).unwrap();
        prop_assert!(hm.value >= 0.0 && hm.grad.all_finite());

        let pred_co = map(offsets.clone(), 2);
        let tgt_co = Tensor::zeros(&[2, 32, 16]);
        let co = masked_l1(&pred_co, &tgt_co, &mask).unwrap();
        prop_assert!(co.value >= 0.0);

        let mut corner = offsets.clone();
        corner.extend(offsets.iter().map(|v| v * 0.5));
        corner.extend(offsets.iter().map(|v| -v));
        corner.extend(offsets.iter().map(|v| v + 1.0));
        let pred_cr = map(corner, 8);
        let tgt_cr = Tensor::full(&[8, 32, 16], 0.25);
        let cr = masked_l1(&pred_cr, &tgt_cr, &mask).unwrap();

        let w = LossWeights { heatmap: weights.0, center_offset: weights.1, corner_offset: weights.2 };
        let pred = PredictionMaps { heatmap: pred_hm, center_offset: pred_co, corner_offset: pred_cr };
        let tgt = spinekpt_core::codec::TargetMaps {
            heatmap: target,
            center_offset: tgt_co,
            corner_offset: tgt_cr,
            center_mask: mask,
        };
        let total = total_loss(&pred, &tgt, &w, &fp).unwrap();
        let expected = w.heatmap * hm.value + w.center_offset * co.value + w.corner_offset * cr.value;
        prop_assert!((total.value - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn smape_symmetric_and_bounded(
        a in prop::collection::vec((0.0f64..90.0, 0.1f64..90.0, 0.0f64..90.0), 1..10),
        b in prop::collection::vec((0.0f64..90.0, 0.1f64..90.0, 0.0f64..90.0), 1..10),
    ) {
        let m = a.len().min(b.len());
        let tri = |v: &[(f64, f64, f64)]| -> Vec<AngleTriple> {
            v[..m].iter().map(|&(p, q, r)| AngleTriple::new(p, q, r)).collect()
        };
        let (a, b) = (tri(&a), tri(&b));
        let ab = smape(&a, &b).unwrap();
        prop_assert_eq!(ab, smape(&b, &a).unwrap());
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert_eq!(smape(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn error_dec_zero_iff_equal(
        pts in prop::collection::vec((0.0f64..64.0, 0.0f64..128.0), 1..40),
        moved in 0usize..40,
        by in 0.01f64..5.0,
    ) {
        let p: Vec<Point2> = pts.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        prop_assert_eq!(error_dec(&p, &p).unwrap(), 0.0);
        let mut q = p.clone();
        let i = moved % q.len();
        q[i].x += by;
        let e = error_dec(&q, &p).unwrap();
        prop_assert!(e > 0.0);
        prop_assert!((e - by / p.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn cobb_structure_and_similarity_invariance(
        seed in any::<u64>(),
        theta in -3.1f64..3.1,
        scale in 0.1f64..10.0,
        tx in -1e3f64..1e3,
        ty in -1e3f64..1e3,
    ) {
        let ann = synthetic(seed);
        let r = cobb_angles(&ann).unwrap();
        let (upper, lower) = r.mt_pair;
        prop_assert!(upper < lower && lower < VERTEBRA_COUNT);
        prop_assert!(r.pt_partner <= upper && r.tl_partner >= lower);
        for a in [r.pt_deg, r.mt_deg, r.tl_deg] {
            prop_assert!((0.0..=90.0).contains(&a));
        }
        let (s, c) = theta.sin_cos();
        let moved = ann.map_points(|p| {
            Point2::new(scale * (c * p.x - s * p.y) + tx, scale * (s * p.x + c * p.y) + ty)
        });
        let m = cobb_angles(&moved).unwrap();
        prop_assert!((m.mt_deg - r.mt_deg).abs() < 1e-9);
        prop_assert!((m.pt_deg - r.pt_deg).abs() < 1e-9);
        prop_assert!((m.tl_deg - r.tl_deg).abs() < 1e-9);
        prop_assert_eq!((m.mt_pair, m.pt_partner, m.tl_partner), (r.mt_pair, r.pt_partner, r.tl_partner));
    }

    #[test]
    fn generation_and_augmentation_are_pure(seed in any::<u64>(), aug_seed in any::<u64>()) {
        let cfg = randomized_config(&SpineGenConfig::default(), &CurveRanges::default(), seed).unwrap();
        let (img, ann) = generate_sample(&cfg).unwrap();
        let again = generate_sample(&cfg).unwrap();
        prop_assert_eq!(&img, &again.0);
        prop_assert_eq!(&ann, &again.1);
        prop_assert!(validate_annotation(&ann).is_empty());

        let acfg = AugmentConfig { seed: aug_seed, ..AugmentConfig::default() };
        let out = augment(&img, &ann, &acfg).unwrap();
        prop_assert_eq!(&out, &augment(&img, &ann, &acfg).unwrap());
        prop_assert!(validate_annotation(&out.annotation).is_empty());
        for (a, b) in ann.landmarks().iter().zip(out.annotation.landmarks()) {
            prop_assert!(out.transform.apply(*a).distance(b) < 1e-9);
        }
    }

    #[test]
    fn adam_ignores_zero_gradients(values in prop::collection::vec(-5.0f64..5.0, 1..16), steps in 1usize..8) {
        let mut params = ModelParams::new();
        params.insert("p".into(), Tensor::from_vec(&[values.len()], values.clone()).unwrap());
        let mut zero = ModelParams::new();
        zero.insert("p".into(), Tensor::zeros(&[values.len()]));
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..steps {
            state.step(&mut params, &zero).unwrap();
        }
        prop_assert_eq!(params["p"].data(), &values[..]);
    }
}

#[test]
fn mt_grows_with_amplitude_across_seeds() {
    for seed in 0..10u64 {
        let mut last = -1.0;
        for amp1 in [0.0, 4.0, 8.0, 12.0] {
            let cfg = SpineGenConfig {
                amp1,
                freq1: 0.6 + 0.04 * seed as f64,
                phase1: 0.2 * seed as f64,
                seed,
                ..SpineGenConfig::default()
            };
            let mt = cobb_angles(&generate_sample(&cfg).unwrap().1).unwrap().mt_deg;
            assert!(mt > last, "seed {seed}, amp {amp1}: {mt} <= {last}");
            last = mt;
        }
    }
}
