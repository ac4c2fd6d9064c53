mod common;

use auris_core::audio::{decode_wav, encode_wav, frame_stream, Frame, SampleBuffer, FRAME_LEN};
use auris_core::classify::{discretize_attribute, train_naive_bayes};
use auris_core::confidence::{confidence_level, gpi};
use auris_core::detection::{admit_frame, segment, spectral_entropy, AdmissionConfig};
use auris_core::dsp::fft_magnitude;
use auris_core::features::{extract_segment_features, window_features, FeatureVector, VECTOR_LEN, WINDOW_FEATURES};
use auris_core::kb::{ClassUpdate, Importance, KnowledgeBase, LabeledVector, TrainingSet};
use common::*;
use proptest::prelude::*;

fn samples(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..=1.0, 1..max)
}

fn frame_of(samples: Vec<f64>) -> Frame {
    Frame {
        index: 0,
        start: 0,
        valid_len: samples.len(),
        samples,
    }
}

fn set_of(rows: &[(String, Vec<f64>)]) -> TrainingSet {
    TrainingSet {
        samples: rows
            .iter()
            .map(|(l, x)| {
                let mut v = x.clone();
                v.resize(VECTOR_LEN, 0.0);
                LabeledVector {
                    label: l.clone(),
                    features: FeatureVector::new(v).unwrap(),
                }
            })
            .collect(),
        revision: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_concatenate_back_to_the_signal(v in samples(6000)) {
        let frames = frame_stream(&SampleBuffer::new(v.clone()).unwrap());
        prop_assert_eq!(frames.len(), v.len().div_ceil(FRAME_LEN));
        let joined: Vec<f64> = frames.iter().flat_map(|f| f.valid().to_vec()).collect();
        prop_assert_eq!(&joined, &v);
        for (i, f) in frames.iter().enumerate() {
            prop_assert_eq!(f.samples.len(), FRAME_LEN);
            prop_assert_eq!(f.start, i * FRAME_LEN);
            prop_assert!(f.samples[f.valid_len..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn wav_decode_inverts_encode_on_quantized_audio(v in samples(4000)) {
        let q = SampleBuffer::new(v).unwrap().quantized();
        let back = decode_wav(&encode_wav(&q)).unwrap();
        prop_assert_eq!(back.samples(), q.samples());
        // quantizing twice changes nothing
        let twice = q.quantized();
        prop_assert_eq!(twice.samples(), q.samples());
    }

    #[test]
    fn feature_vector_shape_and_determinism(v in samples(8000), amp in 0.0f64..1.0) {
        let v: Vec<f64> = v.iter().map(|x| x * amp).collect();
        let frames = frame_stream(&SampleBuffer::new(v).unwrap());
        let a = extract_segment_features(&frames).unwrap();
        let b = extract_segment_features(&frames).unwrap();
        prop_assert_eq!(a.values().len(), VECTOR_LEN);
        prop_assert!(a.values().iter().all(|x| x.is_finite()));
        prop_assert!(a.stds().iter().all(|&s| s >= 0.0));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frame_order_only_matters_to_flux(seed in 0u64..1000, n in 2usize..8, rot in 1usize..7) {
        let v = white_noise(0.4, n * FRAME_LEN, seed);
        let frames = frame_stream(&buffer(v));
        let mut shuffled = frames.clone();
        shuffled.rotate_left(rot % n);
        let mean = |fr: &[Frame]| -> Vec<f64> {
            let w = window_features(fr).unwrap();
            (0..WINDOW_FEATURES)
                .map(|j| w.iter().map(|x| x.to_array()[j]).sum::<f64>() / w.len() as f64)
                .collect()
        };
        let (a, b) = (mean(&frames), mean(&shuffled));
        for j in (0..WINDOW_FEATURES).filter(|&j| j != 1 && j != 2) {
            prop_assert!((a[j] - b[j]).abs() <= 1e-9 * (1.0 + a[j].abs()), "slot {}: {} vs {}", j, a[j], b[j]);
        }
    }

    #[test]
    fn admission_is_monotone_in_amplitude(seed in 0u64..1000, lo in 0.0001f64..0.5, k in 1.0f64..2.0, tonal in any::<bool>()) {
        let base = if tonal { tone(700.0 + seed as f64, 1.0, FRAME_LEN) } else { white_noise(1.0, FRAME_LEN, seed) };
        let cfg = AdmissionConfig::default();
        let at = |a: f64| admit_frame(&frame_of(base.iter().map(|x| x * a).collect()), &cfg).is_admitted();
        if at(lo) {
            prop_assert!(at(lo * k));
        }
    }

    #[test]
    fn entropy_ignores_scale(v in prop::collection::vec(-1.0f64..=1.0, FRAME_LEN), k in 1e-3f64..1e3) {
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        let a = spectral_entropy(&fft_magnitude(&v).unwrap());
        let b = spectral_entropy(&fft_magnitude(&scaled).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        prop_assert!(a >= 0.0 && a <= ((FRAME_LEN / 2) as f64).ln() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn segments_respect_length_bounds(
        parts in prop::collection::vec((0.0f64..3.5, 0.0f64..1.0, 0.001f64..0.6), 1..5),
        seed in 0u64..100,
    ) {
        let mut v = Vec::new();
        for (i, &(sound, gap, amp)) in parts.iter().enumerate() {
            v.extend(white_noise(amp, secs(sound), seed + i as u64));
            v.extend(silence(secs(gap)));
        }
        prop_assume!(!v.is_empty());
        let total = v.len();
        let segs = segment(frame_stream(&buffer(v)), &AdmissionConfig::default());
        let mut last_end = 0;
        for s in &segs {
            prop_assert!(s.duration() >= 0.4 - 1e-12 && s.duration() <= 2.7 + 1e-12, "{}", s.duration());
            prop_assert!(s.start_sample >= last_end && s.end_sample <= total);
            prop_assert_eq!(s.samples.len(), s.end_sample - s.start_sample);
            last_end = s.end_sample;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn naive_bayes_posteriors_are_a_distribution(seed in 0u64..10_000, classes in 2usize..6, dims in 1usize..5) {
        let mut r = rng(seed);
        let rows = toy_rows(&mut r, classes, classes * 4, dims);
        let model = train_naive_bayes(&set_of(&rows)).unwrap();
        let q: Vec<f64> = (0..VECTOR_LEN).map(|i| if i < dims { (seed % 17) as f64 } else { 0.0 }).collect();
        let ranked = model.classify(&q).unwrap();
        let sum: f64 = ranked.iter().map(|s| s.posterior).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(ranked.iter().all(|s| s.posterior > 0.0 && s.posterior < 1.0));
        for w in ranked.windows(2) {
            prop_assert!(w[0].posterior >= w[1].posterior);
        }
        let oracle = nb_posterior_oracle(&rows, &model.cuts[..dims], &q[..dims]);
        for s in &ranked {
            prop_assert!((s.posterior - oracle[&s.class]).abs() < 1e-9);
        }
    }

    #[test]
    fn discretization_agrees_with_oracle(
        pairs in prop::collection::vec((0u8..12, 0usize..3), 1..24),
    ) {
        let values: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cuts = discretize_attribute(&values, &labels).unwrap();
        prop_assert_eq!(&cuts, &mdl_cuts_oracle(&values, &labels));
        prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gpi_survives_rigid_motion(
        pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 1..8),
        q in prop::collection::vec(-10.0f64..10.0, 6),
        shift in prop::collection::vec(-100.0f64..100.0, 6),
        signs in prop::collection::vec(any::<bool>(), 6),
        rot in 0usize..6,
    ) {
        // permuting axes, flipping signs and translating is an isometry
        let motion = |p: &[f64]| -> Vec<f64> {
            let mut v: Vec<f64> = p.iter().zip(&signs).map(|(x, &s)| if s { -x } else { *x }).collect();
            v.rotate_left(rot);
            v.iter().zip(&shift).map(|(x, t)| x + t).collect()
        };
        let a = gpi(&q, &pts, "c").unwrap();
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| motion(p)).collect();
        let b = gpi(&motion(&q), &moved, "c").unwrap();
        prop_assert!((a.g - b.g).abs() < 1e-9, "{} vs {}", a.g, b.g);
        // d(q, c) is non-negative
        prop_assert!(a.g >= -a.nearest_distance - 1e-12);
    }

    #[test]
    fn single_instance_gpi_is_the_distance(
        p in prop::collection::vec(-10.0f64..10.0, 5),
        q in prop::collection::vec(-10.0f64..10.0, 5),
    ) {
        let r = gpi(&q, &[p.clone()], "c").unwrap();
        let d = p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!((r.g - d).abs() < 1e-12);
        prop_assert_eq!(r.nearest_distance, 0.0);
    }

    #[test]
    fn confidence_never_rises_with_g(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (l_lo, l_hi) = (confidence_level(lo).unwrap(), confidence_level(hi).unwrap());
        prop_assert!(l_lo >= l_hi);
        prop_assert!(l_hi <= 5);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Add(u8, Option<u8>),
    Delete(u8),
    Rename(u8, u8),
    Importance(u8),
    Exclude(u8, bool),
    RenameEnv(u8, u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..4, prop::option::of(0u8..3)).prop_map(|(c, e)| Op::Add(c, e)),
        (0u8..8).prop_map(Op::Delete),
        (0u8..4, 0u8..4).prop_map(|(a, b)| Op::Rename(a, b)),
        (0u8..4).prop_map(Op::Importance),
        (0u8..4, any::<bool>()).prop_map(|(c, x)| Op::Exclude(c, x)),
        (0u8..3, 0u8..3).prop_map(|(a, b)| Op::RenameEnv(a, b)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kb_revision_only_moves_forward(ops in prop::collection::vec(op(), 1..40)) {
        let mut kb = KnowledgeBase::new();
        let f = FeatureVector::new(vec![0.25; VECTOR_LEN]).unwrap();
        let mut last = kb.revision();
        for op in ops {
            let ok = match op {
                Op::Add(c, e) => kb.add_record(&format!("c{c}"), e.map(|e| format!("e{e}")).as_deref(), f.clone(), None).is_ok(),
                Op::Delete(i) => {
                    let id = kb.records().get(i as usize).map(|r| r.id);
                    id.is_some_and(|id| kb.delete_record(id).is_ok())
                }
                Op::Rename(a, b) => kb
                    .update_class(&format!("c{a}"), &ClassUpdate { new_name: Some(format!("c{b}")), ..Default::default() })
                    .is_ok(),
                Op::Importance(c) => kb
                    .update_class(&format!("c{c}"), &ClassUpdate { importance: Some(Importance::Urgent), ..Default::default() })
                    .is_ok(),
                Op::Exclude(c, x) => kb
                    .update_class(&format!("c{c}"), &ClassUpdate { excluded: Some(x), ..Default::default() })
                    .is_ok(),
                Op::RenameEnv(a, b) => kb.rename_environment(&format!("e{a}"), &format!("e{b}")).is_ok(),
            };
            if ok {
                prop_assert!(kb.revision() > last);
            } else {
                prop_assert_eq!(kb.revision(), last);
            }
            last = kb.revision();
        }
    }
}
