use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

fn arb_case() -> impl Strategy<Value = (Image, Image, Mask, f32)> {
    (1usize..4, 1usize..9, 1usize..9).prop_flat_map(|(c, h, w)| {
        (
            proptest::collection::vec(0.0f32..=1.0, c * h * w),
            proptest::collection::vec(0.0f32..=1.0, c * h * w),
            proptest::collection::vec(0u8..=1, h * w),
            0.0f32..=1.0,
        )
            .prop_map(move |(n, a, m, beta)| {
                (
                    Image::new(c, h, w, n).unwrap(),
                    Image::new(c, h, w, a).unwrap(),
                    Mask::new(h, w, m).unwrap(),
                    beta,
                )
            })
    })
}

fn bits(img: &Image) -> Vec<u32> {
    img.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn zero_mask_or_full_opacity_returns_normal((n, a, m, beta) in arb_case()) {
        let zero = Mask::zeros(n.height(), n.width());
        prop_assert_eq!(bits(&blend_pseudo_anomaly(&n, &a, &zero, beta).unwrap()), bits(&n));
        prop_assert_eq!(bits(&blend_pseudo_anomaly(&n, &a, &m, 1.0).unwrap()), bits(&n));
    }

    #[test]
    fn zero_opacity_full_mask_returns_source((n, a, _m, _beta) in arb_case()) {
        let ones = Mask::new(n.height(), n.width(), alloc::vec![1; n.height() * n.width()]).unwrap();
        prop_assert_eq!(bits(&blend_pseudo_anomaly(&n, &a, &ones, 0.0).unwrap()), bits(&a));
    }

    #[test]
    fn masked_pixels_are_convex_combinations((n, a, m, beta) in arb_case()) {
        let out = blend_pseudo_anomaly(&n, &a, &m, beta).unwrap();
        let hw = n.height() * n.width();
        for (i, &v) in out.data().iter().enumerate() {
            let (nv, av) = (n.data()[i], a.data()[i]);
            if m.data()[i % hw] == 1 {
                prop_assert!(v >= nv.min(av) - 1e-6 && v <= nv.max(av) + 1e-6);
            } else {
                prop_assert_eq!(v, nv);
            }
        }
    }
}

fn normal_sample(size: usize) -> ImageSample {
    ImageSample::normal(procedural_texture(TextureFamily::Sinusoid, 3, size, size, 1))
}

#[test]
fn zero_probability_never_corrupts() {
    let spec = AnomalySpec {
        activation_prob: 0.0,
        ..Default::default()
    };
    let n = normal_sample(32);
    for seed in 0..50 {
        let pair = sample_training_pair(&n, &spec, &PerlinParams::default(), &SourceBank::Procedural, seed).unwrap();
        assert_eq!(pair.corrupted, pair.clean);
        assert_eq!(pair.clean, n);
    }
}

#[test]
fn unit_probability_always_labels() {
    for generator in [Generator::PerlinBlend, Generator::CutPastePatch, Generator::CutPasteScar] {
        let spec = AnomalySpec {
            activation_prob: 1.0,
            generator,
            ..Default::default()
        };
        let n = normal_sample(32);
        for seed in 0..40 {
            let p = sample_training_pair(&n, &spec, &PerlinParams::default(), &SourceBank::Procedural, seed).unwrap();
            assert_eq!(p.corrupted.label(), !p.corrupted.mask.is_empty());
            assert!(p.corrupted.label());
            assert_eq!(p.clean, n);
        }
    }
}

#[test]
fn activation_fraction_matches_probability() {
    let spec = AnomalySpec::default();
    let params = PerlinParams {
        base_period_range: (4, 8),
        ..Default::default()
    };
    let n = normal_sample(16);
    let hits = (0..10_000u64)
        .filter(|&s| {
            sample_training_pair(&n, &spec, &params, &SourceBank::Procedural, s)
                .unwrap()
                .activated()
        })
        .count();
    let frac = hits as f64 / 10_000.0;
    assert!((0.47..=0.53).contains(&frac), "{frac}");
}

#[test]
fn image_directory_requires_a_bank() {
    let spec = AnomalySpec {
        source: SourceKind::ImageDirectory,
        ..Default::default()
    };
    let n = normal_sample(16);
    let p = PerlinParams {
        base_period_range: (4, 8),
        ..Default::default()
    };
    assert_eq!(
        sample_training_pair(&n, &spec, &p, &SourceBank::Images(Vec::new()), 0),
        Err(crate::Error::EmptySourceBank)
    );
    let bank = SourceBank::Images(alloc::vec![Image::filled(1, 20, 20, 0.1)]);
    let spec = AnomalySpec {
        activation_prob: 1.0,
        ..spec
    };
    let pair = sample_training_pair(&n, &spec, &p, &bank, 0).unwrap();
    assert!(pair.activated());
}

#[test]
fn dataset_layout_and_determinism() {
    for kind in [ClassKind::Stripes, ClassKind::Blobs, ClassKind::Checker] {
        let spec = DatasetSpec {
            class_kind: kind,
            n_train: 6,
            n_test_good: 3,
            n_test_bad: 4,
            seed: 42,
            ..Default::default()
        };
        let ds = make_synthetic_dataset(&spec).unwrap();
        assert_eq!(ds.train.len(), 6);
        assert!(ds.train.iter().all(|s| s.mask.is_empty() && !s.label()));
        let bad: Vec<_> = ds.test.iter().filter(|t| t.defect != "good").collect();
        assert_eq!(bad.len(), 4);
        assert!(bad.iter().all(|t| t.sample.label() && !t.sample.mask.is_empty()));
        assert_eq!(ds.digest(), make_synthetic_dataset(&spec).unwrap().digest());
        let other = DatasetSpec { seed: 43, ..spec };
        assert_ne!(ds.digest(), make_synthetic_dataset(&other).unwrap().digest());
        // train and test normals come from disjoint seed streams
        assert!(ds.train.iter().all(|s| ds.test.iter().all(|t| t.sample.image != s.image)));
    }
}

#[test]
fn image_values_are_clamped() {
    let img = Image::new(1, 1, 3, alloc::vec![-0.5, 0.5, 1.5]).unwrap();
    assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
}

#[test]
fn conformed_converts_channels_and_extent() {
    let img = procedural_texture(TextureFamily::Gradient, 3, 20, 30, 2);
    let g = img.conformed(1, 10, 15);
    assert_eq!((g.channels(), g.height(), g.width()), (1, 10, 15));
    let rgb = g.conformed(3, 10, 15);
    assert_eq!(rgb.data()[..150], rgb.data()[150..300]);
}
