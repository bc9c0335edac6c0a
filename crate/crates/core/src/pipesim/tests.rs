use proptest::prelude::*;

use super::*;

fn spec(gains: [f64; 3], saturation: f64, gamma: f64, quantize: bool) -> PipelineSpec {
    PipelineSpec { gains, saturation, gamma, quantize, id: 0 }
}

#[test]
fn identity_pipeline_is_identity() {
    let img = synthetic_scene(16, 12, 3);
    let out = apply_pipeline(&img, &PipelineSpec::identity()).unwrap();
    for (a, b) in img.data().iter().zip(out.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn gamma_two_on_quarter_gray() {
    let img = Image::filled(2, 2, [0.25; 3]);
    let out = apply_pipeline(&img, &spec([1.0; 3], 1.0, 2.0, false)).unwrap();
    assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
}

#[test]
fn zero_saturation_gives_luminance() {
    let img = Image::filled(1, 1, [1.0, 0.0, 0.0]);
    let out = apply_pipeline(&img, &spec([1.0; 3], 0.0, 1.0, false)).unwrap();
    assert!(out.data().iter().all(|v| (v - 0.299).abs() < 1e-6));
}

#[test]
fn clipping_happens_before_gamma() {
    let img = Image::filled(1, 1, [0.8, 0.8, 0.8]);
    let out = apply_pipeline(&img, &spec([1.4; 3], 1.0, 2.2, false)).unwrap();
    assert!(out.data().iter().all(|&v| v == 1.0));
}

#[test]
fn quantization_rounds_to_255ths() {
    let img = synthetic_scene(8, 8, 1);
    let out = apply_pipeline(&img, &spec([1.1, 0.9, 1.0], 1.2, 2.2, true)).unwrap();
    for v in out.data() {
        let q = v * 255.0;
        assert!((q - q.round()).abs() < 1e-3);
    }
}

#[test]
fn negative_input_is_rejected() {
    let mut img = Image::filled(2, 2, [0.5; 3]);
    img.data_mut()[4] = -0.1;
    assert!(matches!(apply_pipeline(&img, &PipelineSpec::identity()), Err(Error::Contract(_))));
}

#[test]
fn sampling_is_deterministic_and_in_range() {
    let ranges = PipelineRanges::default();
    for seed in 0..50 {
        let a = sample_pipeline(seed, &ranges);
        assert_eq!(a, sample_pipeline(seed, &ranges));
        assert!(a.gains.iter().all(|g| (0.6..=1.4).contains(g)));
        assert!((0.5..=1.5).contains(&a.saturation));
        assert!(GAMMA_SET.contains(&a.gamma));
    }
    assert_ne!(sample_pipeline(1, &ranges), sample_pipeline(2, &ranges));
}

#[test]
fn dataset_is_image_major_with_consecutive_seeds() {
    let ranges = PipelineRanges::default();
    let images: Vec<_> = (0..3).map(|s| synthetic_scene(10, 10, s)).collect();
    let set = generate_dataset(&images, 4, 100, &ranges, Execution::default()).unwrap();
    assert_eq!(set.len(), 12);
    for (i, s) in set.iter().enumerate() {
        assert_eq!(s.scene, i / 4);
        assert_eq!(s.spec_id() as usize, i % 4);
        let expected = PipelineSpec { id: (i % 4) as u32, ..sample_pipeline(100 + (i % 4) as u64, &ranges) };
        assert_eq!(s.spec, expected);
        assert_eq!(s.raw, images[i / 4]);
    }
    let seq = generate_dataset(&images, 4, 100, &ranges, Execution::Sequential).unwrap();
    assert_eq!(set, seq);
}

#[test]
fn empty_dataset_inputs_are_errors() {
    let ranges = PipelineRanges::default();
    assert!(generate_dataset(&[], 3, 0, &ranges, Execution::Sequential).is_err());
    let img = synthetic_scene(4, 4, 0);
    assert!(generate_dataset(&[img], 0, 0, &ranges, Execution::Sequential).is_err());
}

#[test]
fn scenes_are_deterministic_and_exposed() {
    let a = synthetic_scene(40, 30, 9);
    assert_eq!(a, synthetic_scene(40, 30, 9));
    assert_ne!(a, synthetic_scene(40, 30, 10));
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let luma: f64 =
        a.pixels().map(|p| (0..3).map(|k| REC601[k] * p[k] as f64).sum::<f64>()).sum::<f64>() / a.pixel_count() as f64;
    assert!((luma - 0.2).abs() < 0.03, "mean luminance {luma}");
}

proptest! {
    #[test]
    fn outputs_stay_in_unit_range(
        g in prop::array::uniform3(0.6f64..1.4), s in 0.5f64..1.5, gi in 0usize..10, q: bool,
        rgb in prop::array::uniform3(0.0f32..2.0),
    ) {
        let img = Image::filled(1, 1, rgb);
        let out = apply_pipeline(&img, &spec(g, s, GAMMA_SET[gi], q)).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gray_stays_gray_at_unit_gains(v in 0.0f32..1.0, s in 0.0f64..2.0, gi in 0usize..10) {
        let img = Image::filled(1, 1, [v; 3]);
        let out = apply_pipeline(&img, &spec([1.0; 3], s, GAMMA_SET[gi], false)).unwrap();
        let d = out.data();
        prop_assert!((d[0] - d[1]).abs() < 1e-6 && (d[1] - d[2]).abs() < 1e-6);
    }
}
