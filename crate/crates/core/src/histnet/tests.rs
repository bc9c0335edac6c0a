use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::image::Image;
use crate::tensor::{gradient_check, Graph, Probe, Tensor};

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn small_arch() -> ArchConfig {
    ArchConfig { hidden: 8, shared_dim: 4, ..ArchConfig::default() }
}

#[test]
fn channel_counts_follow_the_layer_table() {
    assert_eq!(HIST_FEATURE_CHANNELS, 75);
    let w = NetworkWeights::<f32>::init(ArchConfig::default(), 0).unwrap();
    assert_eq!(w.n2.conv1.in_channels(), 75);
    assert_eq!(w.n1.conv1.in_channels(), 203);
    assert_eq!((w.n1.conv1.out_channels(), w.n1.conv2.out_channels(), w.n1.conv3.out_channels()), (128, 128, 3));
    assert_eq!(w.share.as_ref().unwrap().fc_weights.shape(), &[128, 128]);
    w.validate().unwrap();

    let no_share = NetworkWeights::<f32>::init(ArchConfig { use_sharing: false, ..ArchConfig::default() }, 0).unwrap();
    assert_eq!(no_share.n1.conv1.in_channels(), 75);
    assert!(no_share.share.is_none());
}

#[test]
fn histogram_initialisation_tiles_the_unit_interval() {
    let h = HistogramParams::<f32>::tiled();
    assert_eq!(h.centers.shape(), &[3, 6]);
    assert!((h.centers.values()[0] - 1.0 / 12.0).abs() < 1e-7);
    assert!((h.centers.values()[5] - 11.0 / 12.0).abs() < 1e-7);
    assert!(h.inv_widths.values().iter().all(|&g| g == 6.0));
}

#[test]
fn hist_features_layout() {
    let img = random_image(9, 8, 1);
    let mut g = Graph::<f32>::inference();
    let hist = HistogramParams::<f32>::tiled();
    let x = image_var(&mut g, &img).unwrap();
    let hb = BoundHistogram { centers: g.leaf(hist.centers), inv_widths: g.leaf(hist.inv_widths) };
    let f = hist_features(&mut g, x, &hb).unwrap();
    assert_eq!(g.shape(f), &[75, 8, 9]);
    let n = 72;
    assert_eq!(&g.values(f)[n * 72..], &img.to_planar()[..]);
    assert!(g.values(f)[..n * 72].iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn n2_exposes_a_full_resolution_activation() {
    for layer in [ShareLayer::Conv1, ShareLayer::Conv2] {
        let arch = ArchConfig { share_layer: layer, ..ArchConfig::default() };
        let w = NetworkWeights::<f32>::init(arch, 3).unwrap();
        let mut g = Graph::<f32>::inference();
        let net = w.bind(&mut g, false);
        let x = image_var(&mut g, &random_image(10, 8, 2)).unwrap();
        let out = net.forward_n2(&mut g, x).unwrap();
        assert_eq!(g.shape(out.l), &[128, 8, 10]);
        assert_eq!(g.shape(out.raw), &[3, 8, 10]);
    }
    assert_eq!(ArchConfig::default().share_layer, ShareLayer::Conv1);
    assert!("conv3".parse::<ShareLayer>().is_err());
}

#[test]
fn zero_trunk_outputs_the_last_bias() {
    let mut w = NetworkWeights::<f32>::init(small_arch(), 4).unwrap();
    for layer in [&mut w.n2.conv1, &mut w.n2.conv2, &mut w.n2.conv3] {
        layer.weights.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    w.n2.conv3.bias.values_mut().copy_from_slice(&[0.1, 0.2, 0.3]);
    let (raw, _) = w.jpeg_to_raw(&random_image(8, 8, 5)).unwrap();
    assert!(raw.pixels().all(|p| p == [0.1, 0.2, 0.3]));
}

#[test]
fn forward_passes_are_deterministic() {
    let w = NetworkWeights::<f32>::init(ArchConfig::default(), 6).unwrap();
    let img = random_image(12, 9, 6);
    assert_eq!(w.jpeg_to_raw(&img).unwrap(), w.jpeg_to_raw(&img).unwrap());
    assert_eq!(w.cycle(&img).unwrap(), w.cycle(&img).unwrap());
}

#[test]
fn share_transform_examples() {
    let arch = ArchConfig { hidden: 4, shared_dim: 4, ..ArchConfig::default() };
    let mut w = NetworkWeights::<f32>::init(arch, 0).unwrap();
    let s = w.share.as_mut().unwrap();
    s.fc_weights = Tensor::from_fn(vec![4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
    let mut g = Graph::<f32>::inference();
    let net = w.bind(&mut g, false);
    let constant = g.leaf(Tensor::from_fn(vec![4, 3, 3], |i| (i / 9) as f32 * 0.5));
    let v = net.share_transform(&mut g, constant).unwrap().unwrap();
    assert_eq!(g.values(v), &[0.0, 0.5, 1.0, 1.5]);

    let varied = g.leaf(Tensor::from_fn(vec![4, 3, 3], |i| (i % 9) as f32));
    let avg = net.share_transform(&mut g, varied).unwrap().unwrap();
    let mut max_arch = arch;
    max_arch.pool_kind = PoolKind::Max;
    let mut wm = w.clone();
    wm.arch = max_arch;
    wm.share.as_mut().unwrap().pool = PoolKind::Max;
    let net_max = wm.bind(&mut g, false);
    let max = net_max.share_transform(&mut g, varied).unwrap().unwrap();
    assert_eq!(g.values(avg), &[4.0; 4]);
    assert_eq!(g.values(max), &[8.0; 4]);

    let full = NetworkWeights::<f32>::init(ArchConfig::default(), 1).unwrap();
    let feature = full.shared_feature(&random_image(8, 8, 3)).unwrap().unwrap();
    assert_eq!(feature.vector.len(), 128);
}

#[test]
fn n1_ignores_shared_channels_with_zero_weights() {
    let mut w = NetworkWeights::<f32>::init(ArchConfig::default(), 7).unwrap();
    let c_in = w.n1.conv1.in_channels();
    for (i, v) in w.n1.conv1.weights.values_mut().iter_mut().enumerate() {
        if i % c_in >= HIST_FEATURE_CHANNELS {
            *v = 0.0;
        }
    }
    let raw = random_image(8, 8, 8);
    let a = w.raw_to_jpeg(&raw, Some(&SharedFeature { vector: vec![0.0; 128] })).unwrap();
    let b = w.raw_to_jpeg(&raw, Some(&SharedFeature { vector: vec![3.0; 128] })).unwrap();
    assert_eq!(a, b);
}

#[test]
fn n1_rejects_missing_or_mismatched_shared_vectors() {
    let w = NetworkWeights::<f32>::init(ArchConfig::default(), 7).unwrap();
    let raw = random_image(8, 8, 8);
    assert!(matches!(w.raw_to_jpeg(&raw, None), Err(crate::Error::Contract(_))));
    assert!(matches!(w.raw_to_jpeg(&raw, Some(&SharedFeature { vector: vec![0.0; 5] })), Err(crate::Error::Shape(_))));
}

#[test]
fn n1_output_depends_on_the_shared_vector() {
    let mut differing = 0;
    for seed in 0..10 {
        let w = NetworkWeights::<f32>::init(ArchConfig::default(), seed).unwrap();
        let raw = random_image(8, 8, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = || SharedFeature { vector: (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (a, b) = (s(), s());
        if w.raw_to_jpeg(&raw, Some(&a)).unwrap() != w.raw_to_jpeg(&raw, Some(&b)).unwrap() {
            differing += 1;
        }
    }
    assert!(differing >= 9, "{differing}/10");
}

#[test]
fn pooling_rejects_tiny_images() {
    let w = NetworkWeights::<f32>::init(small_arch(), 0).unwrap();
    assert!(matches!(w.jpeg_to_raw(&random_image(7, 16, 0)), Err(crate::Error::Contract(_))));
}

/// Full dual-network loss (both reconstructions plus the cycle term) as a
/// function of every parameter.
fn composite_probe(weights: &NetworkWeights<f64>, raw: &Image, jpeg: &Image, flat: &[f64]) -> Probe {
    let mut w = weights.clone();
    let mut offset = 0;
    for t in w.params_mut() {
        let n = t.len();
        t.values_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    let mut g = Graph::<f64>::new().with_kink_tracking();
    let net = w.bind(&mut g, true);
    let (r, j) = (image_var(&mut g, raw).unwrap(), image_var(&mut g, jpeg).unwrap());
    let out = net.forward_n2(&mut g, j).unwrap();
    let shared = net.share_transform(&mut g, out.l).unwrap();
    let pred_jpeg = net.forward_n1(&mut g, r, shared).unwrap();
    let cyc = net.forward_n1(&mut g, out.raw, shared).unwrap();
    let l1 = g.mse_loss(pred_jpeg, j).unwrap();
    let l2 = g.mse_loss(out.raw, r).unwrap();
    let l3 = g.mse_loss(cyc, j).unwrap();
    let s = g.add(l1, l2).unwrap();
    let loss = g.add(s, l3).unwrap();
    g.backward(loss).unwrap();
    let gradient = net.vars.iter().flat_map(|&v| g.grad(v).unwrap().to_vec()).collect();
    Probe { value: g.values(loss)[0], gradient, kink_signature: g.kink_signature() }
}

#[test]
fn composed_networks_pass_gradient_check() {
    for (pool_kind, kernel_size) in [(PoolKind::Average, 1), (PoolKind::Max, 1), (PoolKind::Average, 3)] {
        let arch = ArchConfig { pool_kind, kernel_size, ..small_arch() };
        let mut w = NetworkWeights::<f64>::init(arch, 9).unwrap();
        // Nonzero biases so no hidden unit sits exactly at a kink.
        for t in w.params_mut() {
            if t.shape().len() == 1 {
                t.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 + 0.01 * i as f64);
            }
        }
        let raw = random_image(8, 8, 10);
        let jpeg = raw.map(|v| v.powf(1.0 / 2.2));
        let flat: Vec<f64> = w.named_params().iter().flat_map(|(_, t)| t.values().to_vec()).collect();
        let coords: Vec<usize> = (0..flat.len()).step_by(7).collect();
        let r = gradient_check(|p| composite_probe(&w, &raw, &jpeg, p), &flat, 1e-4, 1e-3, Some(&coords));
        assert!(r.passed(), "{pool_kind:?} k={kernel_size}: {r:?}");
        assert!(r.checked * 2 > coords.len(), "too many probes skipped: {r:?}");
    }
}
