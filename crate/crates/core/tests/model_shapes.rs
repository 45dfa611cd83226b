use lumenseg::model::{build, ArchConfig, Architecture, LayerKind};
use lumenseg::Error;
use lumenseg::Tensor;

fn ramp(size: usize) -> Tensor {
    Tensor::from_fn(&[1, 1, size, size], |i| (i % 97) as f64 / 97.0)
}

#[test]
fn reduced_vgg_preserves_spatial_dims() {
    for size in [32, 64, 96] {
        let g = build(&ArchConfig::vgg16_unet(size).with_base(4)).unwrap();
        let y = g.forward(&ramp(size)).unwrap();
        assert_eq!(y.shape(), &[1, 1, size, size]);
        assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn simple_unet_preserves_spatial_dims() {
    let g = build(&ArchConfig::simple_unet(64).with_base(4)).unwrap();
    let y = g.forward(&ramp(64)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 64, 64]);
}

#[test]
fn batch_forward_matches_single() {
    let g = build(&ArchConfig::vgg16_unet(32).with_base(2).with_seed(3)).unwrap();
    let a = ramp(32);
    let b = Tensor::from_fn(&[1, 1, 32, 32], |i| ((i * 7) % 31) as f64 / 31.0);
    let mut both = a.data().to_vec();
    both.extend_from_slice(b.data());
    let y = g.forward(&Tensor::new(vec![2, 1, 32, 32], both).unwrap()).unwrap();
    let ya = g.forward(&a).unwrap();
    let yb = g.forward(&b).unwrap();
    assert_eq!(&y.data()[..1024], ya.data());
    assert_eq!(&y.data()[1024..], yb.data());
}

#[test]
fn wrong_input_size_is_rejected() {
    let g = build(&ArchConfig::vgg16_unet(64).with_base(2)).unwrap();
    assert!(g.forward(&ramp(32)).is_err());
}

#[test]
fn sizes_not_divisible_by_32_rejected() {
    for arch in [Architecture::Vgg16Unet, Architecture::SimpleUnet] {
        let cfg = ArchConfig {
            arch,
            ..ArchConfig::vgg16_unet(100)
        };
        assert!(matches!(build(&cfg), Err(Error::Divisibility { required: 32, .. })));
    }
}

#[test]
fn every_concat_meets_its_skip_at_equal_resolution() {
    let g = build(&ArchConfig::vgg16_unet(224)).unwrap();
    let mut concats = 0;
    for l in g.layers() {
        if let LayerKind::Concat { skip } = l.kind {
            let s = &g.layers()[skip];
            let prev = &g.layers()[l.id - 1];
            assert_eq!((s.output.1, s.output.2), (prev.output.1, prev.output.2));
            assert_eq!(l.output.0, s.output.0 + prev.output.0);
            concats += 1;
        }
    }
    assert_eq!(concats, 5);
}

#[test]
fn parameter_counts_order() {
    let vgg5 = build(&ArchConfig::vgg16_unet(224).with_kernel(5)).unwrap();
    let vgg3 = build(&ArchConfig::vgg16_unet(224)).unwrap();
    let simple = build(&ArchConfig::simple_unet(224)).unwrap();
    assert!(vgg5.param_count() > 100_000_000);
    assert!(simple.param_count() < vgg3.param_count());
    assert!(vgg3.param_count() < vgg5.param_count());
    // encoder alone at k3 with a one-channel input, counted by hand
    let widths = [(1, 64), (64, 64), (64, 128), (128, 128), (128, 256), (256, 256), (256, 256),
        (256, 512), (512, 512), (512, 512), (512, 512), (512, 512), (512, 512)];
    let by_hand: usize = widths.iter().map(|(i, o)| i * o * 9 + o + 1).sum();
    let enc: usize = vgg3
        .params()
        .iter()
        .filter(|(_, n, _)| n.starts_with("enc"))
        .map(|(_, _, t)| t.numel())
        .sum();
    assert_eq!(enc, by_hand);
}
