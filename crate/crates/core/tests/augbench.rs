use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spgan_core::augbench::*;
use spgan_core::datagen::{generate_phantom, PhantomSpec};
use spgan_core::labelkit::{compose, extract_sketch, make_structure_mask, CannyThresholds};
use spgan_core::netcore::{FadeIn, Generator, GeneratorConfig};
use spgan_core::trainer::TrainConfig;
use spgan_core::Error;

/// Low-speckle phantoms whose regions are separable by intensity.
fn items(n_train: usize, n_test: usize) -> Vec<SegItem> {
    let texture = TrainConfig::preset("desk").unwrap().data.texture;
    (0..n_train + n_test)
        .map(|i| {
            let mut spec = PhantomSpec::new(500 + i as u64, 64, 2);
            spec.texture = texture.clone();
            let (label, image) = generate_phantom(&spec).unwrap();
            let sketch = extract_sketch(&image, CannyThresholds::Auto).unwrap();
            SegItem {
                id: format!("item_{i:03}"),
                split: if i < n_train { Split::Train } else { Split::Test },
                image,
                label,
                sketch,
            }
        })
        .collect()
}

fn tiny_generator(resolution: usize) -> Generator {
    let mut g = Generator::new(
        GeneratorConfig {
            num_classes: 3,
            num_residual_blocks: 1,
            base_channels: 4,
            max_channels: 16,
            high_channels: 4,
            base_resolution: resolution.min(64),
        },
        FadeIn::new(0.5, 2).unwrap(),
        3,
    )
    .unwrap();
    if resolution > 64 {
        g.grow_to_high(4).unwrap();
        while g.fade.advance() {}
    }
    g
}

fn quick() -> SegConfig {
    SegConfig {
        steps: 30,
        ..SegConfig::default()
    }
}

#[test]
fn firing_rate_matches_probability() {
    let (label, image) = generate_phantom(&PhantomSpec::new(1, 64, 2)).unwrap();
    let (label, image) = (label.downsample2().unwrap().downsample2().unwrap(), image.downsample2().unwrap().downsample2().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ranges = TradRanges::default();
    let n = 10_000;
    let fired = (0..n)
        .filter(|_| traditional_augment(&image, &label, 0.3, &ranges, &mut rng).unwrap().2.is_some())
        .count();
    // Two-sided 99% interval of Binomial(10⁴, 0.3).
    let sd = (n as f64 * 0.3 * 0.7).sqrt();
    assert!((fired as f64 - 3000.0).abs() <= 2.576 * sd, "fired {fired}");

    for _ in 0..200 {
        let (i, l, op) = traditional_augment(&image, &label, 0.0, &ranges, &mut rng).unwrap();
        assert!(op.is_none());
        assert_eq!((&i, &l), (&image, &label));
    }
    assert!(matches!(traditional_augment(&image, &label, 1.5, &ranges, &mut rng), Err(Error::Parameter(_))));
}

#[test]
fn traditional_ops_keep_pairs_aligned() {
    let (label, image) = generate_phantom(&PhantomSpec::new(2, 64, 2)).unwrap();
    let ops = [
        TradOp::Rotate { degrees: 90.0 },
        TradOp::Translate { dx: 0.1, dy: -0.05 },
        TradOp::Scale { factor: 1.1 },
        TradOp::Blur { sigma: 1.0 },
        TradOp::Gamma { gamma: 1.3 },
        TradOp::Noise { sigma: 0.02, seed: 4 },
    ];
    for op in ops {
        let (i, l) = apply_trad(&image, &label, op).unwrap();
        assert!(i.in_range(), "{op:?}");
        assert_eq!((i.width(), l.width()), (64, 64));
        // Geometry never invents classes.
        for c in 0..3u8 {
            if label.count(c) == 0 {
                assert_eq!(l.count(c), 0);
            }
        }
    }
    let (_, r) = apply_trad(&image, &label, TradOp::Rotate { degrees: 0.0 }).unwrap();
    assert_eq!(r, label);
    let (i, _) = apply_trad(&image, &label, TradOp::Gamma { gamma: 1.0 }).unwrap();
    assert!(i.data().iter().zip(image.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    // A translation by whole pixels moves the label exactly.
    let (_, t) = apply_trad(&image, &label, TradOp::Translate { dx: 4.0 / 64.0, dy: 0.0 }).unwrap();
    for y in 0..64 {
        for x in 4..64 {
            assert_eq!(t.get(x, y), label.get(x - 4, y));
        }
    }
}

#[test]
fn zero_edit_ranges_reduce_to_plain_synthesis() {
    let g = tiny_generator(64);
    let item = &items(1, 0)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let (image, edited, comp) = gan_augment(&item.label, &item.sketch, &EditRanges::zero(), &g, &mut rng).unwrap();
        assert_eq!(edited, item.label);
        let plain = compose(&item.label, &make_structure_mask(&item.label), &item.sketch).unwrap();
        assert_eq!(comp, plain);
        assert_eq!(image, synthesize_at(&g, &plain).unwrap());
    }
}

#[test]
fn nonzero_edit_ranges_change_the_label() {
    let g = tiny_generator(64);
    let item = &items(1, 0)[0];
    let ranges = EditRanges::default();
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_edit(&item.label, &ranges, &mut rng).unwrap();
        let edited = item.label.apply_edit(&op).unwrap();
        let changed = edited.grid().iter().zip(item.label.grid()).filter(|(a, b)| a != b).count();
        assert!(changed > 0, "seed {seed}: {op:?} changed nothing");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, edited, _) = gan_augment(&item.label, &item.sketch, &ranges, &g, &mut rng).unwrap();
    assert_ne!(edited, item.label);
    let empty = spgan_core::labelkit::LabelMap::background(64, 64, item.label.class_names().to_vec()).unwrap();
    assert!(random_edit(&empty, &ranges, &mut rng).is_none());
}

#[test]
fn half_resolution_labels_use_a_grown_generator() {
    let g = tiny_generator(128);
    assert_eq!(g.resolution(), 128);
    let item = &items(1, 0)[0];
    let comp = compose(&item.label, &make_structure_mask(&item.label), &item.sketch).unwrap();
    let out = synthesize_at(&g, &comp).unwrap();
    assert_eq!((out.width(), out.height()), (64, 64));
    assert!(out.in_range());
    let small = tiny_generator(64);
    let big = compose(
        &item.label.upscale(4).unwrap(),
        &make_structure_mask(&item.label.upscale(4).unwrap()),
        &item.sketch.upscale(4).unwrap(),
    )
    .unwrap();
    assert!(matches!(synthesize_at(&small, &big), Err(Error::Dimension(_))));
}

#[test]
fn experiment_uses_ceil_fraction_and_keeps_test_split_clean() {
    let data = items(10, 3);
    let g = tiny_generator(64);
    let policy = AugPolicy::new(AugMode::TradGan);
    let r = run_seg_experiment(&data, &policy, 0.2, 1, &quick(), Some(&g)).unwrap();
    assert_eq!(r.train_items_available, 10);
    assert_eq!(r.train_items_used, 2);
    assert_eq!(r.test_items, 3);
    let used: std::collections::BTreeSet<_> = r.audit.iter().filter(|a| a.action == "train").map(|a| a.id.clone()).collect();
    assert_eq!(used.len(), 2);
    assert!(r.audit_violations().is_empty());
    let evaluated = r.audit.iter().filter(|a| a.split == Split::Test).count();
    assert_eq!(evaluated, 3);
    assert!(r.audit.iter().filter(|a| a.split == Split::Test).all(|a| a.action == "evaluate"));
    assert!(r.gan_applied > 0 && r.trad_applied > 0);
    assert_eq!(r.dice.len(), 2);
    assert!(r.dice.iter().all(|d| (0.0..=1.0).contains(d)));

    for (f, want) in [(0.25, 3), (0.5, 5), (1.0, 10), (0.01, 1)] {
        let r = run_seg_experiment(&data, &AugPolicy::new(AugMode::None), f, 1, &SegConfig { steps: 1, ..quick() }, None).unwrap();
        assert_eq!(r.train_items_used, want, "fraction {f}");
        assert_eq!((r.trad_applied, r.gan_applied), (0, 0));
    }
}

#[test]
fn experiment_is_deterministic() {
    let data = items(6, 2);
    let g = tiny_generator(64);
    let policy = AugPolicy::new(AugMode::TradGan);
    let a = run_seg_experiment(&data, &policy, 1.0, 3, &quick(), Some(&g)).unwrap();
    let b = run_seg_experiment(&data, &policy, 1.0, 3, &quick(), Some(&g)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_seg_experiment(&data, &policy, 1.0, 4, &quick(), Some(&g)).unwrap();
    assert_ne!(a.dice, c.dice);
}

#[test]
fn experiment_rejects_bad_inputs() {
    let data = items(4, 2);
    let none = AugPolicy::new(AugMode::None);
    let cfg = SegConfig { steps: 1, ..quick() };
    for f in [0.0, -0.1, 1.5] {
        assert!(matches!(run_seg_experiment(&data, &none, f, 0, &cfg, None), Err(Error::Parameter(_))));
    }
    let mut bad_p = AugPolicy::new(AugMode::Trad);
    bad_p.p = 2.0;
    assert!(matches!(run_seg_experiment(&data, &bad_p, 1.0, 0, &cfg, None), Err(Error::Parameter(_))));
    assert!(matches!(run_seg_experiment(&data[..4], &none, 1.0, 0, &cfg, None), Err(Error::Data(_))));
    assert!(matches!(run_seg_experiment(&data, &AugPolicy::new(AugMode::TradGan), 1.0, 0, &cfg, None), Err(Error::Config(_))));
    let mut four = tiny_generator(64).config().clone();
    four.num_classes = 4;
    let g4 = Generator::new(four, FadeIn::new(0.5, 2).unwrap(), 1).unwrap();
    assert!(matches!(
        run_seg_experiment(&data, &AugPolicy::new(AugMode::TradGan), 1.0, 0, &cfg, Some(&g4)),
        Err(Error::Config(_))
    ));
    assert_eq!("trad_gan".parse::<AugMode>().unwrap(), AugMode::TradGan);
    assert!(matches!("mixup".parse::<AugMode>(), Err(Error::Parameter(_))));
}

#[test]
fn separable_phantoms_segment_well_without_augmentation() {
    let data = items(16, 6);
    let r = run_seg_experiment(&data, &AugPolicy::new(AugMode::None), 1.0, 0, &SegConfig::default(), None).unwrap();
    assert!(r.mean_dice >= 0.9, "dice {:?}", r.dice);
    assert!(r.dice.iter().all(|&d| d >= 0.9), "dice {:?}", r.dice);
}
