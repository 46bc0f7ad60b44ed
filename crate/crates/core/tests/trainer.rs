use spgan_core::datagen::{generate_phantom, PhantomSpec};
use spgan_core::fen::builtin_extractor;
use spgan_core::trainer::*;
use spgan_core::Error;

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::preset("desk").unwrap();
    c.name = "tiny".into();
    c.generator = GeneratorSettings {
        residual_blocks: 1,
        base_channels: 4,
        max_channels: 16,
        high_channels: 4,
    };
    c.discriminator.base_channels = 4;
    c.discriminator.max_channels = 16;
    c.discriminator.high_channels = 4;
    c.batch_size = 2;
    // A short fade so both modules saturate within a few epochs.
    c.alpha_step_divisor = 4;
    c.epochs = PhaseEpochs {
        phase1: 2,
        phase2: 5,
        phase3: 3,
        phase4: 1,
    };
    c.data.corpus_size = 3;
    c
}

fn corpus(c: &TrainConfig) -> TrainSet {
    let d = &c.data;
    let pairs: Vec<_> = (0..d.corpus_size)
        .map(|i| {
            let mut s = PhantomSpec::new(d.seed + i as u64, c.high_resolution(), d.num_structures);
            s.texture = d.texture.clone();
            generate_phantom(&s).unwrap()
        })
        .collect();
    TrainSet::from_pairs(&pairs, c.base_resolution, d.canny.clone()).unwrap()
}

fn trainer(c: &TrainConfig, set: &TrainSet) -> Trainer {
    Trainer::new(c.clone(), set.class_names.clone(), builtin_extractor(&c.fen).unwrap()).unwrap()
}

fn run_all(c: &TrainConfig) -> (Trainer, TrainSet, Vec<u64>) {
    let set = corpus(c);
    let mut t = trainer(c, &set);
    let mut sums = Vec::new();
    for phase in 1..=4 {
        sums.push(t.g.params().checksum());
        t.run_phase(phase, &set, &mut |_| Ok(())).unwrap();
    }
    sums.push(t.g.params().checksum());
    (t, set, sums)
}

#[test]
fn schedule_replays_cleanly() {
    let c = tiny_config();
    let (t, set, g_sums) = run_all(&c);
    let log = t.log();
    assert_eq!(log.phases(), vec![1, 2, 3, 4]);
    assert_eq!(log.audit(&c, t.batches_per_epoch(set.len())), Vec::<String>::new());

    // The generator is untouched while the discriminator grows.
    assert_eq!(g_sums[1], g_sums[2]);
    assert_ne!(g_sums[0], g_sums[1]);

    let alpha = |m: Module| -> Vec<(u8, f64, f64)> {
        log.events()
            .iter()
            .filter(|e| e.kind == EventKind::Alpha { module: m })
            .map(|e| (e.phase, e.alpha_g, e.alpha_d))
            .collect()
    };
    // Each update moves by exactly 1/4 until the cap; saturated epochs log nothing.
    let d_steps = alpha(Module::Discriminator);
    assert_eq!(d_steps, vec![(2, 0.0, 0.25), (2, 0.0, 0.5), (2, 0.0, 0.75), (2, 0.0, 1.0)]);
    let g_steps = alpha(Module::Generator);
    assert_eq!(g_steps, vec![(3, 0.25, 1.0), (3, 0.5, 1.0)]);
    assert_eq!(t.g.fade.alpha(), 0.5);

    // Alternation: D then G per batch in phases 1 and 4.
    for phase in [1, 4] {
        let steps: Vec<EventKind> = log
            .events()
            .iter()
            .filter(|e| e.phase == phase && matches!(e.kind, EventKind::StepD | EventKind::StepG))
            .map(|e| e.kind)
            .collect();
        assert!(!steps.is_empty());
        for pair in steps.chunks(2) {
            assert_eq!(pair, [EventKind::StepD, EventKind::StepG]);
        }
    }
}

#[test]
fn audit_flags_tampered_logs() {
    let mut c = tiny_config();
    c.epochs = PhaseEpochs {
        phase1: 1,
        phase2: 4,
        phase3: 2,
        phase4: 1,
    };
    let (t, set, _) = run_all(&c);
    let bpe = t.batches_per_epoch(set.len());
    assert!(t.log().audit(&c, bpe).is_empty());
    // The same log read against another schedule is a violation.
    let mut other = c.clone();
    other.alpha_step_divisor = 100;
    assert!(!t.log().audit(&other, bpe).is_empty());
    other = c.clone();
    other.epochs.phase2 = 5;
    assert!(!t.log().audit(&other, bpe).is_empty());
    other = c.clone();
    other.batch_size = 1;
    assert!(!t.log().audit(&other, 3).is_empty());
}

#[test]
fn phases_must_run_in_order() {
    let c = tiny_config();
    let set = corpus(&c);
    let mut t = trainer(&c, &set);
    for bad in [0, 2, 3, 4, 5] {
        assert!(matches!(t.run_phase(bad, &set, &mut |_| Ok(())), Err(Error::State(_))));
    }
    let mut other = set.clone();
    other.class_names.push("extra".into());
    assert!(matches!(t.run_phase(1, &other, &mut |_| Ok(())), Err(Error::Config(_))));
}

#[test]
fn checkpoints_resume_and_reproduce() {
    let mut c = tiny_config();
    c.epochs = PhaseEpochs {
        phase1: 2,
        phase2: 2,
        phase3: 2,
        phase4: 2,
    };
    c.checkpoint_every = 1;
    let set = corpus(&c);
    let mut t = trainer(&c, &set);
    let mut seen = Vec::new();
    t.run_phase(1, &set, &mut |ck| {
        seen.push(ck.clone());
        Ok(())
    })
    .unwrap();
    // Two periodic snapshots plus the end-of-phase one.
    assert_eq!(seen.len(), 3);
    assert!(seen[0].header.partial && !seen[2].header.partial);
    let fen = || builtin_extractor(&c.fen).unwrap();
    assert!(matches!(Trainer::from_checkpoint(&seen[0], fen()), Err(Error::State(_))));

    let ck = seen.pop().unwrap();
    assert_eq!(ck, t.checkpoint());
    let g = ck.generator().unwrap();
    assert_eq!(g.params().checksum(), t.g.params().checksum());
    for s in &set.low {
        assert_eq!(synthesize(&g, &s.composite).unwrap(), synthesize(&t.g, &s.composite).unwrap());
    }

    // Resuming continues exactly as an uninterrupted run.
    let mut resumed = Trainer::from_checkpoint(&ck, fen()).unwrap();
    for phase in 2..=4 {
        t.run_phase(phase, &set, &mut |_| Ok(())).unwrap();
        resumed.run_phase(phase, &set, &mut |_| Ok(())).unwrap();
    }
    assert_eq!(resumed.log(), t.log());
    assert_eq!(resumed.checkpoint(), t.checkpoint());
    assert!(ck.expect_classes(set.num_classes()).is_ok());
    assert!(matches!(ck.expect_classes(7), Err(Error::Config(_))));
}

#[test]
fn identical_runs_give_identical_logs() {
    let mut c = tiny_config();
    c.epochs = PhaseEpochs {
        phase1: 2,
        phase2: 1,
        phase3: 1,
        phase4: 1,
    };
    let (a, _, _) = run_all(&c);
    let (b, _, _) = run_all(&c);
    assert_eq!(a.log(), b.log());
    assert_eq!(a.g.params().checksum(), b.g.params().checksum());
    c.seed = 1;
    let (d, _, _) = run_all(&c);
    assert_ne!(a.g.params().checksum(), d.g.params().checksum());
}

#[test]
fn early_stop_ends_warm_up() {
    let mut c = tiny_config();
    c.epochs.phase1 = 40;
    c.early_stop_patience = 1;
    c.lr_g = 1e-12;
    let set = corpus(&c);
    let mut t = trainer(&c, &set);
    t.run_phase(1, &set, &mut |_| Ok(())).unwrap();
    assert!(t.epoch() < 40);
    assert!(t.log().events().iter().any(|e| e.kind == EventKind::EarlyStop));
    assert_eq!(t.log().audit(&c, t.batches_per_epoch(set.len())), Vec::<String>::new());
}

#[test]
fn presets_carry_published_settings() {
    let table = [("covid19", 10.0, 15, 30, [150, 50, 50, 200], 50), ("hip_joint", 10.0, 15, 120, [350, 100, 100, 400], 100), ("ovary", 5.0, 10, 30, [300, 50, 50, 200], 50)];
    for (name, lambda2, n, s, epochs, div) in table {
        let c = TrainConfig::preset(name).unwrap();
        assert_eq!(c.lambda1, 1.0);
        assert_eq!(c.lambda2, lambda2);
        assert_eq!(c.generator.residual_blocks, n);
        assert_eq!(c.discriminator.output_size, s);
        assert_eq!([c.epochs.phase1, c.epochs.phase2, c.epochs.phase3, c.epochs.phase4], epochs);
        assert_eq!(c.alpha_step_divisor, div);
        assert_eq!((c.batch_size, c.lr_g, c.lr_d), (4, 0.001, 0.0001));
        assert_eq!((c.alpha_max_g, c.alpha_max_d), (0.5, 1.0));
        assert_eq!((c.base_resolution, c.high_resolution()), (256, 512));
        c.validate().unwrap();
    }
    let desk = TrainConfig::preset("desk").unwrap();
    assert_eq!((desk.base_resolution, desk.high_resolution()), (64, 128));
    assert_eq!(desk.data.corpus_size, 8);
    assert!(matches!(TrainConfig::preset("lung"), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = tiny_config();
    let mut c = base.clone();
    c.batch_size = 0;
    assert!(c.validate().is_err());
    c = base.clone();
    c.base_resolution = 96;
    assert!(c.validate().is_err());
    c = base.clone();
    c.lambda2 = -1.0;
    assert!(c.validate().is_err());
    c = base.clone();
    c.alpha_max_g = 1.5;
    assert!(c.validate().is_err());
    c = base;
    c.fen.layer = "conv9".into();
    let set = corpus(&c);
    assert!(Trainer::new(c, set.class_names.clone(), builtin_extractor(&TrainConfig::preset("desk").unwrap().fen).unwrap()).is_err());
}
