#![allow(dead_code)]

use spgan_core::datagen::{class_names, generate_phantom, PhantomSpec};
use spgan_core::fen::builtin_extractor;
use spgan_core::labelkit::{extract_sketch, CannyThresholds, EdgeSketch, LabelMap};
use spgan_core::trainer::{Checkpoint, GeneratorSettings, PhaseEpochs, TrainConfig, Trainer};
use spgan_core::Image;

/// Desk preset shrunk so a network builds in milliseconds.
pub fn tiny_config(name: &str) -> TrainConfig {
    let mut c = TrainConfig::preset("desk").unwrap();
    c.name = name.into();
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
    c.alpha_step_divisor = 2;
    c.epochs = PhaseEpochs {
        phase1: 1,
        phase2: 1,
        phase3: 1,
        phase4: 1,
    };
    c.data.corpus_size = 2;
    c
}

/// Untrained checkpoint of a 3-class generator at 64 px.
pub fn tiny_checkpoint(name: &str) -> Checkpoint {
    let c = tiny_config(name);
    let fen = builtin_extractor(&c.fen).unwrap();
    Trainer::new(c, class_names(2), fen).unwrap().checkpoint()
}

pub fn phantom(seed: u64, resolution: usize) -> (LabelMap, Image, EdgeSketch) {
    let (label, image) = generate_phantom(&PhantomSpec::new(seed, resolution, 2)).unwrap();
    let sketch = extract_sketch(&image, CannyThresholds::Auto).unwrap();
    (label, image, sketch)
}
