use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::datagen::Texture;
use crate::error::{bail, Result};
use crate::fen::FenConfig;
use crate::labelkit::CannyThresholds;
use crate::losses::LossWeights;
use crate::netcore::{DiscNorm, DiscriminatorConfig, FadeIn, GeneratorConfig};
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSettings {
    pub residual_blocks: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub high_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSettings {
    pub output_size: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub high_channels: usize,
    pub norm: DiscNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEpochs {
    pub phase1: u32,
    pub phase2: u32,
    pub phase3: u32,
    pub phase4: u32,
}

impl PhaseEpochs {
    pub fn get(&self, phase: u8) -> u32 {
        match phase {
            1 => self.phase1,
            2 => self.phase2,
            3 => self.phase3,
            _ => self.phase4,
        }
    }
}

/// Phantom corpus used when no clinical data is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub corpus_size: usize,
    pub num_structures: usize,
    pub seed: u64,
    pub texture: Texture,
    pub canny: CannyThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub name: String,
    /// Side length of the low stage; the high stage doubles it.
    pub base_resolution: usize,
    pub generator: GeneratorSettings,
    pub discriminator: DiscriminatorSettings,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: PhaseEpochs,
    /// Alpha grows by `1 / alpha_step_divisor` per epoch while ramping.
    pub alpha_step_divisor: u32,
    pub alpha_max_g: f64,
    pub alpha_max_d: f64,
    /// Save a checkpoint every this many epochs (0: phase ends only).
    pub checkpoint_every: u32,
    /// Stop phase 1 after this many epochs without L1 improvement (0: never).
    pub early_stop_patience: u32,
    pub seed: u64,
    pub fen: FenConfig,
    pub data: DataSettings,
}

impl TrainConfig {
    pub const PRESETS: [&'static str; 4] = ["covid19", "hip_joint", "ovary", "desk"];

    /// Published settings: λ1 = 1 throughout; λ2, residual blocks and patch
    /// grid are 10/15/30² (COVID-19), 10/15/120² (hip joint) and 5/10/30²
    /// (ovary); warm-up epochs 150/350/300 and fine-tune epochs 200/400/200.
    pub fn preset(name: &str) -> Result<Self> {
        let dataset = |name: &str, lambda2: f64, n: usize, s: usize, epochs: PhaseEpochs, divisor: u32| Self {
            name: name.into(),
            base_resolution: 256,
            generator: GeneratorSettings {
                residual_blocks: n,
                base_channels: 64,
                max_channels: 512,
                high_channels: 32,
            },
            discriminator: DiscriminatorSettings {
                output_size: s,
                base_channels: 64,
                max_channels: 512,
                high_channels: 32,
                norm: DiscNorm::Instance,
            },
            batch_size: 4,
            lr_g: 0.001,
            lr_d: 0.0001,
            beta1: 0.5,
            beta2: 0.999,
            lambda1: 1.0,
            lambda2,
            epochs,
            alpha_step_divisor: divisor,
            alpha_max_g: 0.5,
            alpha_max_d: 1.0,
            checkpoint_every: 50,
            early_stop_patience: 0,
            seed: 0,
            fen: FenConfig::default(),
            data: DataSettings {
                corpus_size: 64,
                num_structures: 2,
                seed: 0,
                texture: Texture::default(),
                canny: CannyThresholds::Auto,
            },
        };
        let e = |phase1, phase2, phase3, phase4| PhaseEpochs {
            phase1,
            phase2,
            phase3,
            phase4,
        };
        Ok(match name {
            "covid19" => dataset("covid19", 10.0, 15, 30, e(150, 50, 50, 200), 50),
            "hip_joint" => dataset("hip_joint", 10.0, 15, 120, e(350, 100, 100, 400), 100),
            "ovary" => dataset("ovary", 5.0, 10, 30, e(300, 50, 50, 200), 50),
            "desk" => Self::desk(),
            other => bail!(Config, "unknown preset {other:?}; available: {}", Self::PRESETS.join(", ")),
        })
    }

    fn desk() -> Self {
        let mut c = Self::preset("covid19").expect("builtin preset");
        c.name = "desk".into();
        c.base_resolution = 64;
        c.generator = GeneratorSettings {
            residual_blocks: 2,
            base_channels: 8,
            max_channels: 64,
            high_channels: 8,
        };
        c.discriminator = DiscriminatorSettings {
            output_size: 6,
            base_channels: 8,
            max_channels: 64,
            high_channels: 8,
            norm: DiscNorm::Instance,
        };
        c.lambda1 = 1.0;
        c.lambda2 = 1.0;
        c.epochs = PhaseEpochs {
            phase1: 150,
            phase2: 50,
            phase3: 50,
            phase4: 100,
        };
        c.checkpoint_every = 0;
        c.data = DataSettings {
            corpus_size: 8,
            num_structures: 2,
            seed: 1000,
            texture: Texture {
                grain: 1.5,
                speckle: 0.04,
                ..Texture::default()
            },
            canny: CannyThresholds::Auto,
        };
        c
    }

    pub fn high_resolution(&self) -> usize {
        2 * self.base_resolution
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda1, self.lambda2)
    }

    pub fn generator_config(&self, num_classes: usize) -> GeneratorConfig {
        GeneratorConfig {
            num_classes,
            num_residual_blocks: self.generator.residual_blocks,
            base_channels: self.generator.base_channels,
            max_channels: self.generator.max_channels,
            high_channels: self.generator.high_channels,
            base_resolution: self.base_resolution,
        }
    }

    pub fn discriminator_config(&self, num_classes: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            num_classes,
            base_channels: self.discriminator.base_channels,
            max_channels: self.discriminator.max_channels,
            high_channels: self.discriminator.high_channels,
            base_resolution: self.base_resolution,
            output_size: self.discriminator.output_size,
            norm: self.discriminator.norm,
        }
    }

    pub fn adam_g(&self) -> AdamConfig {
        AdamConfig::new(self.lr_g, self.beta1, self.beta2)
    }

    pub fn adam_d(&self) -> AdamConfig {
        AdamConfig::new(self.lr_d, self.beta1, self.beta2)
    }

    pub fn fade_g(&self) -> Result<FadeIn> {
        FadeIn::new(self.alpha_max_g, self.alpha_step_divisor)
    }

    pub fn fade_d(&self) -> Result<FadeIn> {
        FadeIn::new(self.alpha_max_d, self.alpha_step_divisor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be positive");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            bail!(Config, "learning rates must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            bail!(Config, "Adam betas must lie in [0, 1)");
        }
        self.loss_weights().map_err(|e| crate::Error::Config(alloc::format!("{e}")))?;
        self.fade_g()?;
        self.fade_d()?;
        if self.base_resolution % 64 != 0 {
            bail!(Config, "base_resolution must be a multiple of 64, got {}", self.base_resolution);
        }
        self.generator_config(2).validate()?;
        crate::netcore::layer_plan(self.base_resolution, self.discriminator.output_size)?;
        Ok(())
    }
}
