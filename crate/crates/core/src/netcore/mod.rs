//! Generator, PatchGAN discriminator and fade-in blocks for two-stage
//! progressive growth.

mod discriminator;
mod fib;
mod generator;

pub use discriminator::{layer_plan, receptive_field, DiscNorm, Discriminator, DiscriminatorConfig, PatchScores};
pub use fib::{fib_blend, fib_down, fib_up, FadeInDown, FadeInUp};
pub use generator::{Generator, GeneratorConfig};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Resolution stage of a network: `Low` is the backbone, `High` doubles it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Low,
    High,
}

impl Stage {
    pub fn resolution(self, base: usize) -> usize {
        match self {
            Stage::Low => base,
            Stage::High => 2 * base,
        }
    }
}

/// Fade-in weight schedule: `alpha = min(steps / step_divisor, alpha_max)`.
///
/// Alpha is derived from an integer step counter so a ramp of `1/50`
/// increments lands on its maximum exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadeIn {
    pub alpha_max: f64,
    pub step_divisor: u32,
    pub steps: u32,
}

impl FadeIn {
    pub fn new(alpha_max: f64, step_divisor: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_max) {
            bail!(Parameter, "alpha_max must lie in [0, 1], got {alpha_max}");
        }
        if step_divisor == 0 {
            bail!(Parameter, "alpha step divisor must be positive");
        }
        Ok(Self {
            alpha_max,
            step_divisor,
            steps: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        (f64::from(self.steps) / f64::from(self.step_divisor)).min(self.alpha_max)
    }

    pub fn step(&self) -> f64 {
        1.0 / f64::from(self.step_divisor)
    }

    pub fn at_max(&self) -> bool {
        self.alpha() >= self.alpha_max
    }

    /// Advance one step; returns whether alpha changed.
    pub fn advance(&mut self) -> bool {
        if self.at_max() {
            return false;
        }
        self.steps += 1;
        true
    }
}
