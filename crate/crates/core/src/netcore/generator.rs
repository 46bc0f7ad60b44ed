use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fib::{Act, FadeInDown, FadeInUp};
use super::{FadeIn, Stage};
use crate::error::{bail, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Conv, Init, ParamId, ParamStore, Scope};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Layers are initialized from `N(0, 0.02²)`, as is usual for conditional GANs.
const INIT: Init = Init::Normal(0.02);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Label classes including background (`C`); the input has `C + 1` planes.
    pub num_classes: usize,
    pub num_residual_blocks: usize,
    /// Width after the 1×1 stem; doubles at each down-sampling block.
    pub base_channels: usize,
    pub max_channels: usize,
    /// Width of the fade-in blocks at the doubled resolution.
    pub high_channels: usize,
    /// Side length at [`Stage::Low`].
    pub base_resolution: usize,
}

impl GeneratorConfig {
    pub fn input_planes(&self) -> usize {
        self.num_classes + 1
    }

    fn width(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            bail!(Config, "generator needs at least 2 classes, got {}", self.num_classes);
        }
        if self.base_channels == 0 || self.high_channels == 0 || self.max_channels < self.base_channels {
            bail!(Config, "generator channel widths must be positive and max >= base");
        }
        if self.base_resolution == 0 || self.base_resolution % 8 != 0 {
            bail!(
                Config,
                "generator base resolution must be a positive multiple of 8, got {}",
                self.base_resolution
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
}

#[derive(Debug, Clone, PartialEq)]
struct Growth {
    down: FadeInDown,
    up: FadeInUp,
}

/// Encoder / residual trunk / decoder generator mapping one-hot composite
/// labels to a single-channel image in `[-1, 1]`.
///
/// The backbone has a 1×1 stem, three stride-2 down-sampling blocks, `n`
/// residual blocks, three stride-2 deconvolution blocks and a 1×1 head, all
/// followed by instance norm + ReLU except the tanh head. Growing adds a
/// [`FadeInDown`] in front of the stem and a [`FadeInUp`] after the trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    stage: Stage,
    pub fade: FadeIn,
    params: ParamStore,
    stem: Conv,
    downs: Vec<Conv>,
    blocks: Vec<ResBlock>,
    ups: Vec<Conv>,
    head: Conv,
    growth: Option<Growth>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, fade: FadeIn, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c0 = config.width(0);
        let stem = Conv::new(&mut p, &mut rng, "stem", config.input_planes(), c0, ConvGeom::new(1, 1, 0), true, INIT);
        let downs = (1..=3)
            .map(|i| {
                let name = alloc::format!("down{i}");
                Conv::new(&mut p, &mut rng, &name, config.width(i - 1), config.width(i), ConvGeom::new(3, 2, 1), true, INIT)
            })
            .collect();
        let cb = config.width(3);
        let blocks = (0..config.num_residual_blocks)
            .map(|i| ResBlock {
                conv1: Conv::new(&mut p, &mut rng, &alloc::format!("res{i}.conv1"), cb, cb, ConvGeom::new(3, 1, 1), true, INIT),
                conv2: Conv::new(&mut p, &mut rng, &alloc::format!("res{i}.conv2"), cb, cb, ConvGeom::new(3, 1, 1), true, INIT),
            })
            .collect();
        let ups = (1..=3)
            .map(|i| {
                let name = alloc::format!("up{i}");
                Conv::new_transposed(&mut p, &mut rng, &name, config.width(4 - i), config.width(3 - i), ConvGeom::new(3, 2, 1), INIT)
            })
            .collect();
        let head = Conv::new(&mut p, &mut rng, "head", c0, 1, ConvGeom::new(1, 1, 0), true, INIT);
        Ok(Self {
            config,
            stage: Stage::Low,
            fade,
            params: p,
            stem,
            downs,
            blocks,
            ups,
            head,
            growth: None,
        })
    }

    /// Rebuild from stored tensors; names and shapes must match the architecture.
    pub fn from_parts(
        config: GeneratorConfig,
        stage: Stage,
        fade: FadeIn,
        tensors: impl IntoIterator<Item = (String, Tensor)>,
    ) -> Result<Self> {
        let mut g = Self::new(config, fade, 0)?;
        if stage == Stage::High {
            g.grow_to_high(0)?;
        }
        g.params.load(tensors)?;
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn resolution(&self) -> usize {
        self.stage.resolution(self.config.base_resolution)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Parameters of the low-resolution backbone.
    pub fn backbone_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.stem.params().collect();
        ids.extend(self.downs.iter().flat_map(Conv::params));
        ids.extend(self.blocks.iter().flat_map(|b| b.conv1.params().chain(b.conv2.params())));
        ids.extend(self.ups.iter().flat_map(Conv::params));
        ids.extend(self.head.params());
        ids
    }

    /// Add the fade-in blocks for the doubled resolution. Backbone tensors
    /// are left untouched; new layers draw from `seed`.
    pub fn grow_to_high(&mut self, seed: u64) -> Result<()> {
        if self.stage == Stage::High {
            bail!(State, "generator is already at the high stage");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hc = self.config.high_channels;
        let down = FadeInDown::new(&mut self.params, &mut rng, "fibd", self.config.input_planes(), hc, Act::NormRelu);
        let up = FadeInUp::new(&mut self.params, &mut rng, "fibu", self.config.width(0), hc, 1);
        self.growth = Some(Growth { down, up });
        self.stage = Stage::High;
        Ok(())
    }

    /// Forward pass at the current fade-in alpha.
    pub fn forward(&self, tape: &mut Tape, x: Var, track: bool) -> Result<Var> {
        self.forward_alpha(tape, x, track, self.fade.alpha())
    }

    pub fn forward_alpha(&self, tape: &mut Tape, x: Var, track: bool, alpha: f64) -> Result<Var> {
        let xs = tape.shape(x);
        let res = self.resolution();
        if xs.c != self.config.input_planes() || xs.h != res || xs.w != res {
            bail!(
                Dimension,
                "generator at {:?} stage expects [n, {}, {res}, {res}], got {xs}",
                self.stage,
                self.config.input_planes()
            );
        }
        let mut s = Scope::new(tape, &self.params, track);
        match &self.growth {
            None => {
                let f = self.trunk(&mut s, x)?;
                self.low_head(&mut s, f)
            }
            Some(g) => {
                let low_in = g.down.forward(&mut s, x, alpha)?;
                let f = self.trunk(&mut s, low_in)?;
                let low_img = self.low_head(&mut s, f)?;
                g.up.forward(&mut s, f, low_img, alpha)
            }
        }
    }

    /// Stem through the last up-sampling block.
    fn trunk(&self, s: &mut Scope<'_>, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(s, x)?;
        h = norm_relu(s, h);
        for d in &self.downs {
            h = d.forward(s, h)?;
            h = norm_relu(s, h);
        }
        for b in &self.blocks {
            let r = b.conv1.forward(s, h)?;
            let r = norm_relu(s, r);
            let r = b.conv2.forward(s, r)?;
            let r = s.tape.instance_norm(r);
            h = s.tape.add(h, r)?;
        }
        for u in &self.ups {
            h = u.forward(s, h)?;
            h = norm_relu(s, h);
        }
        Ok(h)
    }

    fn low_head(&self, s: &mut Scope<'_>, f: Var) -> Result<Var> {
        let h = self.head.forward(s, f)?;
        Ok(s.tape.tanh(h))
    }

    /// Inference helper: run on a one-hot tensor without tracking gradients.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = self.forward(&mut tape, v, false)?;
        Ok(tape.value(y).clone())
    }
}

fn norm_relu(s: &mut Scope<'_>, x: Var) -> Var {
    let n = s.tape.instance_norm(x);
    s.tape.relu(n)
}
