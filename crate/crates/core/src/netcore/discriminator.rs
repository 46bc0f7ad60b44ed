use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fib::{Act, FadeInDown};
use super::{FadeIn, Stage};
use crate::error::{bail, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Conv, Init, ParamId, ParamStore, Scope};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const INIT: Init = Init::Normal(0.02);
const LEAKY_SLOPE: f64 = 0.2;

/// Normalization applied after layers 2–4 of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscNorm {
    Instance,
    /// No normalization; every score then depends only on its receptive field.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub num_classes: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub high_channels: usize,
    pub base_resolution: usize,
    /// Side of the square patch-score grid.
    pub output_size: usize,
    pub norm: DiscNorm,
}

impl DiscriminatorConfig {
    /// One-hot composite planes plus the image channel.
    pub fn input_planes(&self) -> usize {
        self.num_classes + 2
    }

    fn width(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }
}

/// Five-layer geometry reaching an `output_size`² grid from `resolution`².
///
/// The first `d` layers are 4×4 stride-2 convolutions, where `d ≤ 4` is
/// the largest halving count that keeps the map at least `output_size`
/// wide; the remaining middle layers are size-preserving 3×3 convolutions
/// and the last layer's kernel is solved so the grid lands on the target.
/// For a 256 input this yields:
///
/// | output | layer plan (kernel/stride)          |
/// |--------|-------------------------------------|
/// | 1      | 4/2 ×4, 18/1                        |
/// | 30     | 4/2 ×3, 3/1, 5/1                    |
/// | 60     | 4/2 ×2, 3/1 ×2, 7/1                 |
/// | 120    | 4/2, 3/1 ×3, 11/1                   |
/// | 256    | 3/1 ×4, 3/1                         |
pub fn layer_plan(resolution: usize, output_size: usize) -> Result<[ConvGeom; 5]> {
    if output_size == 0 || output_size > resolution {
        bail!(
            Config,
            "patch grid {output_size} unreachable from resolution {resolution}"
        );
    }
    let halvings = (0..=4usize)
        .rev()
        .find(|&d| resolution % (1 << d) == 0 && (resolution >> d) >= output_size)
        .unwrap_or(0);
    let mut plan = [ConvGeom::new(3, 1, 1); 5];
    for g in plan.iter_mut().take(halvings) {
        *g = ConvGeom::new(4, 2, 1);
    }
    let last_in = resolution >> halvings;
    plan[4] = ConvGeom::new(last_in + 3 - output_size, 1, 1);
    Ok(plan)
}

/// Receptive field of one score unit, in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub size: usize,
    pub jump: usize,
    /// Input coordinate of the first covered pixel of unit 0 (may be negative).
    pub offset: isize,
}

impl ReceptiveField {
    /// Inclusive input range `[lo, hi]` covered by score index `i`, clipped to the frame.
    pub fn span(&self, i: usize, len: usize) -> (usize, usize) {
        let lo = (i * self.jump) as isize + self.offset;
        let hi = lo + self.size as isize - 1;
        (lo.max(0) as usize, hi.min(len as isize - 1).max(0) as usize)
    }
}

pub fn receptive_field(plan: &[ConvGeom]) -> ReceptiveField {
    let (mut size, mut jump, mut offset) = (1usize, 1usize, 0isize);
    for g in plan {
        size += (g.kernel - 1) * jump;
        offset -= (g.pad * jump) as isize;
        jump *= g.stride;
    }
    ReceptiveField { size, jump, offset }
}

/// Grid of raw patch logits, `[n, 1, s, s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScores(pub Tensor);

/// PatchGAN discriminator scoring `(composite label, image)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    stage: Stage,
    pub fade: FadeIn,
    params: ParamStore,
    layers: Vec<Conv>,
    growth: Option<FadeInDown>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, fade: FadeIn, seed: u64) -> Result<Self> {
        if config.num_classes < 2 || config.base_channels == 0 || config.high_channels == 0 {
            bail!(Config, "discriminator needs >= 2 classes and positive widths");
        }
        let plan = layer_plan(config.base_resolution, config.output_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut cin = config.input_planes();
        let mut layers = Vec::with_capacity(5);
        for (i, g) in plan.iter().enumerate() {
            let cout = if i == 4 { 1 } else { config.width(i) };
            layers.push(Conv::new(&mut p, &mut rng, &alloc::format!("layer{}", i + 1), cin, cout, *g, true, INIT));
            cin = cout;
        }
        Ok(Self {
            config,
            stage: Stage::Low,
            fade,
            params: p,
            layers,
            growth: None,
        })
    }

    pub fn from_parts(
        config: DiscriminatorConfig,
        stage: Stage,
        fade: FadeIn,
        tensors: impl IntoIterator<Item = (String, Tensor)>,
    ) -> Result<Self> {
        let mut d = Self::new(config, fade, 0)?;
        if stage == Stage::High {
            d.grow_to_high(0)?;
        }
        d.params.load(tensors)?;
        Ok(d)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
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

    pub fn plan(&self) -> Vec<ConvGeom> {
        self.layers.iter().map(|l| l.geom).collect()
    }

    pub fn num_conv_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn backbone_params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Conv::params).collect()
    }

    pub fn grow_to_high(&mut self, seed: u64) -> Result<()> {
        if self.stage == Stage::High {
            bail!(State, "discriminator is already at the high stage");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.growth = Some(FadeInDown::new(
            &mut self.params,
            &mut rng,
            "fibd",
            self.config.input_planes(),
            self.config.high_channels,
            Act::Leaky(LEAKY_SLOPE),
        ));
        self.stage = Stage::High;
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, label: Var, image: Var, track: bool) -> Result<Var> {
        self.forward_alpha(tape, label, image, track, self.fade.alpha())
    }

    pub fn forward_alpha(&self, tape: &mut Tape, label: Var, image: Var, track: bool, alpha: f64) -> Result<Var> {
        let (ls, is) = (tape.shape(label), tape.shape(image));
        let res = self.resolution();
        if ls.c != self.config.num_classes + 1 || is.c != 1 || ls.h != res || ls.w != res || is.h != res || is.w != res || ls.n != is.n {
            bail!(
                Dimension,
                "discriminator at {res}² expects label [n, {}, {res}, {res}] and image [n, 1, {res}, {res}], got {ls} and {is}",
                self.config.num_classes + 1
            );
        }
        let x = tape.concat(label, image)?;
        let mut s = Scope::new(tape, &self.params, track);
        let mut h = match &self.growth {
            Some(fib) => fib.forward(&mut s, x, alpha)?,
            None => x,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&mut s, h)?;
            if i == 4 {
                break;
            }
            if i > 0 && self.config.norm == DiscNorm::Instance {
                h = s.tape.instance_norm(h);
            }
            h = s.tape.leaky_relu(h, LEAKY_SLOPE);
        }
        Ok(h)
    }

    pub fn score(&self, label: &Tensor, image: &Tensor) -> Result<PatchScores> {
        let mut tape = Tape::new();
        let l = tape.constant(label.clone());
        let i = tape.constant(image.clone());
        let y = self.forward(&mut tape, l, i, false)?;
        Ok(PatchScores(tape.value(y).clone()))
    }
}
