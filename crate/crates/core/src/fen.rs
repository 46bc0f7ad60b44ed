//! Frozen feature-extraction networks used by the feature loss and the
//! perceptual metrics.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::kernels::ConvGeom;
use crate::nn::{Conv, Init, ParamStore, Scope};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// A frozen multi-stage convolutional feature extractor over single-channel
/// images in `[-1, 1]`. Gradients flow through it but never into it.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Names of the stages returned by [`FeatureExtractor::stages`], shallow first.
    fn stage_names(&self) -> &[&'static str];

    /// Feature maps at every stage for a `[n, 1, h, w]` image.
    fn stages(&self, tape: &mut Tape, image: Var) -> Result<Vec<Var>>;

    fn stage_index(&self, layer: &str) -> Result<usize> {
        match self.stage_names().iter().position(|n| *n == layer) {
            Some(i) => Ok(i),
            None => bail!(
                Config,
                "feature extractor {} has no layer {layer:?}; available: {}",
                self.name(),
                self.stage_names().join(", ")
            ),
        }
    }

    /// Feature map at the named stage.
    fn features(&self, tape: &mut Tape, image: Var, layer: &str) -> Result<Var> {
        let i = self.stage_index(layer)?;
        let mut all = self.stages(tape, image)?;
        Ok(all.swap_remove(i))
    }
}

/// Selection of a feature backend, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FenConfig {
    /// `random_conv` or `resnet50`.
    pub backend: String,
    /// Stage used by the feature loss.
    pub layer: String,
    pub seed: u64,
    /// Weights file for pretrained backends.
    #[serde(default)]
    pub weights: Option<String>,
}

impl Default for FenConfig {
    fn default() -> Self {
        Self {
            backend: "random_conv".into(),
            layer: "conv4".into(),
            seed: 7,
            weights: None,
        }
    }
}

/// Build a backend that needs no external weights.
pub fn builtin_extractor(config: &FenConfig) -> Result<Box<dyn FeatureExtractor>> {
    let fen: Box<dyn FeatureExtractor> = match config.backend.as_str() {
        "random_conv" => Box::new(RandomConvFen::new(config.seed)),
        "resnet50" => bail!(
            Config,
            "feature backend resnet50 needs pretrained weights (fen.weights); none were loaded"
        ),
        other => bail!(Config, "unknown feature backend {other:?}; expected random_conv or resnet50"),
    };
    fen.stage_index(&config.layer)?;
    Ok(fen)
}

const RANDOM_WIDTHS: [usize; 4] = [16, 32, 64, 128];
/// Smallest side leaving a 1×1 map after four unpadded stride-2 stages.
const RANDOM_MIN_SIDE: usize = 31;

/// Four stride-2 3×3 conv + ReLU stages with seeded He-normal weights.
/// Convolutions are unpadded, so a constant image has constant features.
///
/// Stand-in for a pretrained classifier: random ReLU features are known to
/// carry texture statistics well enough for moment matching and for
/// relative comparisons of image sets, though not for absolute scores.
#[derive(Debug, Clone)]
pub struct RandomConvFen {
    params: ParamStore,
    convs: Vec<Conv>,
}

impl RandomConvFen {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut cin = 1;
        let convs = RANDOM_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv::new(&mut params, &mut rng, &alloc::format!("conv{}", i + 1), cin, w, ConvGeom::new(3, 2, 0), true, Init::He);
                cin = w;
                c
            })
            .collect();
        Self { params, convs }
    }
}

impl FeatureExtractor for RandomConvFen {
    fn name(&self) -> &str {
        "random_conv"
    }

    fn stage_names(&self) -> &[&'static str] {
        &["conv1", "conv2", "conv3", "conv4"]
    }

    fn stages(&self, tape: &mut Tape, image: Var) -> Result<Vec<Var>> {
        check_image(tape, image, RANDOM_MIN_SIDE)?;
        let mut s = Scope::new(tape, &self.params, false);
        let mut h = image;
        let mut out = Vec::with_capacity(4);
        for c in &self.convs {
            h = c.forward(&mut s, h)?;
            h = s.tape.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}

fn check_image(tape: &Tape, image: Var, min_side: usize) -> Result<()> {
    let s = tape.shape(image);
    if s.c != 1 || s.h < min_side || s.w < min_side {
        bail!(Dimension, "feature extractor expects [n, 1, h, w] with h, w >= {min_side}, got {s}");
    }
    Ok(())
}

/// Frozen batch norm folded into a per-channel affine map.
#[derive(Debug, Clone)]
struct FoldedNorm {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv,
    bn1: FoldedNorm,
    conv2: Conv,
    bn2: FoldedNorm,
    conv3: Conv,
    bn3: FoldedNorm,
    downsample: Option<(Conv, FoldedNorm)>,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
const BN_EPS: f64 = 1e-5;

/// 50-layer bottleneck residual network with torchvision parameter names.
///
/// Grayscale input is replicated to three channels and normalized with the
/// ImageNet statistics the published weights expect. Stages `conv2`..`conv5`
/// are the outputs of `layer1`..`layer4`.
#[derive(Debug, Clone)]
pub struct ResNet50Fen {
    params: ParamStore,
    stem: Conv,
    stem_bn: FoldedNorm,
    layers: Vec<Vec<Bottleneck>>,
}

impl ResNet50Fen {
    pub const BLOCKS: [usize; 4] = [3, 4, 6, 3];

    /// Build from named tensors (batch-norm running statistics included).
    /// A missing or misshapen tensor is a configuration error.
    pub fn from_tensors(mut get: impl FnMut(&str) -> Option<Tensor>) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut conv = |params: &mut ParamStore, name: &str, cin: usize, cout: usize, geom: ConvGeom| -> Result<Conv> {
            let key = alloc::format!("{name}.weight");
            let want = Shape::new(cout, cin, geom.kernel, geom.kernel);
            let Some(t) = get(&key) else {
                bail!(Config, "resnet50 weights missing {key}");
            };
            if t.shape() != want {
                bail!(Config, "resnet50 tensor {key} has shape {}, expected {want}", t.shape());
            }
            let weight = params.add(&key, t);
            Ok(Conv {
                weight,
                bias: None,
                geom,
                transposed: false,
                output_pad: 0,
            })
        };
        // Split borrows: norms read through a second closure over the same getter.
        let mut pending_norms: Vec<(String, usize)> = Vec::new();
        let stem = conv(&mut params, "conv1", 3, 64, ConvGeom::new(7, 2, 3))?;
        pending_norms.push(("bn1".into(), 64));
        let mut layer_convs = Vec::new();
        let mut cin = 64;
        for (li, &blocks) in Self::BLOCKS.iter().enumerate() {
            let width = 64 << li;
            let cout = width * 4;
            let mut row = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 && li > 0 { 2 } else { 1 };
                let p = alloc::format!("layer{}.{b}", li + 1);
                let c1 = conv(&mut params, &alloc::format!("{p}.conv1"), cin, width, ConvGeom::new(1, 1, 0))?;
                let c2 = conv(&mut params, &alloc::format!("{p}.conv2"), width, width, ConvGeom::new(3, stride, 1))?;
                let c3 = conv(&mut params, &alloc::format!("{p}.conv3"), width, cout, ConvGeom::new(1, 1, 0))?;
                pending_norms.push((alloc::format!("{p}.bn1"), width));
                pending_norms.push((alloc::format!("{p}.bn2"), width));
                pending_norms.push((alloc::format!("{p}.bn3"), cout));
                let ds = if b == 0 {
                    let d = conv(&mut params, &alloc::format!("{p}.downsample.0"), cin, cout, ConvGeom::new(1, stride, 0))?;
                    pending_norms.push((alloc::format!("{p}.downsample.1"), cout));
                    Some(d)
                } else {
                    None
                };
                row.push((c1, c2, c3, ds));
                cin = cout;
            }
            layer_convs.push(row);
        }
        drop(conv);
        let mut norms = alloc::collections::VecDeque::new();
        for (name, c) in pending_norms {
            let mut vec = |field: &str| -> Result<Vec<f64>> {
                let key = alloc::format!("{name}.{field}");
                match get(&key) {
                    Some(t) if t.data().len() == c => Ok(t.into_data()),
                    Some(t) => bail!(Config, "resnet50 tensor {key} has {} values, expected {c}", t.data().len()),
                    None => bail!(Config, "resnet50 weights missing {key}"),
                }
            };
            let (g, b, m, v) = (vec("weight")?, vec("bias")?, vec("running_mean")?, vec("running_var")?);
            let scale: Vec<f64> = g.iter().zip(&v).map(|(g, v)| g / libm::sqrt(v + BN_EPS)).collect();
            let shift = b.iter().zip(&m).zip(&scale).map(|((b, m), s)| b - m * s).collect();
            norms.push_back(FoldedNorm { scale, shift });
        }
        let stem_bn = norms.pop_front().expect("stem norm");
        let layers = layer_convs
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(conv1, conv2, conv3, ds)| {
                        let bn1 = norms.pop_front().expect("norm");
                        let bn2 = norms.pop_front().expect("norm");
                        let bn3 = norms.pop_front().expect("norm");
                        let downsample = ds.map(|d| (d, norms.pop_front().expect("norm")));
                        Bottleneck {
                            conv1,
                            bn1,
                            conv2,
                            bn2,
                            conv3,
                            bn3,
                            downsample,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            params,
            stem,
            stem_bn,
            layers,
        })
    }

    /// Every tensor name and shape the backend expects.
    pub fn expected_tensors() -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let norm = |out: &mut Vec<(String, Vec<usize>)>, name: &str, c: usize| {
            for f in ["weight", "bias", "running_mean", "running_var"] {
                out.push((alloc::format!("{name}.{f}"), alloc::vec![c]));
            }
        };
        out.push(("conv1.weight".to_string(), alloc::vec![64, 3, 7, 7]));
        norm(&mut out, "bn1", 64);
        let mut cin = 64;
        for (li, &blocks) in Self::BLOCKS.iter().enumerate() {
            let width = 64 << li;
            let cout = width * 4;
            for b in 0..blocks {
                let p = alloc::format!("layer{}.{b}", li + 1);
                out.push((alloc::format!("{p}.conv1.weight"), alloc::vec![width, cin, 1, 1]));
                norm(&mut out, &alloc::format!("{p}.bn1"), width);
                out.push((alloc::format!("{p}.conv2.weight"), alloc::vec![width, width, 3, 3]));
                norm(&mut out, &alloc::format!("{p}.bn2"), width);
                out.push((alloc::format!("{p}.conv3.weight"), alloc::vec![cout, width, 1, 1]));
                norm(&mut out, &alloc::format!("{p}.bn3"), cout);
                if b == 0 {
                    out.push((alloc::format!("{p}.downsample.0.weight"), alloc::vec![cout, cin, 1, 1]));
                    norm(&mut out, &alloc::format!("{p}.downsample.1"), cout);
                }
                cin = cout;
            }
        }
        out
    }
}

fn affine(s: &mut Scope<'_>, x: Var, n: &FoldedNorm) -> Result<Var> {
    s.tape.channel_affine(x, &n.scale, &n.shift)
}

impl FeatureExtractor for ResNet50Fen {
    fn name(&self) -> &str {
        "resnet50"
    }

    fn stage_names(&self) -> &[&'static str] {
        &["conv2", "conv3", "conv4", "conv5"]
    }

    fn stages(&self, tape: &mut Tape, image: Var) -> Result<Vec<Var>> {
        check_image(tape, image, 16)?;
        let rgb = {
            let two = tape.concat(image, image)?;
            tape.concat(two, image)?
        };
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 0.5 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(&IMAGENET_STD).map(|(m, s)| (0.5 - m) / s).collect();
        let x = tape.channel_affine(rgb, &scale, &shift)?;
        let mut s = Scope::new(tape, &self.params, false);
        let mut h = self.stem.forward(&mut s, x)?;
        h = affine(&mut s, h, &self.stem_bn)?;
        h = s.tape.relu(h);
        h = s.tape.max_pool(h, ConvGeom::new(3, 2, 1))?;
        let mut out = Vec::with_capacity(4);
        for row in &self.layers {
            for b in row {
                let mut r = b.conv1.forward(&mut s, h)?;
                r = affine(&mut s, r, &b.bn1)?;
                r = s.tape.relu(r);
                r = b.conv2.forward(&mut s, r)?;
                r = affine(&mut s, r, &b.bn2)?;
                r = s.tape.relu(r);
                r = b.conv3.forward(&mut s, r)?;
                r = affine(&mut s, r, &b.bn3)?;
                let skip = match &b.downsample {
                    Some((d, n)) => {
                        let t = d.forward(&mut s, h)?;
                        affine(&mut s, t, n)?
                    }
                    None => h,
                };
                let sum = s.tape.add(r, skip)?;
                h = s.tape.relu(sum);
            }
            out.push(h);
        }
        Ok(out)
    }
}

/// Per-channel spatial mean and population variance of one feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Feature statistics of each image in a `[n, 1, h, w]` batch.
pub fn feature_stats(images: &Tensor, fen: &dyn FeatureExtractor, layer: &str) -> Result<Vec<FeatureStats>> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let f = fen.features(&mut tape, x, layer)?;
    let m = tape.channel_mean(f);
    let v = tape.channel_var(f);
    let c = tape.shape(f).c;
    let (mv, vv) = (tape.value(m).data(), tape.value(v).data());
    Ok((0..images.shape().n)
        .map(|n| FeatureStats {
            mean: mv[n * c..(n + 1) * c].to_vec(),
            var: vv[n * c..(n + 1) * c].to_vec(),
        })
        .collect())
}

/// Global-average-pooled deepest-stage embedding of each image.
pub fn embed(images: &Tensor, fen: &dyn FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let stages = fen.stages(&mut tape, x)?;
    let last = *stages.last().expect("at least one stage");
    let m = tape.channel_mean(last);
    let c = tape.shape(last).c;
    Ok(tape.value(m).data().chunks(c).map(<[f64]>::to_vec).collect())
}

/// Unit-normalized per-stage activations, used by the perceptual distance.
pub fn normalized_stages(images: &Tensor, fen: &dyn FeatureExtractor) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let stages = fen.stages(&mut tape, x)?;
    Ok(stages
        .into_iter()
        .map(|v| {
            let mut t = tape.value(v).clone();
            let s = t.shape();
            let p = s.plane();
            for n in 0..s.n {
                for i in 0..p {
                    let norm: f64 = (0..s.c).map(|c| {
                        let v = t.data()[(n * s.c + c) * p + i];
                        v * v
                    }).sum();
                    let d = libm::sqrt(norm) + 1e-10;
                    for c in 0..s.c {
                        t.data_mut()[(n * s.c + c) * p + i] /= d;
                    }
                }
            }
            t
        })
        .collect())
}
