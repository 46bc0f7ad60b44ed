use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::blur;
use crate::error::{bail, Result};
use crate::image::Image;
use crate::labelkit::{compose, make_structure_mask, CompositeLabel, EdgeSketch, EditOp, LabelMap};
use crate::netcore::Generator;
use crate::trainer::synthesize;

/// Parameter ranges of the traditional augmentations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradRanges {
    pub rotation_deg: f64,
    /// Fraction of the image side.
    pub translation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Maximum standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for TradRanges {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            translation: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            blur_sigma_min: 0.5,
            blur_sigma_max: 1.5,
            gamma_min: 0.7,
            gamma_max: 1.5,
            noise_sigma: 0.02,
        }
    }
}

/// Magnitudes of the random morphological label edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRanges {
    pub max_shift: u32,
    pub max_scale_delta: f64,
    pub max_radius: u32,
}

impl Default for EditRanges {
    fn default() -> Self {
        Self {
            max_shift: 6,
            max_scale_delta: 0.2,
            max_radius: 2,
        }
    }
}

impl EditRanges {
    pub fn zero() -> Self {
        Self {
            max_shift: 0,
            max_scale_delta: 0.0,
            max_radius: 0,
        }
    }
}

/// One applied traditional augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TradOp {
    Rotate { degrees: f64 },
    Translate { dx: f64, dy: f64 },
    Scale { factor: f64 },
    Blur { sigma: f64 },
    Gamma { gamma: f64 },
    Noise { sigma: f64, seed: u64 },
}

/// Inverse-map an affine transform about the image centre. Images sample
/// bilinearly with clamped borders, labels by nearest neighbour with
/// background outside the frame.
fn affine(image: &Image, label: &LabelMap, degrees: f64, scale: f64, tx: f64, ty: f64) -> Result<(Image, LabelMap)> {
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let t = degrees.to_radians();
    let (c, s) = (libm::cos(t), libm::sin(t));
    let src = |x: usize, y: usize| {
        let (px, py) = (x as f64 - cx - tx, y as f64 - cy - ty);
        ((c * px + s * py) / scale + cx, (-s * px + c * py) / scale + cy)
    };
    let out = Image::from_fn(w, h, |x, y| {
        let (sx, sy) = src(x, y);
        let sx = sx.clamp(0.0, w as f64 - 1.0);
        let sy = sy.clamp(0.0, h as f64 - 1.0);
        let (x0, y0) = (libm::floor(sx) as usize, libm::floor(sy) as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let top = image.get(x0, y0) * (1.0 - fx) + image.get(x1, y0) * fx;
        let bottom = image.get(x0, y1) * (1.0 - fx) + image.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    });
    let mut grid = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x, y);
            let (rx, ry) = (libm::round(sx), libm::round(sy));
            let inside = rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64;
            grid.push(if inside { label.get(rx as usize, ry as usize) } else { 0 });
        }
    }
    Ok((out, label.with_grid(grid)?))
}

/// Apply one traditional op to an image/label pair.
pub fn apply_trad(image: &Image, label: &LabelMap, op: TradOp) -> Result<(Image, LabelMap)> {
    if (image.width(), image.height()) != (label.width(), label.height()) {
        bail!(Dimension, "image and label sizes differ");
    }
    let side = image.width() as f64;
    Ok(match op {
        TradOp::Rotate { degrees } => affine(image, label, degrees, 1.0, 0.0, 0.0)?,
        TradOp::Translate { dx, dy } => affine(image, label, 0.0, 1.0, dx * side, dy * side)?,
        TradOp::Scale { factor } => affine(image, label, 0.0, factor, 0.0, 0.0)?,
        TradOp::Blur { sigma } => {
            let d = blur(image.data(), image.width(), image.height(), sigma);
            (Image::new(image.width(), image.height(), d)?, label.clone())
        }
        TradOp::Gamma { gamma } => {
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = 2.0 * libm::pow((*v + 1.0) / 2.0, gamma) - 1.0;
            }
            (out, label.clone())
        }
        TradOp::Noise { sigma, seed } => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, sigma).map_err(|_| crate::Error::Parameter(alloc::format!("bad noise sigma {sigma}")))?;
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = (*v + n.sample(&mut rng)).clamp(-1.0, 1.0);
            }
            (out, label.clone())
        }
    })
}

/// With probability `p`, draw and apply one traditional op.
pub fn traditional_augment(
    image: &Image,
    label: &LabelMap,
    p: f64,
    ranges: &TradRanges,
    rng: &mut impl Rng,
) -> Result<(Image, LabelMap, Option<TradOp>)> {
    if !(0.0..=1.0).contains(&p) {
        bail!(Parameter, "augmentation probability must lie in [0, 1], got {p}");
    }
    if !rng.random_bool(p) {
        return Ok((image.clone(), label.clone(), None));
    }
    let r = ranges;
    let sym = |rng: &mut dyn rand::RngCore, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let span = |rng: &mut dyn rand::RngCore, a: f64, b: f64| if b > a { rng.random_range(a..=b) } else { a };
    let op = match rng.random_range(0..6u8) {
        0 => TradOp::Rotate {
            degrees: sym(rng, r.rotation_deg),
        },
        1 => TradOp::Translate {
            dx: sym(rng, r.translation),
            dy: sym(rng, r.translation),
        },
        2 => TradOp::Scale {
            factor: span(rng, r.scale_min, r.scale_max),
        },
        3 => TradOp::Blur {
            sigma: span(rng, r.blur_sigma_min, r.blur_sigma_max),
        },
        4 => TradOp::Gamma {
            gamma: span(rng, r.gamma_min, r.gamma_max),
        },
        _ => TradOp::Noise {
            sigma: span(rng, 0.0, r.noise_sigma),
            seed: rng.random(),
        },
    };
    let (i, l) = apply_trad(image, label, op)?;
    Ok((i, l, Some(op)))
}

/// Draw one random morphological edit of a structure present in `label`;
/// `None` when every range is zero or the label has no structures.
pub fn random_edit(label: &LabelMap, ranges: &EditRanges, rng: &mut impl Rng) -> Option<EditOp> {
    let present: Vec<u8> = (1..label.num_classes() as u8).filter(|&c| label.count(c) > 0).collect();
    if present.is_empty() {
        return None;
    }
    let mut kinds: Vec<u8> = Vec::new();
    if ranges.max_shift > 0 {
        kinds.push(0);
    }
    if ranges.max_scale_delta > 0.0 {
        kinds.push(1);
    }
    if ranges.max_radius > 0 {
        kinds.extend([2, 3]);
    }
    if kinds.is_empty() {
        return None;
    }
    let class = present[rng.random_range(0..present.len())];
    let sign = |rng: &mut dyn rand::RngCore| if rng.random_bool(0.5) { 1 } else { -1 };
    Some(match kinds[rng.random_range(0..kinds.len())] {
        0 => {
            let m = ranges.max_shift as i32;
            let (mut dx, mut dy) = (rng.random_range(-m..=m), rng.random_range(-m..=m));
            if dx == 0 && dy == 0 {
                dx = sign(rng) * rng.random_range(1..=m);
                dy = 0;
            }
            EditOp::Translate { class, dx, dy }
        }
        1 => {
            let d = ranges.max_scale_delta;
            let mag = rng.random_range(d / 2.0..=d);
            EditOp::Scale {
                class,
                factor: 1.0 + f64::from(sign(rng)) * mag,
            }
        }
        k => {
            let radius = rng.random_range(1..=ranges.max_radius);
            if k == 2 {
                EditOp::Dilate { class, radius }
            } else {
                EditOp::Erode { class, radius }
            }
        }
    })
}

/// Synthesize at the generator's resolution; a label at half that
/// resolution is upscaled by nearest neighbour and the output averaged back.
pub fn synthesize_at(g: &Generator, composite: &CompositeLabel) -> Result<Image> {
    let res = g.resolution();
    if composite.width() == res {
        synthesize(g, composite)
    } else if composite.width() * 2 == res {
        synthesize(g, &composite.upscale(2)?)?.downsample2()
    } else {
        bail!(Dimension, "composite {}² cannot be synthesized by a {res}² generator", composite.width());
    }
}

/// Randomly edit the label, rebuild the composite with the source sketch
/// and synthesize the matching image.
pub fn gan_augment(
    label: &LabelMap,
    sketch: &EdgeSketch,
    ranges: &EditRanges,
    g: &Generator,
    rng: &mut impl Rng,
) -> Result<(Image, LabelMap, CompositeLabel)> {
    if label.num_classes() != g.config().num_classes {
        bail!(
            Config,
            "label has {} classes, generator checkpoint expects {}",
            label.num_classes(),
            g.config().num_classes
        );
    }
    let edited = match random_edit(label, ranges, rng) {
        Some(op) => label.apply_edit(&op)?,
        None => label.clone(),
    };
    let composite = compose(&edited, &make_structure_mask(&edited), sketch)?;
    let image = synthesize_at(g, &composite)?;
    Ok((image, edited, composite))
}
