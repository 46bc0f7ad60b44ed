//! Seeded synthetic phantoms: ellipse structures over multiplicative speckle.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::image::Image;
use crate::labelkit::LabelMap;

pub const MAX_STRUCTURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    /// Gaussian blur sigma of the speckle field, in pixels.
    pub grain: f64,
    /// Standard deviation of the multiplicative speckle factor.
    pub speckle: f64,
    /// Base intensity in `[0, 1]` for background then each structure.
    pub contrast: Vec<f64>,
    /// Fractional intensity loss from top to bottom row.
    pub attenuation: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Self {
            grain: 1.0,
            speckle: 0.25,
            contrast: alloc::vec![0.45, 0.85, 0.12, 0.65, 0.28],
            attenuation: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub resolution: usize,
    pub num_structures: usize,
    pub texture: Texture,
}

impl PhantomSpec {
    pub fn new(seed: u64, resolution: usize, num_structures: usize) -> Self {
        Self {
            seed,
            resolution,
            num_structures,
            texture: Texture::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 64 != 0 {
            bail!(Parameter, "phantom resolution must be a positive multiple of 64, got {}", self.resolution);
        }
        if self.num_structures > MAX_STRUCTURES {
            bail!(Parameter, "at most {MAX_STRUCTURES} structures, got {}", self.num_structures);
        }
        let t = &self.texture;
        if t.contrast.len() < self.num_structures + 1 {
            bail!(Parameter, "{} contrast values for {} structures", t.contrast.len(), self.num_structures);
        }
        if t.contrast.iter().any(|c| !(0.0..=1.0).contains(c)) {
            bail!(Parameter, "contrast values must lie in [0, 1]");
        }
        if !(t.grain >= 0.0 && t.speckle >= 0.0 && (0.0..1.0).contains(&t.attenuation)) {
            bail!(Parameter, "grain and speckle must be non-negative, attenuation in [0, 1)");
        }
        Ok(())
    }

    /// Same spec with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// `background, structure_1, ...` with at least one structure class.
pub fn class_names(num_structures: usize) -> Vec<String> {
    let k = num_structures.max(1);
    let mut names = alloc::vec![String::from("background")];
    names.extend((1..=k).map(|i| alloc::format!("structure_{i}")));
    names
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let (a, b) = (u / self.rx, v / self.ry);
        a * a + b * b <= 1.0
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return alloc::vec![1.0];
    }
    let r = libm::ceil(3.0 * sigma) as isize;
    let k: Vec<f64> = (-r..=r).map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamped borders.
pub(crate) fn blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = alloc::vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * data[y * w + clamp(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = alloc::vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[clamp(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Render one `(label, image)` pair; identical specs give identical output.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(LabelMap, Image)> {
    spec.validate()?;
    let n = spec.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shapes: Vec<Ellipse> = (0..spec.num_structures)
        .map(|_| {
            let theta = rng.random_range(0.0..core::f64::consts::PI);
            Ellipse {
                cx: rng.random_range(0.25..0.75),
                cy: rng.random_range(0.25..0.75),
                rx: rng.random_range(0.08..0.22),
                ry: rng.random_range(0.08..0.22),
                cos: libm::cos(theta),
                sin: libm::sin(theta),
            }
        })
        .collect();
    let mut grid = alloc::vec![0u8; n * n];
    for y in 0..n {
        for x in 0..n {
            let (u, v) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
            for (k, e) in shapes.iter().enumerate() {
                if e.contains(u, v) {
                    grid[y * n + x] = k as u8 + 1;
                }
            }
        }
    }
    let noise: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let t = &spec.texture;
    let mut field = blur(&noise, n, n, t.grain);
    // Separable blur scales the std of white noise by `Σk²`; undo it so
    // `speckle` is the factor's std regardless of grain size.
    let gain: f64 = gaussian_kernel(t.grain).iter().map(|v| v * v).sum();
    field.iter_mut().for_each(|v| *v /= gain);
    let data = (0..n * n)
        .map(|i| {
            let depth = (i / n) as f64 / (n - 1) as f64;
            let base = t.contrast[usize::from(grid[i])] * (1.0 - t.attenuation * depth);
            let v = (base * (1.0 + t.speckle * field[i])).clamp(0.0, 1.0);
            2.0 * v - 1.0
        })
        .collect();
    let label = LabelMap::new(n, n, class_names(spec.num_structures), grid)?;
    Ok((label, Image::new(n, n, data)?))
}
