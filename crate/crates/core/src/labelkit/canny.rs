use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::image::Image;

use super::EdgeSketch;

/// Hysteresis thresholds on gradient magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CannyThresholds {
    /// `high` from Otsu's rule on the gradient magnitude, `low = ratio·high`.
    #[default]
    Auto,
    AutoRatio { ratio: f64 },
    Manual { low: f64, high: f64 },
}

const AUTO_RATIO: f64 = 0.5;
const TAN_22_5: f64 = 0.414_213_562_373_095_03;
const TAN_67_5: f64 = 2.414_213_562_373_095;

struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }

    fn filter(&self, taps: &[f64], horizontal: bool) -> Plane {
        let r = (taps.len() / 2) as isize;
        let mut v = Vec::with_capacity(self.v.len());
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let mut s = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let o = k as isize - r;
                    s += t * if horizontal { self.at(x + o, y) } else { self.at(x, y + o) };
                }
                v.push(s);
            }
        }
        Plane { w: self.w, h: self.h, v }
    }

    fn diff(&self, horizontal: bool) -> Plane {
        let mut v = Vec::with_capacity(self.v.len());
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                v.push(if horizontal {
                    self.at(x + 1, y) - self.at(x - 1, y)
                } else {
                    self.at(x, y + 1) - self.at(x, y - 1)
                });
            }
        }
        Plane { w: self.w, h: self.h, v }
    }
}

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
const SOBEL_SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// Smoothed Sobel derivatives. The central difference is taken first so a
/// constant offset cancels before any rounding can accumulate.
fn gradients(image: &Image) -> (Plane, Plane) {
    let p = Plane {
        w: image.width(),
        h: image.height(),
        v: image.data().to_vec(),
    };
    let gx = p
        .diff(true)
        .filter(&BINOMIAL, true)
        .filter(&BINOMIAL, false)
        .filter(&SOBEL_SMOOTH, false);
    let gy = p
        .diff(false)
        .filter(&BINOMIAL, true)
        .filter(&BINOMIAL, false)
        .filter(&SOBEL_SMOOTH, true);
    (gx, gy)
}

/// L2 gradient magnitude after binomial smoothing, row-major.
pub fn gradient_magnitude(image: &Image) -> Vec<f64> {
    let (gx, gy) = gradients(image);
    gx.v.iter().zip(&gy.v).map(|(a, b)| libm::sqrt(a * a + b * b)).collect()
}

/// Otsu threshold over a 256-bin histogram spanning `[0, max]`.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = ((v / max) * BINS as f64) as usize;
        hist[b.min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * d * d;
        if between > best {
            best = between;
            best_k = k;
        }
    }
    (best_k + 1) as f64 * max / BINS as f64
}

/// Canny edge detection: smoothing, Sobel, non-maximum suppression and
/// 8-connected hysteresis.
pub fn extract_sketch(image: &Image, thresholds: CannyThresholds) -> Result<EdgeSketch> {
    if !image.is_finite() {
        bail!(Input, "image contains non-finite pixels");
    }
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        bail!(Dimension, "empty image");
    }
    let (gx, gy) = gradients(image);
    let mag: Vec<f64> = gx.v.iter().zip(&gy.v).map(|(a, b)| libm::sqrt(a * a + b * b)).collect();
    let (low, high) = match thresholds {
        CannyThresholds::Auto => {
            let high = otsu_threshold(&mag);
            (AUTO_RATIO * high, high)
        }
        CannyThresholds::AutoRatio { ratio } => {
            if !(0.0..=1.0).contains(&ratio) {
                bail!(Parameter, "low/high ratio must lie in [0, 1], got {ratio}");
            }
            let high = otsu_threshold(&mag);
            (ratio * high, high)
        }
        CannyThresholds::Manual { low, high } => {
            if !(low.is_finite() && high.is_finite()) || low < 0.0 || low > high {
                bail!(Parameter, "thresholds need 0 ≤ low ≤ high, got low={low} high={high}");
            }
            (low, high)
        }
    };

    let m = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = alloc::vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= 0.0 {
                continue;
            }
            let (ax, ay) = (libm::fabs(gx.v[i]), libm::fabs(gy.v[i]));
            // (dx, dy) points along the gradient; the forward neighbour
            // may tie so plateaus of width two keep exactly one pixel.
            let (dx, dy) = if ay <= ax * TAN_22_5 {
                (1, 0)
            } else if ay >= ax * TAN_67_5 {
                (0, 1)
            } else if gx.v[i] * gy.v[i] > 0.0 {
                (1, 1)
            } else {
                (1, -1)
            };
            if v >= m(x + dx, y + dy) && v > m(x - dx, y - dy) {
                thin[i] = v;
            }
        }
    }

    let mut grid = alloc::vec![0u8; w * h];
    let mut queue = VecDeque::new();
    for (i, &v) in thin.iter().enumerate() {
        if v > high && v > 0.0 {
            grid[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if grid[j] == 0 && thin[j] > low && thin[j] > 0.0 {
                    grid[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    EdgeSketch::new(w, h, grid, low, high)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(w: usize, h: usize, k: usize) -> Image {
        Image::from_fn(w, h, |x, _| if x < k { -1.0 } else { 1.0 })
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Image::filled(16, 16, 0.3);
        let s = extract_sketch(&img, CannyThresholds::Auto).unwrap();
        assert!(s.grid().iter().all(|&v| v == 0));
    }

    #[test]
    fn step_edge_is_localized() {
        for k in 3..13 {
            let s = extract_sketch(&step(16, 12, k), CannyThresholds::Auto).unwrap();
            assert!(s.grid().iter().any(|&v| v == 1));
            for y in 0..12 {
                for x in 0..16 {
                    if s.get(x, y) == 1 {
                        assert!((x as isize - k as isize).abs() <= 1, "k={k} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn bad_thresholds() {
        let img = step(8, 8, 4);
        let r = extract_sketch(&img, CannyThresholds::Manual { low: 2.0, high: 1.0 });
        assert!(matches!(r, Err(crate::Error::Parameter(_))));
        let mut bad = img.clone();
        bad.data_mut()[3] = f64::NAN;
        assert!(matches!(extract_sketch(&bad, CannyThresholds::Auto), Err(crate::Error::Input(_))));
    }

    #[test]
    fn otsu_splits_two_modes() {
        let mut v = alloc::vec![1.0; 100];
        v.extend(core::iter::repeat_n(9.0, 100));
        let t = otsu_threshold(&v);
        assert!(t > 1.0 && t < 9.0);
    }
}
