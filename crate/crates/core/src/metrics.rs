//! Image-set and image-pair quality metrics, plus segmentation overlap.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fen::{embed, normalized_stages, FeatureExtractor};
use crate::image::Image;
use crate::kernels::avg_pool2;
use crate::tensor::{Shape, Tensor};

/// `N × d` embeddings produced by one extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub extractor: String,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn new(extractor: &str, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(d) = rows.first().map(Vec::len) {
            if rows.iter().any(|r| r.len() != d) {
                bail!(Dimension, "feature rows have differing dimensions");
            }
        }
        Ok(Self {
            extractor: extractor.into(),
            rows,
        })
    }

    pub fn from_images(images: &[Image], fen: &dyn FeatureExtractor) -> Result<Self> {
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(8) {
            let t = Tensor::stack(&chunk.iter().map(Image::to_tensor).collect::<Vec<_>>())?;
            rows.extend(embed(&t, fen)?);
        }
        Self::new(fen.name(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.dim(), |i, j| self.rows[i][j])
    }
}

fn check_pair(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        bail!(SampleSize, "need at least 2 samples per set, got {} and {}", a.len(), b.len());
    }
    if a.dim() != b.dim() {
        bail!(Dimension, "feature dimensions differ: {} vs {}", a.dim(), b.dim());
    }
    Ok(())
}

fn mean_cov(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows() as f64;
    let mu = DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n);
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| libm::sqrt(v.max(0.0))));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets.
///
/// `Tr((Σa Σb)^½)` is evaluated as `Tr((√Σa Σb √Σa)^½)`, a symmetric form
/// with the same spectrum; negative eigenvalues are clamped to zero.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair(a, b)?;
    let (mu_a, cov_a) = mean_cov(&a.matrix());
    let (mu_b, cov_b) = mean_cov(&b.matrix());
    let s = sym_sqrt(&cov_a);
    let inner = &s * &cov_b * &s;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|v| libm::sqrt(v.max(0.0))).sum();
    let diff = mu_a - mu_b;
    Ok((diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt).max(0.0))
}

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let k = dot / d + 1.0;
    k * k * k
}

fn mmd2_unbiased(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let (m, n) = (a.len() as f64, b.len() as f64);
    let within = |s: &[&[f64]]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    t += poly_kernel(s[i], s[j]);
                }
            }
        }
        t
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += poly_kernel(x, y);
        }
    }
    within(a) / (m * (m - 1.0)) + within(b) / (n * (n - 1.0)) - 2.0 * cross / (m * n)
}

/// Unbiased squared MMD with the cubic polynomial kernel, × 100.
pub fn kid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_pair(a, b)?;
    let ra: Vec<&[f64]> = a.rows.iter().map(Vec::as_slice).collect();
    let rb: Vec<&[f64]> = b.rows.iter().map(Vec::as_slice).collect();
    Ok(100.0 * mmd2_unbiased(&ra, &rb))
}

/// KID averaged over random subsets of `subset` rows from each set.
pub fn kid_subsets(a: &FeatureSet, b: &FeatureSet, subset: usize, rounds: usize, rng: &mut impl Rng) -> Result<f64> {
    check_pair(a, b)?;
    if subset < 2 || subset > a.len().min(b.len()) || rounds == 0 {
        bail!(SampleSize, "subset size {subset} invalid for sets of {} and {}", a.len(), b.len());
    }
    let mut total = 0.0;
    for _ in 0..rounds {
        let ia = sample(rng, a.len(), subset);
        let ib = sample(rng, b.len(), subset);
        let ra: Vec<&[f64]> = ia.iter().map(|i| a.rows[i].as_slice()).collect();
        let rb: Vec<&[f64]> = ib.iter().map(|i| b.rows[i].as_slice()).collect();
        total += mmd2_unbiased(&ra, &rb);
    }
    Ok(100.0 * total / rounds as f64)
}

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Largest scale count (≤ 5) a square image of `side` pixels supports.
pub fn max_ms_ssim_scales(side: usize) -> usize {
    (1..=5).rev().find(|&k| side >= (SSIM_WINDOW << (k - 1))).unwrap_or(0)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable Gaussian filtering.
fn filter_valid(x: &[f64], w: usize, h: usize, win: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = alloc::vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            tmp[y * ow + x0] = (0..SSIM_WINDOW).map(|k| win[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = alloc::vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|k| win[k] * tmp[(y0 + k) * ow + x0]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(x: &[f64], y: &[f64], w: usize, h: usize) -> (f64, f64) {
    let win = gaussian_window();
    // Dynamic range L = 1.
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, ow, oh) = filter_valid(x, w, h, &win);
    let (my, _, _) = filter_valid(y, w, h, &win);
    let (sxx, _, _) = filter_valid(&prod(x, x), w, h, &win);
    let (syy, _, _) = filter_valid(&prod(y, y), w, h, &win);
    let (sxy, _, _) = filter_valid(&prod(x, y), w, h, &win);
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (vx, vy) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i]);
        let cov = sxy[i] - mx[i] * my[i];
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        let l = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        cs += c;
        ssim += l * c;
    }
    let n = (ow * oh) as f64;
    (ssim / n, cs / n)
}

/// Multi-scale SSIM over `scales` dyadic levels. Images in `[-1, 1]` are
/// mapped to `[0, 1]`; with fewer than five scales the leading weights are
/// renormalized. Negative per-scale terms are clamped to zero.
pub fn ms_ssim_scales(x: &Image, y: &Image, scales: usize) -> Result<f64> {
    if (x.width(), x.height()) != (y.width(), y.height()) {
        bail!(Dimension, "MS-SSIM images differ in size");
    }
    if scales == 0 || scales > 5 {
        bail!(Parameter, "MS-SSIM supports 1 to 5 scales, got {scales}");
    }
    let side = x.width().min(x.height());
    if side < SSIM_WINDOW << (scales - 1) {
        bail!(
            Parameter,
            "image side {side} too small for {scales} MS-SSIM scales (needs {})",
            SSIM_WINDOW << (scales - 1)
        );
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let to_unit = |im: &Image| {
        let d = im.data().iter().map(|v| (v + 1.0) / 2.0).collect();
        Tensor::from_vec(Shape::new(1, 1, im.height(), im.width()), d).expect("shape")
    };
    let (mut a, mut b) = (to_unit(x), to_unit(y));
    let mut result = 1.0;
    for j in 0..scales {
        let s = a.shape();
        let (ssim, cs) = ssim_terms(a.data(), b.data(), s.w, s.h);
        let wj = MS_SSIM_WEIGHTS[j] / wsum;
        let term = if j + 1 == scales { ssim } else { cs };
        result *= libm::pow(term.max(0.0), wj);
        if j + 1 < scales {
            if s.w % 2 == 1 || s.h % 2 == 1 {
                a = crop_even(&a);
                b = crop_even(&b);
            }
            a = avg_pool2(&a);
            b = avg_pool2(&b);
        }
    }
    Ok(result.clamp(0.0, 1.0))
}

fn crop_even(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (h, w) = (s.h & !1, s.w & !1);
    Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| t.at(0, 0, y, x))
}

/// Five-scale MS-SSIM.
pub fn ms_ssim(x: &Image, y: &Image) -> Result<f64> {
    ms_ssim_scales(x, y, 5)
}

/// Perceptual distance: per stage, unit-normalize channel vectors, take the
/// squared difference summed over channels and averaged over positions;
/// stages are summed with unit weights. Returns one value per batch item.
pub fn lpips(x: &Tensor, y: &Tensor, fen: &dyn FeatureExtractor) -> Result<Vec<f64>> {
    if x.shape() != y.shape() {
        bail!(Dimension, "LPIPS inputs differ: {} vs {}", x.shape(), y.shape());
    }
    let (fx, fy) = (normalized_stages(x, fen)?, normalized_stages(y, fen)?);
    let n = x.shape().n;
    let mut out = alloc::vec![0.0; n];
    for (a, b) in fx.iter().zip(&fy) {
        let s = a.shape();
        for (i, o) in out.iter_mut().enumerate() {
            let d: f64 = a.item(i).iter().zip(b.item(i)).map(|(p, q)| (p - q) * (p - q)).sum();
            *o += d / s.plane() as f64;
        }
    }
    Ok(out)
}

/// `2|A∩B| / (|A|+|B|)` for binary masks; two empty masks score 1.
pub fn dice(pred: &[u8], gt: &[u8]) -> Result<f64> {
    if pred.len() != gt.len() {
        bail!(Dimension, "DICE masks differ in size: {} vs {}", pred.len(), gt.len());
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p != 0, g != 0);
        inter += usize::from(p && g);
        total += usize::from(p) + usize::from(g);
    }
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// DICE of each class in `classes` between two class-index grids.
pub fn dice_per_class(pred: &[u8], gt: &[u8], classes: &[u8]) -> Result<Vec<f64>> {
    classes
        .iter()
        .map(|&c| {
            let p: Vec<u8> = pred.iter().map(|&v| u8::from(v == c)).collect();
            let g: Vec<u8> = gt.iter().map(|&v| u8::from(v == c)).collect();
            dice(&p, &g)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub extractor: String,
    pub fid: f64,
    pub kid_x100: f64,
    pub ms_ssim: f64,
    pub lpips: f64,
    pub ms_ssim_scales: usize,
    pub per_pair_ms_ssim: Vec<f64>,
    pub per_pair_lpips: Vec<f64>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "FID,KIDx100,MS-SSIM,LPIPS";

    pub fn csv_row(&self) -> String {
        alloc::format!("{:.4},{:.4},{:.4},{:.4}", self.fid, self.kid_x100, self.ms_ssim, self.lpips)
    }
}

/// Set metrics over all images and pair metrics over index-aligned pairs.
pub fn evaluate(real: &[Image], fake: &[Image], fen: &dyn FeatureExtractor) -> Result<MetricReport> {
    if real.len() != fake.len() {
        bail!(SampleSize, "{} real vs {} generated images; pairs must align", real.len(), fake.len());
    }
    let fa = FeatureSet::from_images(real, fen)?;
    let fb = FeatureSet::from_images(fake, fen)?;
    let side = real.iter().map(|i| i.width().min(i.height())).min().unwrap_or(0);
    let scales = max_ms_ssim_scales(side);
    if scales == 0 {
        bail!(Parameter, "images of side {side} are too small for MS-SSIM");
    }
    let mut per_ms = Vec::with_capacity(real.len());
    let mut per_lp = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        per_ms.push(ms_ssim_scales(r, f, scales)?);
        per_lp.extend(lpips(&r.to_tensor(), &f.to_tensor(), fen)?);
    }
    let n = real.len() as f64;
    Ok(MetricReport {
        extractor: fen.name().into(),
        fid: fid(&fa, &fb)?,
        kid_x100: kid(&fa, &fb)?,
        ms_ssim: per_ms.iter().sum::<f64>() / n,
        lpips: per_lp.iter().sum::<f64>() / n,
        ms_ssim_scales: scales,
        per_pair_ms_ssim: per_ms,
        per_pair_lpips: per_lp,
    })
}
