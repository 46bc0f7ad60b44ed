use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::{Shape, Tensor};

/// Single-channel image with values in `[-1, 1]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            bail!(Dimension, "image {width}×{height} needs {} values, got {}", width * height, data.len());
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: alloc::vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.data.clone()).expect("shape")
    }

    /// Batch item `n` of a single-channel tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 1 || n >= s.n {
            bail!(Dimension, "cannot take image {n} from tensor {s}");
        }
        Self::new(s.w, s.h, t.item(n).to_vec())
    }

    /// 2×2 average downsampling.
    pub fn downsample2(&self) -> Result<Self> {
        if self.width % 2 != 0 || self.height % 2 != 0 {
            bail!(Dimension, "cannot halve odd image {}×{}", self.width, self.height);
        }
        let t = crate::kernels::avg_pool2(&self.to_tensor());
        Self::from_tensor(&t, 0)
    }

    pub fn upsample2(&self) -> Self {
        let t = crate::kernels::bilinear_up2(&self.to_tensor());
        Self::from_tensor(&t, 0).expect("single channel")
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            bail!(Dimension, "image sizes differ");
        }
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| libm::fabs(a - b)).sum();
        Ok(s / self.data.len() as f64)
    }
}
