use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Class-index grid; `0` is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    width: usize,
    height: usize,
    class_names: Vec<String>,
    grid: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, class_names: Vec<String>, grid: Vec<u8>) -> Result<Self> {
        let c = class_names.len();
        if c < 2 {
            bail!(Input, "a label map needs background plus at least one class, got {c}");
        }
        if c > 255 {
            bail!(Input, "at most 255 classes are supported, got {c}");
        }
        if grid.len() != width * height {
            bail!(Dimension, "label grid {width}×{height} needs {} values, got {}", width * height, grid.len());
        }
        if let Some(v) = grid.iter().find(|&&v| usize::from(v) >= c) {
            bail!(Input, "class index {v} out of range for {c} classes");
        }
        Ok(Self {
            width,
            height,
            class_names,
            grid,
        })
    }

    pub fn background(width: usize, height: usize, class_names: Vec<String>) -> Result<Self> {
        Self::new(width, height, class_names, alloc::vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.grid[y * self.width + x]
    }

    pub fn count(&self, class: u8) -> usize {
        self.grid.iter().filter(|&&v| v == class).count()
    }

    /// Replace the grid, re-checking the class range.
    pub fn with_grid(&self, grid: Vec<u8>) -> Result<Self> {
        Self::new(self.width, self.height, self.class_names.clone(), grid)
    }

    /// 2×2 majority downsampling; ties go to the larger class index.
    pub fn downsample2(&self) -> Result<Self> {
        if self.width % 2 != 0 || self.height % 2 != 0 {
            bail!(Dimension, "cannot halve odd label map {}×{}", self.width, self.height);
        }
        let (w, h) = (self.width / 2, self.height / 2);
        let mut grid = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let cell = [
                    self.get(2 * x, 2 * y),
                    self.get(2 * x + 1, 2 * y),
                    self.get(2 * x, 2 * y + 1),
                    self.get(2 * x + 1, 2 * y + 1),
                ];
                let best = cell
                    .iter()
                    .copied()
                    .max_by_key(|v| (cell.iter().filter(|c| *c == v).count(), *v))
                    .unwrap_or(0);
                grid.push(best);
            }
        }
        Self::new(w, h, self.class_names.clone(), grid)
    }

    /// Nearest-neighbour integer upscaling.
    pub fn upscale(&self, factor: usize) -> Result<Self> {
        let grid = upscale_grid(&self.grid, self.width, self.height, factor);
        Self::new(self.width * factor, self.height * factor, self.class_names.clone(), grid)
    }
}

pub(crate) fn upscale_grid(grid: &[u8], width: usize, height: usize, factor: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(grid.len() * factor * factor);
    for y in 0..height * factor {
        for x in 0..width * factor {
            out.push(grid[(y / factor) * width + x / factor]);
        }
    }
    out
}

/// Binary Canny edge map of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSketch {
    width: usize,
    height: usize,
    grid: Vec<u8>,
    pub canny_low: f64,
    pub canny_high: f64,
}

impl EdgeSketch {
    pub fn new(width: usize, height: usize, grid: Vec<u8>, canny_low: f64, canny_high: f64) -> Result<Self> {
        if grid.len() != width * height {
            bail!(Dimension, "sketch grid {width}×{height} needs {} values, got {}", width * height, grid.len());
        }
        if grid.iter().any(|&v| v > 1) {
            bail!(Input, "edge sketch must be strictly binary");
        }
        Ok(Self {
            width,
            height,
            grid,
            canny_low,
            canny_high,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grid: alloc::vec![0; width * height],
            canny_low: 0.0,
            canny_high: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.grid[y * self.width + x]
    }

    pub fn density(&self) -> f64 {
        self.grid.iter().filter(|&&v| v == 1).count() as f64 / self.grid.len().max(1) as f64
    }

    pub fn with_grid(&self, grid: Vec<u8>) -> Result<Self> {
        Self::new(self.width, self.height, grid, self.canny_low, self.canny_high)
    }

    pub fn upscale(&self, factor: usize) -> Result<Self> {
        let grid = upscale_grid(&self.grid, self.width, self.height, factor);
        Self::new(self.width * factor, self.height * factor, grid, self.canny_low, self.canny_high)
    }
}

/// Binary indicator of annotated structures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureMask {
    width: usize,
    height: usize,
    grid: Vec<u8>,
}

impl StructureMask {
    pub fn new(width: usize, height: usize, grid: Vec<u8>) -> Result<Self> {
        if grid.len() != width * height {
            bail!(Dimension, "mask grid {width}×{height} needs {} values, got {}", width * height, grid.len());
        }
        if grid.iter().any(|&v| v > 1) {
            bail!(Input, "structure mask must be binary");
        }
        Ok(Self { width, height, grid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 1).count()
    }
}

/// Label map with the sketch superposed on the background; index `C` is
/// the dedicated sketch class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeLabel {
    width: usize,
    height: usize,
    class_names: Vec<String>,
    grid: Vec<u8>,
}

impl CompositeLabel {
    pub fn new(width: usize, height: usize, class_names: Vec<String>, grid: Vec<u8>) -> Result<Self> {
        let c = class_names.len();
        if c < 2 || c > 254 {
            bail!(Input, "composite labels need between 2 and 254 classes, got {c}");
        }
        if grid.len() != width * height {
            bail!(Dimension, "composite grid {width}×{height} needs {} values, got {}", width * height, grid.len());
        }
        if let Some(v) = grid.iter().find(|&&v| usize::from(v) > c) {
            bail!(Input, "composite index {v} exceeds sketch class {c}");
        }
        Ok(Self {
            width,
            height,
            class_names,
            grid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Index used for sketch pixels (equals `C`).
    pub fn sketch_class(&self) -> u8 {
        self.class_names.len() as u8
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.grid[y * self.width + x]
    }

    /// Nearest-neighbour integer upscaling.
    pub fn upscale(&self, factor: usize) -> Result<Self> {
        let grid = upscale_grid(&self.grid, self.width, self.height, factor);
        Self::new(self.width * factor, self.height * factor, self.class_names.clone(), grid)
    }

    /// Check the superposition invariants against its sources.
    pub fn check_sources(&self, label: &LabelMap, mask: &StructureMask, sketch: &EdgeSketch) -> Result<()> {
        let c = self.sketch_class();
        for i in 0..self.grid.len() {
            let ok = if mask.grid()[i] == 1 {
                self.grid[i] == label.grid()[i]
            } else {
                self.grid[i] == if sketch.grid()[i] == 1 { c } else { 0 }
            };
            if !ok {
                bail!(Input, "composite pixel {i} violates the superposition invariant");
            }
        }
        Ok(())
    }
}
