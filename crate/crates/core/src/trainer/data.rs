use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::image::Image;
use crate::labelkit::{compose, encode_onehot, extract_sketch, make_structure_mask, CannyThresholds, CompositeLabel, LabelMap};
use crate::tensor::Tensor;

/// One conditional training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub composite: CompositeLabel,
    pub image: Image,
}

impl Sample {
    /// Compose a label with the Canny sketch of its own image.
    pub fn from_pair(label: &LabelMap, image: &Image, canny: CannyThresholds) -> Result<Self> {
        let sketch = extract_sketch(image, canny)?;
        let composite = compose(label, &make_structure_mask(label), &sketch)?;
        Ok(Self {
            composite,
            image: image.clone(),
        })
    }
}

/// Aligned training examples at both stages: `high[i]` is the native pair
/// and `low[i]` its half-resolution counterpart.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub class_names: Vec<String>,
    pub low: Vec<Sample>,
    pub high: Vec<Sample>,
    onehot_low: Vec<Tensor>,
    onehot_high: Vec<Tensor>,
}

impl TrainSet {
    /// Build from native-resolution pairs at twice `base_resolution`. Low
    /// images are 2×2 means, low labels 2×2 majority votes, and sketches are
    /// extracted separately at each resolution.
    pub fn from_pairs(pairs: &[(LabelMap, Image)], base_resolution: usize, canny: CannyThresholds) -> Result<Self> {
        if pairs.is_empty() {
            bail!(Data, "training corpus is empty");
        }
        let class_names = pairs[0].0.class_names().to_vec();
        let high_res = 2 * base_resolution;
        let (mut low, mut high) = (Vec::new(), Vec::new());
        for (i, (label, image)) in pairs.iter().enumerate() {
            if label.class_names() != class_names.as_slice() {
                bail!(Data, "pair {i} has classes {:?}, expected {class_names:?}", label.class_names());
            }
            if (label.width(), label.height(), image.width(), image.height()) != (high_res, high_res, high_res, high_res) {
                bail!(Data, "pair {i} is not {high_res}×{high_res}");
            }
            high.push(Sample::from_pair(label, image, canny)?);
            low.push(Sample::from_pair(&label.downsample2()?, &image.downsample2()?, canny)?);
        }
        Ok(Self::from_samples(class_names, low, high))
    }

    pub fn from_samples(class_names: Vec<String>, low: Vec<Sample>, high: Vec<Sample>) -> Self {
        let onehot_low = low.iter().map(|s| encode_onehot(&s.composite).into_tensor()).collect();
        let onehot_high = high.iter().map(|s| encode_onehot(&s.composite).into_tensor()).collect();
        Self {
            class_names,
            low,
            high,
            onehot_low,
            onehot_high,
        }
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Stacked `(one-hot labels, images)` for the given indices.
    pub fn batch(&self, indices: &[usize], high: bool) -> Result<(Tensor, Tensor)> {
        let (labels, samples) = if high {
            (&self.onehot_high, &self.high)
        } else {
            (&self.onehot_low, &self.low)
        };
        let x = Tensor::stack(&indices.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>())?;
        let y = Tensor::stack(&indices.iter().map(|&i| samples[i].image.to_tensor()).collect::<Vec<_>>())?;
        Ok((x, y))
    }
}
