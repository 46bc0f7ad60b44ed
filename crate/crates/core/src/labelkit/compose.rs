use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::{Shape, Tensor};

use super::{CompositeLabel, EdgeSketch, LabelMap, StructureMask};

/// `(C+1)`-plane one-hot encoding of a composite label, batch size 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTensor(pub Tensor);

impl LabelTensor {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

pub fn make_structure_mask(label: &LabelMap) -> StructureMask {
    let grid = label.grid().iter().map(|&v| u8::from(v > 0)).collect();
    StructureMask::new(label.width(), label.height(), grid).expect("binary by construction")
}

/// Superpose the sketch onto the background: structure pixels keep their
/// class, background pixels become the sketch class where the sketch is set.
pub fn compose(label: &LabelMap, mask: &StructureMask, sketch: &EdgeSketch) -> Result<CompositeLabel> {
    let (w, h) = (label.width(), label.height());
    if (mask.width(), mask.height()) != (w, h) || (sketch.width(), sketch.height()) != (w, h) {
        bail!(
            Dimension,
            "label {w}×{h}, mask {}×{} and sketch {}×{} differ in size",
            mask.width(),
            mask.height(),
            sketch.width(),
            sketch.height()
        );
    }
    let c = label.num_classes() as u8;
    let grid: Vec<u8> = label
        .grid()
        .iter()
        .zip(mask.grid())
        .zip(sketch.grid())
        .map(|((&o, &m), &s)| m * o + (1 - m) * c * s)
        .collect();
    CompositeLabel::new(w, h, label.class_names().to_vec(), grid)
}

pub fn encode_onehot(comp: &CompositeLabel) -> LabelTensor {
    let planes = comp.num_classes() + 1;
    let (w, h) = (comp.width(), comp.height());
    let mut data = alloc::vec![0.0; planes * w * h];
    for (i, &v) in comp.grid().iter().enumerate() {
        data[usize::from(v) * w * h + i] = 1.0;
    }
    LabelTensor(Tensor::from_vec(Shape::new(1, planes, h, w), data).expect("shape"))
}

/// Inverse of [`encode_onehot`]; every pixel must have exactly one hot plane.
pub fn decode_onehot(t: &LabelTensor, class_names: &[alloc::string::String]) -> Result<CompositeLabel> {
    let s = t.0.shape();
    if s.n != 1 || s.c != class_names.len() + 1 {
        bail!(Dimension, "expected 1×{}×H×W one-hot tensor, got {s}", class_names.len() + 1);
    }
    let hw = s.h * s.w;
    let data = t.0.data();
    let mut grid = Vec::with_capacity(hw);
    for i in 0..hw {
        let mut hot = None;
        for k in 0..s.c {
            let v = data[k * hw + i];
            if v == 1.0 {
                if hot.is_some() {
                    bail!(Input, "pixel {i} has more than one hot plane");
                }
                hot = Some(k as u8);
            } else if v != 0.0 {
                bail!(Input, "pixel {i} plane {k} is not binary");
            }
        }
        match hot {
            Some(k) => grid.push(k),
            None => bail!(Input, "pixel {i} has no hot plane"),
        }
    }
    CompositeLabel::new(s.w, s.h, class_names.to_vec(), grid)
}
