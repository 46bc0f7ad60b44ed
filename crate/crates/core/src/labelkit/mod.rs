//! Label maps, edge sketches, composite labels and their edits.

mod canny;
mod compose;
mod edit;
mod maps;

pub use canny::{extract_sketch, gradient_magnitude, otsu_threshold, CannyThresholds};
pub use compose::{compose, decode_onehot, encode_onehot, make_structure_mask, LabelTensor};
pub use edit::{EditKind, EditOp};
pub use maps::{CompositeLabel, EdgeSketch, LabelMap, StructureMask};
