//! Operations shared by the command line and the service, so both produce
//! the same bytes for the same inputs.

use spgan_core::augbench::synthesize_at;
use spgan_core::labelkit::{compose, extract_sketch, make_structure_mask, CannyThresholds, EditOp, StructureMask};
use spgan_core::netcore::Generator;

use crate::error::{Error, Result};
use crate::io::{
    composite_from_gray, composite_png, decode_gray8, decode_image, encode_image, label_from_gray, label_png, sketch_from_gray, sketch_png,
    Sidecar,
};

/// Masks store structure pixels as 1 or 255.
fn mask_from_png(bytes: &[u8], name: &str) -> Result<StructureMask> {
    let g = decode_gray8(bytes, name)?;
    let mut grid = Vec::with_capacity(g.data.len());
    for (i, &v) in g.data.iter().enumerate() {
        grid.push(match v {
            0 => 0,
            1 | 255 => 1,
            _ => return Err(Error::format(name, "grid", format!("mask value {v} at ({}, {}) is not binary", i % g.width, i / g.width))),
        });
    }
    Ok(StructureMask::new(g.width, g.height, grid)?)
}

/// Superpose a sketch on a label map. Without a mask, every non-background
/// pixel is structure.
pub fn compose_png(label: &[u8], class_names: Vec<String>, sketch: &[u8], mask: Option<&[u8]>) -> Result<(Vec<u8>, Sidecar)> {
    let label = label_from_gray(decode_gray8(label, "label")?, class_names, "label")?;
    let sketch = sketch_from_gray(decode_gray8(sketch, "sketch")?, 0.0, 0.0, "sketch")?;
    let mask = match mask {
        Some(m) => mask_from_png(m, "mask")?,
        None => make_structure_mask(&label),
    };
    let comp = compose(&label, &mask, &sketch)?;
    Ok((composite_png(&comp), Sidecar::of_composite(&comp)))
}

/// Canny sketch of an image PNG.
pub fn sketch_png_of(image: &[u8], thresholds: CannyThresholds) -> Result<(Vec<u8>, Sidecar)> {
    let image = decode_image(image, "image")?;
    let sketch = extract_sketch(&image, thresholds)?;
    Ok((sketch_png(&sketch), Sidecar::of_sketch(&sketch)))
}

/// Apply an edit to a label map PNG.
pub fn edit_label_png(label: &[u8], class_names: Vec<String>, op: &EditOp) -> Result<(Vec<u8>, Sidecar)> {
    let label = label_from_gray(decode_gray8(label, "label")?, class_names, "label")?;
    let edited = label.apply_edit(op)?;
    Ok((label_png(&edited), Sidecar::of_label(&edited)))
}

/// Apply a stroke edit to a sketch PNG.
pub fn edit_sketch_png(sketch: &[u8], op: &EditOp) -> Result<(Vec<u8>, Sidecar)> {
    let sketch = sketch_from_gray(decode_gray8(sketch, "sketch")?, 0.0, 0.0, "sketch")?;
    let edited = sketch.apply_edit(op)?;
    Ok((sketch_png(&edited), Sidecar::of_sketch(&edited)))
}

/// Synthesize a 16-bit image PNG from a composite PNG. `num_classes`, when
/// given, must match the generator.
pub fn synthesize_png(g: &Generator, class_names: &[String], composite: &[u8], num_classes: Option<usize>) -> Result<(Vec<u8>, usize, usize)> {
    let expected = g.config().num_classes;
    if let Some(c) = num_classes {
        if c != expected {
            return Err(spgan_core::Error::Config(format!("request has {c} classes, checkpoint has {expected}")).into());
        }
    }
    if class_names.len() != expected {
        return Err(spgan_core::Error::Config(format!("{} class names for a {expected}-class generator", class_names.len())).into());
    }
    let comp = composite_from_gray(decode_gray8(composite, "composite")?, class_names.to_vec(), "composite")?;
    let image = synthesize_at(g, &comp)?;
    Ok((encode_image(&image), image.width(), image.height()))
}
