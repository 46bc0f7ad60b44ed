//! PNG encoding of grids and images, with sidecar JSON manifests.
//!
//! Label and composite PNGs hold raw class indices in 8-bit grayscale;
//! sketches hold 0 or 255. Images are 16-bit grayscale mapping `[-1, 1]`
//! onto `0..=65535`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spgan_core::labelkit::{CompositeLabel, EdgeSketch, LabelMap};
use spgan_core::Image;

use crate::error::{read, write, Error, Result};

/// Sidecar describing what a PNG grid means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sidecar {
    Label {
        width: usize,
        height: usize,
        class_names: Vec<String>,
    },
    Sketch {
        width: usize,
        height: usize,
        canny_low: f64,
        canny_high: f64,
    },
    Composite {
        width: usize,
        height: usize,
        class_names: Vec<String>,
        sketch_class: u8,
    },
}

impl Sidecar {
    pub fn of_label(l: &LabelMap) -> Self {
        Sidecar::Label {
            width: l.width(),
            height: l.height(),
            class_names: l.class_names().to_vec(),
        }
    }

    pub fn of_sketch(s: &EdgeSketch) -> Self {
        Sidecar::Sketch {
            width: s.width(),
            height: s.height(),
            canny_low: s.canny_low,
            canny_high: s.canny_high,
        }
    }

    pub fn of_composite(c: &CompositeLabel) -> Self {
        Sidecar::Composite {
            width: c.width(),
            height: c.height(),
            class_names: c.class_names().to_vec(),
            sketch_class: c.sketch_class(),
        }
    }

    fn size(&self) -> (usize, usize) {
        match *self {
            Sidecar::Label { width, height, .. } | Sidecar::Sketch { width, height, .. } | Sidecar::Composite { width, height, .. } => (width, height),
        }
    }
}

/// A decoded 8-bit grayscale PNG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn encode(width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        enc.set_compression(png::Compression::Default);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

pub fn encode_gray8(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode(width, height, png::BitDepth::Eight, data)
}

fn decode(bytes: &[u8], name: &str) -> Result<(png::OutputInfo, Vec<u8>)> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::format(name, "png", e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(name, "png", e.to_string()))?;
    buf.truncate(info.buffer_size());
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(name, "color_type", format!("expected grayscale, got {:?}", info.color_type)));
    }
    Ok((info, buf))
}

pub fn decode_gray8(bytes: &[u8], name: &str) -> Result<Gray8> {
    let (info, data) = decode(bytes, name)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(name, "bit_depth", format!("expected 8-bit, got {:?}", info.bit_depth)));
    }
    Ok(Gray8 {
        width: info.width as usize,
        height: info.height as usize,
        data,
    })
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    let mut data = Vec::with_capacity(image.data().len() * 2);
    for &v in image.data() {
        let q = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 65535.0).round() as u16;
        data.extend_from_slice(&q.to_be_bytes());
    }
    encode(image.width(), image.height(), png::BitDepth::Sixteen, &data)
}

/// Decode an 8- or 16-bit grayscale PNG into `[-1, 1]`.
pub fn decode_image(bytes: &[u8], name: &str) -> Result<Image> {
    let (info, data) = decode(bytes, name)?;
    let values: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => data.iter().map(|&v| f64::from(v) / 255.0 * 2.0 - 1.0).collect(),
        png::BitDepth::Sixteen => data.chunks_exact(2).map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0 * 2.0 - 1.0).collect(),
        other => return Err(Error::format(name, "bit_depth", format!("expected 8 or 16 bits, got {other:?}"))),
    };
    Ok(Image::new(info.width as usize, info.height as usize, values)?)
}

/// Build a label map from raw indices, naming the first offending pixel.
pub fn label_from_gray(g: Gray8, class_names: Vec<String>, name: &str) -> Result<LabelMap> {
    check_classes(&g, class_names.len(), name)?;
    Ok(LabelMap::new(g.width, g.height, class_names, g.data)?)
}

pub fn composite_from_gray(g: Gray8, class_names: Vec<String>, name: &str) -> Result<CompositeLabel> {
    check_classes(&g, class_names.len() + 1, name)?;
    Ok(CompositeLabel::new(g.width, g.height, class_names, g.data)?)
}

fn check_classes(g: &Gray8, limit: usize, name: &str) -> Result<()> {
    if let Some(i) = g.data.iter().position(|&v| usize::from(v) >= limit) {
        let (x, y) = (i % g.width, i / g.width);
        return Err(Error::format(name, "grid", format!("class index {} at ({x}, {y}) is not below {limit}", g.data[i])));
    }
    Ok(())
}

/// Sketch PNGs store edges as 255; 1 is accepted as well.
pub fn sketch_from_gray(g: Gray8, canny_low: f64, canny_high: f64, name: &str) -> Result<EdgeSketch> {
    let mut grid = Vec::with_capacity(g.data.len());
    for (i, &v) in g.data.iter().enumerate() {
        grid.push(match v {
            0 => 0,
            1 | 255 => 1,
            _ => {
                let (x, y) = (i % g.width, i / g.width);
                return Err(Error::format(name, "grid", format!("sketch value {v} at ({x}, {y}) is not binary")));
            }
        });
    }
    Ok(EdgeSketch::new(g.width, g.height, grid, canny_low, canny_high)?)
}

pub fn label_png(l: &LabelMap) -> Vec<u8> {
    encode_gray8(l.width(), l.height(), l.grid())
}

pub fn sketch_png(s: &EdgeSketch) -> Vec<u8> {
    let data: Vec<u8> = s.grid().iter().map(|&v| v * 255).collect();
    encode_gray8(s.width(), s.height(), &data)
}

pub fn composite_png(c: &CompositeLabel) -> Vec<u8> {
    encode_gray8(c.width(), c.height(), c.grid())
}

/// `x.png` → `x.json`.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

pub fn sidecar_json(s: &Sidecar) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(s).expect("sidecar serializes");
    v.push(b'\n');
    v
}

fn write_pair(path: &Path, png: &[u8], sidecar: &Sidecar) -> Result<()> {
    write(path, png)?;
    write(&sidecar_path(path), &sidecar_json(sidecar))
}

pub fn read_sidecar(png: &Path) -> Result<Sidecar> {
    let path = sidecar_path(png);
    let bytes = read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path.display().to_string(), "sidecar", e.to_string()))
}

fn read_grid(path: &Path, sidecar: &Sidecar) -> Result<Gray8> {
    let name = path.display().to_string();
    let g = decode_gray8(&read(path)?, &name)?;
    let (w, h) = sidecar.size();
    if (g.width, g.height) != (w, h) {
        return Err(Error::format(name, "width", format!("PNG is {}×{}, sidecar says {w}×{h}", g.width, g.height)));
    }
    Ok(g)
}

pub fn save_label(path: &Path, l: &LabelMap) -> Result<()> {
    write_pair(path, &label_png(l), &Sidecar::of_label(l))
}

pub fn load_label(path: &Path) -> Result<LabelMap> {
    let name = path.display().to_string();
    match read_sidecar(path)? {
        s @ Sidecar::Label { .. } => {
            let g = read_grid(path, &s)?;
            let Sidecar::Label { class_names, .. } = s else { unreachable!() };
            label_from_gray(g, class_names, &name)
        }
        _ => Err(Error::format(name, "kind", "expected a label sidecar")),
    }
}

pub fn save_sketch(path: &Path, s: &EdgeSketch) -> Result<()> {
    write_pair(path, &sketch_png(s), &Sidecar::of_sketch(s))
}

pub fn load_sketch(path: &Path) -> Result<EdgeSketch> {
    let name = path.display().to_string();
    match read_sidecar(path)? {
        s @ Sidecar::Sketch { .. } => {
            let g = read_grid(path, &s)?;
            let Sidecar::Sketch { canny_low, canny_high, .. } = s else { unreachable!() };
            sketch_from_gray(g, canny_low, canny_high, &name)
        }
        _ => Err(Error::format(name, "kind", "expected a sketch sidecar")),
    }
}

pub fn save_composite(path: &Path, c: &CompositeLabel) -> Result<()> {
    write_pair(path, &composite_png(c), &Sidecar::of_composite(c))
}

pub fn load_composite(path: &Path) -> Result<CompositeLabel> {
    let name = path.display().to_string();
    match read_sidecar(path)? {
        s @ Sidecar::Composite { .. } => {
            let g = read_grid(path, &s)?;
            let Sidecar::Composite { class_names, sketch_class, .. } = s else { unreachable!() };
            if usize::from(sketch_class) != class_names.len() {
                return Err(Error::format(name, "sketch_class", format!("{sketch_class} must equal the class count {}", class_names.len())));
            }
            composite_from_gray(g, class_names, &name)
        }
        _ => Err(Error::format(name, "kind", "expected a composite sidecar")),
    }
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    write(path, &encode_image(image))
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&read(path)?, &path.display().to_string())
}
