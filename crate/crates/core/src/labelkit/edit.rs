use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

use super::{EdgeSketch, LabelMap};

/// Names of the supported edit operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Translate,
    Scale,
    Dilate,
    Erode,
    AddRegion,
    RemoveRegion,
    DrawSketch,
    EraseSketch,
}

impl EditKind {
    pub const ALL: [EditKind; 8] = [
        EditKind::Translate,
        EditKind::Scale,
        EditKind::Dilate,
        EditKind::Erode,
        EditKind::AddRegion,
        EditKind::RemoveRegion,
        EditKind::DrawSketch,
        EditKind::EraseSketch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EditKind::Translate => "translate",
            EditKind::Scale => "scale",
            EditKind::Dilate => "dilate",
            EditKind::Erode => "erode",
            EditKind::AddRegion => "add_region",
            EditKind::RemoveRegion => "remove_region",
            EditKind::DrawSketch => "draw_sketch",
            EditKind::EraseSketch => "erase_sketch",
        }
    }

    pub fn applies_to_sketch(self) -> bool {
        matches!(self, EditKind::DrawSketch | EditKind::EraseSketch)
    }
}

impl FromStr for EditKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match EditKind::ALL.iter().find(|k| k.name() == s) {
            Some(k) => Ok(*k),
            None => bail!(Parameter, "unknown edit kind {s:?}"),
        }
    }
}

/// A single edit of a label map or sketch. Coordinates are pixels; anything
/// falling outside the frame is clipped. Later edits overwrite earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    Translate { class: u8, dx: i32, dy: i32 },
    /// Scale about the region centroid.
    Scale { class: u8, factor: f64 },
    Dilate { class: u8, radius: u32 },
    Erode { class: u8, radius: u32 },
    /// Fill a polygon (pixel centres, even-odd rule) with `class`.
    AddRegion { class: u8, polygon: Vec<(f64, f64)> },
    RemoveRegion { class: u8 },
    DrawSketch { stroke: Vec<(f64, f64)>, width: u32 },
    EraseSketch { stroke: Vec<(f64, f64)>, width: u32 },
}

impl EditOp {
    pub fn kind(&self) -> EditKind {
        match self {
            EditOp::Translate { .. } => EditKind::Translate,
            EditOp::Scale { .. } => EditKind::Scale,
            EditOp::Dilate { .. } => EditKind::Dilate,
            EditOp::Erode { .. } => EditKind::Erode,
            EditOp::AddRegion { .. } => EditKind::AddRegion,
            EditOp::RemoveRegion { .. } => EditKind::RemoveRegion,
            EditOp::DrawSketch { .. } => EditKind::DrawSketch,
            EditOp::EraseSketch { .. } => EditKind::EraseSketch,
        }
    }

    fn class(&self) -> Option<u8> {
        match *self {
            EditOp::Translate { class, .. }
            | EditOp::Scale { class, .. }
            | EditOp::Dilate { class, .. }
            | EditOp::Erode { class, .. }
            | EditOp::AddRegion { class, .. }
            | EditOp::RemoveRegion { class } => Some(class),
            _ => None,
        }
    }
}

impl LabelMap {
    pub fn apply_edit(&self, op: &EditOp) -> Result<LabelMap> {
        if op.kind().applies_to_sketch() {
            bail!(Parameter, "{} edits apply to sketches, not label maps", op.kind().name());
        }
        let class = op.class().expect("label op has a class");
        if usize::from(class) >= self.num_classes() {
            bail!(Parameter, "class {class} out of range for {} classes", self.num_classes());
        }
        let (w, h) = (self.width(), self.height());
        let src = self.grid();
        let mut out = src.to_vec();
        match op {
            EditOp::Translate { dx, dy, .. } => {
                clear(&mut out, class);
                for y in 0..h {
                    for x in 0..w {
                        if src[y * w + x] != class {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + i64::from(*dx), y as i64 + i64::from(*dy));
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            out[ny as usize * w + nx as usize] = class;
                        }
                    }
                }
            }
            EditOp::Scale { factor, .. } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    bail!(Parameter, "scale factor must be positive, got {factor}");
                }
                if let Some((cx, cy)) = centroid(src, w, class) {
                    clear(&mut out, class);
                    for y in 0..h {
                        for x in 0..w {
                            let sx = cx + (x as f64 - cx) / factor;
                            let sy = cy + (y as f64 - cy) / factor;
                            let (sx, sy) = (libm::round(sx), libm::round(sy));
                            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                                if src[sy as usize * w + sx as usize] == class {
                                    out[y * w + x] = class;
                                }
                            }
                        }
                    }
                }
            }
            EditOp::Dilate { radius, .. } => {
                let r = *radius as isize;
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        if src[y as usize * w + x as usize] != class {
                            continue;
                        }
                        for ny in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                            for nx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                                out[ny as usize * w + nx as usize] = class;
                            }
                        }
                    }
                }
            }
            EditOp::Erode { radius, .. } => {
                let r = *radius as isize;
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        if src[y as usize * w + x as usize] != class {
                            continue;
                        }
                        let mut keep = true;
                        'window: for ny in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                            for nx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                                if src[ny as usize * w + nx as usize] != class {
                                    keep = false;
                                    break 'window;
                                }
                            }
                        }
                        if !keep {
                            out[y as usize * w + x as usize] = 0;
                        }
                    }
                }
            }
            EditOp::AddRegion { polygon, .. } => {
                if polygon.len() < 3 {
                    bail!(Parameter, "a region polygon needs at least 3 vertices, got {}", polygon.len());
                }
                if polygon.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
                    bail!(Parameter, "polygon vertices must be finite");
                }
                for y in 0..h {
                    for x in 0..w {
                        if point_in_polygon(x as f64, y as f64, polygon) {
                            out[y * w + x] = class;
                        }
                    }
                }
            }
            EditOp::RemoveRegion { .. } => {
                if class == 0 {
                    bail!(Parameter, "background cannot be removed");
                }
                clear(&mut out, class);
            }
            EditOp::DrawSketch { .. } | EditOp::EraseSketch { .. } => unreachable!(),
        }
        self.with_grid(out)
    }
}

impl EdgeSketch {
    pub fn apply_edit(&self, op: &EditOp) -> Result<EdgeSketch> {
        let (stroke, width, value) = match op {
            EditOp::DrawSketch { stroke, width } => (stroke, *width, 1),
            EditOp::EraseSketch { stroke, width } => (stroke, *width, 0),
            other => bail!(Parameter, "{} edits apply to label maps, not sketches", other.kind().name()),
        };
        if stroke.is_empty() {
            bail!(Parameter, "a stroke needs at least one point");
        }
        if stroke.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
            bail!(Parameter, "stroke points must be finite");
        }
        let (w, h) = (self.width(), self.height());
        let mut out = self.grid().to_vec();
        let r = (width.max(1) as isize - 1) / 2;
        let mut stamp = |px: f64, py: f64| {
            let (cx, cy) = (libm::round(px) as isize, libm::round(py) as isize);
            for y in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
                for x in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                    out[y as usize * w + x as usize] = value;
                }
            }
        };
        stamp(stroke[0].0, stroke[0].1);
        for seg in stroke.windows(2) {
            let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
            let n = libm::ceil(libm::fmax(libm::fabs(x1 - x0), libm::fabs(y1 - y0))).min(1e5) as usize;
            for i in 1..=n.max(1) {
                let t = i as f64 / n.max(1) as f64;
                stamp(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            }
        }
        self.with_grid(out)
    }

    /// Shift by whole pixels; vacated pixels become empty.
    pub fn translated(&self, dx: i32, dy: i32) -> EdgeSketch {
        let (w, h) = (self.width(), self.height());
        let mut out = alloc::vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x as i64 - i64::from(dx), y as i64 - i64::from(dy));
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    out[y * w + x] = self.get(sx as usize, sy as usize);
                }
            }
        }
        self.with_grid(out).expect("binary preserved")
    }
}

fn clear(grid: &mut [u8], class: u8) {
    for v in grid.iter_mut().filter(|v| **v == class) {
        *v = 0;
    }
}

fn centroid(grid: &[u8], w: usize, class: u8) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in grid.iter().enumerate().filter(|(_, v)| **v == class) {
        sx += (i % w) as f64;
        sy += (i / w) as f64;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::{String, ToString};

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| i.to_string()).collect()
    }

    fn map(w: usize, h: usize, set: &[(usize, usize, u8)]) -> LabelMap {
        let mut g = alloc::vec![0; w * h];
        for &(x, y, c) in set {
            g[y * w + x] = c;
        }
        LabelMap::new(w, h, names(3), g).unwrap()
    }

    #[test]
    fn zero_translate_is_identity() {
        let m = map(5, 5, &[(1, 1, 1), (2, 3, 2)]);
        assert_eq!(m.apply_edit(&EditOp::Translate { class: 1, dx: 0, dy: 0 }).unwrap(), m);
    }

    #[test]
    fn translate_clips_at_frame() {
        let m = map(4, 4, &[(3, 0, 1)]);
        let r = m.apply_edit(&EditOp::Translate { class: 1, dx: 2, dy: 0 }).unwrap();
        assert_eq!(r.count(1), 0);
    }

    #[test]
    fn erode_undoes_block() {
        let m = map(7, 7, &[(3, 3, 1)]);
        let d = m.apply_edit(&EditOp::Dilate { class: 1, radius: 1 }).unwrap();
        let e = d.apply_edit(&EditOp::Erode { class: 1, radius: 1 }).unwrap();
        assert_eq!(e, m);
    }

    #[test]
    fn scale_grows_region() {
        let mut set = Vec::new();
        for y in 3..5 {
            for x in 3..5 {
                set.push((x, y, 1));
            }
        }
        let m = map(8, 8, &set);
        let r = m.apply_edit(&EditOp::Scale { class: 1, factor: 2.0 }).unwrap();
        assert!(r.count(1) > m.count(1));
        assert!(m.apply_edit(&EditOp::Scale { class: 1, factor: 0.0 }).is_err());
    }

    #[test]
    fn add_region_fills_polygon() {
        let m = map(6, 6, &[]);
        let poly = alloc::vec![(0.5, 0.5), (3.5, 0.5), (3.5, 3.5), (0.5, 3.5)];
        let r = m.apply_edit(&EditOp::AddRegion { class: 2, polygon: poly }).unwrap();
        assert_eq!(r.count(2), 9);
    }

    #[test]
    fn wrong_target_and_kind() {
        let m = map(4, 4, &[]);
        let s = EdgeSketch::empty(4, 4);
        let draw = EditOp::DrawSketch { stroke: alloc::vec![(0.0, 0.0)], width: 1 };
        assert!(matches!(m.apply_edit(&draw), Err(Error::Parameter(_))));
        assert!(matches!(s.apply_edit(&EditOp::RemoveRegion { class: 1 }), Err(Error::Parameter(_))));
        assert!(matches!(m.apply_edit(&EditOp::RemoveRegion { class: 7 }), Err(Error::Parameter(_))));
        assert!(matches!("warp".parse::<EditKind>(), Err(Error::Parameter(_))));
        assert_eq!("add_region".parse::<EditKind>().unwrap(), EditKind::AddRegion);
    }

    #[test]
    fn stroke_draw_and_erase() {
        let s = EdgeSketch::empty(8, 8);
        let line = alloc::vec![(0.0, 2.0), (7.0, 2.0)];
        let d = s.apply_edit(&EditOp::DrawSketch { stroke: line.clone(), width: 1 }).unwrap();
        assert_eq!(d.grid().iter().filter(|&&v| v == 1).count(), 8);
        let e = d.apply_edit(&EditOp::EraseSketch { stroke: line, width: 3 }).unwrap();
        assert_eq!(e, s);
    }
}
