use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// One square inference window and the part of the frame it is responsible for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub owned: Rect,
}

/// Tiling of a frame into equal square patches. The last patch on each axis
/// is pulled back to end at the border, so it may overlap its neighbour;
/// ownership rectangles still partition the frame exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    /// Row-major over `(y0, x0)`.
    pub patches: Vec<Patch>,
}

/// Origins `0, p, 2p, ...` with the last one clamped to `extent - p`, and the
/// owned interval of each.
fn axis_tiles(extent: usize, patch: usize) -> Vec<(usize, usize, usize)> {
    let mut origins = Vec::new();
    let mut o = 0;
    while o + patch <= extent {
        origins.push(o);
        o += patch;
    }
    if origins.last().map_or(true, |&last| last + patch < extent) {
        origins.push(extent - patch);
    }
    origins
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            let end = origins.get(k + 1).copied().unwrap_or(extent);
            (o, o, end)
        })
        .collect()
}

pub fn crop_patches(height: usize, width: usize, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 || patch_size > height || patch_size > width {
        return Err(Error::Data(format!(
            "patch size {patch_size} does not fit a {width}x{height} frame"
        )));
    }
    let ys = axis_tiles(height, patch_size);
    let xs = axis_tiles(width, patch_size);
    let mut patches = Vec::with_capacity(ys.len() * xs.len());
    for &(y0, oy0, oy1) in &ys {
        for &(x0, ox0, ox1) in &xs {
            patches.push(Patch { x0, y0, owned: Rect { x0: ox0, y0: oy0, x1: ox1, y1: oy1 } });
        }
    }
    Ok(PatchGrid { height, width, patch_size, patches })
}

impl PatchGrid {
    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.patches.iter().map(|p| (p.x0, p.y0)).collect()
    }

    pub fn find(&self, x0: usize, y0: usize) -> Option<&Patch> {
        self.patches.iter().find(|p| p.x0 == x0 && p.y0 == y0)
    }
}
