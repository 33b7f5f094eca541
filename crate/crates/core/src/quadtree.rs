//! Quadtree segmentation: level 1 is the whole image, level 2 a 2×2 grid,
//! level 3 a 4×4 grid cut directly from the original.

use thiserror::Error;

use crate::raster::{RasterImage, CHANNELS};

pub const MAX_LEVEL: u32 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuadtreeError {
    #[error("quadtree level {0} out of range (expected 1..=3)")]
    LevelOutOfRange(u32),
    #[error("{width}x{height} image is too small for level {level} ({side}x{side} grid)")]
    TooSmall {
        width: usize,
        height: usize,
        level: u32,
        side: usize,
    },
    #[error("patch set does not fit declared {width}x{height} parent: {reason}")]
    Dimension {
        width: usize,
        height: usize,
        reason: String,
    },
}

/// Patches per side at `level`.
pub fn grid_side(level: u32) -> usize {
    1 << (level - 1)
}

pub fn patch_count(level: u32) -> usize {
    grid_side(level) * grid_side(level)
}

/// `floor(dim * i / side)` for i = 0..=side.
pub fn cut_points(dim: usize, side: usize) -> Vec<usize> {
    (0..=side).map(|i| dim * i / side).collect()
}

/// Stable cache identifier for one patch.
pub fn patch_id(parent_id: &str, level: u32, row: usize, col: usize) -> String {
    format!("{parent_id}#L{level}R{row}C{col}")
}

/// All patch identifiers for `parent_id` at `level`, in row-major grid order.
pub fn patch_ids(parent_id: &str, level: u32) -> Vec<String> {
    let side = grid_side(level);
    (0..side)
        .flat_map(|r| (0..side).map(move |c| (r, c)))
        .map(|(r, c)| patch_id(parent_id, level, r, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub image: RasterImage,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    pub parent_id: String,
    pub level: u32,
    /// Row-major by (row, col).
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = String> + '_ {
        self.patches
            .iter()
            .map(|p| patch_id(&self.parent_id, self.level, p.row, p.col))
    }
}

pub fn check_level(level: u32) -> Result<(), QuadtreeError> {
    if (1..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(QuadtreeError::LevelOutOfRange(level))
    }
}

pub fn split(image: &RasterImage, parent_id: &str, level: u32) -> Result<PatchSet, QuadtreeError> {
    check_level(level)?;
    let side = grid_side(level);
    if image.width() < side || image.height() < side {
        return Err(QuadtreeError::TooSmall {
            width: image.width(),
            height: image.height(),
            level,
            side,
        });
    }
    let xs = cut_points(image.width(), side);
    let ys = cut_points(image.height(), side);
    let mut patches = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let img = image
                .crop(
                    xs[col],
                    ys[row],
                    xs[col + 1] - xs[col],
                    ys[row + 1] - ys[row],
                )
                .expect("cut points yield nonempty in-bounds patches");
            patches.push(Patch {
                image: img,
                row,
                col,
            });
        }
    }
    Ok(PatchSet {
        parent_id: parent_id.to_string(),
        level,
        patches,
    })
}

/// Inverse of [`split`]; fails if the patches don't tile a `parent_w`×`parent_h` image.
pub fn reassemble(
    set: &PatchSet,
    parent_w: usize,
    parent_h: usize,
) -> Result<RasterImage, QuadtreeError> {
    let dim_err = |reason: String| QuadtreeError::Dimension {
        width: parent_w,
        height: parent_h,
        reason,
    };
    check_level(set.level)?;
    let side = grid_side(set.level);
    if set.patches.len() != side * side {
        return Err(dim_err(format!(
            "{} patches for level {}",
            set.patches.len(),
            set.level
        )));
    }
    if parent_w < side || parent_h < side {
        return Err(dim_err("parent smaller than grid".into()));
    }
    let xs = cut_points(parent_w, side);
    let ys = cut_points(parent_h, side);
    let mut seen = vec![false; side * side];
    let mut pixels = vec![0u8; parent_w * parent_h * CHANNELS];
    for p in &set.patches {
        if p.row >= side
            || p.col >= side
            || std::mem::replace(&mut seen[p.row * side + p.col], true)
        {
            return Err(dim_err(format!(
                "bad or repeated grid cell ({}, {})",
                p.row, p.col
            )));
        }
        let (w, h) = (xs[p.col + 1] - xs[p.col], ys[p.row + 1] - ys[p.row]);
        if p.image.width() != w || p.image.height() != h {
            return Err(dim_err(format!(
                "patch ({}, {}) is {}x{}, expected {w}x{h}",
                p.row,
                p.col,
                p.image.width(),
                p.image.height()
            )));
        }
        let src = p.image.pixels();
        for y in 0..h {
            let dst = ((ys[p.row] + y) * parent_w + xs[p.col]) * CHANNELS;
            pixels[dst..dst + w * CHANNELS]
                .copy_from_slice(&src[y * w * CHANNELS..(y + 1) * w * CHANNELS]);
        }
    }
    RasterImage::new(parent_w, parent_h, pixels).map_err(|e| dim_err(e.to_string()))
}
