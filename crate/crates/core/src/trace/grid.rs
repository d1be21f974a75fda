use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::Rect;

/// Fixed patch tiling of a frame. The last patch row and column absorb the
/// remainder, so `nc = max(1, frame_w / patch_w)` and likewise for rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct PatchGrid {
    frame_w: usize,
    frame_h: usize,
    patch_w: usize,
    patch_h: usize,
    nr: usize,
    nc: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    frame_w: usize,
    frame_h: usize,
    patch_w: usize,
    patch_h: usize,
}

impl TryFrom<GridSpec> for PatchGrid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        PatchGrid::new(s.frame_w, s.frame_h, s.patch_w, s.patch_h)
    }
}

impl From<PatchGrid> for GridSpec {
    fn from(g: PatchGrid) -> Self {
        GridSpec {
            frame_w: g.frame_w,
            frame_h: g.frame_h,
            patch_w: g.patch_w,
            patch_h: g.patch_h,
        }
    }
}

pub const DEFAULT_PATCH_W: usize = 170;
pub const DEFAULT_PATCH_H: usize = 160;

impl PatchGrid {
    pub fn new(frame_w: usize, frame_h: usize, patch_w: usize, patch_h: usize) -> Result<Self> {
        if frame_w == 0 || frame_h == 0 || patch_w == 0 || patch_h == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        Ok(PatchGrid {
            frame_w,
            frame_h,
            patch_w,
            patch_h,
            nr: (frame_h / patch_h).max(1),
            nc: (frame_w / patch_w).max(1),
        })
    }

    pub fn with_default_patches(frame_w: usize, frame_h: usize) -> Result<Self> {
        Self::new(frame_w, frame_h, DEFAULT_PATCH_W, DEFAULT_PATCH_H)
    }

    pub fn frame_w(&self) -> usize {
        self.frame_w
    }
    pub fn frame_h(&self) -> usize {
        self.frame_h
    }
    pub fn patch_w(&self) -> usize {
        self.patch_w
    }
    pub fn patch_h(&self) -> usize {
        self.patch_h
    }
    pub fn rows(&self) -> usize {
        self.nr
    }
    pub fn cols(&self) -> usize {
        self.nc
    }

    pub fn num_patches(&self) -> usize {
        self.nr * self.nc
    }

    pub fn frame_area(&self) -> usize {
        self.frame_w * self.frame_h
    }

    pub fn patch_index(&self, row: usize, col: usize) -> usize {
        row * self.nc + col
    }

    /// Pixel span `[start, end)` of patch column `col`.
    pub fn col_span(&self, col: usize) -> (usize, usize) {
        span(col, self.nc, self.patch_w, self.frame_w)
    }

    pub fn row_span(&self, row: usize) -> (usize, usize) {
        span(row, self.nr, self.patch_h, self.frame_h)
    }

    pub fn col_of(&self, x: usize) -> usize {
        (x / self.patch_w).min(self.nc - 1)
    }

    pub fn row_of(&self, y: usize) -> usize {
        (y / self.patch_h).min(self.nr - 1)
    }

    pub fn patch_of(&self, x: usize, y: usize) -> usize {
        self.patch_index(self.row_of(y), self.col_of(x))
    }

    pub fn patch_rect(&self, patch: usize) -> Rect {
        let (x0, x1) = self.col_span(patch % self.nc);
        let (y0, y1) = self.row_span(patch / self.nc);
        Rect::new(x0 as i64, y0 as i64, x1 - x0, y1 - y0)
    }

    pub fn patch_area(&self, patch: usize) -> usize {
        self.patch_rect(patch).area()
    }
}

fn span(i: usize, n: usize, size: usize, total: usize) -> (usize, usize) {
    let start = i * size;
    let end = if i + 1 == n { total } else { start + size };
    (start, end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_480p_grid_has_fifteen_patches() {
        let g = PatchGrid::with_default_patches(854, 480).unwrap();
        assert_eq!((g.rows(), g.cols()), (3, 5));
        assert_eq!(g.num_patches(), 15);
        assert_eq!(g.col_span(4), (680, 854));
        assert_eq!(g.patch_rect(4).w, 174);
        assert_eq!(g.patch_index(2, 3), 13);
        assert_eq!(g.patch_of(853, 479), 14);
        assert_eq!(g.patch_of(170, 160), g.patch_index(1, 1));
    }

    #[test]
    fn every_pixel_in_exactly_one_patch() {
        let g = PatchGrid::new(23, 17, 5, 4).unwrap();
        let mut seen = vec![0u8; 23 * 17];
        for p in 0..g.num_patches() {
            let r = g.patch_rect(p);
            for y in r.y..r.bottom() {
                for x in r.x..r.right() {
                    seen[y as usize * 23 + x as usize] += 1;
                    assert_eq!(g.patch_of(x as usize, y as usize), p);
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn frame_smaller_than_patch_is_one_patch() {
        let g = PatchGrid::new(30, 20, 170, 160).unwrap();
        assert_eq!(g.num_patches(), 1);
        assert_eq!(g.patch_area(0), 600);
    }
}
