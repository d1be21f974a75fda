use crate::pixels::Rect;

use super::{BlockMode, MotionVector, PatchGrid, Trace};

/// Part of a block lying inside a single patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBlock {
    /// Index of the parent block within its frame.
    pub block: usize,
    pub patch: usize,
    pub rect: Rect,
    /// `Some((ref_frame_index, mv))` for inter sub-blocks.
    pub inter: Option<(usize, MotionVector)>,
    /// `(ref_patch, pixel_count)` pairs, ascending by patch. Empty for intra.
    pub refs: Vec<(usize, usize)>,
}

/// Number of `k in 0..len` whose edge-clamped coordinate
/// `clamp(start + k, 0, limit - 1)` falls inside `[a, b)`.
pub fn clamped_count(start: i64, len: usize, limit: usize, a: usize, b: usize) -> usize {
    let lo = if a > 0 { a as i64 } else { i64::MIN / 2 };
    let hi = if b < limit { b as i64 } else { i64::MAX / 2 };
    let k0 = (lo - start).max(0);
    let k1 = (hi - start).min(len as i64);
    (k1 - k0).max(0) as usize
}

fn patch_range(lo: usize, hi_excl: usize, of: impl Fn(usize) -> usize) -> std::ops::RangeInclusive<usize> {
    of(lo)..=of(hi_excl - 1)
}

/// Reference pairs for the motion-compensated source of `rect` displaced by `mv`.
pub(crate) fn reference_pairs(grid: &PatchGrid, rect: Rect, mv: MotionVector) -> Vec<(usize, usize)> {
    let (w, h) = (grid.frame_w(), grid.frame_h());
    let sx = rect.x + mv.dx as i64;
    let sy = rect.y + mv.dy as i64;
    let clamp_x = |v: i64| v.clamp(0, w as i64 - 1) as usize;
    let clamp_y = |v: i64| v.clamp(0, h as i64 - 1) as usize;
    let cols = grid.col_of(clamp_x(sx))..=grid.col_of(clamp_x(sx + rect.w as i64 - 1));
    let rows = grid.row_of(clamp_y(sy))..=grid.row_of(clamp_y(sy + rect.h as i64 - 1));

    let mut pairs = Vec::new();
    for r in rows {
        let (y0, y1) = grid.row_span(r);
        let ny = clamped_count(sy, rect.h, h, y0, y1);
        if ny == 0 {
            continue;
        }
        for c in cols.clone() {
            let (x0, x1) = grid.col_span(c);
            let nx = clamped_count(sx, rect.w, w, x0, x1);
            if nx > 0 {
                pairs.push((grid.patch_index(r, c), nx * ny));
            }
        }
    }
    pairs
}

/// Splits every block into per-patch sub-blocks, ordered by
/// (frame, block, patch row, patch col).
pub fn split_blocks(t: &Trace) -> Vec<Vec<SubBlock>> {
    let g = &t.grid;
    t.frames
        .iter()
        .map(|f| {
            let mut out = Vec::new();
            for (bi, b) in f.blocks.iter().enumerate() {
                let (bx, by) = (b.rect.x as usize, b.rect.y as usize);
                let rows = patch_range(by, by + b.rect.h, |y| g.row_of(y));
                let cols = patch_range(bx, bx + b.rect.w, |x| g.col_of(x));
                for r in rows {
                    for c in cols.clone() {
                        let patch = g.patch_index(r, c);
                        let Some(rect) = b.rect.intersect(&g.patch_rect(patch)) else {
                            continue;
                        };
                        let (inter, refs) = match b.mode {
                            BlockMode::Intra => (None, Vec::new()),
                            BlockMode::Inter { ref_slot, mv } => (
                                Some((f.ref_frames[ref_slot], mv)),
                                reference_pairs(g, rect, mv),
                            ),
                        };
                        out.push(SubBlock {
                            block: bi,
                            patch,
                            rect,
                            inter,
                            refs,
                        });
                    }
                }
            }
            out
        })
        .collect()
}
