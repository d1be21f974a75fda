//! Coded-stream metadata: what a decoder exposes about every block of every
//! frame, plus the patch grid the scheduler works on.

mod grid;
mod io;
mod split;

pub use grid::{PatchGrid, DEFAULT_PATCH_H, DEFAULT_PATCH_W};
pub use io::{load_trace, read_trace, save_trace, write_trace, TRACE_MAGIC, TRACE_VERSION};
pub use split::{clamped_count, split_blocks, SubBlock};

use crate::error::{Error, Result};
use crate::pixels::{Plane, Rect};

/// Maximum number of reference frames a frame may use.
pub const MAX_REFS: usize = 3;

/// Integer-pel motion vector. The source pixel of a current pixel at `(x, y)`
/// is `(x + dx, y + dy)` in the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MotionVector {
    pub dx: i32,
    pub dy: i32,
}

impl MotionVector {
    pub fn new(dx: i32, dy: i32) -> Self {
        MotionVector { dx, dy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    Intra,
    /// `ref_slot` indexes the owning frame's `ref_frames`.
    Inter { ref_slot: usize, mv: MotionVector },
}

/// One coded block. The payload is the residual for inter blocks and the
/// decoded LR content for intra blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub rect: Rect,
    pub mode: BlockMode,
    pub payload: Plane,
}

impl BlockRecord {
    pub fn is_inter(&self) -> bool {
        matches!(self.mode, BlockMode::Inter { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub is_keyframe: bool,
    pub ref_frames: Vec<usize>,
    pub blocks: Vec<BlockRecord>,
}

impl FrameRecord {
    /// Reference frame index of an inter block, `None` for intra.
    pub fn block_ref(&self, block: &BlockRecord) -> Option<(usize, MotionVector)> {
        match block.mode {
            BlockMode::Intra => None,
            BlockMode::Inter { ref_slot, mv } => Some((self.ref_frames[ref_slot], mv)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub grid: PatchGrid,
    /// SR upscaling factor (HR width / LR width).
    pub scale: usize,
    pub frames: Vec<FrameRecord>,
}

pub const DEFAULT_SCALE: usize = 4;

impl Trace {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_w(&self) -> usize {
        self.grid.frame_w()
    }

    pub fn frame_h(&self) -> usize {
        self.grid.frame_h()
    }

    pub fn keyframes(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.iter().filter(|f| f.is_keyframe).map(|f| f.frame_index)
    }

    /// Checks every structural invariant of the trace.
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::validation("scale", "scale must be at least 1"));
        }
        let (w, h) = (self.frame_w(), self.frame_h());
        let mut coverage = vec![0u8; w * h];
        for (pos, f) in self.frames.iter().enumerate() {
            if f.frame_index != pos {
                return Err(Error::validation(
                    "contiguity",
                    format!("frame at position {pos} has index {}", f.frame_index),
                ));
            }
            if f.ref_frames.len() > MAX_REFS {
                return Err(Error::validation(
                    "ref-count",
                    format!("frame {pos} has {} references", f.ref_frames.len()),
                ));
            }
            if let Some(&r) = f.ref_frames.iter().find(|&&r| r >= pos) {
                return Err(Error::validation(
                    "acyclicity",
                    format!("frame {pos} references frame {r}, which is not earlier"),
                ));
            }
            if f.is_keyframe && !f.ref_frames.is_empty() {
                return Err(Error::validation("keyframe", format!("keyframe {pos} has references")));
            }
            coverage.iter_mut().for_each(|c| *c = 0);
            for (bi, b) in f.blocks.iter().enumerate() {
                let at = || format!("frame {pos} block {bi}");
                if !b.rect.within(w, h) {
                    return Err(Error::validation("bounds", format!("{}: rect {:?} outside frame", at(), b.rect)));
                }
                if b.payload.width() != b.rect.w || b.payload.height() != b.rect.h {
                    return Err(Error::validation("payload", format!("{}: payload dims differ from rect", at())));
                }
                if let BlockMode::Inter { ref_slot, .. } = b.mode {
                    if f.is_keyframe {
                        return Err(Error::validation("keyframe", format!("{}: inter block in keyframe", at())));
                    }
                    if ref_slot >= f.ref_frames.len() {
                        return Err(Error::validation("ref-slot", format!("{}: slot {ref_slot} out of range", at())));
                    }
                }
                let (x0, y0) = (b.rect.x as usize, b.rect.y as usize);
                for y in y0..y0 + b.rect.h {
                    for c in &mut coverage[y * w + x0..y * w + x0 + b.rect.w] {
                        *c = c.saturating_add(1);
                    }
                }
            }
            if let Some(i) = coverage.iter().position(|&c| c != 1) {
                return Err(Error::validation(
                    "tiling",
                    format!(
                        "frame {pos}: pixel ({}, {}) covered {} times",
                        i % w,
                        i / w,
                        coverage[i]
                    ),
                ));
            }
        }
        Ok(())
    }
}
