//! Reference-structure diagnostics: how much later content motion-compensates
//! from each frame and each block, and the CLES effect size used to compare
//! degree distributions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::{BlockMode, Trace};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameDegree {
    pub frame_index: usize,
    pub is_keyframe: bool,
    pub degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDegree {
    pub frame_index: usize,
    pub block: usize,
    pub is_inter: bool,
    pub degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeReport {
    pub frames: Vec<FrameDegree>,
    pub blocks: Vec<BlockDegree>,
}

impl DegreeReport {
    pub fn keyframe_degrees(&self) -> Vec<f64> {
        self.frames.iter().filter(|f| f.is_keyframe).map(|f| f.degree).collect()
    }

    pub fn non_keyframe_degrees(&self) -> Vec<f64> {
        self.frames.iter().filter(|f| !f.is_keyframe).map(|f| f.degree).collect()
    }

    pub fn block_degrees(&self, inter: bool) -> Vec<f64> {
        self.blocks.iter().filter(|b| b.is_inter == inter).map(|b| b.degree).collect()
    }
}

/// Referencing-pixel count of each frame and block divided by its own pixel
/// count. Source pixels are edge-clamped, as in motion compensation.
pub fn degree_of_reference(t: &Trace) -> Result<DegreeReport> {
    t.validate()?;
    let (w, h) = (t.frame_w(), t.frame_h());
    // block id of every pixel, per frame
    let owner: Vec<Vec<u32>> = t
        .frames
        .iter()
        .map(|f| {
            let mut m = vec![0u32; w * h];
            for (bi, b) in f.blocks.iter().enumerate() {
                let (x0, y0) = (b.rect.x as usize, b.rect.y as usize);
                for y in y0..y0 + b.rect.h {
                    m[y * w + x0..y * w + x0 + b.rect.w].fill(bi as u32);
                }
            }
            m
        })
        .collect();
    let mut hits: Vec<Vec<u64>> = t.frames.iter().map(|f| vec![0; f.blocks.len()]).collect();

    for f in &t.frames {
        for b in &f.blocks {
            let BlockMode::Inter { ref_slot, mv } = b.mode else { continue };
            let r = f.ref_frames[ref_slot];
            let map = &owner[r];
            let counts = &mut hits[r];
            for y in b.rect.y..b.rect.bottom() {
                let sy = (y + mv.dy as i64).clamp(0, h as i64 - 1) as usize;
                for x in b.rect.x..b.rect.right() {
                    let sx = (x + mv.dx as i64).clamp(0, w as i64 - 1) as usize;
                    counts[map[sy * w + sx] as usize] += 1;
                }
            }
        }
    }

    let area = (w * h) as f64;
    let mut frames = Vec::with_capacity(t.num_frames());
    let mut blocks = Vec::new();
    for (f, hits) in t.frames.iter().zip(&hits) {
        frames.push(FrameDegree {
            frame_index: f.frame_index,
            is_keyframe: f.is_keyframe,
            degree: hits.iter().sum::<u64>() as f64 / area,
        });
        for (bi, (b, &n)) in f.blocks.iter().zip(hits).enumerate() {
            blocks.push(BlockDegree {
                frame_index: f.frame_index,
                block: bi,
                is_inter: b.is_inter(),
                degree: n as f64 / b.rect.area() as f64,
            });
        }
    }
    Ok(DegreeReport { frames, blocks })
}

/// Probability that a sample of `xs` exceeds a sample of `ys`, ties counting
/// one half.
pub fn cles(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::invalid("cles needs two non-empty samples"));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::invalid("cles samples contain NaN"));
    }
    let mut sorted = ys.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut twice_wins: u128 = 0;
    for &x in xs {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_wins as f64 / (2.0 * xs.len() as f64 * ys.len() as f64))
}
