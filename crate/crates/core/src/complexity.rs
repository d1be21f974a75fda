//! Texture complexity (TC) of patches, computed from LR-side data only.
//!
//! A block's complexity is the energy lost by halving and re-doubling its
//! resolution: `|| up(down(x, 0.5), 2) - x ||²`, applied to decoded content
//! for intra blocks and to the residual for inter blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixels::{bilinear_resample, bilinear_resample_to, crop, squared_error_sum, Plane};
use crate::trace::{split_blocks, Trace};

/// Per-patch TC of one frame, indexed by patch index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcVector {
    pub frame_index: usize,
    pub values: Vec<f64>,
}

/// Down-then-up energy loss. The upsampling step lands exactly on the input
/// size, so odd and 1-pixel extents are well defined.
pub fn round_trip_loss(x: &Plane) -> f64 {
    let down = bilinear_resample(x, 0.5).expect("positive factor");
    let up = bilinear_resample_to(&down, 2.0, x.width(), x.height()).expect("positive factor");
    squared_error_sum(&up, x).expect("same dims")
}

pub fn intra_block_complexity(lr: &Plane) -> f64 {
    round_trip_loss(lr)
}

pub fn inter_block_complexity(residual: &Plane) -> f64 {
    round_trip_loss(residual)
}

/// TC of every patch of every frame. Each block contributes the complexity of
/// its per-patch crops, accumulated in sub-block order.
pub fn compute_tc(t: &Trace) -> Result<Vec<TcVector>> {
    t.validate()?;
    let subs = split_blocks(t);
    let n = t.grid.num_patches();
    t.frames
        .iter()
        .zip(&subs)
        .map(|(f, subs)| {
            let mut values = vec![0.0; n];
            for s in subs {
                let b = &f.blocks[s.block];
                let local = s.rect.offset(-b.rect.x, -b.rect.y);
                let piece = crop(&b.payload, local)?;
                values[s.patch] += if b.is_inter() {
                    inter_block_complexity(&piece)
                } else {
                    intra_block_complexity(&piece)
                };
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite TC {v} in frame {}", f.frame_index)));
            }
            Ok(TcVector {
                frame_index: f.frame_index,
                values,
            })
        })
        .collect()
}
