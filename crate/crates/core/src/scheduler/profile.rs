//! Cache profile: one anchor bit per patch, frame-major then row-major.
//!
//! Binary layout: `b"PCPF"`, version byte, 3 reserved zero bytes, `u32` LE
//! rows, cols and frame count, then the bits packed LSB-first within each
//! byte. Padding bits of the last byte must be zero.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::AnchorSet;
use crate::trace::PatchGrid;

pub const PROFILE_MAGIC: &[u8; 4] = b"PCPF";
pub const PROFILE_VERSION: u8 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheProfile {
    pub rows: usize,
    pub cols: usize,
    pub num_frames: usize,
    pub anchors: AnchorSet,
}

/// Debugging twin of the binary format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileJson {
    pub rows: usize,
    pub cols: usize,
    pub num_frames: usize,
    pub anchors: Vec<usize>,
}

/// Packs anchor flags LSB-first; bit `i` lives in byte `i / 8`.
pub fn pack_bits(a: &AnchorSet) -> Vec<u8> {
    let mut out = vec![0u8; a.len().div_ceil(8)];
    for i in a.iter() {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Result<AnchorSet> {
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::format(format!(
            "{} profile bytes for {len} patches (expected {})",
            bytes.len(),
            len.div_ceil(8)
        )));
    }
    if !len.is_multiple_of(8) && bytes[len / 8] >> (len % 8) != 0 {
        return Err(Error::format("nonzero padding bits in profile"));
    }
    let mut a = AnchorSet::new(len);
    for i in 0..len {
        if bytes[i / 8] >> (i % 8) & 1 == 1 {
            a.insert(i);
        }
    }
    Ok(a)
}

impl CacheProfile {
    pub fn new(grid: &PatchGrid, num_frames: usize, anchors: AnchorSet) -> Result<Self> {
        if anchors.len() != num_frames * grid.num_patches() {
            return Err(Error::invalid(format!(
                "anchor set of {} bits for {num_frames} frames of {} patches",
                anchors.len(),
                grid.num_patches()
            )));
        }
        Ok(CacheProfile {
            rows: grid.rows(),
            cols: grid.cols(),
            num_frames,
            anchors,
        })
    }

    pub fn patches_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_anchor(&self, frame: usize, patch: usize) -> bool {
        self.anchors.contains(frame * self.patches_per_frame() + patch)
    }

    pub fn matches(&self, grid: &PatchGrid, num_frames: usize) -> bool {
        self.rows == grid.rows() && self.cols == grid.cols() && self.num_frames == num_frames
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.anchors.len().div_ceil(8));
        out.extend_from_slice(PROFILE_MAGIC);
        out.extend_from_slice(&[PROFILE_VERSION, 0, 0, 0]);
        for v in [self.rows, self.cols, self.num_frames] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&pack_bits(&self.anchors));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format("truncated profile header"));
        }
        if &bytes[..4] != PROFILE_MAGIC {
            return Err(Error::format("not a cache profile (bad magic)"));
        }
        if bytes[4] != PROFILE_VERSION {
            return Err(Error::Version {
                found: bytes[4],
                expected: PROFILE_VERSION,
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (rows, cols, num_frames) = (word(0), word(1), word(2));
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(num_frames))
            .ok_or_else(|| Error::format("profile dimensions overflow"))?;
        Ok(CacheProfile {
            rows,
            cols,
            num_frames,
            anchors: unpack_bits(&bytes[HEADER_LEN..], len)?,
        })
    }

    pub fn to_json(&self) -> ProfileJson {
        ProfileJson {
            rows: self.rows,
            cols: self.cols,
            num_frames: self.num_frames,
            anchors: self.anchors.iter().collect(),
        }
    }

    pub fn from_json(j: &ProfileJson) -> Result<Self> {
        let len = j.rows * j.cols * j.num_frames;
        let anchors = AnchorSet::from_ids(len, j.anchors.iter().copied()).map_err(|e| Error::format(e.to_string()))?;
        Ok(CacheProfile {
            rows: j.rows,
            cols: j.cols,
            num_frames: j.num_frames,
            anchors,
        })
    }

    /// Writes the binary form, plus the JSON twin when the path ends in
    /// `.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            fs::write(path, serde_json::to_vec_pretty(&self.to_json())?)?;
        } else {
            fs::write(path, self.encode())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            CacheProfile::from_json(&serde_json::from_slice(&bytes)?)
        } else {
            CacheProfile::decode(&bytes)
        }
    }
}
