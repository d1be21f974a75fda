//! Estimated SR error of every patch under an anchor set.
//!
//! A non-anchor patch's error is its TC plus the weighted errors of the
//! patches it references; anchors have error 0. Both implementations
//! accumulate `acc = TC`, then `acc += w * e` over edge groups in ascending
//! reference order and columns in ascending order, so they agree bit for bit.

use rayon::prelude::*;

use crate::dag::ErrorDag;
use crate::error::{Error, Result};

/// Anchor flags over global patch ids `frame_pos * patches_per_frame + patch`,
/// where `frame_pos` counts from the first frame of the DAG.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnchorSet {
    len: usize,
    words: Vec<u64>,
}

impl AnchorSet {
    pub fn new(len: usize) -> Self {
        AnchorSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut a = AnchorSet::new(len);
        for i in 0..len {
            a.insert(i);
        }
        a
    }

    pub fn for_dag(d: &ErrorDag) -> Self {
        AnchorSet::new(d.num_patches())
    }

    pub fn from_ids(len: usize, ids: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut a = AnchorSet::new(len);
        for id in ids {
            if id >= len {
                return Err(Error::invalid(format!("patch id {id} out of range {len}")));
            }
            a.insert(id);
        }
        Ok(a)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, id: usize) -> bool {
        id < self.len && self.words[id / 64] >> (id % 64) & 1 == 1
    }

    /// Panics when `id` is out of range.
    pub fn insert(&mut self, id: usize) {
        assert!(id < self.len, "patch id {id} out of range {}", self.len);
        self.words[id / 64] |= 1 << (id % 64);
    }

    pub fn remove(&mut self, id: usize) {
        if id < self.len {
            self.words[id / 64] &= !(1 << (id % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Anchored ids in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    pub fn is_subset(&self, other: &AnchorSet) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimate {
    /// One per-patch vector per DAG frame.
    pub frames: Vec<Vec<f64>>,
    pub total: f64,
}

impl ErrorEstimate {
    fn from_frames(frames: Vec<Vec<f64>>) -> Self {
        let total = sum_frames(frames.iter().map(|f| f.as_slice()));
        ErrorEstimate { frames, total }
    }

    /// Errors in global-id order.
    pub fn flat(&self) -> Vec<f64> {
        self.frames.concat()
    }
}

/// Frame-major, then patch-order sum from 0.0.
fn sum_frames<'a>(frames: impl Iterator<Item = &'a [f64]>) -> f64 {
    let mut total = 0.0;
    for f in frames {
        for &v in f {
            total += v;
        }
    }
    total
}

fn check_len(d: &ErrorDag, a: &AnchorSet) -> Result<()> {
    if a.len() != d.num_patches() {
        return Err(Error::invalid(format!(
            "anchor set covers {} patches, DAG has {}",
            a.len(),
            d.num_patches()
        )));
    }
    Ok(())
}

/// Position of a reference frame among the DAG's frames.
#[inline]
fn ref_pos(d: &ErrorDag, ref_frame: usize) -> usize {
    ref_frame - d.first_frame()
}

/// Node-serial reference implementation.
pub fn estimate_sequential(d: &ErrorDag, a: &AnchorSet) -> Result<ErrorEstimate> {
    check_len(d, a)?;
    let n = d.patches_per_frame();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(d.num_frames());
    for (pos, f) in d.frames.iter().enumerate() {
        let mut errs = vec![0.0; n];
        for (p, e) in errs.iter_mut().enumerate() {
            if a.contains(pos * n + p) {
                continue;
            }
            let mut acc = f.tc[p];
            for g in &f.in_edges {
                let src = &out[ref_pos(d, g.ref_frame)];
                let (cols, ws) = g.weights.row(p);
                for (&c, &w) in cols.iter().zip(ws) {
                    acc += w * src[c];
                }
            }
            *e = acc;
        }
        out.push(errs);
    }
    Ok(ErrorEstimate::from_frames(out))
}

#[derive(Debug, Clone, PartialEq)]
enum RowMask {
    /// Anchored in every column.
    Anchor,
    /// Anchored in no column.
    Free,
    /// Anchored in the listed columns only.
    Zeros(Vec<usize>),
}

/// Non-anchor mask of a batch of anchor sets, one entry per global patch id.
/// Equivalent to a 0/1 `patches x batch` matrix per frame, stored by row.
#[derive(Debug, Clone)]
pub struct MaskBatch {
    batch: usize,
    rows: Vec<RowMask>,
}

impl MaskBatch {
    pub fn new(d: &ErrorDag, sets: &[AnchorSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("empty anchor batch"));
        }
        for a in sets {
            check_len(d, a)?;
        }
        let rows = (0..d.num_patches())
            .map(|id| {
                let cols: Vec<usize> = (0..sets.len()).filter(|&k| sets[k].contains(id)).collect();
                match cols.len() {
                    0 => RowMask::Free,
                    k if k == sets.len() => RowMask::Anchor,
                    _ => RowMask::Zeros(cols),
                }
            })
            .collect();
        Ok(MaskBatch { batch: sets.len(), rows })
    }

    /// `base` plus one extra anchor per column: column `k` anchors `base`
    /// and `extra[k]`.
    pub fn with_extra(d: &ErrorDag, base: &AnchorSet, extra: &[usize]) -> Result<Self> {
        if extra.is_empty() {
            return Err(Error::invalid("empty anchor batch"));
        }
        check_len(d, base)?;
        let mut rows: Vec<RowMask> = (0..d.num_patches())
            .map(|id| if base.contains(id) { RowMask::Anchor } else { RowMask::Free })
            .collect();
        for (k, &id) in extra.iter().enumerate() {
            if id >= rows.len() {
                return Err(Error::invalid(format!("patch id {id} out of range")));
            }
            match &mut rows[id] {
                RowMask::Anchor => {}
                RowMask::Zeros(cols) => cols.push(k),
                r @ RowMask::Free => {
                    *r = if extra.len() == 1 { RowMask::Anchor } else { RowMask::Zeros(vec![k]) };
                }
            }
        }
        Ok(MaskBatch { batch: extra.len(), rows })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parallelism of the batched kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rows {
    Serial,
    Parallel,
}

/// Reusable buffers for batched propagation.
#[derive(Debug, Default)]
pub struct BatchKernel {
    frames: Vec<Vec<f64>>,
    totals: Vec<f64>,
    batch: usize,
}

impl BatchKernel {
    pub fn new() -> Self {
        BatchKernel::default()
    }

    /// `E_f = M_f ∘ (TC_f 1ᵀ + Σ_r W_{f←r} E_r)` for every frame, with dense
    /// `patches x batch` E matrices. Returns the per-column totals, each
    /// summed in the same order as [`ErrorEstimate::total`].
    pub fn run(&mut self, d: &ErrorDag, mask: &MaskBatch, rows: Rows) -> &[f64] {
        let n = d.patches_per_frame();
        let b = mask.batch;
        self.batch = b;
        self.frames.resize_with(d.num_frames(), Vec::new);
        self.totals.clear();
        self.totals.resize(b, 0.0);
        for (pos, f) in d.frames.iter().enumerate() {
            let (done, rest) = self.frames.split_at_mut(pos);
            let e = &mut rest[0];
            e.resize(n * b, 0.0);
            let masks = &mask.rows[pos * n..(pos + 1) * n];
            let row = |p: usize, er: &mut [f64]| {
                if masks[p] == RowMask::Anchor {
                    er.fill(0.0);
                    return;
                }
                er.fill(f.tc[p]);
                for g in &f.in_edges {
                    let src = &done[ref_pos(d, g.ref_frame)];
                    let (cols, ws) = g.weights.row(p);
                    for (&c, &w) in cols.iter().zip(ws) {
                        let s = &src[c * b..(c + 1) * b];
                        for (acc, &x) in er.iter_mut().zip(s) {
                            *acc += w * x;
                        }
                    }
                }
                if let RowMask::Zeros(ks) = &masks[p] {
                    for &k in ks {
                        er[k] = 0.0;
                    }
                }
            };
            match rows {
                Rows::Serial => e.chunks_mut(b).enumerate().for_each(|(p, er)| row(p, er)),
                Rows::Parallel => e.par_chunks_mut(b).enumerate().for_each(|(p, er)| row(p, er)),
            }
            for er in e.chunks(b) {
                for (t, &v) in self.totals.iter_mut().zip(er) {
                    *t += v;
                }
            }
        }
        &self.totals
    }

    /// Error matrices of the last run, one `patches x batch` per frame.
    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    /// Column `k` of the last run as an estimate.
    pub fn estimate(&self, k: usize) -> ErrorEstimate {
        let b = self.batch;
        ErrorEstimate::from_frames(
            self.frames
                .iter()
                .map(|m| m.iter().skip(k).step_by(b).copied().collect())
                .collect(),
        )
    }
}

/// Batched implementation; one estimate per anchor set.
pub fn estimate_batched(d: &ErrorDag, sets: &[AnchorSet]) -> Result<Vec<ErrorEstimate>> {
    let mask = MaskBatch::new(d, sets)?;
    let mut kernel = BatchKernel::new();
    kernel.run(d, &mask, Rows::Parallel);
    Ok((0..mask.batch).map(|k| kernel.estimate(k)).collect())
}

pub fn total_quality(e: &ErrorEstimate) -> f64 {
    -e.total
}
