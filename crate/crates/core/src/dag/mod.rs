//! The SR-error DAG: one node group per frame, weighted edges from
//! inter-coding reference overlap, and static per-patch TC attributes.

mod csr;
mod diag;
mod io;

use std::collections::BTreeMap;
use std::fmt;

pub use csr::WeightMatrix;
pub use diag::{cles, degree_of_reference, BlockDegree, DegreeReport, FrameDegree};
pub use io::{load_dag, read_dag, save_dag, write_dag, write_dot, DAG_MAGIC, DAG_VERSION};

use crate::complexity::TcVector;
use crate::error::{Error, Result};
use crate::trace::{split_blocks, PatchGrid, Trace, MAX_REFS};

/// Incoming edges of one frame from one reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGroup {
    pub ref_frame: usize,
    pub weights: WeightMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagFrame {
    pub frame_index: usize,
    pub tc: Vec<f64>,
    /// Sorted by ascending `ref_frame`.
    pub in_edges: Vec<EdgeGroup>,
}

/// Frames are stored in decoding order with contiguous indices; the first
/// one need not be frame 0 when the DAG covers a single scheduling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDag {
    pub grid: PatchGrid,
    pub frames: Vec<DagFrame>,
}

impl ErrorDag {
    pub fn patches_per_frame(&self) -> usize {
        self.grid.num_patches()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Total node count; also the length of an anchor set over this DAG.
    pub fn num_patches(&self) -> usize {
        self.frames.len() * self.grid.num_patches()
    }

    pub fn first_frame(&self) -> usize {
        self.frames.first().map_or(0, |f| f.frame_index)
    }

    pub fn num_edges(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| &f.in_edges)
            .map(|g| g.weights.nnz())
            .sum()
    }

    /// Sub-DAG of frames `[start, start + len)`. Edges from frames before
    /// `start` are dropped.
    pub fn interval(&self, start: usize, len: usize) -> Result<ErrorDag> {
        let first = self.first_frame();
        if start < first || start + len > first + self.frames.len() {
            return Err(Error::invalid(format!(
                "interval {start}+{len} outside frames {first}..{}",
                first + self.frames.len()
            )));
        }
        let frames = self.frames[start - first..start - first + len]
            .iter()
            .map(|f| DagFrame {
                frame_index: f.frame_index,
                tc: f.tc.clone(),
                in_edges: f.in_edges.iter().filter(|g| g.ref_frame >= start).cloned().collect(),
            })
            .collect();
        Ok(ErrorDag { grid: self.grid, frames })
    }

    /// Scales every TC value by `c`.
    pub fn scaled_tc(&self, c: f64) -> ErrorDag {
        let mut d = self.clone();
        for f in &mut d.frames {
            f.tc.iter_mut().for_each(|v| *v *= c);
        }
        d
    }
}

/// Builds the DAG of a whole trace. Each inter sub-block adds
/// `pixel_count / |ref_patch|` to the weight between its patch and every
/// reference patch its source overlaps.
pub fn build_dag(t: &Trace, tc: &[TcVector]) -> Result<ErrorDag> {
    t.validate()?;
    let n = t.grid.num_patches();
    if tc.len() != t.num_frames() {
        return Err(Error::invalid(format!(
            "{} TC vectors for {} frames",
            tc.len(),
            t.num_frames()
        )));
    }
    for (i, v) in tc.iter().enumerate() {
        if v.frame_index != i || v.values.len() != n {
            return Err(Error::invalid(format!("TC vector {i} does not match the trace")));
        }
    }
    let areas: Vec<f64> = (0..n).map(|p| t.grid.patch_area(p) as f64).collect();
    let subs = split_blocks(t);
    let frames = t
        .frames
        .iter()
        .zip(subs)
        .zip(tc)
        .map(|((f, subs), tc)| {
            // ref frame -> per-row (ref patch -> referenced pixel count)
            let mut counts: BTreeMap<usize, Vec<BTreeMap<usize, usize>>> = BTreeMap::new();
            for s in &subs {
                let Some((r, _)) = s.inter else { continue };
                let rows = counts.entry(r).or_insert_with(|| vec![BTreeMap::new(); n]);
                for &(rp, c) in &s.refs {
                    *rows[s.patch].entry(rp).or_insert(0) += c;
                }
            }
            let in_edges = counts
                .into_iter()
                .map(|(ref_frame, rows)| {
                    let rows = rows
                        .into_iter()
                        .map(|row| row.into_iter().map(|(c, k)| (c, k as f64 / areas[c])).collect())
                        .collect();
                    Ok(EdgeGroup {
                        ref_frame,
                        weights: WeightMatrix::from_rows(n, rows)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DagFrame {
                frame_index: f.frame_index,
                tc: tc.values.clone(),
                in_edges,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorDag { grid: t.grid, frames })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// First offending item, when failed.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagReport {
    pub checks: Vec<CheckResult>,
}

impl DagReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn into_result(self) -> Result<()> {
        match self.checks.into_iter().find(|c| !c.passed) {
            None => Ok(()),
            Some(c) => Err(Error::validation(c.name, c.detail.unwrap_or_default())),
        }
    }
}

impl fmt::Display for DagReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.detail {
                None => writeln!(f, "{:<14} {}", c.name, if c.passed { "ok" } else { "FAILED" })?,
                Some(d) => writeln!(f, "{:<14} FAILED {d}", c.name)?,
            }
        }
        Ok(())
    }
}

/// Relative slack of the weight-sum bound.
pub const WEIGHT_SUM_EPS: f64 = 1e-9;

/// Checks every structural invariant of a DAG, reporting the first offender
/// of each check.
pub fn validate_dag(d: &ErrorDag) -> DagReport {
    let n = d.grid.num_patches();
    let first = d.first_frame();
    let mut fail: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut note = |name: &'static str, msg: String| {
        fail.entry(name).or_insert(msg);
    };

    for (pos, f) in d.frames.iter().enumerate() {
        let fi = f.frame_index;
        if fi != first + pos {
            note("frame-order", format!("frame at position {pos} has index {fi}"));
        }
        if f.tc.len() != n {
            note("shape", format!("frame {fi}: TC length {} != {n}", f.tc.len()));
        } else if let Some(p) = f.tc.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            note("tc", format!("frame {fi} patch {p}: TC {}", f.tc[p]));
        }
        if f.in_edges.len() > MAX_REFS {
            note("ref-groups", format!("frame {fi} has {} edge groups", f.in_edges.len()));
        }
        if f.in_edges.windows(2).any(|w| w[0].ref_frame >= w[1].ref_frame) {
            note("ref-groups", format!("frame {fi}: edge groups not strictly ascending"));
        }
        let mut inflow = vec![0.0; n];
        for g in &f.in_edges {
            let r = g.ref_frame;
            if r >= fi || r < first {
                note("acyclicity", format!("frame {fi} has edges from frame {r}"));
            }
            let m = &g.weights;
            if m.rows() != n || m.cols() != n || m.check_structure().is_err() {
                note("shape", format!("frame {fi} <- {r}: malformed {}x{} matrix", m.rows(), m.cols()));
                continue;
            }
            for (row, col, w) in m.entries() {
                if !(w.is_finite() && w >= 0.0) {
                    note(
                        "nonnegativity",
                        format!("edge frame {r} patch {col} -> frame {fi} patch {row} has weight {w}"),
                    );
                } else if w == 0.0 {
                    note("sparsity", format!("explicit zero at frame {fi} patch {row} <- frame {r} patch {col}"));
                }
                inflow[row] += w * d.grid.patch_area(col) as f64;
            }
        }
        for (p, &s) in inflow.iter().enumerate() {
            let area = d.grid.patch_area(p) as f64;
            if s > area * (1.0 + WEIGHT_SUM_EPS) {
                note(
                    "weight-sum",
                    format!("frame {fi} patch {p}: referenced pixels {s} exceed patch size {area}"),
                );
            }
        }
    }

    let names = [
        "frame-order",
        "shape",
        "tc",
        "ref-groups",
        "acyclicity",
        "nonnegativity",
        "sparsity",
        "weight-sum",
    ];
    DagReport {
        checks: names
            .into_iter()
            .map(|name| {
                let detail = fail.remove(name);
                CheckResult {
                    name,
                    passed: detail.is_none(),
                    detail,
                }
            })
            .collect(),
    }
}
