//! Budgeted anchor selection: the DAG-driven greedy search, the comparison
//! baselines and ablations, and whole-trace scheduling into a cache profile.

mod profile;

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::dag::{EdgeGroup, ErrorDag, WeightMatrix};
use crate::error::{Error, Result};
use crate::estimator::{estimate_sequential, AnchorSet, BatchKernel, MaskBatch, Rows};
use crate::trace::Trace;

pub use profile::{pack_bits, unpack_bits, CacheProfile, ProfileJson, PROFILE_MAGIC, PROFILE_VERSION};

/// Anchor budget of one scheduling interval.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "BudgetRepr")]
pub enum Budget {
    Count(usize),
    /// Fraction of the interval's patches, rounded down.
    Ratio(f64),
}

impl Budget {
    pub fn resolve(&self, total: usize) -> Result<usize> {
        let k = match *self {
            Budget::Count(k) => k,
            Budget::Ratio(r) => {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::invalid(format!("budget ratio {r} outside [0, 1]")));
                }
                // the slack keeps e.g. 0.29 * 100 from flooring to 28
                (r * total as f64 + 1e-9).floor() as usize
            }
        };
        if k > total {
            return Err(Error::invalid(format!("budget {k} exceeds {total} patches")));
        }
        Ok(k)
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// `"45"` is a count, `"5%"` or `"0.05"` a ratio.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot parse budget {s:?}"));
        if let Some(p) = s.strip_suffix('%') {
            let v: f64 = p.trim().parse().map_err(|_| bad())?;
            return Ok(Budget::Ratio(v / 100.0));
        }
        if let Ok(k) = s.parse::<usize>() {
            return Ok(Budget::Count(k));
        }
        s.parse::<f64>().map(Budget::Ratio).map_err(|_| bad())
    }
}

// Config files may give a budget as 45, 0.05 or "5%".
#[derive(Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Ratio(f64),
    Text(String),
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Count(k) => Ok(Budget::Count(k)),
            BudgetRepr::Ratio(v) => Ok(Budget::Ratio(v)),
            BudgetRepr::Text(s) => s.parse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleCfg {
    pub budget: Budget,
    /// Anchor sets evaluated per batched propagation.
    pub candidate_batch: usize,
    /// Frames per scheduling interval; `None` splits at keyframes.
    pub interval: Option<usize>,
}

impl Default for ScheduleCfg {
    fn default() -> Self {
        ScheduleCfg {
            budget: Budget::Ratio(0.05),
            candidate_batch: 1024,
            interval: None,
        }
    }
}

impl ScheduleCfg {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_batch == 0 {
            return Err(Error::invalid("candidate_batch must be at least 1"));
        }
        if self.interval == Some(0) {
            return Err(Error::invalid("interval must be at least 1 frame"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    pub patch: usize,
    /// Estimated total error after adding `patch`.
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GreedyTrajectory {
    pub steps: Vec<GreedyStep>,
}

impl GreedyTrajectory {
    pub fn is_non_increasing(&self) -> bool {
        self.steps.windows(2).all(|w| w[1].total <= w[0].total)
    }
}

/// How candidate anchor sets are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreedyMode {
    /// One sequential estimate per candidate.
    Vanilla,
    /// Row-parallel propagation, one candidate at a time.
    IntraSet,
    /// Row-parallel propagation of up to this many candidates at once.
    Batched(usize),
}

/// Greedy selection with the budget and batching of `cfg`.
pub fn greedy_select(d: &ErrorDag, cfg: &ScheduleCfg) -> Result<(AnchorSet, GreedyTrajectory)> {
    cfg.validate()?;
    let k = cfg.budget.resolve(d.num_patches())?;
    greedy_select_with(d, k, GreedyMode::Batched(cfg.candidate_batch))
}

/// Adds `budget` anchors one at a time, each the candidate that minimizes the
/// estimated total error. Ties go to the smallest global patch id.
pub fn greedy_select_with(d: &ErrorDag, budget: usize, mode: GreedyMode) -> Result<(AnchorSet, GreedyTrajectory)> {
    let total = d.num_patches();
    if budget > total {
        return Err(Error::invalid(format!("budget {budget} exceeds {total} patches")));
    }
    if mode == GreedyMode::Batched(0) {
        return Err(Error::invalid("candidate batch must be at least 1"));
    }
    // Run on a pool worker so row-parallel calls do not pay a cross-thread
    // injection each.
    rayon::join(|| greedy_loop(d, budget, mode), || ()).0
}

fn greedy_loop(d: &ErrorDag, budget: usize, mode: GreedyMode) -> Result<(AnchorSet, GreedyTrajectory)> {
    let total = d.num_patches();
    let mut chosen = AnchorSet::new(total);
    let mut trajectory = GreedyTrajectory::default();
    let mut kernel = BatchKernel::new();
    for _ in 0..budget {
        let candidates: Vec<usize> = (0..total).filter(|&p| !chosen.contains(p)).collect();
        let mut best: Option<(f64, usize)> = None;
        let mut consider = |id: usize, t: f64| {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, id));
            }
        };
        match mode {
            GreedyMode::Vanilla => {
                for &id in &candidates {
                    let mut a = chosen.clone();
                    a.insert(id);
                    consider(id, estimate_sequential(d, &a)?.total);
                }
            }
            GreedyMode::IntraSet => {
                for &id in &candidates {
                    let m = MaskBatch::with_extra(d, &chosen, &[id])?;
                    consider(id, kernel.run(d, &m, Rows::Parallel)[0]);
                }
            }
            GreedyMode::Batched(b) => {
                for chunk in candidates.chunks(b) {
                    let m = MaskBatch::with_extra(d, &chosen, chunk)?;
                    let totals = kernel.run(d, &m, Rows::Parallel);
                    for (&id, &t) in chunk.iter().zip(totals) {
                        consider(id, t);
                    }
                }
            }
        }
        let (t, id) = best.expect("budget <= patch count leaves a candidate");
        chosen.insert(id);
        trajectory.steps.push(GreedyStep { patch: id, total: t });
    }
    Ok((chosen, trajectory))
}

/// All keyframe patches, then the remaining budget at a fixed stride over the
/// other frames' patches (frame-major), starting from the first of them.
pub fn key_uniform(is_keyframe: &[bool], patches_per_frame: usize, budget: usize) -> Result<AnchorSet> {
    let n = patches_per_frame;
    let total = is_keyframe.len() * n;
    if budget > total {
        return Err(Error::invalid(format!("budget {budget} exceeds {total} patches")));
    }
    let mut a = AnchorSet::new(total);
    let mut rest = Vec::new();
    for (pos, &key) in is_keyframe.iter().enumerate() {
        let ids = pos * n..(pos + 1) * n;
        if key {
            ids.for_each(|id| a.insert(id));
        } else {
            rest.extend(ids);
        }
    }
    let used = a.count();
    if budget < used {
        return Err(Error::invalid(format!(
            "budget {budget} is below the {used} keyframe patches"
        )));
    }
    let left = budget - used;
    if left > 0 {
        let stride = rest.len() / left;
        for k in 0..left {
            a.insert(rest[k * stride]);
        }
    }
    Ok(a)
}

/// Key+Uniform over frames `start..start + len` of a trace; ids are local to
/// the interval.
pub fn baseline_key_uniform(t: &Trace, start: usize, len: usize, budget: usize) -> Result<AnchorSet> {
    if start + len > t.num_frames() {
        return Err(Error::invalid("interval outside the trace"));
    }
    let keys: Vec<bool> = t.frames[start..start + len].iter().map(|f| f.is_keyframe).collect();
    key_uniform(&keys, t.grid.num_patches(), budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Each patch depends only on its co-located predecessor, weight 1.
    NoWeight,
    /// Every TC set to 1.
    NoTc,
}

pub fn ablated_dag(d: &ErrorDag, mode: Ablation) -> ErrorDag {
    let n = d.patches_per_frame();
    let mut out = d.clone();
    match mode {
        Ablation::NoWeight => {
            for (pos, f) in out.frames.iter_mut().enumerate() {
                f.in_edges = if pos == 0 {
                    Vec::new()
                } else {
                    vec![EdgeGroup {
                        ref_frame: f.frame_index - 1,
                        weights: WeightMatrix::identity(n),
                    }]
                };
            }
        }
        Ablation::NoTc => {
            for f in &mut out.frames {
                f.tc.fill(1.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum Method {
    Palantir,
    KeyUniform,
    NoWeight,
    NoTc,
    /// Every patch anchored.
    PerFrame,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Palantir,
        Method::KeyUniform,
        Method::NoWeight,
        Method::NoTc,
        Method::PerFrame,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Palantir => "palantir",
            Method::KeyUniform => "key-uniform",
            Method::NoWeight => "no-weight",
            Method::NoTc => "no-tc",
            Method::PerFrame => "per-frame",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Scheduling intervals as `(start, len)`: fixed-length chunks, or runs
/// starting at each keyframe.
pub fn intervals(t: &Trace, interval: Option<usize>) -> Vec<(usize, usize)> {
    let nf = t.num_frames();
    let starts: Vec<usize> = match interval {
        Some(k) => (0..nf).step_by(k.max(1)).collect(),
        None => {
            let mut s: Vec<usize> = t.keyframes().collect();
            if s.first() != Some(&0) {
                s.insert(0, 0);
            }
            s
        }
    };
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, starts.get(i + 1).copied().unwrap_or(nf) - s))
        .filter(|&(_, len)| len > 0)
        .collect()
}

/// Schedules every interval of a trace independently and merges the result
/// into one profile. `d` is the DAG of the whole trace.
pub fn schedule_trace(t: &Trace, d: &ErrorDag, method: Method, cfg: &ScheduleCfg) -> Result<CacheProfile> {
    cfg.validate()?;
    if d.num_frames() != t.num_frames() || d.grid != t.grid || d.first_frame() != 0 {
        return Err(Error::invalid("DAG does not belong to the trace"));
    }
    let n = t.grid.num_patches();
    let mut all = AnchorSet::new(t.num_frames() * n);
    for (start, len) in intervals(t, cfg.interval) {
        let sub = d.interval(start, len)?;
        let k = cfg.budget.resolve(len * n)?;
        let greedy = |dag: &ErrorDag| greedy_select_with(dag, k, GreedyMode::Batched(cfg.candidate_batch)).map(|r| r.0);
        let local = match method {
            Method::Palantir => greedy(&sub)?,
            Method::NoWeight => greedy(&ablated_dag(&sub, Ablation::NoWeight))?,
            Method::NoTc => greedy(&ablated_dag(&sub, Ablation::NoTc))?,
            Method::KeyUniform => baseline_key_uniform(t, start, len, k)?,
            Method::PerFrame => AnchorSet::full(len * n),
        };
        for id in local.iter() {
            all.insert(start * n + id);
        }
    }
    CacheProfile::new(&t.grid, t.num_frames(), all)
}
