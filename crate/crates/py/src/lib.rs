use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use srsched::cli;
use srsched::complexity::compute_tc;
use srsched::estimator::{estimate_batched, estimate_sequential, AnchorSet};
use srsched::scheduler::{self as sched, Budget, GreedyMode, Method, ScheduleCfg};
use srsched::sim::{self, SimOptions};
use srsched::Error;

create_exception!(pysrsched, FormatError, PyValueError);
create_exception!(pysrsched, ValidationError, PyException);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(m) => PyValueError::new_err(m),
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::Format(_) | Error::Version { .. }) => FormatError::new_err(e.to_string()),
        e @ Error::Validation { .. } => ValidationError::new_err(e.to_string()),
    }
}

/// 45 is a count, 0.05 a fraction, "5%" a percentage.
fn budget(b: &Bound<'_, PyAny>) -> PyResult<Budget> {
    if let Ok(k) = b.extract::<usize>() {
        return Ok(Budget::Count(k));
    }
    if let Ok(r) = b.extract::<f64>() {
        return Ok(Budget::Ratio(r));
    }
    b.extract::<String>()?.parse().map_err(py_err)
}

fn anchors(len: usize, ids: Vec<usize>) -> PyResult<AnchorSet> {
    AnchorSet::from_ids(len, ids).map_err(py_err)
}

#[pyclass(frozen, module = "pysrsched")]
struct Trace(srsched::trace::Trace);

#[pymethods]
impl Trace {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        srsched::trace::load_trace(path).map(Trace).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        srsched::trace::save_trace(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.0.num_frames()
    }

    #[getter]
    fn frame_size(&self) -> (usize, usize) {
        (self.0.frame_w(), self.0.frame_h())
    }

    #[getter]
    fn scale(&self) -> usize {
        self.0.scale
    }

    /// (rows, cols) of the patch grid.
    #[getter]
    fn grid(&self) -> (usize, usize) {
        (self.0.grid.rows(), self.0.grid.cols())
    }

    fn keyframes(&self) -> Vec<usize> {
        self.0.keyframes().collect()
    }

    /// Per-patch texture complexity, one list per frame.
    fn texture_complexity(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(compute_tc(&self.0).map_err(py_err)?.into_iter().map(|v| v.values).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(frames={}, size={}x{}, patches={}x{})",
            self.0.num_frames(),
            self.0.frame_w(),
            self.0.frame_h(),
            self.0.grid.rows(),
            self.0.grid.cols()
        )
    }
}

/// Chosen ids and the `(patch, total)` trajectory.
type Greedy = (Vec<usize>, Vec<(usize, f64)>);

#[pyclass(frozen, module = "pysrsched")]
struct ErrorDag(srsched::dag::ErrorDag);

#[pymethods]
impl ErrorDag {
    #[staticmethod]
    fn from_trace(t: &Trace) -> PyResult<Self> {
        let tc = compute_tc(&t.0).map_err(py_err)?;
        srsched::dag::build_dag(&t.0, &tc).map(ErrorDag).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        srsched::dag::load_dag(path).map(ErrorDag).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        srsched::dag::save_dag(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.0.num_frames()
    }

    #[getter]
    fn num_patches(&self) -> usize {
        self.0.num_patches()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.0.num_edges()
    }

    /// `(check, passed, detail)` for every structural check.
    fn validate(&self) -> Vec<(String, bool, Option<String>)> {
        srsched::dag::validate_dag(&self.0)
            .checks
            .into_iter()
            .map(|c| (c.name.to_string(), c.passed, c.detail))
            .collect()
    }

    /// Estimated per-patch error under an anchor set: (per-frame lists, total).
    fn estimate(&self, anchor_ids: Vec<usize>) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let a = anchors(self.0.num_patches(), anchor_ids)?;
        let e = estimate_sequential(&self.0, &a).map_err(py_err)?;
        Ok((e.frames, e.total))
    }

    /// Total estimated error of several anchor sets in one batched pass.
    fn estimate_totals(&self, sets: Vec<Vec<usize>>) -> PyResult<Vec<f64>> {
        let n = self.0.num_patches();
        let sets = sets.into_iter().map(|s| anchors(n, s)).collect::<PyResult<Vec<_>>>()?;
        Ok(estimate_batched(&self.0, &sets).map_err(py_err)?.into_iter().map(|e| e.total).collect())
    }

    /// Greedy anchors over the whole DAG: (sorted ids, [(patch, total), ...]).
    #[pyo3(signature = (budget, batch = 1024))]
    fn greedy(&self, py: Python<'_>, budget: &Bound<'_, PyAny>, batch: usize) -> PyResult<Greedy> {
        let k = self::budget(budget)?.resolve(self.0.num_patches()).map_err(py_err)?;
        let d = &self.0;
        let (a, tr) = py
            .detach(|| sched::greedy_select_with(d, k, GreedyMode::Batched(batch)))
            .map_err(py_err)?;
        Ok((a.iter().collect(), tr.steps.iter().map(|s| (s.patch, s.total)).collect()))
    }

    fn __repr__(&self) -> String {
        format!(
            "ErrorDag(frames={}, patches={}, edges={})",
            self.0.num_frames(),
            self.0.num_patches(),
            self.0.num_edges()
        )
    }
}

#[pyclass(frozen, module = "pysrsched")]
struct CacheProfile(sched::CacheProfile);

#[pymethods]
impl CacheProfile {
    #[new]
    fn new(t: &Trace, anchor_ids: Vec<usize>) -> PyResult<Self> {
        let a = anchors(t.0.num_frames() * t.0.grid.num_patches(), anchor_ids)?;
        sched::CacheProfile::new(&t.0.grid, t.0.num_frames(), a).map(CacheProfile).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        sched::CacheProfile::load(path).map(CacheProfile).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(py_err)
    }

    fn encode(&self) -> Vec<u8> {
        self.0.encode()
    }

    #[staticmethod]
    fn decode(bytes: Vec<u8>) -> PyResult<Self> {
        sched::CacheProfile::decode(&bytes).map(CacheProfile).map_err(py_err)
    }

    #[getter]
    fn anchors(&self) -> Vec<usize> {
        self.0.anchors.iter().collect()
    }

    fn is_anchor(&self, frame: usize, patch: usize) -> bool {
        frame < self.0.num_frames && patch < self.0.patches_per_frame() && self.0.is_anchor(frame, patch)
    }

    fn __len__(&self) -> usize {
        self.0.anchors.count()
    }

    fn __eq__(&self, other: &CacheProfile) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("CacheProfile(anchors={}/{})", self.0.anchors.count(), self.0.anchors.len())
    }
}

#[pyclass(frozen, module = "pysrsched")]
struct SimReport(sim::SimReport);

#[pymethods]
impl SimReport {
    #[getter]
    fn mean_psnr(&self) -> f64 {
        self.0.mean_psnr
    }

    #[getter]
    fn frame_psnr(&self) -> Vec<f64> {
        self.0.frame_psnr.clone()
    }

    #[getter]
    fn patch_errors(&self) -> Vec<Vec<f64>> {
        self.0.patch_errors.clone()
    }

    #[getter]
    fn anchor_fraction(&self) -> f64 {
        self.0.anchor_fraction
    }

    fn total_error(&self) -> f64 {
        self.0.total_error()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("SimReport(mean_psnr={:.4}, anchor_fraction={:.4})", self.0.mean_psnr, self.0.anchor_fraction)
    }
}

/// Anchors chosen by `method` for every scheduling interval of the trace.
#[pyfunction]
#[pyo3(signature = (trace, dag, method = "palantir", budget = None, interval = None))]
fn schedule(
    py: Python<'_>,
    trace: &Trace,
    dag: &ErrorDag,
    method: &str,
    budget: Option<&Bound<'_, PyAny>>,
    interval: Option<usize>,
) -> PyResult<CacheProfile> {
    let method: Method = method.parse().map_err(py_err)?;
    let mut cfg = ScheduleCfg { interval, ..ScheduleCfg::default() };
    if let Some(b) = budget {
        cfg.budget = self::budget(b)?;
    }
    let (t, d) = (&trace.0, &dag.0);
    py.detach(|| sched::schedule_trace(t, d, method, &cfg))
        .map(CacheProfile)
        .map_err(py_err)
}

/// Simulates the profile against the HR frame_NNNN.pgm files in `frames_dir`.
#[pyfunction]
#[pyo3(signature = (trace, profile, frames_dir, anchor_noise = 0.0, seed = 0))]
fn simulate(
    py: Python<'_>,
    trace: &Trace,
    profile: &CacheProfile,
    frames_dir: PathBuf,
    anchor_noise: f64,
    seed: u64,
) -> PyResult<SimReport> {
    let (t, p) = (&trace.0, &profile.0);
    py.detach(|| {
        let hr = cli::load_frames(&frames_dir)?;
        sim::simulate_with(t, p, &hr, &SimOptions { anchor_noise, seed })
    })
    .map(SimReport)
    .map_err(py_err)
}

#[pyfunction]
fn spearman(a: Vec<f64>, b: Vec<f64>) -> Option<f64> {
    sim::spearman(&a, &b)
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("srsched".to_string()).chain(args).collect();
    py.detach(|| cli::main_with(argv))
}

#[pymodule]
pub fn pysrsched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Trace>()?;
    m.add_class::<ErrorDag>()?;
    m.add_class::<CacheProfile>()?;
    m.add_class::<SimReport>()?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("FormatError", m.py().get_type::<FormatError>())?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    Ok(())
}
