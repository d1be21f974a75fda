//! Pixel-level reuse simulator: reconstructs the SR video a reuse-based
//! decoder would produce under a cache profile and measures it against the
//! true HR frames.
//!
//! Anchor patches take the HR content (an ideal SR model). Other patches are
//! rebuilt per sub-block: inter content is the SR reference at the scaled
//! motion vector plus the upscaled residual, intra content is the upscaled LR.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::ErrorEstimate;
use crate::pixels::{psnr_from_sse, ByteFrames, Plane, Resampler};
use crate::scheduler::CacheProfile;
use crate::trace::{split_blocks, Trace};

/// Read access to a sequence of same-sized frames.
pub trait FrameSource: Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn num_frames(&self) -> usize;
    /// Copies `out.len()` samples of row `y` starting at column `x`.
    fn read_row(&self, frame: usize, x: usize, y: usize, out: &mut [f64]);
}

impl FrameSource for [Plane] {
    fn width(&self) -> usize {
        self.first().map_or(0, |p| p.width())
    }

    fn height(&self) -> usize {
        self.first().map_or(0, |p| p.height())
    }

    fn num_frames(&self) -> usize {
        self.len()
    }

    fn read_row(&self, frame: usize, x: usize, y: usize, out: &mut [f64]) {
        out.copy_from_slice(&self[frame].row(y)[x..x + out.len()]);
    }
}

impl FrameSource for ByteFrames {
    fn width(&self) -> usize {
        ByteFrames::width(self)
    }

    fn height(&self) -> usize {
        ByteFrames::height(self)
    }

    fn num_frames(&self) -> usize {
        self.len()
    }

    fn read_row(&self, frame: usize, x: usize, y: usize, out: &mut [f64]) {
        let start = y * ByteFrames::width(self) + x;
        let src = &self.bytes(frame)[start..start + out.len()];
        for (o, &b) in out.iter_mut().zip(src) {
            *o = b as f64;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOptions {
    /// Anchors get HR plus uniform noise in `[-a, a]` instead of exact HR.
    pub anchor_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub rows: usize,
    pub cols: usize,
    /// Squared error of every patch, per frame.
    pub patch_errors: Vec<Vec<f64>>,
    /// `f64::INFINITY` for error-free frames.
    pub frame_psnr: Vec<f64>,
    /// PSNR of the mean squared error over the whole sequence.
    pub mean_psnr: f64,
    /// Fraction of LR pixels that lie in anchor patches.
    pub anchor_fraction: f64,
}

pub const PEAK: f64 = 255.0;

impl SimReport {
    pub fn total_error(&self) -> f64 {
        self.patch_errors.iter().flatten().sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.patch_errors.concat()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReportJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: ReportJson = serde_json::from_str(s)?;
        j.try_into()
    }

    /// One `frame,patch,error,psnr_frame` row per patch.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frame,patch,squared_error,frame_psnr")?;
        for (f, errs) in self.patch_errors.iter().enumerate() {
            for (p, e) in errs.iter().enumerate() {
                writeln!(w, "{f},{p},{e:?},{}", fmt_db(self.frame_psnr[f]))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

fn parse_db(s: &str) -> Result<f64> {
    if s == "inf" {
        Ok(f64::INFINITY)
    } else {
        s.parse().map_err(|_| Error::format(format!("bad PSNR value {s:?}")))
    }
}

// PSNR values travel as strings so the infinite sentinel survives JSON.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportJson {
    rows: usize,
    cols: usize,
    mean_psnr: String,
    anchor_fraction: f64,
    frame_psnr: Vec<String>,
    patch_errors: Vec<Vec<f64>>,
}

impl From<&SimReport> for ReportJson {
    fn from(r: &SimReport) -> Self {
        ReportJson {
            rows: r.rows,
            cols: r.cols,
            mean_psnr: fmt_db(r.mean_psnr),
            anchor_fraction: r.anchor_fraction,
            frame_psnr: r.frame_psnr.iter().map(|&v| fmt_db(v)).collect(),
            patch_errors: r.patch_errors.clone(),
        }
    }
}

impl TryFrom<ReportJson> for SimReport {
    type Error = Error;

    fn try_from(j: ReportJson) -> Result<Self> {
        if j.frame_psnr.len() != j.patch_errors.len() || j.patch_errors.iter().any(|f| f.len() != j.rows * j.cols) {
            return Err(Error::format("inconsistent report dimensions"));
        }
        Ok(SimReport {
            rows: j.rows,
            cols: j.cols,
            mean_psnr: parse_db(&j.mean_psnr)?,
            anchor_fraction: j.anchor_fraction,
            frame_psnr: j.frame_psnr.iter().map(|s| parse_db(s)).collect::<Result<_>>()?,
            patch_errors: j.patch_errors,
        })
    }
}

pub fn simulate<S: FrameSource + ?Sized>(t: &Trace, profile: &CacheProfile, hr: &S) -> Result<SimReport> {
    simulate_with(t, profile, hr, &SimOptions::default())
}

pub fn simulate_with<S: FrameSource + ?Sized>(
    t: &Trace,
    profile: &CacheProfile,
    hr: &S,
    opts: &SimOptions,
) -> Result<SimReport> {
    Ok(simulate_many(t, std::slice::from_ref(profile), hr, opts)?.remove(0))
}

/// Per-profile state of a running simulation.
struct Run<'a> {
    profile: &'a CacheProfile,
    buffer: Vec<Option<Plane>>,
    spare: Vec<Plane>,
    anchor: Vec<bool>,
    errs: Vec<f64>,
    sr: Plane,
    patch_errors: Vec<Vec<f64>>,
    frame_psnr: Vec<f64>,
    total_sse: f64,
    anchored_px: usize,
}

/// Simulates several profiles over the same trace in one pass. Each report is
/// identical to a separate `simulate_with` call; the upscaled block content
/// and the HR rows are shared between profiles.
pub fn simulate_many<S: FrameSource + ?Sized>(
    t: &Trace,
    profiles: &[CacheProfile],
    hr: &S,
    opts: &SimOptions,
) -> Result<Vec<SimReport>> {
    t.validate()?;
    let s = t.scale;
    let (w, h) = (t.frame_w() * s, t.frame_h() * s);
    if hr.width() != w || hr.height() != h || hr.num_frames() != t.num_frames() {
        return Err(Error::invalid(format!(
            "HR frames are {} x {}x{}, trace needs {} x {w}x{h}",
            hr.num_frames(),
            hr.width(),
            hr.height(),
            t.num_frames()
        )));
    }
    if profiles.iter().any(|p| !p.matches(&t.grid, t.num_frames())) {
        return Err(Error::invalid("cache profile does not match the trace grid"));
    }
    if !(opts.anchor_noise >= 0.0 && opts.anchor_noise.is_finite()) {
        return Err(Error::invalid("anchor noise must be finite and non-negative"));
    }
    let grid = &t.grid;
    let n = grid.num_patches();
    let subs = split_blocks(t);

    // An SR frame is dropped once no later frame references it.
    let mut last_use = vec![0usize; t.num_frames()];
    for f in &t.frames {
        for &r in &f.ref_frames {
            last_use[r] = last_use[r].max(f.frame_index);
        }
    }
    let mut runs: Vec<Run> = profiles
        .iter()
        .map(|profile| Run {
            profile,
            buffer: vec![None; t.num_frames()],
            // released SR frames are reused; every pixel is rewritten each frame
            spare: Vec::new(),
            anchor: vec![false; n],
            errs: Vec::new(),
            sr: Plane::new(1, 1),
            patch_errors: Vec::with_capacity(t.num_frames()),
            frame_psnr: Vec::with_capacity(t.num_frames()),
            total_sse: 0.0,
            anchored_px: 0,
        })
        .collect();
    let mut line = vec![0.0; w];
    let mut truth = vec![0.0; w];
    let mut band = Vec::new();
    let mut up = Resampler::new(s as f64)?;

    for (fi, f) in t.frames.iter().enumerate() {
        // Frames nobody references are measured but never stored.
        let keep = last_use[fi] > fi;
        for run in &mut runs {
            run.sr = if keep { run.spare.pop().unwrap_or_else(|| Plane::new(w, h)) } else { Plane::new(1, 1) };
            for (p, a) in run.anchor.iter_mut().enumerate() {
                *a = run.profile.is_anchor(fi, p);
            }
            run.errs = vec![0.0; n];
        }

        for run in &mut runs {
            for p in (0..n).filter(|&p| run.anchor[p]) {
                run.anchored_px += grid.patch_area(p);
                if !keep && opts.anchor_noise == 0.0 {
                    continue;
                }
                let r = grid.patch_rect(p).scaled(s);
                let (x0, y0) = (r.x as usize, r.y as usize);
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((fi * n + p) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                for y in y0..y0 + r.h {
                    let line = &mut line[..r.w];
                    hr.read_row(fi, x0, y, line);
                    if opts.anchor_noise > 0.0 {
                        let mut acc = 0.0;
                        for v in line.iter_mut() {
                            let d = rng.random_range(-opts.anchor_noise..=opts.anchor_noise);
                            *v += d;
                            acc += d * d;
                        }
                        run.errs[p] += acc;
                    }
                    if keep {
                        run.sr.row_mut(y)[x0..x0 + r.w].copy_from_slice(line);
                    }
                }
            }
        }

        // Sub-blocks are upscaled one block row at a time into `band`, then
        // the band is swept row by row so every plane is walked in memory
        // order. Each sub-block keeps its own row-major error sum.
        let sbs = &subs[fi];
        let mut acc = vec![0.0; runs.len() * sbs.len()];
        let mut order: Vec<usize> = (0..sbs.len())
            .filter(|&i| !runs.iter().all(|run| run.anchor[sbs[i].patch]))
            .collect();
        order.sort_by_key(|&i| (f.blocks[sbs[i].block].rect.y, sbs[i].rect.y, sbs[i].rect.x));
        for group in order.chunk_by(|&i, &j| f.blocks[sbs[i].block].rect.y == f.blocks[sbs[j].block].rect.y) {
            let top = group.iter().map(|&i| sbs[i].rect.y).min().unwrap_or(0) as usize * s;
            let bot = group.iter().map(|&i| sbs[i].rect.bottom()).max().unwrap_or(0) as usize * s;
            band.resize((bot - top) * w, 0.0);
            for &i in group {
                let sb = &sbs[i];
                let b = &f.blocks[sb.block];
                let r = sb.rect.scaled(s);
                let (x0, y0) = (r.x as usize, r.y as usize - top);
                up.resample_rect(&b.payload, sb.rect.offset(-b.rect.x, -b.rect.y), |k, vals| {
                    let at = (y0 + k) * w + x0;
                    band[at..at + r.w].copy_from_slice(vals);
                });
            }
            for y in top..bot {
                let band_row = &band[(y - top) * w..(y - top + 1) * w];
                for &i in group {
                    let sb = &sbs[i];
                    let r = sb.rect.scaled(s);
                    if (y as i64) < r.y || y as i64 >= r.bottom() {
                        continue;
                    }
                    let x0 = r.x as usize;
                    let vals = &band_row[x0..x0 + r.w];
                    let truth = &mut truth[..r.w];
                    hr.read_row(fi, x0, y, truth);
                    for (ri, run) in runs.iter_mut().enumerate() {
                        if run.anchor[sb.patch] {
                            continue;
                        }
                        let out = &mut line[..r.w];
                        match sb.inter {
                            None => out.copy_from_slice(vals),
                            Some((ref_frame, mv)) => {
                                let src = run.buffer[ref_frame]
                                    .as_ref()
                                    .expect("reference SR frame is buffered until its last use");
                                let (dx, dy) = (mv.dx as i64 * s as i64, mv.dy as i64 * s as i64);
                                fetch_row(src, r.x + dx, y as i64 + dy, out, vals)
                            }
                        }
                        let mut e = acc[ri * sbs.len() + i];
                        for (a, b) in out.iter().zip(truth.iter()) {
                            let d = a - b;
                            e += d * d;
                        }
                        acc[ri * sbs.len() + i] = e;
                        if keep {
                            run.sr.row_mut(y)[x0..x0 + r.w].copy_from_slice(out);
                        }
                    }
                }
            }
        }
        for (ri, run) in runs.iter_mut().enumerate() {
            for (i, sb) in sbs.iter().enumerate() {
                if !run.anchor[sb.patch] {
                    run.errs[sb.patch] += acc[ri * sbs.len() + i];
                }
            }
        }

        for run in &mut runs {
            let errs = std::mem::take(&mut run.errs);
            let sse: f64 = errs.iter().sum();
            run.total_sse += sse;
            run.frame_psnr.push(psnr_from_sse(sse, w * h, PEAK));
            run.patch_errors.push(errs);
            for &r in &f.ref_frames {
                if last_use[r] == fi {
                    let freed = run.buffer[r].take();
                    run.spare.extend(freed);
                }
            }
            let sr = std::mem::replace(&mut run.sr, Plane::new(1, 1));
            if keep {
                run.buffer[fi] = Some(sr);
            }
        }
    }

    Ok(runs
        .into_iter()
        .map(|run| SimReport {
            rows: grid.rows(),
            cols: grid.cols(),
            mean_psnr: psnr_from_sse(run.total_sse, w * h * t.num_frames(), PEAK),
            anchor_fraction: run.anchored_px as f64 / (grid.frame_area() * t.num_frames()) as f64,
            frame_psnr: run.frame_psnr,
            patch_errors: run.patch_errors,
        })
        .collect())
}

/// `out = reference row y from column x (edge-clamped) + res`.
fn fetch_row(reference: &Plane, x: i64, y: i64, out: &mut [f64], res: &[f64]) {
    let (rw, rh) = (reference.width() as i64, reference.height() as i64);
    let src = reference.row(y.clamp(0, rh - 1) as usize);
    if x >= 0 && x + out.len() as i64 <= rw {
        let s = &src[x as usize..x as usize + out.len()];
        for ((o, &a), &b) in out.iter_mut().zip(s).zip(res) {
            *o = a + b;
        }
    } else {
        for (j, (o, &b)) in out.iter_mut().zip(res).enumerate() {
            *o = src[(x + j as i64).clamp(0, rw - 1) as usize] + b;
        }
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// 1-based ranks, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    pub frame: usize,
    pub patch: usize,
    pub estimated: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub spearman: Option<f64>,
    pub rows: Vec<ScatterRow>,
}

impl Agreement {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frame,patch,estimated,measured")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:?},{:?}", r.frame, r.patch, r.estimated, r.measured)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimated against measured per-patch error.
pub fn compare(est: &ErrorEstimate, report: &SimReport) -> Result<Agreement> {
    let n = report.rows * report.cols;
    if est.frames.len() != report.patch_errors.len() || est.frames.iter().any(|f| f.len() != n) {
        return Err(Error::invalid("estimate and report cover different patches"));
    }
    let rows: Vec<ScatterRow> = est
        .frames
        .iter()
        .zip(&report.patch_errors)
        .enumerate()
        .flat_map(|(frame, (e, m))| {
            e.iter().zip(m).enumerate().map(move |(patch, (&estimated, &measured))| ScatterRow {
                frame,
                patch,
                estimated,
                measured,
            })
        })
        .collect();
    let est_v: Vec<f64> = rows.iter().map(|r| r.estimated).collect();
    let meas_v: Vec<f64> = rows.iter().map(|r| r.measured).collect();
    Ok(Agreement {
        spearman: spearman(&est_v, &meas_v),
        rows,
    })
}
