//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;

use common::{random_dag, random_set, rng, tc_oracle};
use srsched::cli::bench;
use srsched::codec::{decode_lr, downscale, encode, synth_video, EncoderCfg, SynthParams, Synthesizer};
use srsched::complexity::{compute_tc, inter_block_complexity, intra_block_complexity};
use srsched::dag::{build_dag, cles, degree_of_reference, read_dag, validate_dag, write_dag, ErrorDag};
use srsched::estimator::{estimate_batched, estimate_sequential, AnchorSet};
use srsched::pixels::{bilinear_resample, ByteFrames, Plane};
use srsched::scheduler::{
    greedy_select, greedy_select_with, pack_bits, schedule_trace, Budget, CacheProfile, GreedyMode, Method,
    ScheduleCfg,
};
use srsched::sim::{simulate, simulate_many, spearman, SimOptions};
use srsched::trace::{read_trace, write_trace, Trace};

// C1-C3: random DAGs of at most 10 frames x 15 patches.
const EQUIV_DAGS: usize = 100;
const EQUIV_SETS: usize = 20;
const ARGMIN_DAGS: usize = 50;
const MONOTONE_PAIRS: usize = 1000;
const MONOTONE_REL_TOL: f64 = 1e-12;
// C4
const WEIGHT_SUM_TOL: f64 = 1e-9;
// C6
const TC_BLOCKS: usize = 100;
const TC_REL_TOL: f64 = 1e-9;
// C7
const FIDELITY_VIDEOS: u64 = 5;
const RANDOM_PROFILES: usize = 20;
const MIN_MEDIAN_SPEARMAN: f64 = 0.5;
const BUDGETS: [f64; 3] = [0.05, 0.10, 0.20];
const MIN_WIN_FRACTION: f64 = 0.8;
const SIM_GROUP: usize = 8;
// C8
const BENCH_REPS: usize = 5;
const MIN_SPEEDUP: f64 = 5.0;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Runner {
    /// Criterion ids given on the command line; empty runs everything.
    only: Vec<String>,
    ran: usize,
    failed: usize,
}

impl Runner {
    fn run(&mut self, id: &str, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        if !self.only.is_empty() && !self.only.iter().any(|o| o.eq_ignore_ascii_case(id)) {
            return;
        }
        self.ran += 1;
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let out = match out {
            Ok(d) if took > limit => Err(format!("{d}; took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        let secs = took.as_secs_f64();
        match out {
            Ok(d) => println!("PASS {id} {name} ({secs:.1}s): {d}"),
            Err(d) => {
                self.failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {d}");
            }
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// Independent error propagation: per patch, TC plus weighted reference
/// errors, walked in ascending reference and column order; anchors are 0.
fn oracle_total(d: &ErrorDag, a: &AnchorSet) -> f64 {
    let n = d.patches_per_frame();
    let first = d.first_frame();
    let mut err: Vec<Vec<f64>> = Vec::new();
    let mut total = 0.0;
    for (pos, f) in d.frames.iter().enumerate() {
        let mut cur = vec![0.0; n];
        for (p, c) in cur.iter_mut().enumerate() {
            if a.contains(pos * n + p) {
                continue;
            }
            let mut acc = f.tc[p];
            let mut groups: Vec<_> = f.in_edges.iter().collect();
            groups.sort_by_key(|g| g.ref_frame);
            for g in groups {
                let src = &err[g.ref_frame - first];
                let mut row: Vec<(usize, f64)> =
                    g.weights.entries().filter(|e| e.0 == p).map(|e| (e.1, e.2)).collect();
                row.sort_by_key(|e| e.0);
                for (col, w) in row {
                    acc += w * src[col];
                }
            }
            *c = acc;
        }
        for v in &cur {
            total += v;
        }
        err.push(cur);
    }
    total
}

fn c1_equivalence() -> Outcome {
    let mut r = rng(1);
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pools: Vec<rayon::ThreadPool> = [1, 4, max]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap())
        .collect();
    let mut compared = 0;
    for i in 0..EQUIV_DAGS {
        let d = random_dag(&mut r, 1 + i % 10, 3, 5);
        let sets: Vec<AnchorSet> = (0..EQUIV_SETS).map(|_| random_set(&mut r, d.num_patches())).collect();
        let batched = estimate_batched(&d, &sets).map_err(|e| e.to_string())?;
        for (k, (s, b)) in sets.iter().zip(&batched).enumerate() {
            let seq = estimate_sequential(&d, s).map_err(|e| e.to_string())?;
            let same = seq.total.to_bits() == b.total.to_bits()
                && seq.flat().iter().zip(b.flat()).all(|(x, y)| x.to_bits() == y.to_bits());
            check(same, || format!("DAG {i} set {k}: batched differs from sequential"))?;
            compared += 1;
        }
        let cfg = ScheduleCfg { budget: Budget::Ratio(0.2), candidate_batch: 7, interval: None };
        let picks: Vec<_> = pools.iter().map(|p| p.install(|| greedy_select(&d, &cfg).unwrap())).collect();
        check(picks.windows(2).all(|w| w[0] == w[1]), || format!("DAG {i}: greedy depends on thread count"))?;
    }
    Ok(format!("{compared} estimates bit-identical; greedy identical on 1/4/{max} threads"))
}

fn c2_first_pick() -> Outcome {
    let mut r = rng(2);
    for i in 0..ARGMIN_DAGS {
        let d = random_dag(&mut r, 1 + i % 10, 3, 5);
        let mut best = (f64::INFINITY, usize::MAX);
        for id in 0..d.num_patches() {
            let t = oracle_total(&d, &AnchorSet::from_ids(d.num_patches(), [id]).unwrap());
            if t < best.0 {
                best = (t, id);
            }
        }
        let (_, tr) = greedy_select_with(&d, 1, GreedyMode::Batched(1024)).map_err(|e| e.to_string())?;
        let pick = tr.steps[0];
        check(pick.patch == best.1, || {
            format!("DAG {i}: greedy picked {} ({}), brute force {} ({})", pick.patch, pick.total, best.1, best.0)
        })?;
    }
    Ok(format!("{ARGMIN_DAGS} DAGs, zero mismatches"))
}

fn c3_monotonicity() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for i in 0..MONOTONE_PAIRS {
        let d = random_dag(&mut r, 1 + i % 10, 3, 5);
        let small = random_set(&mut r, d.num_patches());
        let mut big = small.clone();
        for id in random_set(&mut r, d.num_patches()).iter() {
            big.insert(id);
        }
        let es = estimate_sequential(&d, &small).unwrap().flat();
        let eb = estimate_sequential(&d, &big).unwrap().flat();
        for (p, (x, y)) in es.iter().zip(&eb).enumerate() {
            if y > x {
                worst = worst.max((y - x) / x.abs().max(f64::MIN_POSITIVE));
            }
            check(*y <= x + MONOTONE_REL_TOL * x.abs(), || format!("pair {i} patch {p}: superset {y} > subset {x}"))?;
        }
    }
    let mut trajectories = 0;
    for i in 0..100 {
        let d = random_dag(&mut r, 1 + i % 10, 3, 5);
        let k = r.random_range(1..=d.num_patches());
        let (_, tr) = greedy_select_with(&d, k, GreedyMode::Batched(64)).unwrap();
        check(tr.is_non_increasing(), || format!("DAG {i}: greedy trajectory increases"))?;
        trajectories += 1;
    }
    Ok(format!("{MONOTONE_PAIRS} pairs (worst relative excess {worst:.1e}), {trajectories} trajectories non-increasing"))
}

fn corpus_video(seed: u64, frames: usize, gop: usize) -> (Vec<Plane>, Trace) {
    let hr = synth_video(&SynthParams { frame_w: 640, frame_h: 384, num_frames: frames, seed, ..SynthParams::default() })
        .unwrap();
    let cfg = EncoderCfg { block_size: 8, search_range: 4, patch_w: 40, patch_h: 32, gop, ..EncoderCfg::default() };
    let t = encode(&downscale(&hr, 4).unwrap(), &cfg).unwrap();
    (hr, t)
}

fn c4_weight_sum() -> Outcome {
    let (mut patches, mut full, mut worst) = (0, 0, 0.0f64);
    for seed in 0..5 {
        let (_, t) = corpus_video(seed, 12, 6);
        let d = build_dag(&t, &compute_tc(&t).unwrap()).unwrap();
        let g = &t.grid;
        for (f, df) in t.frames.iter().zip(&d.frames) {
            for p in 0..g.num_patches() {
                let area = g.patch_area(p) as f64;
                let mut s = 0.0;
                for e in &df.in_edges {
                    let (cols, ws) = e.weights.row(p);
                    for (&c, &w) in cols.iter().zip(ws) {
                        s += w * g.patch_area(c) as f64;
                    }
                }
                check(s <= area * (1.0 + WEIGHT_SUM_TOL), || {
                    format!("seed {seed} frame {} patch {p}: {s} > {area}", f.frame_index)
                })?;
                let pr = g.patch_rect(p);
                if f.blocks.iter().all(|b| b.is_inter() || b.rect.intersect(&pr).is_none()) {
                    worst = worst.max((s - area).abs() / area);
                    check((s - area).abs() <= WEIGHT_SUM_TOL * area, || {
                        format!("seed {seed} frame {} patch {p}: fully inter but sum {s} != {area}", f.frame_index)
                    })?;
                    full += 1;
                }
                patches += 1;
            }
        }
    }
    Ok(format!("{patches} patches within bound, {full} fully-inter at equality (worst {worst:.1e})"))
}

fn c5_exactness() -> Outcome {
    for seed in 0..5 {
        let (hr, t) = corpus_video(seed, 8, 4);
        let lr = downscale(&hr, 4).unwrap();
        check(decode_lr(&t).unwrap() == lr, || format!("seed {seed}: decode(encode) differs"))?;
        let p = CacheProfile::new(&t.grid, t.num_frames(), AnchorSet::full(t.num_frames() * t.grid.num_patches())).unwrap();
        let rep = simulate(&t, &p, &hr[..]).unwrap();
        check(rep.total_error() == 0.0, || format!("seed {seed}: all-anchor error {}", rep.total_error()))?;
    }
    // A static scene: every later block copies frame 0 at zero motion.
    let still = Plane::from_fn(256, 192, |x, y| (((x * 2654435761) ^ (y * 40503)) % 251) as f64);
    let hr = vec![still; 5];
    let cfg = EncoderCfg { block_size: 8, search_range: 2, patch_w: 16, patch_h: 16, ..EncoderCfg::default() };
    let t = encode(&downscale(&hr, 4).unwrap(), &cfg).unwrap();
    let all_inter = t.frames[1..].iter().flat_map(|f| &f.blocks).all(|b| b.is_inter());
    check(all_inter, || "static scene produced intra blocks".into())?;
    let n = t.grid.num_patches();
    let p = CacheProfile::new(&t.grid, 5, AnchorSet::from_ids(5 * n, 0..n).unwrap()).unwrap();
    let rep = simulate(&t, &p, &hr[..]).unwrap();
    check(rep.total_error() == 0.0, || format!("static scene error {}", rep.total_error()))?;
    Ok("codec lossless on 5 videos; all-anchor and static propagation error exactly 0".into())
}

fn c6_tc() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for i in 0..TC_BLOCKS {
        let (w, h) = (r.random_range(1..=16), r.random_range(1..=16));
        let inter = i % 2 == 1;
        let x = Plane::from_fn(w, h, |_, _| if inter { r.random_range(-64.0..64.0) } else { r.random_range(0.0..=255.0) });
        let got = if inter { inter_block_complexity(&x) } else { intra_block_complexity(&x) };
        let want = tc_oracle(&x);
        let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        if got != want {
            worst = worst.max(rel);
        }
        check(got == want || rel <= TC_REL_TOL, || format!("block {i} ({w}x{h}): {got} vs oracle {want}"))?;
        let c = Plane::filled(w, h, r.random_range(-300.0..300.0));
        check(intra_block_complexity(&c) == 0.0 && inter_block_complexity(&c) == 0.0, || {
            format!("constant {w}x{h} block has nonzero complexity")
        })?;
    }
    Ok(format!("{TC_BLOCKS} blocks match the oracle (worst relative {worst:.1e}); constants give 0"))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

struct Video {
    hr: ByteFrames,
    trace: Trace,
    dag: ErrorDag,
}

fn full_scale_video(seed: u64) -> Video {
    let p = SynthParams { seed, ..SynthParams::default() };
    let synth = Synthesizer::new(p.clone()).unwrap();
    let mut hr = ByteFrames::new(p.frame_w, p.frame_h);
    let mut lr = Vec::with_capacity(p.num_frames);
    for i in 0..p.num_frames {
        let f = synth.frame(i);
        lr.push(bilinear_resample(&f, 0.25).unwrap());
        hr.push(&f).unwrap();
    }
    let trace = encode(&lr, &EncoderCfg::default()).unwrap();
    let dag = build_dag(&trace, &compute_tc(&trace).unwrap()).unwrap();
    Video { hr, trace, dag }
}

/// Spearman over the patches a profile leaves to reuse.
fn reuse_spearman(d: &ErrorDag, p: &CacheProfile, measured: &[f64]) -> Option<f64> {
    let est = estimate_sequential(d, &p.anchors).unwrap().flat();
    let keep: Vec<usize> = (0..est.len()).filter(|&i| !p.anchors.contains(i)).collect();
    let e: Vec<f64> = keep.iter().map(|&i| est[i]).collect();
    let m: Vec<f64> = keep.iter().map(|&i| measured[i]).collect();
    spearman(&e, &m)
}

fn c7_fidelity(bench_dag: &mut Option<ErrorDag>) -> Outcome {
    let mut rhos = Vec::new();
    let mut cells = Vec::new();
    let mut per_video = Vec::new();
    for seed in 0..FIDELITY_VIDEOS {
        let v = full_scale_video(seed);
        let t = &v.trace;
        check(v.dag.num_frames() == 60 && v.dag.patches_per_frame() == 15, || "unexpected video shape".into())?;
        check(validate_dag(&v.dag).all_passed(), || format!("video {seed}: invalid DAG"))?;
        let total = v.dag.num_patches();

        let mut profiles = Vec::new();
        let mut r = rng(700 + seed);
        for _ in 0..RANDOM_PROFILES {
            let k = r.random_range(total / 50..=total * 3 / 10);
            let a = AnchorSet::from_ids(total, sample(&mut r, total, k)).unwrap();
            profiles.push(CacheProfile::new(&t.grid, t.num_frames(), a).unwrap());
        }
        let methods = [Method::Palantir, Method::KeyUniform, Method::NoWeight, Method::NoTc];
        for &b in &BUDGETS {
            let cfg = ScheduleCfg { budget: Budget::Ratio(b), ..ScheduleCfg::default() };
            for m in methods {
                profiles.push(schedule_trace(t, &v.dag, m, &cfg).unwrap());
            }
        }
        let mut reports = Vec::new();
        for group in profiles.chunks(SIM_GROUP) {
            reports.extend(simulate_many(t, group, &v.hr, &SimOptions::default()).unwrap());
        }

        let mut video_rhos = Vec::new();
        for (p, rep) in profiles.iter().zip(&reports).take(RANDOM_PROFILES) {
            let rho = reuse_spearman(&v.dag, p, &rep.flat()).ok_or("constant errors under a random profile")?;
            video_rhos.push(rho);
        }
        per_video.push(median(&mut video_rhos.clone()));
        rhos.extend(video_rhos);

        for (bi, &b) in BUDGETS.iter().enumerate() {
            let psnr: Vec<f64> = (0..methods.len())
                .map(|mi| reports[RANDOM_PROFILES + bi * methods.len() + mi].mean_psnr)
                .collect();
            let win = psnr[1..].iter().all(|&other| psnr[0] >= other);
            cells.push((seed, b, win, psnr));
        }
        if seed == 0 {
            *bench_dag = Some(v.dag);
        }
    }
    let med = median(&mut rhos);
    let wins = cells.iter().filter(|c| c.2).count();
    let losses: Vec<String> = cells
        .iter()
        .filter(|c| !c.2)
        .map(|(s, b, _, p)| format!("video {s} @{:.0}%: {:.2}/{:.2}/{:.2}/{:.2} dB", b * 100.0, p[0], p[1], p[2], p[3]))
        .collect();
    let per: Vec<String> = per_video.iter().map(|r| format!("{r:.3}")).collect();
    let detail = format!(
        "median spearman {med:.3} (per video {}); palantir wins {wins}/{} cells{}",
        per.join(", "),
        cells.len(),
        if losses.is_empty() { String::new() } else { format!("; lost {}", losses.join("; ")) }
    );
    check(med >= MIN_MEDIAN_SPEARMAN, || detail.clone())?;
    check(wins as f64 >= MIN_WIN_FRACTION * cells.len() as f64, || detail.clone())?;
    Ok(detail)
}

fn c8_speedup(d: Option<ErrorDag>) -> Outcome {
    let d = match d {
        Some(d) => d,
        None => full_scale_video(0).dag,
    };
    check(d.num_frames() == 60 && d.patches_per_frame() == 15, || "bench DAG is not 60 x 15".into())?;
    let rep = bench(&d, Budget::Ratio(0.05), BENCH_REPS, 1024).map_err(|e| e.to_string())?;
    check(rep.rows.len() == 3 * BENCH_REPS, || "missing bench rows".into())?;
    let s = rep.speedup("optimized").unwrap();
    let detail = format!(
        "{} anchors; median vanilla {:.3}s, intra-set {:.3}s, optimized {:.3}s; speedup {s:.1}x",
        rep.budget,
        rep.median("vanilla").unwrap(),
        rep.median("intra-set").unwrap(),
        rep.median("optimized").unwrap()
    );
    check(s >= MIN_SPEEDUP, || detail.clone())?;
    Ok(detail)
}

fn c9_formats() -> Outcome {
    let packed = pack_bits(&AnchorSet::from_ids(15, [0, 3]).unwrap());
    check(packed == vec![0b0000_1001, 0], || format!("packing example gave {packed:?}"))?;
    let mut checked = 0;
    for seed in 0..5 {
        let (_, t) = corpus_video(seed, 8, 4);
        let mut a = Vec::new();
        write_trace(&mut a, &t).unwrap();
        let back = read_trace(&a[..]).unwrap();
        let mut b = Vec::new();
        write_trace(&mut b, &back).unwrap();
        check(back == t && a == b, || format!("seed {seed}: trace round trip differs"))?;

        let d = build_dag(&t, &compute_tc(&t).unwrap()).unwrap();
        let mut a = Vec::new();
        write_dag(&mut a, &d).unwrap();
        let back = read_dag(&a[..]).unwrap();
        let mut b = Vec::new();
        write_dag(&mut b, &back).unwrap();
        check(back == d && a == b, || format!("seed {seed}: DAG round trip differs"))?;

        for budget in [0.0, 0.1, 0.5] {
            let cfg = ScheduleCfg { budget: Budget::Ratio(budget), ..ScheduleCfg::default() };
            let p = schedule_trace(&t, &d, Method::Palantir, &cfg).unwrap();
            let bytes = p.encode();
            let back = CacheProfile::decode(&bytes).unwrap();
            check(back == p && back.encode() == bytes, || format!("seed {seed}: profile round trip differs"))?;
            check(CacheProfile::from_json(&p.to_json()).unwrap() == p, || format!("seed {seed}: JSON profile differs"))?;
            checked += 1;
        }
    }
    Ok(format!("traces, DAG dumps and {checked} profiles bit-exact on 5 videos; packing example ok"))
}

fn c10_diagnostics() -> Outcome {
    let (mut key, mut non, mut intra, mut inter) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5 {
        let (_, t) = corpus_video(seed, 30, 10);
        check(t.frames.iter().any(|f| f.ref_frames.len() > 1), || "corpus is not multi-reference".into())?;
        let deg = degree_of_reference(&t).unwrap();
        key.extend(deg.keyframe_degrees());
        non.extend(deg.non_keyframe_degrees());
        intra.extend(deg.block_degrees(false));
        inter.extend(deg.block_degrees(true));
    }
    let frames = cles(&key, &non).map_err(|e| e.to_string())?;
    let blocks = cles(&intra, &inter).map_err(|e| e.to_string())?;
    let detail = format!(
        "CLES(key, non-key) {frames:.3} over {}x{} frames, CLES(intra, inter) {blocks:.3} over {}x{} blocks",
        key.len(),
        non.len(),
        intra.len(),
        inter.len()
    );
    check(frames > blocks, || detail.clone())?;
    Ok(detail)
}

fn main() {
    let only = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut r = Runner { only, ran: 0, failed: 0 };
    r.run("C1", "estimator-equivalence", secs(30), c1_equivalence);
    r.run("C2", "greedy-first-pick", secs(30), c2_first_pick);
    r.run("C3", "monotonicity", secs(30), c3_monotonicity);
    r.run("C4", "weight-sum", secs(60), c4_weight_sum);
    r.run("C5", "codec-simulator-exactness", secs(60), c5_exactness);
    r.run("C6", "tc-oracle", secs(10), c6_tc);
    let mut dag = None;
    r.run("C7", "estimator-fidelity", secs(600), || c7_fidelity(&mut dag));
    r.run("C8", "batching-speedup", secs(300), || c8_speedup(dag.take()));
    r.run("C9", "format-round-trips", secs(30), c9_formats);
    r.run("C10", "diagnostics", secs(60), c10_diagnostics);
    if r.failed > 0 {
        println!("{} of {} criteria failed", r.failed, r.ran);
        std::process::exit(1);
    }
    println!("{} of {} criteria passed", r.ran, r.ran);
}
