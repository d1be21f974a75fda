#![allow(dead_code)]

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srsched::codec::{downscale, encode, synth_video, EncoderCfg, SynthParams};
use srsched::dag::{DagFrame, EdgeGroup, ErrorDag, WeightMatrix};
use srsched::estimator::AnchorSet;
use srsched::pixels::Plane;
use srsched::trace::{PatchGrid, Trace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random DAG over equal-area patches (so the weight-sum bound is a row sum
/// of at most 1). Each frame after the first references up to three earlier
/// frames; some rows are left at exactly 1 to mimic fully-inter patches.
pub fn random_dag(rng: &mut ChaCha8Rng, frames: usize, rows: usize, cols: usize) -> ErrorDag {
    let grid = PatchGrid::new(cols * 4, rows * 4, 4, 4).unwrap();
    let n = grid.num_patches();
    let mut out = Vec::with_capacity(frames);
    for fi in 0..frames {
        let tc: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) })
            .collect();
        let mut in_edges = Vec::new();
        if fi > 0 {
            let k = rng.random_range(1..=fi.min(3));
            let mut refs: Vec<usize> = sample(rng, fi, k).into_iter().collect();
            refs.sort_unstable();
            let mut groups: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); n]; refs.len()];
            for p in 0..n {
                let target = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.0..1.0) };
                let mut raw = Vec::new();
                for g in 0..refs.len() {
                    let m = rng.random_range(0..=3usize);
                    for c in sample(rng, n, m) {
                        raw.push((g, c, rng.random_range(0.01..1.0)));
                    }
                }
                let sum: f64 = raw.iter().map(|r| r.2).sum();
                for (g, c, w) in raw {
                    groups[g][p].push((c, w / sum * target));
                }
            }
            for (g, r) in groups.into_iter().zip(refs) {
                let rows = g
                    .into_iter()
                    .map(|mut row| {
                        row.sort_by_key(|e| e.0);
                        row
                    })
                    .collect();
                in_edges.push(EdgeGroup {
                    ref_frame: r,
                    weights: WeightMatrix::from_rows(n, rows).unwrap(),
                });
            }
        }
        out.push(DagFrame {
            frame_index: fi,
            tc,
            in_edges,
        });
    }
    ErrorDag { grid, frames: out }
}

pub fn random_set(rng: &mut ChaCha8Rng, len: usize) -> AnchorSet {
    let p = rng.random_range(0.0..0.5);
    AnchorSet::from_ids(len, (0..len).filter(|_| rng.random_bool(p))).unwrap()
}

/// Parameters of the small seed-0 corpus behind the checked-in fixtures.
pub fn golden_synth() -> SynthParams {
    SynthParams {
        frame_w: 320,
        frame_h: 192,
        num_frames: 6,
        seed: 0,
        ..SynthParams::default()
    }
}

pub fn golden_encoder() -> EncoderCfg {
    EncoderCfg {
        block_size: 8,
        search_range: 4,
        patch_w: 20,
        patch_h: 16,
        ..EncoderCfg::default()
    }
}

pub fn golden_video() -> (Vec<Plane>, Trace) {
    let hr = synth_video(&golden_synth()).unwrap();
    let t = encode(&downscale(&hr, 4).unwrap(), &golden_encoder()).unwrap();
    (hr, t)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// A small multi-reference video from `seed`.
pub fn small_video(seed: u64, frames: usize, gop: usize) -> (Vec<Plane>, Trace) {
    let hr = synth_video(&SynthParams {
        frame_w: 320,
        frame_h: 192,
        num_frames: frames,
        seed,
        ..SynthParams::default()
    })
    .unwrap();
    let cfg = EncoderCfg {
        gop,
        ..golden_encoder()
    };
    let t = encode(&downscale(&hr, 4).unwrap(), &cfg).unwrap();
    (hr, t)
}

/// One output sample of the bilinear resample, written out per pixel.
pub fn resample_at(src: &Plane, factor: f64, i: usize, j: usize) -> f64 {
    let u = ((i as f64 + 0.5) / factor - 0.5).clamp(0.0, (src.height() - 1) as f64);
    let v = ((j as f64 + 0.5) / factor - 0.5).clamp(0.0, (src.width() - 1) as f64);
    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(src.height() - 1), (j0 + 1).min(src.width() - 1));
    let (a, b) = (u - i0 as f64, v - j0 as f64);
    (1.0 - a) * ((1.0 - b) * src.get(j0, i0) + b * src.get(j1, i0))
        + a * ((1.0 - b) * src.get(j0, i1) + b * src.get(j1, i1))
}

/// Halve then double, and sum the squared difference, one pixel at a time.
pub fn tc_oracle(x: &Plane) -> f64 {
    let dw = ((x.width() as f64 * 0.5).round() as usize).max(1);
    let dh = ((x.height() as f64 * 0.5).round() as usize).max(1);
    let down = Plane::from_fn(dw, dh, |j, i| resample_at(x, 0.5, i, j));
    let mut acc = 0.0;
    for i in 0..x.height() {
        for j in 0..x.width() {
            let d = resample_at(&down, 2.0, i, j) - x.get(j, i);
            acc += d * d;
        }
    }
    acc
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || a == b
}
