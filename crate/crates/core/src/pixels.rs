//! Single-plane double-precision images, bilinear resampling and error metrics.
//!
//! Every resampling path in the crate goes through [`bilinear_resample_to`], which
//! uses the pixel-center convention: output sample `i` reads source coordinate
//! `(i + 0.5) / factor - 0.5`, clamped to the source extent.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Row-major plane of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Pixel rectangle. `x`/`y` may be negative for motion-compensated sources
/// that have not been clamped yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: i64, y: i64, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> i64 {
        self.x + self.w as i64
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h as i64
    }

    pub fn offset(&self, dx: i64, dy: i64) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn scaled(&self, s: usize) -> Rect {
        Rect::new(self.x * s as i64, self.y * s as i64, self.w * s, self.h * s)
    }

    /// Overlap of two rects, `None` when empty.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, (x1 - x0) as usize, (y1 - y0) as usize))
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x >= 0
            && self.y >= 0
            && self.right() <= width as i64
            && self.bottom() <= height as i64
    }
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width >= 1 && height >= 1, "plane dimensions must be positive");
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty plane {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "plane data has {} samples, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width >= 1 && height >= 1, "plane dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with edge extension.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f64] {
        &mut self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    fn same_dims(&self, other: &Plane) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(n_out: usize, n_in: usize, factor: f64) -> Vec<Tap> {
    let max = (n_in - 1) as f64;
    (0..n_out)
        .map(|i| {
            let u = ((i as f64 + 0.5) / factor - 0.5).clamp(0.0, max);
            let lo = u.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(n_in - 1),
                frac: u - lo as f64,
            }
        })
        .collect()
}

// `a + f * (b - a)` keeps constants exact, unlike `(1 - f) * a + f * b`.
#[inline(always)]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

/// Output extent for a resampling factor: `round(dim * factor)`, at least 1.
pub fn resampled_dim(dim: usize, factor: f64) -> usize {
    ((dim as f64 * factor).round() as usize).max(1)
}

/// Bilinear resampling by `factor` with output size `round(dim * factor)`.
pub fn bilinear_resample(src: &Plane, factor: f64) -> Result<Plane> {
    check_factor(factor)?;
    let w = resampled_dim(src.width, factor);
    let h = resampled_dim(src.height, factor);
    bilinear_resample_to(src, factor, w, h)
}

fn check_factor(factor: f64) -> Result<()> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("resample factor must be positive, got {factor}")));
    }
    Ok(())
}

/// Bilinear resampling with the coordinate mapping of `factor` but an explicit
/// output size. Used where a down-then-up round trip has to land back on the
/// original (possibly odd) dimensions.
pub fn bilinear_resample_to(src: &Plane, factor: f64, out_w: usize, out_h: usize) -> Result<Plane> {
    check_factor(factor)?;
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid("resample output must be non-empty"));
    }
    let cols = taps(out_w, src.width, factor);
    let rows = taps(out_h, src.height, factor);

    let hinterp = |y: usize, buf: &mut Vec<f64>| {
        let row = src.row(y);
        buf.clear();
        buf.extend(cols.iter().map(|t| lerp(row[t.lo], row[t.hi], t.frac)));
    };

    let mut out = Vec::with_capacity(out_w * out_h);
    let mut top = Vec::with_capacity(out_w);
    let mut bot = Vec::with_capacity(out_w);
    let mut cached: Option<(usize, usize)> = None;
    for r in &rows {
        if cached != Some((r.lo, r.hi)) {
            hinterp(r.lo, &mut top);
            hinterp(r.hi, &mut bot);
            cached = Some((r.lo, r.hi));
        }
        out.extend(top.iter().zip(&bot).map(|(&t, &b)| lerp(t, b, r.frac)));
    }
    Ok(Plane {
        width: out_w,
        height: out_h,
        data: out,
    })
}

/// Repeated resampling of small regions by one factor. Produces exactly the
/// values of [`bilinear_resample`] on the cropped region, without the
/// intermediate allocations.
pub struct Resampler {
    factor: f64,
    taps: HashMap<usize, Vec<Tap>>,
    top: Vec<f64>,
    bot: Vec<f64>,
}

impl Resampler {
    pub fn new(factor: f64) -> Result<Self> {
        check_factor(factor)?;
        Ok(Resampler {
            factor,
            taps: HashMap::new(),
            top: Vec::new(),
            bot: Vec::new(),
        })
    }

    /// Resamples `r` (which must lie inside `src`), handing each output row to
    /// `sink` with its row index.
    pub fn resample_rect(&mut self, src: &Plane, r: Rect, mut sink: impl FnMut(usize, &[f64])) {
        debug_assert!(r.within(src.width, src.height));
        let (w, h) = (resampled_dim(r.w, self.factor), resampled_dim(r.h, self.factor));
        let factor = self.factor;
        for len in [r.w, r.h] {
            self.taps.entry(len).or_insert_with(|| taps(resampled_dim(len, factor), len, factor));
        }
        let cols = &self.taps[&r.w];
        let rows = &self.taps[&r.h];
        let (x0, y0) = (r.x as usize, r.y as usize);
        let hinterp = |y: usize, buf: &mut Vec<f64>| {
            let row = &src.row(y0 + y)[x0..x0 + r.w];
            buf.resize(w, 0.0);
            for (o, t) in buf.iter_mut().zip(cols) {
                *o = lerp(row[t.lo], row[t.hi], t.frac);
            }
        };
        let mut out = vec![0.0; w];
        let mut cached: Option<(usize, usize)> = None;
        for (i, t) in rows.iter().enumerate().take(h) {
            match cached {
                Some(c) if c == (t.lo, t.hi) => {}
                // sliding down one source row keeps the old bottom row
                Some((_, hi)) if hi == t.lo => {
                    std::mem::swap(&mut self.top, &mut self.bot);
                    hinterp(t.hi, &mut self.bot);
                }
                _ => {
                    hinterp(t.lo, &mut self.top);
                    hinterp(t.hi, &mut self.bot);
                }
            }
            cached = Some((t.lo, t.hi));
            for ((o, &a), &b) in out.iter_mut().zip(&self.top).zip(&self.bot) {
                *o = lerp(a, b, t.frac);
            }
            sink(i, &out);
        }
    }
}

/// Sum of squared differences in row-major order.
pub fn squared_error_sum(a: &Plane, b: &Plane) -> Result<f64> {
    a.same_dims(b)?;
    Ok(sse_slices(&a.data, &b.data))
}

#[inline]
pub(crate) fn sse_slices(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// PSNR in dB; identical planes give `f64::INFINITY`.
pub fn psnr(reference: &Plane, test: &Plane, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be positive"));
    }
    let sse = squared_error_sum(reference, test)?;
    Ok(psnr_from_sse(sse, reference.data.len(), peak))
}

pub fn psnr_from_sse(sse: f64, pixels: usize, peak: f64) -> f64 {
    if sse == 0.0 {
        return f64::INFINITY;
    }
    let mse = sse / pixels as f64;
    10.0 * (peak * peak / mse).log10()
}

pub fn crop(src: &Plane, r: Rect) -> Result<Plane> {
    if !r.within(src.width, src.height) {
        return Err(Error::invalid(format!(
            "crop rect {r:?} outside {}x{}",
            src.width, src.height
        )));
    }
    let (x, y) = (r.x as usize, r.y as usize);
    let mut data = Vec::with_capacity(r.area());
    for row in y..y + r.h {
        data.extend_from_slice(&src.row(row)[x..x + r.w]);
    }
    Ok(Plane {
        width: r.w,
        height: r.h,
        data,
    })
}

pub fn paste(dst: &mut Plane, r: Rect, patch: &Plane) -> Result<()> {
    if !r.within(dst.width, dst.height) || patch.width != r.w || patch.height != r.h {
        return Err(Error::invalid(format!(
            "paste of {}x{} at {r:?} does not fit {}x{}",
            patch.width, patch.height, dst.width, dst.height
        )));
    }
    let (x, y) = (r.x as usize, r.y as usize);
    for row in 0..r.h {
        dst.row_mut(y + row)[x..x + r.w].copy_from_slice(patch.row(row));
    }
    Ok(())
}

/// Copy of `r` from `src` with edge extension for out-of-bounds pixels.
pub fn crop_clamped(src: &Plane, r: Rect) -> Plane {
    if r.within(src.width, src.height) {
        return crop(src, r).expect("rect checked");
    }
    let mut data = Vec::with_capacity(r.area());
    for dy in 0..r.h as i64 {
        for dx in 0..r.w as i64 {
            data.push(src.get_clamped(r.x + dx, r.y + dy));
        }
    }
    Plane {
        width: r.w,
        height: r.h,
        data,
    }
}

/// 8-bit frames stored compactly. Lossless for planes whose samples are
/// integers in `[0, 255]`, which is what the synthetic generator emits.
#[derive(Debug, Clone, Default)]
pub struct ByteFrames {
    width: usize,
    height: usize,
    frames: Vec<Vec<u8>>,
}

impl ByteFrames {
    pub fn new(width: usize, height: usize) -> Self {
        ByteFrames {
            width,
            height,
            frames: Vec::new(),
        }
    }

    pub fn push(&mut self, p: &Plane) -> Result<()> {
        if p.width != self.width || p.height != self.height {
            return Err(Error::invalid("frame size differs from the sequence"));
        }
        self.frames.push(p.data.iter().map(|&v| to_u8(v)).collect());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Raw samples of frame `idx`, row-major.
    pub fn bytes(&self, idx: usize) -> &[u8] {
        &self.frames[idx]
    }

    pub fn plane(&self, idx: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.frames[idx].iter().map(|&b| b as f64).collect(),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    let c = v.clamp(0.0, 255.0);
    let t = c as u8;
    t + (c - t as f64 >= 0.5) as u8
}

/// `v.round().clamp(0.0, 255.0)` without a libm call.
#[inline]
pub(crate) fn round_clamped(v: f64) -> f64 {
    to_u8(v) as f64
}

/// Binary PGM (P5) view of a plane, rounded and clamped to 8 bits.
pub fn write_pgm<W: Write>(mut w: W, p: &Plane) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", p.width, p.height)?;
    let bytes: Vec<u8> = p.data.iter().map(|&v| to_u8(v)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut r: R) -> Result<Plane> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&buf[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::format("not a binary PGM (P5)"));
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| Error::format(format!("bad PGM field {s:?}")));
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1;
    let body = buf
        .get(pos..pos + width * height)
        .ok_or_else(|| Error::format("truncated PGM body"))?;
    Plane::from_vec(width, height, body.iter().map(|&b| b as f64).collect())
}

pub const RAW_PLANE_MAGIC: &[u8; 8] = b"PLANEF64";

/// Raw dump: 8-byte magic, `u32` width, `u32` height, then little-endian `f64` samples.
pub fn write_raw<W: Write>(mut w: W, p: &Plane) -> Result<()> {
    w.write_all(RAW_PLANE_MAGIC)?;
    w.write_all(&(p.width as u32).to_le_bytes())?;
    w.write_all(&(p.height as u32).to_le_bytes())?;
    let mut bytes = Vec::with_capacity(p.data.len() * 8);
    for v in &p.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_raw<R: Read>(mut r: R) -> Result<Plane> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != RAW_PLANE_MAGIC {
        return Err(Error::format("bad raw plane magic"));
    }
    let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != width * height * 8 {
        return Err(Error::format(format!(
            "raw plane body has {} bytes, expected {}",
            body.len(),
            width * height * 8
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Plane::from_vec(width, height, data)
}
