//! Command-line front end. Stages talk only through files, so each one can be
//! rerun on its own.
//!
//! Exit codes: 0 success, 2 usage (bad flags, missing options, bad config
//! file), 3 invalid argument, 4 I/O, 5 format or version mismatch, 6 failed
//! validation. Failures print one line to stderr:
//! `error: kind=<kind> msg="<message>"`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::codec::{downscale, encode, EncoderCfg, SynthParams, Synthesizer};
use crate::complexity::compute_tc;
use crate::dag::{build_dag, load_dag, save_dag, validate_dag, write_dot, ErrorDag};
use crate::error::{Error, Result};
use crate::estimator::{estimate_sequential, AnchorSet};
use crate::pixels::{read_pgm, write_pgm, ByteFrames};
use crate::scheduler::{greedy_select_with, schedule_trace, Budget, CacheProfile, GreedyMode, Method, ScheduleCfg};
use crate::sim::{compare, simulate_with, SimOptions};
use crate::trace::{load_trace, save_trace, Trace};

/// Overrides the default worker count when `--threads` and the config file
/// leave it unset.
pub const THREADS_ENV: &str = "SRSCHED_THREADS";

#[derive(Parser, Debug)]
#[command(name = "srsched", version, about = "Anchor scheduling for reuse-based super-resolution")]
pub struct Cli {
    /// TOML file with option values; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Defaults to $SRSCHED_THREADS, else the logical core count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for synthesis and anchor noise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic HR video as frame_NNNN.pgm files.
    Synth(SynthArgs),
    /// Downscale HR frames and encode them into a trace.
    Encode(EncodeArgs),
    /// Build, validate and dump the error DAG of a trace.
    Dag(DagArgs),
    /// Select anchor patches and write a cache profile.
    Schedule(ScheduleArgs),
    /// Simulate reuse-based SR under a cache profile.
    Simulate(SimulateArgs),
    /// Estimated against simulated per-patch error, as CSV.
    Eval(EvalArgs),
    /// Time greedy selection in vanilla, intra-set and optimized modes.
    Bench(BenchArgs),
}

// Every option is optional on the command line and in the config file; the
// two are merged field by field with flags winning.
macro_rules! options {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $field:ident: $ty:ty,)* }) => {
        $(#[$m])*
        #[derive(Args, Deserialize, Debug, Clone, Default)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $($(#[$fm])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl $name {
            fn merge(&mut self, file: &$name) {
                $(if self.$field.is_none() {
                    self.$field = file.$field.clone();
                })*
            }
        }
    };
}

options!(SynthArgs {
    /// Output directory.
    out: PathBuf,
    /// HR frame width.
    width: usize,
    /// HR frame height.
    height: usize,
    frames: usize,
    /// Horizontal camera pan, HR pixels per frame.
    pan_x: f64,
    pan_y: f64,
    /// Number of moving rectangles.
    rects: usize,
    rect_speed: f64,
    /// Half-width of the uniform pixel noise.
    noise: f64,
});

options!(EncodeArgs {
    /// Directory of HR frame_NNNN.pgm files.
    frames: PathBuf,
    /// Output trace file.
    out: PathBuf,
    scale: usize,
    block_size: usize,
    search_range: i32,
    max_refs: usize,
    /// Keyframe interval.
    gop: usize,
    intra_threshold: f64,
    /// Patch width in LR pixels.
    patch_w: usize,
    patch_h: usize,
});

options!(DagArgs {
    trace: PathBuf,
    /// Output DAG dump.
    out: PathBuf,
    /// Also write a Graphviz description here.
    dump_dot: PathBuf,
});

options!(ScheduleArgs {
    trace: PathBuf,
    dag: PathBuf,
    /// palantir, key-uniform, no-weight, no-tc or per-frame.
    method: Method,
    /// Anchors per interval: a count (45), percent (5%) or fraction (0.05).
    budget: Budget,
    /// Candidate anchor sets evaluated per batched propagation.
    candidate_batch: usize,
    /// Frames per scheduling interval; default splits at keyframes.
    interval: usize,
    /// Output profile; a .json extension writes the JSON form.
    out: PathBuf,
});

options!(SimulateArgs {
    trace: PathBuf,
    /// Directory of HR frame_NNNN.pgm files.
    frames: PathBuf,
    profile: PathBuf,
    /// Output report (JSON).
    out: PathBuf,
    /// Also write per-patch errors as CSV.
    csv: PathBuf,
    /// Uniform noise half-width added to anchor patches.
    anchor_noise: f64,
});

options!(EvalArgs {
    trace: PathBuf,
    dag: PathBuf,
    frames: PathBuf,
    profile: PathBuf,
    /// Output CSV with columns frame,patch,estimated,measured.
    out: PathBuf,
});

options!(BenchArgs {
    dag: PathBuf,
    budget: Budget,
    /// Repetitions per mode.
    reps: usize,
    /// Candidate batch of the optimized mode.
    batch: usize,
    /// Per-run CSV; stdout when absent.
    out: PathBuf,
});

/// Contents of a `--config` file: global keys plus one table per subcommand.
#[derive(Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub synth: SynthArgs,
    pub encode: EncodeArgs,
    pub dag: DagArgs,
    pub schedule: ScheduleArgs,
    pub simulate: SimulateArgs,
    pub eval: EvalArgs,
    pub bench: BenchArgs,
}

impl RunConfig {
    pub fn load(path: &Path) -> std::result::Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(Error::from).map_err(at(path))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(Error::InvalidArgument(_)) => 3,
            CliError::Run(Error::Io(_)) => 4,
            CliError::Run(Error::Format(_) | Error::Version { .. }) => 5,
            CliError::Run(Error::Validation { .. }) => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Run(Error::InvalidArgument(_)) => "invalid-argument",
            CliError::Run(Error::Io(_)) => "io",
            CliError::Run(Error::Format(_)) => "format",
            CliError::Run(Error::Version { .. }) => "version",
            CliError::Run(Error::Validation { .. }) => "validation",
        }
    }

    /// The single stderr line.
    pub fn line(&self) -> String {
        let msg = match self {
            CliError::Usage(m) | CliError::Run(Error::InvalidArgument(m) | Error::Format(m)) => m.clone(),
            CliError::Run(e) => e.to_string(),
        };
        format!("error: kind={} msg={:?}", self.kind(), msg)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Prefixes I/O errors with the path involved.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

/// Runs the CLI and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return Err(CliError::Usage(first.to_string()));
        }
    };
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = match cli.threads.or(cfg.threads) {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            Err(_) => 0,
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {threads} worker threads: {e}")))?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    pool.install(|| match cli.command {
        Command::Synth(mut a) => {
            a.merge(&cfg.synth);
            cmd_synth(&a, seed)
        }
        Command::Encode(mut a) => {
            a.merge(&cfg.encode);
            cmd_encode(&a)
        }
        Command::Dag(mut a) => {
            a.merge(&cfg.dag);
            cmd_dag(&a)
        }
        Command::Schedule(mut a) => {
            a.merge(&cfg.schedule);
            cmd_schedule(&a)
        }
        Command::Simulate(mut a) => {
            a.merge(&cfg.simulate);
            cmd_simulate(&a, seed)
        }
        Command::Eval(mut a) => {
            a.merge(&cfg.eval);
            cmd_eval(&a)
        }
        Command::Bench(mut a) => {
            a.merge(&cfg.bench);
            cmd_bench(&a)
        }
    })
}

pub fn frame_path(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("frame_{idx:04}.pgm"))
}

/// The `frame_*.pgm` files of a directory in name order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::from)
        .map_err(at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::invalid(format!("no frame_*.pgm files in {}", dir.display())));
    }
    Ok(out)
}

pub fn load_frames(dir: &Path) -> Result<ByteFrames> {
    let mut frames: Option<ByteFrames> = None;
    for p in frame_paths(dir)? {
        let plane = read_pgm(BufReader::new(File::open(&p).map_err(Error::from).map_err(at(&p))?))
            .map_err(at(&p))?;
        frames
            .get_or_insert_with(|| ByteFrames::new(plane.width(), plane.height()))
            .push(&plane)
            .map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
    }
    Ok(frames.expect("frame_paths is never empty"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from).map_err(at(path))?))
}

fn cmd_synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    let out = need(&a.out, "out")?;
    let d = SynthParams::default();
    let params = SynthParams {
        frame_w: a.width.unwrap_or(d.frame_w),
        frame_h: a.height.unwrap_or(d.frame_h),
        num_frames: a.frames.unwrap_or(d.num_frames),
        seed,
        pan: (a.pan_x.unwrap_or(d.pan.0), a.pan_y.unwrap_or(d.pan.1)),
        num_rects: a.rects.unwrap_or(d.num_rects),
        rect_speed: a.rect_speed.unwrap_or(d.rect_speed),
        noise: a.noise.unwrap_or(d.noise),
    };
    let synth = Synthesizer::new(params.clone())?;
    fs::create_dir_all(&out).map_err(Error::from).map_err(at(&out))?;
    for t in 0..params.num_frames {
        let p = frame_path(&out, t);
        write_pgm(create(&p)?, &synth.frame(t)).map_err(at(&p))?;
    }
    let meta = out.join("synth.json");
    fs::write(&meta, serde_json::to_vec_pretty(&params).map_err(Error::from)?)
        .map_err(Error::from)
        .map_err(at(&meta))?;
    println!(
        "wrote {} frames of {}x{} to {}",
        params.num_frames,
        params.frame_w,
        params.frame_h,
        out.display()
    );
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> CliResult<()> {
    let dir = need(&a.frames, "frames")?;
    let out = need(&a.out, "out")?;
    let d = EncoderCfg::default();
    let cfg = EncoderCfg {
        block_size: a.block_size.unwrap_or(d.block_size),
        search_range: a.search_range.unwrap_or(d.search_range),
        max_refs: a.max_refs.unwrap_or(d.max_refs),
        gop: a.gop.unwrap_or(d.gop),
        intra_threshold: a.intra_threshold.unwrap_or(d.intra_threshold),
        patch_w: a.patch_w.unwrap_or(d.patch_w),
        patch_h: a.patch_h.unwrap_or(d.patch_h),
        scale: a.scale.unwrap_or(d.scale),
    };
    cfg.validate()?;
    let mut lr = Vec::new();
    for p in frame_paths(&dir)? {
        let hr = read_pgm(BufReader::new(File::open(&p).map_err(Error::from).map_err(at(&p))?)).map_err(at(&p))?;
        lr.extend(downscale(std::slice::from_ref(&hr), cfg.scale)?);
    }
    let t = encode(&lr, &cfg)?;
    save_trace(&t, &out).map_err(at(&out))?;
    let blocks: Vec<_> = t.frames.iter().flat_map(|f| &f.blocks).collect();
    let inter = blocks.iter().filter(|b| b.is_inter()).count();
    println!(
        "encoded {} frames of {}x{}: {} blocks, {} inter, {} patches per frame",
        t.num_frames(),
        t.frame_w(),
        t.frame_h(),
        blocks.len(),
        inter,
        t.grid.num_patches()
    );
    Ok(())
}

fn read_trace_file(p: &Path) -> Result<Trace> {
    load_trace(p).map_err(at(p))
}

fn read_dag_file(p: &Path) -> Result<ErrorDag> {
    load_dag(p).map_err(at(p))
}

fn cmd_dag(a: &DagArgs) -> CliResult<()> {
    let t = read_trace_file(&need(&a.trace, "trace")?)?;
    let out = need(&a.out, "out")?;
    let d = build_dag(&t, &compute_tc(&t)?)?;
    validate_dag(&d).into_result()?;
    save_dag(&d, &out).map_err(at(&out))?;
    if let Some(dot) = &a.dump_dot {
        write_dot(create(dot)?, &d).map_err(at(dot))?;
    }
    println!("{} frames, {} patches, {} edges", d.num_frames(), d.num_patches(), d.num_edges());
    Ok(())
}

fn cmd_schedule(a: &ScheduleArgs) -> CliResult<()> {
    let t = read_trace_file(&need(&a.trace, "trace")?)?;
    let d = read_dag_file(&need(&a.dag, "dag")?)?;
    let out = need(&a.out, "out")?;
    let method = a.method.unwrap_or(Method::Palantir);
    let defaults = ScheduleCfg::default();
    let cfg = ScheduleCfg {
        budget: a.budget.unwrap_or(defaults.budget),
        candidate_batch: a.candidate_batch.unwrap_or(defaults.candidate_batch),
        interval: a.interval.or(defaults.interval),
    };
    let profile = schedule_trace(&t, &d, method, &cfg)?;
    profile.save(&out).map_err(at(&out))?;
    println!(
        "{method}: {} of {} patches anchored",
        profile.anchors.count(),
        profile.anchors.len()
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> CliResult<()> {
    let t = read_trace_file(&need(&a.trace, "trace")?)?;
    let hr = load_frames(&need(&a.frames, "frames")?)?;
    let pp = need(&a.profile, "profile")?;
    let profile = CacheProfile::load(&pp).map_err(at(&pp))?;
    let out = need(&a.out, "out")?;
    let opts = SimOptions {
        anchor_noise: a.anchor_noise.unwrap_or(0.0),
        seed,
    };
    let report = simulate_with(&t, &profile, &hr, &opts)?;
    fs::write(&out, report.to_json()?).map_err(Error::from).map_err(at(&out))?;
    if let Some(csv) = &a.csv {
        report.write_csv(create(csv)?).map_err(at(csv))?;
    }
    println!(
        "mean PSNR {:.4} dB, anchor fraction {:.4}",
        report.mean_psnr, report.anchor_fraction
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let t = read_trace_file(&need(&a.trace, "trace")?)?;
    let d = read_dag_file(&need(&a.dag, "dag")?)?;
    let hr = load_frames(&need(&a.frames, "frames")?)?;
    let pp = need(&a.profile, "profile")?;
    let profile = CacheProfile::load(&pp).map_err(at(&pp))?;
    let out = need(&a.out, "out")?;
    if d.num_patches() != profile.anchors.len() {
        return Err(Error::invalid("DAG and profile cover different patch counts").into());
    }
    let est = estimate_sequential(&d, &profile.anchors)?;
    let report = simulate_with(&t, &profile, &hr, &SimOptions::default())?;
    let agreement = compare(&est, &report)?;
    agreement.write_csv(create(&out)?).map_err(at(&out))?;
    match agreement.spearman {
        Some(r) => println!("spearman {r:.4} over {} patches", agreement.rows.len()),
        None => println!("spearman undefined (constant errors) over {} patches", agreement.rows.len()),
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let d = read_dag_file(&need(&a.dag, "dag")?)?;
    let report = bench(
        &d,
        a.budget.unwrap_or(Budget::Ratio(0.05)),
        a.reps.unwrap_or(5),
        a.batch.unwrap_or(1024),
    )?;
    match &a.out {
        Some(p) => report.write_csv(create(p)?).map_err(at(p))?,
        None => report.write_csv(io::stdout().lock())?,
    }
    report.write_summary(io::stdout().lock())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: &'static str,
    pub rep: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub budget: usize,
    pub rows: Vec<BenchRow>,
    /// The anchor set every mode agreed on.
    pub anchors: AnchorSet,
}

pub const BENCH_MODES: [&str; 3] = ["vanilla", "intra-set", "optimized"];

impl BenchReport {
    /// Median wall-clock seconds of a mode.
    pub fn median(&self, mode: &str) -> Option<f64> {
        let mut v: Vec<f64> = self.rows.iter().filter(|r| r.mode == mode).map(|r| r.seconds).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
    }

    /// Vanilla median over the mode's median.
    pub fn speedup(&self, mode: &str) -> Option<f64> {
        Some(self.median("vanilla")? / self.median(mode)?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mode,rep,seconds")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.6}", r.mode, r.rep, r.seconds)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mode,median_seconds,speedup")?;
        for m in BENCH_MODES {
            if let (Some(med), Some(s)) = (self.median(m), self.speedup(m)) {
                writeln!(w, "{m},{med:.6},{s:.3}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Times greedy selection over the whole DAG in each mode, `reps` times.
/// Fails if the modes disagree on the anchor set.
pub fn bench(d: &ErrorDag, budget: Budget, reps: usize, batch: usize) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let k = budget.resolve(d.num_patches())?;
    let modes = [GreedyMode::Vanilla, GreedyMode::IntraSet, GreedyMode::Batched(batch)];
    let mut rows = Vec::with_capacity(3 * reps);
    let mut agreed: Option<AnchorSet> = None;
    for rep in 0..reps {
        for (name, mode) in BENCH_MODES.into_iter().zip(modes) {
            let start = Instant::now();
            let (anchors, _) = greedy_select_with(d, k, mode)?;
            let seconds = start.elapsed().as_secs_f64();
            match &agreed {
                Some(a) if *a != anchors => {
                    return Err(Error::Validation {
                        check: "bench-consistency",
                        detail: format!("{name} picked a different anchor set"),
                    })
                }
                Some(_) => {}
                None => agreed = Some(anchors),
            }
            rows.push(BenchRow { mode: name, rep, seconds });
        }
    }
    Ok(BenchReport {
        budget: k,
        rows,
        anchors: agreed.expect("reps >= 1"),
    })
}
