//! Command-line front end: phantom generation, reconstruction, benchmarks
//! and container inspection.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastomo::bench::{run_bench, BenchConfig, BenchMode, BenchRow, CSV_HEADER};
use fastomo::bst::{BstConfig, Kernel};
use fastomo::io::{export_image, read_header, BlockReader, ImageFormat, Layout};
use fastomo::phantom::Ellipsoid;
use fastomo::preprocess::DEFAULT_RING_WINDOW;
use fastomo::recon::{
    build_reconstruction_pipeline, run_reconstruction, CenterMode, CountModel, PhantomVolume,
    ReconConfig, ReconOutcome, DEFAULT_MEMORY_BUDGET,
};
use fastomo::{Error, ImageGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_MEMORY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fastomo", version, about = "Parallel-beam tomographic reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a frame-major container of analytic ellipsoid projections.
    Phantom(PhantomArgs),
    /// Reconstruct every slice of a frame-major container.
    Reconstruct(ReconstructArgs),
    /// Time reconstructions over sizes, block sizes, kernels and worker counts.
    Bench(BenchArgs),
    /// Print a container header and slice statistics.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Detector samples per projection (also the reconstruction size).
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[arg(long, default_value_t = 180)]
    pub angles: usize,
    #[arg(long, default_value_t = 16)]
    pub slices: usize,
    #[arg(long, default_value_t = 0.5)]
    pub a: f64,
    #[arg(long, default_value_t = 0.5)]
    pub b: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub cx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub cy: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub cz: f64,
    /// Store simulated counts `I = D + I0·exp(-y)` with flat/dark sidecars.
    #[arg(long, value_name = "I0")]
    pub counts: Option<f64>,
    /// Dark level `D` for `--counts`.
    #[arg(long, default_value_t = 0.0)]
    pub dark: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Ss,
    Bst,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Ss => Kernel::Ss,
            KernelArg::Bst => Kernel::Bst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CenterArg {
    Off,
    Volume,
    Slice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    Off,
    On,
}

#[derive(Debug, Clone, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelArg::Bst)]
    pub kernel: KernelArg,
    /// Slices per pipeline job (Q).
    #[arg(long, value_name = "Q", default_value_t = 8)]
    pub blocksize: usize,
    /// Workers per compute stage.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Queue capacity in front of each stage.
    #[arg(long, default_value_t = 2)]
    pub queue: usize,
    /// Treat the input as line integrals even when flat/dark sidecars exist.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, value_enum, default_value_t = CenterArg::Off)]
    pub center: CenterArg,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub rings: Toggle,
    #[arg(long, default_value_t = DEFAULT_RING_WINDOW)]
    pub ring_window: usize,
    /// Raised-cosine rolloff of the ramp filter as a fraction of Nyquist; 1 disables it.
    #[arg(long, default_value_t = 1.0)]
    pub apodize: f64,
    #[arg(long, default_value_t = 2)]
    pub pad_factor: usize,
    #[arg(long, default_value_t = 10.0)]
    pub kb_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kb_support: f64,
    #[arg(long, value_name = "BYTES", default_value_t = DEFAULT_MEMORY_BUDGET)]
    pub memory_budget: u64,
    /// Run even when the memory estimate exceeds the budget.
    #[arg(long)]
    pub allow_over_budget: bool,
    /// Print the stage plan and memory estimate without reconstructing.
    #[arg(long)]
    pub dry_run: bool,
    /// Skip the write stage; only timings and metrics are produced.
    #[arg(long)]
    pub no_write: bool,
    /// Per-stage metrics CSV (default: `<output>.metrics.csv`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

impl ReconstructArgs {
    pub fn to_config(&self) -> ReconConfig {
        let mut cfg = ReconConfig::new(&self.input, &self.output);
        cfg.kernel = self.kernel.into();
        cfg.block_size = self.blocksize;
        cfg.workers = self.workers;
        cfg.queue_capacity = self.queue;
        cfg.normalize = !self.no_normalize;
        cfg.center = match self.center {
            CenterArg::Off => CenterMode::Off,
            CenterArg::Volume => CenterMode::Volume,
            CenterArg::Slice => CenterMode::Slice,
        };
        cfg.rings = self.rings == Toggle::On;
        cfg.ring_window = self.ring_window;
        cfg.apodize = self.apodize;
        cfg.bst = BstConfig {
            pad_factor: self.pad_factor,
            kb_beta: self.kb_beta,
            kb_support: self.kb_support,
            ..BstConfig::default()
        };
        cfg.memory_budget = Some(self.memory_budget);
        cfg.allow_over_budget = self.allow_over_budget;
        cfg.write = !self.no_write;
        cfg
    }

    fn metrics_path(&self) -> PathBuf {
        self.metrics.clone().unwrap_or_else(|| {
            let mut name = self.output.as_os_str().to_owned();
            name.push(".metrics.csv");
            PathBuf::from(name)
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256])]
    pub sizes: Vec<usize>,
    /// Block sizes (Q) to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10])]
    pub blocksize: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [KernelArg::Ss, KernelArg::Bst])]
    pub kernels: Vec<KernelArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    /// Slices in each generated volume.
    #[arg(long, default_value_t = 20)]
    pub slices: usize,
    /// Time only the block reads.
    #[arg(long)]
    pub read_only: bool,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pgm16,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// Slice to summarize and export (default: middle slice).
    #[arg(long, value_name = "K")]
    pub export_slice: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Pgm16)]
    pub format: FormatArg,
    /// Export destination (default: `<path>.slice<K>.pgm` or `.csv`).
    #[arg(long)]
    pub export_path: Option<PathBuf>,
}

/// Exit status for an error, looking through pipeline stage wrappers.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Io { .. } | Error::BadMagic { .. } | Error::BadHeader { .. } | Error::Truncated { .. } => {
            EXIT_IO
        }
        Error::MemoryBudget { .. } => EXIT_MEMORY,
        Error::InvalidParameter(_) | Error::UnknownKernel(_) if !matches!(err, Error::Stage { .. }) => {
            EXIT_USAGE
        }
        _ => EXIT_NUMERIC,
    }
}

pub fn cmd_phantom(args: &PhantomArgs) -> Result<String, Error> {
    let ellipsoid = Ellipsoid::new(args.a, args.b, args.c, args.rho, [args.cx, args.cy, args.cz])?;
    let counts = match args.counts {
        Some(flat) if flat > 0.0 => Some(CountModel {
            flat,
            dark: args.dark,
        }),
        Some(flat) => {
            return Err(Error::InvalidParameter(format!("--counts must be positive, got {flat}")))
        }
        None => None,
    };
    let header = PhantomVolume {
        n_det: args.n,
        n_angles: args.angles,
        n_slices: args.slices,
        ellipsoid,
        counts,
    }
    .write(&args.output)?;
    Ok(format!(
        "wrote {} ({} angles x {} slices x {} detector samples, {} bytes)",
        args.output.display(),
        header.n_angles(),
        header.n_slices(),
        header.n_det(),
        header.file_bytes()
    ))
}

/// Runs a reconstruction; returns `None` for a dry run.
pub fn cmd_reconstruct(cfg: &ReconConfig, dry_run: bool, out: &mut dyn Write) -> Result<Option<ReconOutcome>, Error> {
    let plan = build_reconstruction_pipeline(cfg)?;
    let io_err = |e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    if dry_run {
        writeln!(out, "{}", plan.describe()).map_err(io_err)?;
        return Ok(None);
    }
    let outcome = run_reconstruction(&plan, false)?;
    write!(out, "{}", outcome.metrics).map_err(io_err)?;
    Ok(Some(outcome))
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<BenchRow>, Error> {
    static RUNS: AtomicUsize = AtomicUsize::new(0);
    let run = RUNS.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!("fastomo-bench-{}-{run}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let cfg = BenchConfig {
        sizes: args.sizes.clone(),
        block_sizes: args.blocksize.clone(),
        kernels: args.kernels.iter().map(|&k| k.into()).collect(),
        workers: args.workers.clone(),
        repeat: args.repeat,
        slices: args.slices,
        mode: if args.read_only {
            BenchMode::ReadOnly
        } else {
            BenchMode::Full
        },
        scratch_dir: dir.clone(),
    };
    let rows = run_bench(&cfg);
    let _ = fs::remove_dir_all(&dir);
    rows
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

fn default_export_path(path: &Path, k: usize, format: FormatArg) -> PathBuf {
    let ext = match format {
        FormatArg::Pgm16 => "pgm",
        FormatArg::Csv => "csv",
    };
    let mut name = path.as_os_str().to_owned();
    name.push(format!(".slice{k}.{ext}"));
    PathBuf::from(name)
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String, Error> {
    let header = read_header(&args.path)?;
    let layout = match header.layout {
        Layout::Frames => "frames [angle][slice][detector]",
        Layout::Slices => "slices [slice][row][col]",
    };
    let k = args.export_slice.unwrap_or(header.n_slices() / 2);
    let mut reader = BlockReader::open(&args.path, 1)?;
    let plane = reader.read_plane(k)?;
    let (lo, hi, sum) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &v| {
        let v = v as f64;
        (lo.min(v), hi.max(v), s + v)
    });
    let mut report = format!(
        "file: {}\nlayout: {}\ndims: {} x {} x {}\ndtype: f32\nslices: {}\nslice {}: min {:.6} max {:.6} mean {:.6}\n",
        args.path.display(),
        layout,
        header.dims[0],
        header.dims[1],
        header.dims[2],
        header.n_slices(),
        k,
        lo,
        hi,
        sum / plane.len() as f64
    );
    if args.export_slice.is_some() {
        let side = header.n_det();
        if header.n_angles() != side {
            return Err(Error::InvalidParameter(format!(
                "slice plane is {} x {side}, export needs a square plane",
                header.n_angles()
            )));
        }
        let grid = ImageGrid::new(side, plane.iter().map(|&v| v as f64).collect())?;
        let dest = args
            .export_path
            .clone()
            .unwrap_or_else(|| default_export_path(&args.path, k, args.format));
        let format = match args.format {
            FormatArg::Pgm16 => ImageFormat::Pgm16,
            FormatArg::Csv => ImageFormat::Csv,
        };
        export_image(&grid, &dest, format)?;
        report.push_str(&format!("exported slice {k} to {}\n", dest.display()));
    }
    Ok(report)
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout();
    let result: Result<(), Error> = match &cli.command {
        Command::Phantom(a) => cmd_phantom(a).map(|msg| println!("{msg}")),
        Command::Reconstruct(a) => {
            let cfg = a.to_config();
            cmd_reconstruct(&cfg, a.dry_run, &mut stdout).and_then(|outcome| {
                if let Some(outcome) = outcome {
                    let path = a.metrics_path();
                    fs::write(&path, outcome.metrics.to_csv()).map_err(|e| Error::Io { path, source: e })?;
                }
                Ok(())
            })
        }
        Command::Bench(a) => cmd_bench(a).and_then(|rows| {
            let csv = bench_csv(&rows);
            match &a.output {
                Some(path) => fs::write(path, csv).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                }),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }),
        Command::Inspect(a) => cmd_inspect(a).map(|report| print!("{report}")),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
