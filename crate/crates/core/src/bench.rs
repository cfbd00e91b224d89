//! Timing sweeps over size, block size, kernel and worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bst::Kernel;
use crate::error::{Error, Result};
use crate::io::BlockReader;
use crate::phantom::Ellipsoid;
use crate::recon::{build_reconstruction_pipeline, run_reconstruction, PhantomVolume, ReconConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    /// Read, correct, filter and backproject.
    Full,
    /// Only read every block.
    ReadOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub block_sizes: Vec<usize>,
    pub kernels: Vec<Kernel>,
    pub workers: Vec<usize>,
    pub repeat: usize,
    pub slices: usize,
    pub mode: BenchMode,
    /// Directory for the generated phantom volumes.
    pub scratch_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub block_size: usize,
    pub kernel: Kernel,
    pub workers: usize,
    pub rep: usize,
    pub seconds: f64,
}

pub const CSV_HEADER: &str = "size,Q,kernel,workers,rep,seconds";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6}",
            self.size, self.block_size, self.kernel, self.workers, self.rep, self.seconds
        )
    }
}

/// Phantom volume with `n_det = n_angles = size` used for every cell of that size.
pub fn bench_volume(dir: &Path, size: usize, slices: usize) -> Result<PathBuf> {
    let path = dir.join(format!("bench_{size}x{slices}.tomo"));
    let ellipsoid = Ellipsoid::new(0.5, 0.4, 0.8, 1.0, [0.05, -0.05, 0.0])?;
    PhantomVolume {
        n_det: size,
        n_angles: size,
        n_slices: slices,
        ellipsoid,
        counts: None,
    }
    .write(&path)?;
    Ok(path)
}

fn time_read(path: &Path, q: usize) -> Result<f64> {
    let start = Instant::now();
    let mut reader = BlockReader::open(path, q)?;
    while let Some(block) = reader.read_block::<f64>()? {
        std::hint::black_box(&block);
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Runs the sweep and returns one row per (size, Q, kernel, workers, rep).
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeat == 0 || cfg.slices == 0 {
        return Err(Error::InvalidParameter("repeat and slices must be positive".into()));
    }
    let mut rows = Vec::new();
    for &size in &cfg.sizes {
        let input = bench_volume(&cfg.scratch_dir, size, cfg.slices)?;
        for &q in &cfg.block_sizes {
            for &kernel in &cfg.kernels {
                for &workers in &cfg.workers {
                    let mut recon = ReconConfig::new(&input, cfg.scratch_dir.join("unused.tomo"));
                    recon.kernel = kernel;
                    recon.block_size = q;
                    recon.workers = workers;
                    recon.write = false;
                    recon.memory_budget = None;
                    for rep in 0..cfg.repeat {
                        let seconds = match cfg.mode {
                            BenchMode::ReadOnly => time_read(&input, q)?,
                            BenchMode::Full => {
                                let start = Instant::now();
                                let plan = build_reconstruction_pipeline(&recon)?;
                                run_reconstruction(&plan, false)?;
                                start.elapsed().as_secs_f64()
                            }
                        };
                        rows.push(BenchRow {
                            size,
                            block_size: q,
                            kernel,
                            workers,
                            rep,
                            seconds,
                        });
                    }
                }
            }
        }
        let _ = std::fs::remove_file(&input);
    }
    Ok(rows)
}
