//! End-to-end reconstruction: container in, pipeline of corrections and
//! filtered backprojection, slice-major container out.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::bst::{backproject, fbp_scale, BstConfig, BstPlan, FilterPlan, Kernel, RampFilter};
use crate::error::{Error, Result};
use crate::grid::{slice_coordinate, AngleAxis, DetectorAxis, ImageGrid, Sinogram, StageTag, VolumeBlock};
use crate::io::{read_header, read_volume, write_volume, BlockReader, Layout, VolumeHeader, VolumeWriter};
use crate::phantom::{analytic_sinogram, Ellipsoid};
use crate::pipeline::{run_pipeline, PipelineMetrics, PipelinePlan, StageSpec, DEFAULT_QUEUE_CAPACITY};
use crate::preprocess::{apply_center, estimate_center, normalize, suppress_rings, FlatDarkFrames, DEFAULT_EPS, DEFAULT_RING_WINDOW};

/// Default memory budget: 8 GiB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 8 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CenterMode {
    #[default]
    Off,
    /// Estimate once on the middle slice and apply to every slice.
    Volume,
    /// Estimate and apply per slice.
    Slice,
}

impl std::str::FromStr for CenterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(CenterMode::Off),
            "volume" => Ok(CenterMode::Volume),
            "slice" => Ok(CenterMode::Slice),
            other => Err(Error::InvalidParameter(format!("unknown center mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub kernel: Kernel,
    /// Slices per job (`Q`).
    pub block_size: usize,
    /// Workers for each compute stage; reading and writing use one.
    pub workers: usize,
    pub queue_capacity: usize,
    pub normalize: bool,
    pub center: CenterMode,
    pub rings: bool,
    pub ring_window: usize,
    /// Raised-cosine rolloff of the ramp filter; `1.0` is the plain ramp.
    pub apodize: f64,
    pub bst: BstConfig,
    pub memory_budget: Option<u64>,
    pub allow_over_budget: bool,
    pub write: bool,
}

impl ReconConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            kernel: Kernel::Bst,
            block_size: 8,
            workers: 1,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            normalize: true,
            center: CenterMode::Off,
            rings: false,
            ring_window: DEFAULT_RING_WINDOW,
            apodize: 1.0,
            bst: BstConfig::default(),
            memory_budget: Some(DEFAULT_MEMORY_BUDGET),
            allow_over_budget: false,
            write: true,
        }
    }
}

/// Sidecar path `<input>.<ext>`.
pub fn sidecar_path(input: &Path, ext: &str) -> PathBuf {
    let mut name = input.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

/// Job payload flowing through the reconstruction pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconJob {
    /// Not read yet; carries the block index.
    Pending(usize),
    Sinograms(VolumeBlock<Sinogram<f64>>),
    Images(VolumeBlock<ImageGrid<f64>>),
}

impl ReconJob {
    fn sinograms(self, stage: &str) -> Result<VolumeBlock<Sinogram<f64>>> {
        match self {
            ReconJob::Sinograms(b) => Ok(b),
            _ => Err(Error::InvalidParameter(format!("stage `{stage}` expects sinograms"))),
        }
    }

    fn images(self, stage: &str) -> Result<VolumeBlock<ImageGrid<f64>>> {
        match self {
            ReconJob::Images(b) => Ok(b),
            _ => Err(Error::InvalidParameter(format!("stage `{stage}` expects images"))),
        }
    }
}

/// Per-slice flat and dark lines loaded from sidecar containers.
#[derive(Debug, Clone)]
struct Sidecars {
    flat: Vec<f32>,
    dark: Vec<f32>,
    n_det: usize,
}

impl Sidecars {
    fn load(input: &Path, n_slices: usize, n_det: usize) -> Result<Option<Self>> {
        let flat_path = sidecar_path(input, "flat");
        let dark_path = sidecar_path(input, "dark");
        if !flat_path.exists() {
            return Ok(None);
        }
        let load = |path: &Path| -> Result<Vec<f32>> {
            let (header, data) = read_volume(path)?;
            if header.n_slices() != n_slices || header.n_det() != n_det || header.n_angles() != 1 {
                return Err(Error::BadHeader {
                    path: path.to_path_buf(),
                    reason: format!("expected one frame of {n_slices} x {n_det}"),
                });
            }
            Ok(data)
        };
        let flat = load(&flat_path)?;
        let dark = if dark_path.exists() {
            load(&dark_path)?
        } else {
            vec![0.0; flat.len()]
        };
        Ok(Some(Self { flat, dark, n_det }))
    }

    fn frames(&self, slice: usize) -> FlatDarkFrames<f64> {
        let range = slice * self.n_det..(slice + 1) * self.n_det;
        FlatDarkFrames {
            flat: self.flat[range.clone()].iter().map(|&v| v as f64).collect(),
            dark: self.dark[range].iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Geometry and stage graph for one reconstruction run.
pub struct ReconstructionPlan {
    pub config: ReconConfig,
    pub pipeline: PipelinePlan<ReconJob>,
    pub input_header: VolumeHeader,
    pub output_header: VolumeHeader,
    pub n_blocks: usize,
    /// Center shift in bins used for every slice in volume mode.
    pub volume_center: Option<f64>,
    writer: Arc<Mutex<Option<VolumeWriter>>>,
}

impl std::fmt::Debug for ReconstructionPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReconstructionPlan")
            .field("stages", &self.pipeline.stage_names())
            .field("n_blocks", &self.n_blocks)
            .field("input_header", &self.input_header)
            .finish_non_exhaustive()
    }
}

impl ReconstructionPlan {
    /// Human-readable stage plan with the memory estimate.
    pub fn describe(&self) -> String {
        let p = &self.pipeline;
        let mut out = format!(
            "input: {} ({} angles x {} slices x {} detector samples)\n",
            self.config.input.display(),
            self.input_header.n_angles(),
            self.input_header.n_slices(),
            self.input_header.n_det()
        );
        out.push_str(&format!(
            "kernel: {}  blocksize: {}  blocks: {}\n",
            self.config.kernel, p.block_size, self.n_blocks
        ));
        for s in &p.stages {
            out.push_str(&format!(
                "  stage {:<10} workers={} queue={} working_set={}x\n",
                s.name, s.workers, s.queue_capacity, s.working_set
            ));
        }
        out.push_str(&format!("memory estimate: {} bytes", p.memory_estimate()));
        if let Some(budget) = p.memory_budget {
            out.push_str(&format!(" (budget {budget} bytes)"));
        }
        out
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

/// Assembles `read → N → [C] → [R] → F → B → [S]` for `cfg`.
///
/// Opens the input (and, in volume centering mode, estimates the shift on
/// the middle slice) but does not touch the output path.
pub fn build_reconstruction_pipeline(cfg: &ReconConfig) -> Result<ReconstructionPlan> {
    if cfg.block_size == 0 || cfg.workers == 0 || cfg.queue_capacity == 0 {
        return Err(Error::InvalidParameter(
            "blocksize, workers and queue must be positive".into(),
        ));
    }
    let filter_plan = FilterPlan::from_rolloff(cfg.apodize)?;
    let header = read_header(&cfg.input)?;
    if header.layout != Layout::Frames {
        return Err(Error::BadHeader {
            path: cfg.input.clone(),
            reason: "reconstruction input must use the frame layout".into(),
        });
    }
    let (n_angles, n_slices, n_det) = (header.n_angles(), header.n_slices(), header.n_det());
    let detector = DetectorAxis::new(n_det)?;
    let angles = AngleAxis::new(n_angles)?;
    let n = n_det;
    let bst_plan = Arc::new(BstPlan::<f64>::new(detector, angles, n, cfg.bst)?);
    let filter = Arc::new(RampFilter::<f64>::new(n_det, &filter_plan)?);
    let sidecars = if cfg.normalize {
        Sidecars::load(&cfg.input, n_slices, n_det)?.map(Arc::new)
    } else {
        None
    };
    let reader = Arc::new(Mutex::new(BlockReader::open(&cfg.input, cfg.block_size)?));
    let n_blocks = n_slices.div_ceil(cfg.block_size);

    let normalize_slice = {
        let sidecars = sidecars.clone();
        move |slice: usize, y: Sinogram<f64>| -> Result<Sinogram<f64>> {
            match &sidecars {
                Some(s) => normalize(&y, &s.frames(slice), DEFAULT_EPS),
                None => Ok(y),
            }
        }
    };

    let volume_center = if cfg.center == CenterMode::Volume {
        let middle = n_slices / 2;
        let plane = reader
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .read_plane(middle)?;
        let y = Sinogram::new(detector, angles, plane.iter().map(|&v| v as f64).collect())?;
        let y = normalize_slice(middle, y)?;
        Some(estimate_center(&y).map_or(0.0, |c| c.beta_bins))
    } else {
        None
    };

    let slice_bytes = (n_angles * n_det * 8) as u64;
    let image_bytes = (n * n * 8) as u64;
    let workers = cfg.workers;
    let cap = cfg.queue_capacity;
    let mut stages: Vec<StageSpec<ReconJob>> = Vec::new();

    {
        let reader = reader.clone();
        let q = cfg.block_size;
        stages.push(
            StageSpec::new("read", 1, cap, move |job: ReconJob| {
                let ReconJob::Pending(index) = job else {
                    return Err(Error::InvalidParameter("read stage expects pending blocks".into()));
                };
                let mut r = reader.lock().unwrap_or_else(|p| p.into_inner());
                let block = r
                    .read_block::<f64>()?
                    .ok_or_else(|| Error::InvalidParameter(format!("block {index} past end of volume")))?;
                if block.first_slice != index * q {
                    return Err(Error::InvalidParameter(format!(
                        "block {index} read out of order (starts at slice {})",
                        block.first_slice
                    )));
                }
                Ok(ReconJob::Sinograms(block))
            })
            .with_working_set(ceil_div(slice_bytes + slice_bytes / 2, slice_bytes)),
        );
    }
    stages.push(
        StageSpec::new("normalize", workers, cap, move |job: ReconJob| {
            let block = job.sinograms("normalize")?;
            let first = block.first_slice;
            let mut k = first;
            Ok(ReconJob::Sinograms(block.try_map(StageTag::Normalize, |y| {
                let out = normalize_slice(k, y);
                k += 1;
                out
            })?))
        })
        .with_working_set(2),
    );
    if cfg.center != CenterMode::Off {
        let fixed = volume_center;
        stages.push(
            StageSpec::new("center", workers, cap, move |job: ReconJob| {
                let block = job.sinograms("center")?;
                Ok(ReconJob::Sinograms(block.try_map(StageTag::Center, |y| {
                    let beta = match fixed {
                        Some(b) => b,
                        None => estimate_center(&y).map_or(0.0, |c| c.beta_bins),
                    };
                    apply_center(&y, beta)
                })?))
            })
            .with_working_set(2),
        );
    }
    if cfg.rings {
        let window = cfg.ring_window;
        if window < 3 || window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "ring window must be odd and at least 3, got {window}"
            )));
        }
        stages.push(
            StageSpec::new("rings", workers, cap, move |job: ReconJob| {
                let block = job.sinograms("rings")?;
                Ok(ReconJob::Sinograms(
                    block.try_map(StageTag::Rings, |y| suppress_rings(&y, window))?,
                ))
            })
            .with_working_set(2),
        );
    }
    {
        let filter = filter.clone();
        let scale = fbp_scale::<f64>(detector);
        stages.push(
            StageSpec::new("filter", workers, cap, move |job: ReconJob| {
                let block = job.sinograms("filter")?;
                Ok(ReconJob::Sinograms(block.try_map(StageTag::Filter, |y| {
                    filter.apply(&y, 1)?.map(|v| v * scale)
                })?))
            })
            .with_working_set(2),
        );
    }
    {
        let plan = bst_plan.clone();
        let kernel = cfg.kernel;
        let working = match kernel {
            Kernel::Bst => slice_bytes + plan.working_bytes(),
            Kernel::Ss => slice_bytes + image_bytes,
        };
        stages.push(
            StageSpec::new("backproject", workers, cap, move |job: ReconJob| {
                let block = job.sinograms("backproject")?;
                Ok(ReconJob::Images(
                    block.try_map(StageTag::Backproject, |y| backproject(&y, &plan, kernel, 1))?,
                ))
            })
            .with_working_set(ceil_div(working, slice_bytes)),
        );
    }
    let writer: Arc<Mutex<Option<VolumeWriter>>> = Arc::new(Mutex::new(None));
    if cfg.write {
        let writer = writer.clone();
        stages.push(
            StageSpec::new("write", 1, cap, move |job: ReconJob| {
                let block = job.images("write")?;
                let data: Vec<f32> = block
                    .slices
                    .iter()
                    .flat_map(|img| img.data().iter().map(|&v| v as f32))
                    .collect();
                let guard = writer.lock().unwrap_or_else(|p| p.into_inner());
                let w = guard
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("output not opened".into()))?;
                w.write_slices(block.first_slice, &data)?;
                Ok(ReconJob::Images(VolumeBlock {
                    stage: StageTag::Write,
                    ..block
                }))
            })
            .with_working_set(ceil_div(image_bytes + image_bytes / 2, slice_bytes)),
        );
    }

    let mut pipeline = PipelinePlan::new(stages, cfg.block_size);
    pipeline.work_items = workers;
    pipeline.threads_per_item = 1;
    pipeline.slice_bytes = slice_bytes;
    pipeline.memory_budget = cfg.memory_budget;
    pipeline.allow_over_budget = cfg.allow_over_budget;
    Ok(ReconstructionPlan {
        config: cfg.clone(),
        pipeline,
        input_header: header,
        output_header: VolumeHeader::slices(n_slices, n, n)?,
        n_blocks,
        volume_center,
        writer,
    })
}

#[derive(Debug, Clone)]
pub struct ReconOutcome {
    pub metrics: PipelineMetrics,
    /// Reconstructed slices in order, when collected.
    pub images: Option<Vec<ImageGrid<f64>>>,
}

impl ReconOutcome {
    pub fn wall(&self) -> Duration {
        self.metrics.wall
    }
}

/// Runs a built plan. With writing enabled the output file is created first
/// and removed again if the run fails.
pub fn run_reconstruction(plan: &ReconstructionPlan, collect: bool) -> Result<ReconOutcome> {
    plan.pipeline.check_budget()?;
    let output = &plan.config.output;
    if plan.config.write {
        let w = VolumeWriter::create(output, plan.output_header)?;
        *plan.writer.lock().unwrap_or_else(|p| p.into_inner()) = Some(w);
    }
    let mut images = collect.then(Vec::new);
    let result = run_pipeline(&plan.pipeline, (0..plan.n_blocks).map(ReconJob::Pending), |ticket| {
        if let Some(out) = images.as_mut() {
            out.extend(ticket.payload.images("sink")?.slices);
        }
        Ok(())
    });
    let writer = plan.writer.lock().unwrap_or_else(|p| p.into_inner()).take();
    let finished = match (result, writer) {
        (Ok(metrics), Some(w)) => w.finish().map(|_| metrics),
        (Ok(metrics), None) => Ok(metrics),
        (Err(e), w) => {
            drop(w);
            Err(e)
        }
    };
    match finished {
        Ok(metrics) => Ok(ReconOutcome { metrics, images }),
        Err(e) => {
            if plan.config.write {
                let _ = std::fs::remove_file(output);
            }
            Err(e)
        }
    }
}

/// Builds and runs in one call.
pub fn reconstruct(cfg: &ReconConfig, collect: bool) -> Result<ReconOutcome> {
    run_reconstruction(&build_reconstruction_pipeline(cfg)?, collect)
}

/// Photon-count simulation for a generated phantom volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountModel {
    /// Unattenuated beam counts `I0` above the dark level.
    pub flat: f64,
    /// Dark level `D`.
    pub dark: f64,
}

/// Geometry of a generated phantom volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomVolume {
    pub n_det: usize,
    pub n_angles: usize,
    pub n_slices: usize,
    pub ellipsoid: Ellipsoid<f64>,
    /// Write `I = D + I0·e^{-y}` counts plus flat/dark sidecars instead of `y`.
    pub counts: Option<CountModel>,
}

impl PhantomVolume {
    /// Analytic sinogram of slice `k`.
    pub fn sinogram(&self, k: usize) -> Result<Sinogram<f64>> {
        analytic_sinogram(
            &self.ellipsoid,
            slice_coordinate(k, self.n_slices),
            DetectorAxis::new(self.n_det)?,
            AngleAxis::new(self.n_angles)?,
        )
    }

    /// Writes the frame-major container (and sidecars in count mode).
    pub fn write(&self, path: impl AsRef<Path>) -> Result<VolumeHeader> {
        let path = path.as_ref();
        let header = VolumeHeader::frames(self.n_angles, self.n_slices, self.n_det)?;
        let sinos = (0..self.n_slices)
            .map(|k| self.sinogram(k))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(header.value_count() as usize);
        for j in 0..self.n_angles {
            for y in &sinos {
                data.extend(y.row(j).iter().map(|&v| match self.counts {
                    Some(c) => (c.dark + c.flat * (-v).exp()) as f32,
                    None => v as f32,
                }));
            }
        }
        write_volume(path, &header, &data)?;
        if let Some(c) = self.counts {
            let side = VolumeHeader::frames(1, self.n_slices, self.n_det)?;
            let len = self.n_slices * self.n_det;
            write_volume(sidecar_path(path, "flat"), &side, &vec![(c.flat + c.dark) as f32; len])?;
            write_volume(sidecar_path(path, "dark"), &side, &vec![c.dark as f32; len])?;
        }
        Ok(header)
    }
}
