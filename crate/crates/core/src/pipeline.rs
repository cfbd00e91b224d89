//! Staged pipeline with per-stage worker pools and bounded queues.
//!
//! Each stage owns a bounded input queue and a pool of identical workers.
//! A worker takes a job, runs the stage function, and pushes the result
//! into the next stage's queue, blocking while that queue is full. The
//! sink sees jobs in source order through a reordering buffer.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};

use crate::error::{Error, Result};

pub const DEFAULT_QUEUE_CAPACITY: usize = 2;

/// Stage body: consumes one job payload and produces the next.
pub type StageFn<J> = Arc<dyn Fn(J) -> Result<J> + Send + Sync>;

#[derive(Clone)]
pub struct StageSpec<J> {
    pub name: String,
    pub workers: usize,
    pub queue_capacity: usize,
    /// Bytes held per in-flight or queued slice, in units of `slice_bytes`.
    pub working_set: u64,
    pub process: StageFn<J>,
}

impl<J> StageSpec<J> {
    pub fn new(
        name: impl Into<String>,
        workers: usize,
        queue_capacity: usize,
        process: impl Fn(J) -> Result<J> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            workers,
            queue_capacity,
            working_set: 1,
            process: Arc::new(process),
        }
    }

    pub fn with_working_set(mut self, factor: u64) -> Self {
        self.working_set = factor;
        self
    }
}

impl<J> fmt::Debug for StageSpec<J> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageSpec")
            .field("name", &self.name)
            .field("workers", &self.workers)
            .field("queue_capacity", &self.queue_capacity)
            .field("working_set", &self.working_set)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct PipelinePlan<J> {
    pub stages: Vec<StageSpec<J>>,
    /// Slices per job (`Q`).
    pub block_size: usize,
    /// Work items (`W`) for reporting only.
    pub work_items: usize,
    /// Threads per work item (`T`) for reporting only.
    pub threads_per_item: usize,
    /// Bytes of one slice as seen by the stages' working sets.
    pub slice_bytes: u64,
    /// Budget `M` in bytes; `None` disables the check.
    pub memory_budget: Option<u64>,
    pub allow_over_budget: bool,
}

impl<J> PipelinePlan<J> {
    pub fn new(stages: Vec<StageSpec<J>>, block_size: usize) -> Self {
        Self {
            stages,
            block_size,
            work_items: 1,
            threads_per_item: 1,
            slice_bytes: 0,
            memory_budget: None,
            allow_over_budget: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidParameter("pipeline has no stages".into()));
        }
        if self.block_size == 0 {
            return Err(Error::InvalidParameter("block size must be positive".into()));
        }
        for s in &self.stages {
            if s.workers == 0 || s.queue_capacity == 0 {
                return Err(Error::InvalidParameter(format!(
                    "stage `{}` needs at least one worker and queue slot",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }

    /// [`estimate_memory`] against this plan's own `slice_bytes`.
    pub fn memory_estimate(&self) -> u64 {
        estimate_memory(self, self.slice_bytes)
    }

    /// Fails when the estimate exceeds the budget and no override is set.
    pub fn check_budget(&self) -> Result<()> {
        if let Some(budget) = self.memory_budget {
            let estimate = self.memory_estimate();
            if estimate > budget && !self.allow_over_budget {
                return Err(Error::MemoryBudget { estimate, budget });
            }
        }
        Ok(())
    }
}

/// `Σ_stages (workers + queue_capacity) · Q · working_set · slice_bytes`.
pub fn estimate_memory<J>(plan: &PipelinePlan<J>, slice_bytes: u64) -> u64 {
    plan.stages
        .iter()
        .map(|s| (s.workers + s.queue_capacity) as u64 * plan.block_size as u64 * s.working_set * slice_bytes)
        .sum()
}

/// Timing of one job in one stage, relative to the run start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageTimes {
    pub enqueued: Duration,
    pub started: Duration,
    pub finished: Duration,
}

#[derive(Debug)]
pub struct JobTicket<J> {
    pub sequence_id: u64,
    pub payload: J,
    /// One entry per completed stage, in stage order.
    pub timestamps: Vec<StageTimes>,
    enqueued: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics {
    pub name: String,
    pub workers: usize,
    pub capacity: usize,
    pub jobs: u64,
    pub busy: Duration,
    /// Waiting for input plus waiting for room downstream, summed over workers.
    pub idle: Duration,
    pub peak_queue: usize,
    pub peak_in_flight: usize,
    /// Largest observed `in_flight + queued`.
    pub peak_occupancy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineMetrics {
    pub stages: Vec<StageMetrics>,
    pub wall: Duration,
}

impl PipelineMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,workers,capacity,jobs,busy_s,idle_s,peak_queue\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{}\n",
                s.name,
                s.workers,
                s.capacity,
                s.jobs,
                s.busy.as_secs_f64(),
                s.idle.as_secs_f64(),
                s.peak_queue
            ));
        }
        out
    }
}

impl fmt::Display for PipelineMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wall time: {:.3} s", self.wall.as_secs_f64())?;
        for s in &self.stages {
            writeln!(
                f,
                "  {:<10} workers={} cap={} jobs={} busy={:.3}s idle={:.3}s peak_queue={}",
                s.name,
                s.workers,
                s.capacity,
                s.jobs,
                s.busy.as_secs_f64(),
                s.idle.as_secs_f64(),
                s.peak_queue
            )?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct StageCounters {
    jobs: u64,
    busy: Duration,
    idle: Duration,
    peak_queue: AtomicUsize,
    peak_in_flight: AtomicUsize,
    peak_occupancy: AtomicUsize,
    in_flight: AtomicUsize,
}

struct Failure {
    stage: String,
    sequence_id: u64,
    error: Error,
}

struct Shared {
    start: Instant,
    abort: AtomicBool,
    failure: Mutex<Option<Failure>>,
    drained: Mutex<Vec<u64>>,
}

impl Shared {
    fn fail(&self, stage: &str, sequence_id: u64, error: Error) {
        self.abort.store(true, Ordering::SeqCst);
        let mut slot = self.failure.lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            *slot = Some(Failure {
                stage: stage.to_string(),
                sequence_id,
                error,
            });
        }
    }

    fn drain(&self, id: u64) {
        self.drained
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(id);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }
}

fn bump(peak: &AtomicUsize, value: usize) {
    peak.fetch_max(value, Ordering::Relaxed);
}

fn worker_loop<J>(
    spec: &StageSpec<J>,
    counters: &Mutex<StageCounters>,
    peaks: &StageCounters,
    next_peak: Option<&AtomicUsize>,
    rx: Receiver<JobTicket<J>>,
    tx: Sender<JobTicket<J>>,
    shared: &Shared,
) {
    let mut busy = Duration::ZERO;
    let mut idle = Duration::ZERO;
    let mut jobs = 0u64;
    loop {
        let wait = Instant::now();
        let Ok(mut ticket) = rx.recv() else { break };
        idle += wait.elapsed();
        let in_flight = peaks.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        bump(&peaks.peak_in_flight, in_flight);
        bump(&peaks.peak_occupancy, in_flight + rx.len());
        if shared.aborted() {
            shared.drain(ticket.sequence_id);
            peaks.in_flight.fetch_sub(1, Ordering::SeqCst);
            continue;
        }
        let started = shared.start.elapsed();
        let work = Instant::now();
        let result = (spec.process)(ticket.payload);
        busy += work.elapsed();
        jobs += 1;
        match result {
            Ok(payload) => {
                let finished = shared.start.elapsed();
                ticket.timestamps.push(StageTimes {
                    enqueued: ticket.enqueued,
                    started,
                    finished,
                });
                let job = JobTicket {
                    sequence_id: ticket.sequence_id,
                    payload,
                    timestamps: ticket.timestamps,
                    enqueued: finished,
                };
                let id = job.sequence_id;
                let blocked = Instant::now();
                if tx.send(job).is_err() {
                    shared.drain(id);
                } else if let Some(peak) = next_peak {
                    bump(peak, tx.len());
                }
                idle += blocked.elapsed();
            }
            Err(error) => shared.fail(&spec.name, ticket.sequence_id, error),
        }
        peaks.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
    let mut c = counters.lock().unwrap_or_else(|p| p.into_inner());
    c.jobs += jobs;
    c.busy += busy;
    c.idle += idle;
}

/// Runs every source job through every stage and hands results to `sink` in
/// source order.
///
/// On the first failing job the run stops taking new work, drains what is
/// in flight, and returns [`Error::Stage`] naming the stage and job along
/// with the drained job ids.
pub fn run_pipeline<J, S, K>(plan: &PipelinePlan<J>, source: S, mut sink: K) -> Result<PipelineMetrics>
where
    J: Send,
    S: IntoIterator<Item = J>,
    S::IntoIter: Send,
    K: FnMut(JobTicket<J>) -> Result<()>,
{
    plan.validate()?;
    plan.check_budget()?;
    let n = plan.stages.len();
    let shared = Shared {
        start: Instant::now(),
        abort: AtomicBool::new(false),
        failure: Mutex::new(None),
        drained: Mutex::new(Vec::new()),
    };
    let peaks: Vec<StageCounters> = (0..n).map(|_| StageCounters::default()).collect();
    let totals: Vec<Mutex<StageCounters>> = (0..n).map(|_| Mutex::new(StageCounters::default())).collect();
    let mut senders = Vec::with_capacity(n + 1);
    let mut receivers = Vec::with_capacity(n + 1);
    for spec in &plan.stages {
        let (tx, rx) = bounded(spec.queue_capacity);
        senders.push(tx);
        receivers.push(rx);
    }
    let last_workers = plan.stages[n - 1].workers;
    let (out_tx, out_rx) = bounded(last_workers + 1);
    senders.push(out_tx);
    receivers.push(out_rx);

    thread::scope(|scope| {
        let shared = &shared;
        let source_tx = senders[0].clone();
        let first_peak = &peaks[0].peak_queue;
        let jobs = source.into_iter();
        scope.spawn(move || {
            for (id, payload) in jobs.enumerate() {
                if shared.aborted() {
                    break;
                }
                let ticket = JobTicket {
                    sequence_id: id as u64,
                    payload,
                    timestamps: Vec::with_capacity(n),
                    enqueued: shared.start.elapsed(),
                };
                if source_tx.send(ticket).is_err() {
                    break;
                }
                bump(first_peak, source_tx.len());
            }
        });
        for (i, spec) in plan.stages.iter().enumerate() {
            for _ in 0..spec.workers {
                let rx = receivers[i].clone();
                let tx = senders[i + 1].clone();
                let counters = &totals[i];
                let stage_peaks = &peaks[i];
                let next_peak = peaks.get(i + 1).map(|p| &p.peak_queue);
                scope.spawn(move || worker_loop(spec, counters, stage_peaks, next_peak, rx, tx, shared));
            }
        }
        drop(senders);
        let out_rx = receivers.pop().expect("sink receiver");
        drop(receivers);

        let mut pending = BTreeMap::new();
        let mut next = 0u64;
        for ticket in out_rx.iter() {
            if shared.aborted() {
                shared.drain(ticket.sequence_id);
                continue;
            }
            pending.insert(ticket.sequence_id, ticket);
            while let Some(ready) = pending.remove(&next) {
                let id = ready.sequence_id;
                if let Err(error) = sink(ready) {
                    shared.fail("sink", id, error);
                }
                next += 1;
                if shared.aborted() {
                    break;
                }
            }
        }
        for id in pending.into_keys() {
            shared.drain(id);
        }
    });

    let wall = shared.start.elapsed();
    if let Some(f) = shared.failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
        let mut drained = shared.drained.into_inner().unwrap_or_else(|p| p.into_inner());
        drained.sort_unstable();
        return Err(Error::Stage {
            stage: f.stage,
            sequence_id: f.sequence_id,
            drained,
            source: Box::new(f.error),
        });
    }
    let stages = plan
        .stages
        .iter()
        .zip(totals)
        .zip(&peaks)
        .map(|((spec, total), p)| {
            let total = total.into_inner().unwrap_or_else(|p| p.into_inner());
            StageMetrics {
                name: spec.name.clone(),
                workers: spec.workers,
                capacity: spec.queue_capacity,
                jobs: total.jobs,
                busy: total.busy,
                idle: total.idle,
                peak_queue: p.peak_queue.load(Ordering::SeqCst),
                peak_in_flight: p.peak_in_flight.load(Ordering::SeqCst),
                peak_occupancy: p.peak_occupancy.load(Ordering::SeqCst),
            }
        })
        .collect();
    Ok(PipelineMetrics { stages, wall })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(name: &str, f: impl Fn(u64) -> Result<u64> + Send + Sync + 'static) -> StageSpec<u64> {
        StageSpec::new(name, 1, DEFAULT_QUEUE_CAPACITY, f)
    }

    #[test]
    fn doubling_stage_keeps_order() {
        let plan = PipelinePlan::new(vec![stage("double", |x| Ok(2 * x))], 1);
        let mut out = Vec::new();
        run_pipeline(&plan, 0..10u64, |t| {
            out.push(t.payload);
            Ok(())
        })
        .unwrap();
        assert_eq!(out, (0..10).map(|x| 2 * x).collect::<Vec<_>>());
    }

    #[test]
    fn memory_estimate_arithmetic() {
        let mib = 1u64 << 20;
        let mut plan = PipelinePlan::new(vec![stage("s", Ok).with_working_set(2)], 1);
        plan.stages[0].queue_capacity = 1;
        assert_eq!(estimate_memory(&plan, mib), 4 * mib);
        plan.block_size = 2;
        assert_eq!(estimate_memory(&plan, mib), 8 * mib);
    }

    #[test]
    fn budget_refusal_and_override() {
        let mut plan = PipelinePlan::new(vec![stage("s", Ok)], 4);
        plan.slice_bytes = 1000;
        plan.memory_budget = Some(10);
        let err = run_pipeline(&plan, 0..3u64, |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::MemoryBudget { estimate: 12000, budget: 10 }));
        plan.allow_over_budget = true;
        assert!(run_pipeline(&plan, 0..3u64, |_| Ok(())).is_ok());
    }

    #[test]
    fn invalid_plans_rejected() {
        let empty: PipelinePlan<u64> = PipelinePlan::new(vec![], 1);
        assert!(run_pipeline(&empty, 0..1u64, |_| Ok(())).is_err());
        let zero = PipelinePlan::new(vec![StageSpec::new("s", 0, 1, Ok::<u64, Error>)], 1);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn sink_failure_is_reported() {
        let plan = PipelinePlan::new(vec![stage("id", Ok)], 1);
        let err = run_pipeline(&plan, 0..20u64, |t| {
            if t.sequence_id == 5 {
                Err(Error::InvalidParameter("disk full".into()))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        match err {
            Error::Stage {
                stage, sequence_id, ..
            } => {
                assert_eq!(stage, "sink");
                assert_eq!(sequence_id, 5);
            }
            other => panic!("unexpected {other}"),
        }
    }
}
