use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use ads_core::data::{ClassLabel, Dataset, ProvenanceStore, SampleId};
use ads_core::experiment::{
    prepare_split, write_run_outputs, AdsRun, ExperimentConfig, Oracle, QueryBatch, RunReport,
    ScoreTable, Setting, Step, RUN_STATE_FILE,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// Labels received for a cycle that was interrupted by the idle timeout.
pub const PARTIAL_LABELS_FILE: &str = "partial_labels.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub experiment: ExperimentConfig,
    /// Run state and model checkpoints. A checkpoint found here is resumed.
    pub checkpoint_dir: PathBuf,
    /// Receives the report and per-cycle tables when the run finishes.
    pub out_dir: Option<PathBuf>,
    /// Longest wait for the next label before the run is checkpointed and stopped.
    pub idle_timeout: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    AwaitingLabels,
    Finished,
    TimedOut,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    /// Completed cycles.
    pub cycle: usize,
    pub total_cycles: usize,
    /// Queries of the open cycle still waiting for a label.
    pub pending: usize,
    /// Labels received for the open cycle.
    pub labeled: usize,
    pub state: Phase,
    pub error: Option<String>,
}

/// A queried sample as shown to the annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub sample_id: SampleId,
    /// 1-based cycle that issued the query.
    pub cycle: usize,
    /// Rows of `[t, ch0, ch1, ch2]`.
    pub signal: Vec<[f64; 4]>,
    pub s_prime: Option<f64>,
    pub s_binary: u8,
    pub u: f64,
    pub j: f64,
    /// Milliseconds since the Unix epoch.
    pub queued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub sample_id: SampleId,
    /// `normal` or `abnormal`.
    pub class_label: String,
    #[serde(default)]
    pub annotator_id: Option<String>,
    /// Milliseconds since the Unix epoch, as reported by the client.
    #[serde(default)]
    pub submitted_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub accepted: usize,
    /// Queries of the cycle still waiting for a label.
    pub remaining: usize,
    pub cycle: usize,
}

/// Per-cycle figures of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicCycle {
    pub cycle: usize,
    pub queried: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

/// The part of a [`RunReport`] that may be shown to annotators: aggregate figures only, with
/// no per-sample or per-cycle machine information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicReport {
    pub setting: Setting,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub pct_l: Option<f64>,
    pub queried_total: usize,
    pub labeled_total: usize,
    pub training_size: usize,
    pub cycles: Vec<PublicCycle>,
}

impl From<&RunReport> for PublicReport {
    fn from(r: &RunReport) -> Self {
        Self {
            setting: r.setting,
            seed: r.seed,
            accuracy: r.accuracy,
            f1: r.f1,
            pct_l: r.pct_l,
            queried_total: r.queried_total,
            labeled_total: r.labeled_total,
            training_size: r.training_size,
            cycles: r
                .cycles
                .iter()
                .map(|c| PublicCycle {
                    cycle: c.cycle,
                    queried: c.queried.len(),
                    accuracy: c.accuracy,
                    f1: c.f1,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PartialLabels {
    cycle: usize,
    labels: Vec<(SampleId, ClassLabel)>,
}

#[derive(Debug)]
struct OpenBatch {
    cycle: usize,
    queries: Vec<PendingQuery>,
    labels: BTreeMap<SampleId, ClassLabel>,
}

impl OpenBatch {
    fn remaining(&self) -> usize {
        self.queries.len() - self.labels.len()
    }
}

#[derive(Debug)]
struct Inner {
    phase: Phase,
    error: Option<String>,
    cycle: usize,
    total_cycles: usize,
    batch: Option<OpenBatch>,
    /// Score tables of completed cycles followed by the open one.
    scores: Vec<ScoreTable>,
    report: Option<RunReport>,
    last_activity: Instant,
}

#[derive(Debug)]
struct Shared {
    inner: Mutex<Inner>,
    wake: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner
            .lock()
            .unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

/// A running interactive session.
#[derive(Debug)]
pub struct Service {
    shared: Arc<Shared>,
    worker: Mutex<Option<JoinHandle<Result<()>>>>,
}

impl Service {
    /// Validates the configuration and starts the loop on a background thread.
    pub fn start(
        cfg: ServiceConfig,
        dataset: Dataset,
        provenance: ProvenanceStore,
    ) -> Result<Arc<Self>> {
        cfg.experiment.validate()?;
        if cfg.experiment.loop_policy().is_none() {
            return Err(ads_core::Error::InvalidConfig(format!(
                "{} does not query an oracle cycle by cycle",
                cfg.experiment.setting
            ))
            .into());
        }
        let total_cycles = cfg.experiment.query_schedule()?.len();
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner {
                phase: Phase::Training,
                error: None,
                cycle: 0,
                total_cycles,
                batch: None,
                scores: Vec::new(),
                report: None,
                last_activity: Instant::now(),
            }),
            wake: Condvar::new(),
        });
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name("annotation-loop".into())
            .spawn(move || {
                let outcome = drive(&worker_shared, &cfg, &dataset, &provenance);
                if let Err(e) = &outcome {
                    let mut inner = worker_shared.lock();
                    inner.phase = match e {
                        ServiceError::Core(ads_core::Error::OracleTimeout(_)) => Phase::TimedOut,
                        _ => Phase::Failed,
                    };
                    inner.error = Some(e.to_string());
                    tracing::warn!(error = %e, "annotation loop stopped");
                }
                worker_shared.wake.notify_all();
                outcome
            })?;
        Ok(Arc::new(Self {
            shared,
            worker: Mutex::new(Some(worker)),
        }))
    }

    pub fn status(&self) -> Status {
        let inner = self.shared.lock();
        Status {
            cycle: inner.cycle,
            total_cycles: inner.total_cycles,
            pending: inner.batch.as_ref().map_or(0, OpenBatch::remaining),
            labeled: inner.batch.as_ref().map_or(0, |b| b.labels.len()),
            state: inner.phase,
            error: inner.error.clone(),
        }
    }

    /// Unlabeled queries of `cycle`, or of the open cycle when `cycle` is `None`.
    pub fn queries(&self, cycle: Option<usize>) -> Result<Vec<PendingQuery>> {
        let inner = self.shared.lock();
        match (&inner.batch, cycle) {
            (Some(b), None) => Ok(unlabeled(b)),
            (Some(b), Some(k)) if k == b.cycle => Ok(unlabeled(b)),
            (None, None) => Ok(Vec::new()),
            (_, Some(k)) if k >= 1 && k <= inner.cycle => Ok(Vec::new()),
            (_, Some(k)) => Err(ServiceError::UnknownCycle(k)),
        }
    }

    /// Records labels for open queries. The submission is applied entirely or not at all.
    pub fn submit(&self, submissions: &[LabelSubmission]) -> Result<LabelAck> {
        if submissions.is_empty() {
            return Err(ServiceError::BadRequest("no labels submitted".into()));
        }
        let parsed = submissions
            .iter()
            .map(|s| Ok((s.sample_id, s.class_label.parse::<ClassLabel>()?)))
            .collect::<Result<Vec<_>, ads_core::Error>>()?;
        let mut inner = self.shared.lock();
        let Some(batch) = inner.batch.as_mut() else {
            return Err(ads_core::Error::NotPending(parsed[0].0).into());
        };
        let mut fresh = BTreeMap::new();
        for &(id, label) in &parsed {
            let open =
                batch.queries.iter().any(|q| q.sample_id == id) && !batch.labels.contains_key(&id);
            if !open || fresh.insert(id, label).is_some() {
                return Err(ads_core::Error::NotPending(id).into());
            }
        }
        batch.labels.extend(fresh);
        let ack = LabelAck {
            accepted: parsed.len(),
            remaining: batch.remaining(),
            cycle: batch.cycle,
        };
        inner.last_activity = Instant::now();
        drop(inner);
        self.shared.wake.notify_all();
        Ok(ack)
    }

    /// Score table of a completed or open cycle.
    pub fn scores(&self, cycle: usize) -> Result<ScoreTable> {
        let inner = self.shared.lock();
        cycle
            .checked_sub(1)
            .and_then(|i| inner.scores.get(i))
            .cloned()
            .ok_or(ServiceError::UnknownCycle(cycle))
    }

    pub fn report(&self) -> Result<PublicReport> {
        self.full_report().map(|r| PublicReport::from(&r))
    }

    /// The complete report of a finished run, including machine statistics.
    pub fn full_report(&self) -> Result<RunReport> {
        self.shared
            .lock()
            .report
            .clone()
            .ok_or(ServiceError::NotFinished)
    }

    /// Blocks until the loop has stopped, then returns how it ended.
    pub fn wait(&self) -> Result<()> {
        let handle = self.worker.lock().unwrap_or_else(|p| p.into_inner()).take();
        match handle {
            Some(h) => h
                .join()
                .map_err(|_| ServiceError::Stopped("annotation thread panicked".into()))?,
            None => {
                let inner = self.shared.lock();
                match (&inner.phase, &inner.error) {
                    (_, Some(e)) => Err(ServiceError::Stopped(e.clone())),
                    _ => Ok(()),
                }
            }
        }
    }

    /// Blocks until the loop stops or `timeout` passes; returns the phase reached.
    pub fn wait_until_stopped(&self, timeout: Duration) -> Phase {
        let deadline = Instant::now() + timeout;
        let mut inner = self.shared.lock();
        loop {
            if matches!(
                inner.phase,
                Phase::Finished | Phase::TimedOut | Phase::Failed
            ) {
                return inner.phase;
            }
            let now = Instant::now();
            if now >= deadline {
                return inner.phase;
            }
            inner = self
                .shared
                .wake
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }
}

fn unlabeled(batch: &OpenBatch) -> Vec<PendingQuery> {
    batch
        .queries
        .iter()
        .filter(|q| !batch.labels.contains_key(&q.sample_id))
        .cloned()
        .collect()
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Answers queries with labels posted over HTTP.
struct HttpOracle<'a> {
    shared: &'a Shared,
    dataset: &'a Dataset,
    idle_timeout: Option<Duration>,
    /// Labels carried over from an interrupted session.
    carried: Option<PartialLabels>,
    /// Labels received before the idle timeout fired.
    interrupted: Option<PartialLabels>,
}

impl Oracle for HttpOracle<'_> {
    fn annotate(&mut self, batch: &QueryBatch) -> ads_core::Result<Vec<(SampleId, ClassLabel)>> {
        let queued_at = now_millis();
        let queries = batch
            .items
            .iter()
            .map(|item| {
                let sample = self.dataset.get(item.sample_id)?;
                Ok(PendingQuery {
                    sample_id: item.sample_id,
                    cycle: batch.cycle,
                    signal: sample
                        .rows()
                        .iter()
                        .enumerate()
                        .map(|(t, r)| [t as f64, r[0], r[1], r[2]])
                        .collect(),
                    s_prime: item.s_prime,
                    s_binary: item.s_binary,
                    u: item.u,
                    j: item.j,
                    queued_at,
                })
            })
            .collect::<ads_core::Result<Vec<_>>>()?;
        let mut labels = BTreeMap::new();
        if let Some(carried) = self.carried.take().filter(|c| c.cycle == batch.cycle) {
            labels.extend(
                carried
                    .labels
                    .into_iter()
                    .filter(|(id, _)| queries.iter().any(|q| q.sample_id == *id)),
            );
        }
        let mut inner = self.shared.lock();
        inner.batch = Some(OpenBatch {
            cycle: batch.cycle,
            queries,
            labels,
        });
        inner.phase = Phase::AwaitingLabels;
        inner.last_activity = Instant::now();
        self.shared.wake.notify_all();
        loop {
            let open = inner.batch.as_ref().expect("batch is open until answered");
            if open.remaining() == 0 {
                break;
            }
            match self.idle_timeout {
                None => {
                    inner = self
                        .shared
                        .wake
                        .wait(inner)
                        .unwrap_or_else(|p| p.into_inner())
                }
                Some(limit) => {
                    let idle = inner.last_activity.elapsed();
                    if idle >= limit {
                        self.interrupted = Some(PartialLabels {
                            cycle: open.cycle,
                            labels: open.labels.iter().map(|(&id, &l)| (id, l)).collect(),
                        });
                        return Err(ads_core::Error::OracleTimeout(limit.as_secs()));
                    }
                    inner = self
                        .shared
                        .wake
                        .wait_timeout(inner, limit - idle)
                        .unwrap_or_else(|p| p.into_inner())
                        .0;
                }
            }
        }
        let answered = inner.batch.take().expect("checked above");
        inner.phase = Phase::Training;
        Ok(batch
            .ids()
            .iter()
            .map(|id| (*id, answered.labels[id]))
            .collect())
    }
}

fn open_run(
    cfg: &ServiceConfig,
    dataset: &Dataset,
    provenance: &ProvenanceStore,
) -> Result<AdsRun> {
    if cfg.checkpoint_dir.join(RUN_STATE_FILE).exists() {
        let run = AdsRun::load(&cfg.checkpoint_dir)?;
        if run.config() != &cfg.experiment {
            return Err(ads_core::Error::InvalidConfig(format!(
                "checkpoint in {} belongs to a different configuration",
                cfg.checkpoint_dir.display()
            ))
            .into());
        }
        tracing::info!(cycle = run.cycle(), "resuming from checkpoint");
        return Ok(run);
    }
    let split = prepare_split(dataset, provenance, &cfg.experiment)?;
    Ok(AdsRun::new(&cfg.experiment, dataset, &split, None)?)
}

fn read_partial(path: &Path) -> Result<Option<PartialLabels>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|e| ads_core::Error::io(path, e))?;
    Ok(Some(
        serde_json::from_slice(&bytes).map_err(ads_core::Error::from)?,
    ))
}

fn drive(
    shared: &Shared,
    cfg: &ServiceConfig,
    dataset: &Dataset,
    provenance: &ProvenanceStore,
) -> Result<()> {
    let mut run = open_run(cfg, dataset, provenance)?;
    let partial_path = cfg.checkpoint_dir.join(PARTIAL_LABELS_FILE);
    let mut oracle = HttpOracle {
        shared,
        dataset,
        idle_timeout: cfg.idle_timeout,
        carried: read_partial(&partial_path)?,
        interrupted: None,
    };
    loop {
        {
            let mut inner = shared.lock();
            inner.phase = Phase::Training;
            inner.cycle = run.cycle();
            inner.scores = run.scores().to_vec();
        }
        match run.next(dataset)? {
            Step::Finished(_) => {
                run.save(&cfg.checkpoint_dir)?;
                let outcome = run.outcome()?;
                let report = RunReport::from_outcome(&outcome, provenance)?;
                if let Some(out) = &cfg.out_dir {
                    write_run_outputs(out, &outcome, &report)?;
                }
                let mut inner = shared.lock();
                inner.report = Some(report);
                inner.phase = Phase::Finished;
                tracing::info!(cycles = run.cycle(), "run finished");
                return Ok(());
            }
            Step::Query(pending) => {
                run.save(&cfg.checkpoint_dir)?;
                shared.lock().scores.push(pending.scores.clone());
                let labels = match oracle.annotate(&pending.batch) {
                    Ok(labels) => labels,
                    Err(e) => {
                        if let Some(partial) = oracle.interrupted.take() {
                            let bytes =
                                serde_json::to_vec(&partial).map_err(ads_core::Error::from)?;
                            fs::write(&partial_path, bytes)
                                .map_err(|e| ads_core::Error::io(&partial_path, e))?;
                        }
                        return Err(e.into());
                    }
                };
                run.submit(&labels)?;
                run.save(&cfg.checkpoint_dir)?;
                if partial_path.exists() {
                    fs::remove_file(&partial_path)
                        .map_err(|e| ads_core::Error::io(&partial_path, e))?;
                }
            }
        }
    }
}
