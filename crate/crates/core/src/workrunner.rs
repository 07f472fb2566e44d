//! Watermark-driven scheduler: keeps every site loaded between its low and
//! high watermarks by concretizing queued abstract DAGs at dequeue time and
//! submitting them; tracks the lifecycle of every queued DAG.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::abstract_planner::plan_abstract;
use crate::catalog::VirtualDataCatalog;
use crate::concrete_planner::{plan_concrete, ConcreteDag, PlanOptions, StorageTarget};
use crate::grid_sim::{DagCompletion, DagOutcome, GridSim};
use crate::production::{parse_job_log, MetadataDb};
use crate::replica::{ReplicaCatalog, SiteId};

/// Per-site submission thresholds; submission triggers strictly below
/// `low` and stops once the load rises strictly above `high`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Watermarks {
    pub low: u32,
    pub high: u32,
}

/// Scheduler configuration: watermarks per site plus the tick interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub sites: BTreeMap<SiteId, Watermarks>,
    pub tick_interval_s: f64,
}

impl SchedulerConfig {
    /// Parse the key-value text format:
    ///
    /// ```text
    /// site.<id>.low = <n>
    /// site.<id>.high = <n>
    /// tick_interval_s = <seconds>
    /// ```
    pub fn parse(text: &str) -> Result<Self, SchedulerError> {
        let fail = |line: usize, message: String| SchedulerError::Config {
            line: line as u32 + 1,
            message,
        };
        let mut lows: BTreeMap<SiteId, u32> = BTreeMap::new();
        let mut highs: BTreeMap<SiteId, u32> = BTreeMap::new();
        let mut tick_interval_s = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(idx, format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key == "tick_interval_s" {
                let seconds: f64 = value
                    .parse()
                    .map_err(|_| fail(idx, format!("tick_interval_s is not a number: `{value}`")))?;
                if !seconds.is_finite() || seconds <= 0.0 {
                    return Err(fail(idx, "tick_interval_s must be positive".into()));
                }
                tick_interval_s = Some(seconds);
                continue;
            }
            let Some(rest) = key.strip_prefix("site.") else {
                return Err(fail(idx, format!("unrecognized key `{key}`")));
            };
            let Some((site, field)) = rest.rsplit_once('.') else {
                return Err(fail(idx, format!("expected `site.<id>.low|high`, found `{key}`")));
            };
            let site = SiteId::new(site).map_err(|e| fail(idx, e.to_string()))?;
            let count: u32 = value
                .parse()
                .map_err(|_| fail(idx, format!("`{key}` is not an integer: `{value}`")))?;
            match field {
                "low" => {
                    lows.insert(site, count);
                }
                "high" => {
                    highs.insert(site, count);
                }
                other => return Err(fail(idx, format!("unrecognized site field `{other}`"))),
            }
        }
        let tick_interval_s = tick_interval_s
            .ok_or_else(|| fail(0, "missing `tick_interval_s`".into()))?;
        let mut sites = BTreeMap::new();
        for (site, low) in lows {
            let high = highs.remove(&site).ok_or_else(|| SchedulerError::Config {
                line: 0,
                message: format!("site `{site}` has a low watermark but no high"),
            })?;
            if low >= high {
                return Err(SchedulerError::Config {
                    line: 0,
                    message: format!("site `{site}` watermarks must satisfy low < high"),
                });
            }
            sites.insert(site, Watermarks { low, high });
        }
        if let Some((site, _)) = highs.into_iter().next() {
            return Err(SchedulerError::Config {
                line: 0,
                message: format!("site `{site}` has a high watermark but no low"),
            });
        }
        if sites.is_empty() {
            return Err(SchedulerError::Config {
                line: 0,
                message: "no sites configured".into(),
            });
        }
        Ok(SchedulerConfig {
            sites,
            tick_interval_s,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SchedulerError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Lifecycle of one queued DAG.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Concretizing,
    Submitted,
    Running,
    Succeeded,
    Failed { reason: String },
}

impl JobStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed { .. })
    }

    fn is_active(&self) -> bool {
        matches!(
            self,
            JobStatus::Concretizing | JobStatus::Submitted | JobStatus::Running
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub dv_name: String,
    pub status: JobStatus,
    pub site: Option<SiteId>,
    pub submit_time_s: Option<f64>,
    pub end_time_s: Option<f64>,
    pub attempts: u32,
}

/// The scheduler's view of the grid: live running counts per site.
pub trait GridView {
    fn running(&self, site: &SiteId) -> usize;
}

impl GridView for GridSim {
    fn running(&self, site: &SiteId) -> usize {
        self.running_count(site).unwrap_or(0)
    }
}

impl GridView for BTreeMap<SiteId, usize> {
    fn running(&self, site: &SiteId) -> usize {
        self.get(site).copied().unwrap_or(0)
    }
}

/// One submission decided by a tick: the concretized DAG plus the event
/// count hint carried into its job log.
#[derive(Debug, Clone)]
pub struct SubmitAction {
    pub target: String,
    pub site: SiteId,
    pub cdag: ConcreteDag,
    pub events: u64,
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("UnknownTarget: `{0}` is not in the catalog")]
    UnknownTarget(String),
    #[error("DuplicateTarget: `{0}` is already tracked")]
    DuplicateTarget(String),
    #[error("UnknownJob: no active record for `{0}`")]
    UnknownJob(String),
    #[error("ConfigError at line {line}: {message}")]
    Config { line: u32, message: String },
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SiteCounts {
    pub active: usize,
    pub succeeded: usize,
    pub failed: usize,
}

/// Snapshot of scheduler-side counts; serialized as the stats dump.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SchedulerStats {
    pub queued: usize,
    pub running: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub per_site: BTreeMap<SiteId, SiteCounts>,
}

pub struct WorkRunner {
    config: SchedulerConfig,
    storage: StorageTarget,
    options: PlanOptions,
    retries: u32,
    queue: VecDeque<String>,
    records: BTreeMap<String, JobRecord>,
    total_enqueued: usize,
}

impl WorkRunner {
    pub fn new(config: SchedulerConfig, storage: StorageTarget) -> Self {
        WorkRunner {
            config,
            storage,
            options: PlanOptions::default(),
            retries: 0,
            queue: VecDeque::new(),
            records: BTreeMap::new(),
            total_enqueued: 0,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_options(mut self, options: PlanOptions) -> Self {
        self.options = options;
        self
    }

    pub fn tick_interval_s(&self) -> f64 {
        self.config.tick_interval_s
    }

    /// Append targets FIFO. All-or-nothing: every target must resolve in
    /// the catalog and must not already be tracked.
    pub fn enqueue(
        &mut self,
        targets: &[String],
        catalog: &VirtualDataCatalog,
    ) -> Result<(), SchedulerError> {
        let mut fresh = std::collections::BTreeSet::new();
        for target in targets {
            if catalog.derivation(target).is_none() {
                return Err(SchedulerError::UnknownTarget(target.clone()));
            }
            if self.records.contains_key(target) || !fresh.insert(target.clone()) {
                return Err(SchedulerError::DuplicateTarget(target.clone()));
            }
        }
        for target in targets {
            self.queue.push_back(target.clone());
            self.records.insert(
                target.clone(),
                JobRecord {
                    dv_name: target.clone(),
                    status: JobStatus::Queued,
                    site: None,
                    submit_time_s: None,
                    end_time_s: None,
                    attempts: 0,
                },
            );
            self.total_enqueued += 1;
        }
        Ok(())
    }

    /// Visit sites in lexicographic order; wherever the running count is
    /// strictly below the low watermark, concretize and submit queued DAGs
    /// until the count (including this tick's submissions) exceeds the high
    /// watermark or the queue empties. Concretization failures mark the
    /// record failed and scheduling continues.
    pub fn tick(
        &mut self,
        catalog: &VirtualDataCatalog,
        rls: &ReplicaCatalog,
        view: &dyn GridView,
        now_s: f64,
    ) -> Vec<SubmitAction> {
        let mut actions = Vec::new();
        let sites: Vec<(SiteId, Watermarks)> = self
            .config
            .sites
            .iter()
            .map(|(s, w)| (s.clone(), *w))
            .collect();
        let known_sites: std::collections::BTreeSet<SiteId> = {
            let mut set: std::collections::BTreeSet<SiteId> =
                sites.iter().map(|(s, _)| s.clone()).collect();
            set.insert(self.storage.site.clone());
            set
        };
        for (site, marks) in sites {
            let running = view.running(&site);
            if running as u64 >= marks.low as u64 {
                continue;
            }
            let mut submitted = 0usize;
            while (running + submitted) as u64 <= marks.high as u64 {
                let Some(target) = self.queue.pop_front() else {
                    break;
                };
                let record = self.records.get_mut(&target).expect("queued targets have records");
                record.status = JobStatus::Concretizing;
                record.attempts += 1;
                match concretize(catalog, rls, &target, &site, &self.storage, &known_sites, &self.options)
                {
                    Ok((cdag, events)) => {
                        let record = self.records.get_mut(&target).expect("present");
                        record.status = JobStatus::Submitted;
                        record.site = Some(site.clone());
                        record.submit_time_s = Some(now_s);
                        submitted += 1;
                        actions.push(SubmitAction {
                            target,
                            site: site.clone(),
                            cdag,
                            events,
                        });
                    }
                    Err(cause) => {
                        let record = self.records.get_mut(&target).expect("present");
                        record.status = JobStatus::Failed {
                            reason: format!("ConcretizationFailed: {cause}"),
                        };
                        record.end_time_s = Some(now_s);
                    }
                }
            }
        }
        actions
    }

    /// Mark a submitted DAG as observed running on the grid.
    pub fn mark_running(&mut self, dv_name: &str) -> Result<(), SchedulerError> {
        let record = self
            .records
            .get_mut(dv_name)
            .filter(|r| r.status.is_active())
            .ok_or_else(|| SchedulerError::UnknownJob(dv_name.to_string()))?;
        if record.status == JobStatus::Submitted {
            record.status = JobStatus::Running;
        }
        Ok(())
    }

    /// Finalize a record from a grid completion and forward the parsed job
    /// log into the metadata store. Failed DAGs re-queue while attempts
    /// remain; the retry budget defaults to zero.
    pub fn handle_completion(
        &mut self,
        completion: &DagCompletion,
        db: &mut MetadataDb,
    ) -> Result<(), SchedulerError> {
        let retries = self.retries;
        let record = self
            .records
            .get_mut(&completion.dv_name)
            .filter(|r| r.status.is_active())
            .ok_or_else(|| SchedulerError::UnknownJob(completion.dv_name.clone()))?;

        if let Ok((parsed, _warnings)) = parse_job_log(&completion.job_log) {
            db.write_completion(parsed);
        }

        match &completion.outcome {
            DagOutcome::Succeeded => {
                record.status = JobStatus::Succeeded;
                record.end_time_s = Some(completion.time_s);
            }
            DagOutcome::Failed { reason } => {
                if record.attempts <= retries {
                    record.status = JobStatus::Queued;
                    record.site = None;
                    record.submit_time_s = None;
                    self.queue.push_back(completion.dv_name.clone());
                } else {
                    record.status = JobStatus::Failed {
                        reason: reason.clone(),
                    };
                    record.end_time_s = Some(completion.time_s);
                }
            }
        }
        Ok(())
    }

    pub fn record(&self, dv_name: &str) -> Option<&JobRecord> {
        self.records.get(dv_name)
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn total_enqueued(&self) -> usize {
        self.total_enqueued
    }

    pub fn stats(&self) -> SchedulerStats {
        let mut stats = SchedulerStats::default();
        for record in self.records.values() {
            match &record.status {
                JobStatus::Queued => stats.queued += 1,
                JobStatus::Concretizing | JobStatus::Submitted | JobStatus::Running => {
                    stats.running += 1
                }
                JobStatus::Succeeded => stats.succeeded += 1,
                JobStatus::Failed { .. } => stats.failed += 1,
            }
            if let Some(site) = &record.site {
                let counts = stats.per_site.entry(site.clone()).or_default();
                match &record.status {
                    JobStatus::Succeeded => counts.succeeded += 1,
                    JobStatus::Failed { .. } => counts.failed += 1,
                    _ => counts.active += 1,
                }
            }
        }
        stats
    }

    /// Conservation check: every record is queued, active, or terminal, and
    /// the counts sum to everything ever enqueued.
    pub fn conservation_holds(&self) -> bool {
        let stats = self.stats();
        stats.queued + stats.running + stats.succeeded + stats.failed == self.total_enqueued
            && stats.queued == self.queue.len()
    }
}

fn concretize(
    catalog: &VirtualDataCatalog,
    rls: &ReplicaCatalog,
    target: &str,
    site: &SiteId,
    storage: &StorageTarget,
    known_sites: &std::collections::BTreeSet<SiteId>,
    options: &PlanOptions,
) -> Result<(ConcreteDag, u64), String> {
    let dag = plan_abstract(catalog, target).map_err(|e| e.to_string())?;
    let events = dag
        .binding(&dag.target)
        .and_then(|b| b.params.get("numevents"))
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let cdag = plan_concrete(&dag, site, rls, storage, known_sites, options)
        .map_err(|e| e.to_string())?;
    Ok((cdag, events))
}
