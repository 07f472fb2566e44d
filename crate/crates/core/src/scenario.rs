//! Scenario runner: builds a production's derivations into a fresh catalog,
//! seeds the replica index with the request's input files, then drives the
//! scheduler and grid simulation to quiescence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, VirtualDataCatalog};
use crate::grid_sim::{GridConfig, GridSim, SimError};
use crate::production::{
    generate_derivations, split_jobs, JobDescription, MetadataDb, ProductionError,
    ProductionRequest,
};
use crate::replica::ReplicaCatalog;
use crate::vdl::VdlObject;
use crate::workrunner::{SchedulerConfig, SchedulerError, SchedulerStats, WorkRunner};

/// A simulation scenario; `grid_config` and `scheduler_config` paths are
/// resolved relative to the scenario file.
#[derive(Debug, Clone, Deserialize)]
pub struct ScenarioSpec {
    pub grid_config: PathBuf,
    pub scheduler_config: PathBuf,
    pub production: ProductionRequest,
    #[serde(default)]
    pub scripted_failures: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub stats_out: Option<PathBuf>,
    #[serde(default)]
    pub trace_out: Option<PathBuf>,
    #[serde(default)]
    pub metadb_out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Scheduler(#[from] SchedulerError),
    #[error("{0}")]
    Production(#[from] ProductionError),
    #[error("{0}")]
    Catalog(#[from] CatalogError),
    #[error("ConfigError: {0}")]
    Config(String),
}

/// Aggregate results of one scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub jobs: usize,
    pub submitted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub failure_fraction: f64,
    pub events_produced: u64,
    pub sim_end_s: f64,
    pub stats: SchedulerStats,
}

/// Everything a run leaves behind for inspection.
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub trace: String,
    pub db: MetadataDb,
}

pub fn load_spec(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let mut spec: ScenarioSpec = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    spec.grid_config = base.join(&spec.grid_config);
    spec.scheduler_config = base.join(&spec.scheduler_config);
    spec.stats_out = spec.stats_out.map(|p| base.join(p));
    spec.trace_out = spec.trace_out.map(|p| base.join(p));
    spec.metadb_out = spec.metadb_out.map(|p| base.join(p));
    Ok(spec)
}

/// Run the scenario at `path`, optionally overriding the grid seed, and
/// write whatever outputs the scenario names.
pub fn run_scenario_file(
    path: &Path,
    seed_override: Option<u64>,
) -> Result<ScenarioOutcome, ScenarioError> {
    let spec = load_spec(path)?;
    let mut grid = GridConfig::load(&spec.grid_config)?;
    if let Some(seed) = seed_override {
        grid.seed = seed;
    }
    let scheduler = SchedulerConfig::load(&spec.scheduler_config)?;
    let outcome = run_scenario(&spec, &grid, &scheduler)?;

    if let Some(out) = &spec.stats_out {
        fs::write(out, serde_json::to_string_pretty(&outcome.report)?)?;
    }
    if let Some(out) = &spec.trace_out {
        fs::write(out, &outcome.trace)?;
    }
    if let Some(out) = &spec.metadb_out {
        outcome.db.save(out)?;
    }
    Ok(outcome)
}

pub fn run_scenario(
    spec: &ScenarioSpec,
    grid: &GridConfig,
    scheduler: &SchedulerConfig,
) -> Result<ScenarioOutcome, ScenarioError> {
    let storage = grid
        .storage
        .clone()
        .ok_or_else(|| ScenarioError::Config("grid config has no storage target".into()))?;

    let mut db = MetadataDb::new();
    db.add_request(spec.production.clone())?;
    let jd: JobDescription = db.read_request(&spec.production.project)?;
    let splits = split_jobs(&jd);
    let generated = generate_derivations(&jd, &splits);

    let mut catalog = VirtualDataCatalog::new();
    for tr in generated.transformations {
        catalog.insert(VdlObject::Transformation(tr))?;
    }
    for dv in generated.derivations {
        catalog.insert(VdlObject::Derivation(dv))?;
    }

    let mut rls = ReplicaCatalog::new();
    for lfn in [
        jd.request.kincard.clone(),
        jd.request.simcard.clone(),
        jd.request.geomfile.clone(),
    ] {
        let pfn = storage.pfn_for(&lfn);
        rls.register(lfn, storage.site.clone(), pfn);
    }

    let mut sim = GridSim::new(grid, rls)?;
    for (dv, reason) in &spec.scripted_failures {
        sim.script_failure(dv, reason);
    }
    let mut runner = WorkRunner::new(scheduler.clone(), storage);
    runner.enqueue(&generated.targets, &catalog)?;

    drive(&mut runner, &mut sim, &catalog, &mut db)?;

    let stats = runner.stats();
    let submitted = sim.submitted_count();
    let report = ScenarioReport {
        jobs: splits.len(),
        submitted,
        succeeded: stats.succeeded,
        failed: stats.failed,
        failure_fraction: if submitted == 0 {
            0.0
        } else {
            stats.failed as f64 / submitted as f64
        },
        events_produced: db.events_produced(),
        sim_end_s: sim.clock_s(),
        stats,
    };
    Ok(ScenarioOutcome {
        report,
        trace: sim.export_trace(),
        db,
    })
}

/// Tick/step loop until the queue is empty and every submitted DAG is
/// terminal. Breaks early if no progress is possible.
pub fn drive(
    runner: &mut WorkRunner,
    sim: &mut GridSim,
    catalog: &VirtualDataCatalog,
    db: &mut MetadataDb,
) -> Result<(), ScenarioError> {
    loop {
        let now = sim.clock_s();
        let actions = runner.tick(catalog, sim.rls(), sim, now);
        let submitted = !actions.is_empty();
        for action in actions {
            sim.submit_with_events(action.cdag, action.events)?;
        }
        let completions = sim.step(now + runner.tick_interval_s());
        for (dv, _start) in sim.drain_started() {
            runner.mark_running(&dv)?;
        }
        let progressed = submitted || !completions.is_empty();
        for completion in &completions {
            runner.handle_completion(completion, db)?;
        }
        let drained =
            runner.queue_len() == 0 && sim.active_dags() == 0 && !sim.pending_events();
        if drained {
            return Ok(());
        }
        if !progressed && sim.active_dags() == 0 && !sim.pending_events() {
            // queued work that no site will ever pull (e.g. zero low watermarks)
            return Ok(());
        }
    }
}
