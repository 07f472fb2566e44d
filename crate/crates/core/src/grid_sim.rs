//! Deterministic discrete-event simulation of a multi-site grid executing
//! concrete DAGs: slot-limited sites, per-kind service times, random and
//! scripted job failures, and site outage windows that break write-backs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concrete_planner::{ConcreteDag, ConcreteNode, StorageTarget};
use crate::replica::{ReplicaCatalog, SiteId};

const MICROS: f64 = 1_000_000.0;

pub type DagId = usize;

/// Mean service time per node kind, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTimes {
    pub execute: f64,
    pub stage_in: f64,
    pub stage_out: f64,
    pub register: f64,
}

/// Capacity and behavior of one simulated site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub site: SiteId,
    pub slots: u32,
    pub exec_time_s: NodeTimes,
    #[serde(default)]
    pub per_job_failure_prob: f64,
    #[serde(default)]
    pub outages: Vec<(f64, f64)>,
}

fn default_rng_name() -> String {
    "chacha8".to_string()
}

fn default_output_bytes() -> u64 {
    1_048_576
}

/// Grid description: the site array plus the seed for the named generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub sites: Vec<SiteSpec>,
    pub seed: u64,
    #[serde(default = "default_rng_name")]
    pub rng: String,
    #[serde(default)]
    pub storage: Option<StorageTarget>,
    #[serde(default = "default_output_bytes")]
    pub output_file_bytes: u64,
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path)?;
        let config: GridConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rng != "chacha8" {
            return Err(SimError::Config(format!(
                "unsupported rng `{}`; this build implements `chacha8`",
                self.rng
            )));
        }
        let mut seen = BTreeSet::new();
        for spec in &self.sites {
            if !seen.insert(spec.site.clone()) {
                return Err(SimError::Config(format!("duplicate site `{}`", spec.site)));
            }
            if spec.slots == 0 {
                return Err(SimError::Config(format!("site `{}` has zero slots", spec.site)));
            }
            if !(0.0..=1.0).contains(&spec.per_job_failure_prob) {
                return Err(SimError::Config(format!(
                    "site `{}` failure probability {} outside [0,1]",
                    spec.site, spec.per_job_failure_prob
                )));
            }
            let times = [
                spec.exec_time_s.execute,
                spec.exec_time_s.stage_in,
                spec.exec_time_s.stage_out,
                spec.exec_time_s.register,
            ];
            if times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
                return Err(SimError::Config(format!(
                    "site `{}` service times must be positive",
                    spec.site
                )));
            }
            let mut last_end = f64::NEG_INFINITY;
            for (start, end) in &spec.outages {
                if !(start.is_finite() && end.is_finite()) || start >= end || *start < last_end {
                    return Err(SimError::Config(format!(
                        "site `{}` outage windows must be disjoint and well-ordered",
                        spec.site
                    )));
                }
                last_end = *end;
            }
        }
        Ok(())
    }

    pub fn known_sites(&self) -> BTreeSet<SiteId> {
        let mut set: BTreeSet<SiteId> = self.sites.iter().map(|s| s.site.clone()).collect();
        if let Some(storage) = &self.storage {
            set.insert(storage.site.clone());
        }
        set
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("UnknownSite: `{0}`")]
    UnknownSite(SiteId),
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("InvalidDag: `{dag}`: {message}")]
    InvalidDag { dag: String, message: String },
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError: {0}")]
    Json(#[from] serde_json::Error),
}

/// Terminal outcome of a submitted DAG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DagOutcome {
    Succeeded,
    Failed { reason: String },
}

/// Emitted once per DAG when it reaches a terminal state; carries the job
/// log in the production log format.
#[derive(Debug, Clone, PartialEq)]
pub struct DagCompletion {
    pub dag: DagId,
    pub dv_name: String,
    pub site: SiteId,
    pub time_s: f64,
    pub outcome: DagOutcome,
    pub job_log: String,
}

#[derive(Debug, Clone, PartialEq)]
enum NodeState {
    Waiting { indeg: usize },
    Ready,
    Running { planned_failure: Option<String> },
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq)]
enum DagState {
    Active,
    Succeeded,
    Failed(String),
}

struct DagRun {
    cdag: ConcreteDag,
    events_hint: u64,
    state: DagState,
    node_state: BTreeMap<String, NodeState>,
    children: BTreeMap<String, Vec<String>>,
    remaining: usize,
    inflight: u32,
    first_start_us: Option<u64>,
    end_us: Option<u64>,
}

struct SiteTimes {
    execute: u64,
    stage_in: u64,
    stage_out: u64,
    register: u64,
}

struct SiteRt {
    slots: u32,
    times: SiteTimes,
    failure_prob: f64,
    outages_us: Vec<(u64, u64)>,
    busy: u32,
    peak_busy: u32,
    ready: VecDeque<(DagId, String)>,
    active_dags: usize,
}

impl SiteRt {
    fn service_us(&self, node: &ConcreteNode) -> u64 {
        match node {
            ConcreteNode::Execute { .. } => self.times.execute,
            ConcreteNode::StageIn { .. } => self.times.stage_in,
            ConcreteNode::StageOut { .. } => self.times.stage_out,
            ConcreteNode::Register { .. } => self.times.register,
        }
    }

    /// True when `[start, end)` touches any outage window.
    fn in_outage(&self, start: u64, end: u64) -> bool {
        self.outages_us
            .iter()
            .any(|(a, b)| start < *b && *a < end)
    }
}

fn to_micros(seconds: f64) -> u64 {
    (seconds * MICROS).round() as u64
}

fn to_seconds(us: u64) -> f64 {
    us as f64 / MICROS
}

/// The simulation state: event queue, per-site slot accounting, the live
/// replica index, and a virtual per-site filesystem.
pub struct GridSim {
    sites: BTreeMap<SiteId, SiteRt>,
    dags: Vec<DagRun>,
    clock_us: u64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, DagId, String)>>,
    rng: ChaCha8Rng,
    rls: ReplicaCatalog,
    fs: BTreeMap<SiteId, BTreeSet<String>>,
    scripted: BTreeMap<String, String>,
    started: Vec<(String, f64)>,
    trace: Vec<String>,
    output_file_bytes: u64,
}

impl GridSim {
    pub fn new(config: &GridConfig, initial_rls: ReplicaCatalog) -> Result<Self, SimError> {
        config.validate()?;
        let sites = config
            .sites
            .iter()
            .map(|spec| {
                let rt = SiteRt {
                    slots: spec.slots,
                    times: SiteTimes {
                        execute: to_micros(spec.exec_time_s.execute),
                        stage_in: to_micros(spec.exec_time_s.stage_in),
                        stage_out: to_micros(spec.exec_time_s.stage_out),
                        register: to_micros(spec.exec_time_s.register),
                    },
                    failure_prob: spec.per_job_failure_prob,
                    outages_us: spec
                        .outages
                        .iter()
                        .map(|(a, b)| (to_micros(*a), to_micros(*b)))
                        .collect(),
                    busy: 0,
                    peak_busy: 0,
                    ready: VecDeque::new(),
                    active_dags: 0,
                };
                (spec.site.clone(), rt)
            })
            .collect();
        let mut fs: BTreeMap<SiteId, BTreeSet<String>> = BTreeMap::new();
        for replica in initial_rls.iter() {
            let entry = fs.entry(replica.site.clone()).or_default();
            entry.insert(replica.pfn.clone());
            entry.insert(replica.lfn.as_str().to_string());
        }
        Ok(GridSim {
            sites,
            dags: Vec::new(),
            clock_us: 0,
            seq: 0,
            events: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            rls: initial_rls,
            fs,
            scripted: BTreeMap::new(),
            started: Vec::new(),
            trace: Vec::new(),
            output_file_bytes: config.output_file_bytes,
        })
    }

    /// Arrange for a DAG (by provenance name) to fail its first compute
    /// node with the given reason, regardless of the random stream.
    pub fn script_failure(&mut self, dv: &str, reason: &str) {
        self.scripted.insert(dv.to_string(), reason.to_string());
    }

    pub fn submit(&mut self, cdag: ConcreteDag) -> Result<DagId, SimError> {
        self.submit_with_events(cdag, 0)
    }

    /// Submit a concrete DAG; `events` is recorded in the job log of a
    /// successful run.
    pub fn submit_with_events(&mut self, cdag: ConcreteDag, events: u64) -> Result<DagId, SimError> {
        if !self.sites.contains_key(&cdag.site) {
            return Err(SimError::UnknownSite(cdag.site.clone()));
        }
        for (parent, child) in &cdag.edges {
            for id in [parent, child] {
                if !cdag.nodes.contains_key(id) {
                    return Err(SimError::InvalidDag {
                        dag: cdag.provenance.clone(),
                        message: format!("edge references unknown node `{id}`"),
                    });
                }
            }
        }

        let mut indeg: BTreeMap<&String, usize> = cdag.nodes.keys().map(|k| (k, 0)).collect();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (parent, child) in &cdag.edges {
            *indeg.get_mut(child).expect("validated above") += 1;
            children.entry(parent.clone()).or_default().push(child.clone());
        }
        // Kahn pass to reject cyclic submissions up front.
        {
            let mut deg = indeg.clone();
            let mut ready: VecDeque<&String> =
                deg.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
            let mut seen = 0usize;
            while let Some(id) = ready.pop_front() {
                seen += 1;
                if let Some(next) = children.get(id.as_str()) {
                    for child in next {
                        let d = deg.get_mut(child).expect("validated above");
                        *d -= 1;
                        if *d == 0 {
                            ready.push_back(child);
                        }
                    }
                }
            }
            if seen != cdag.nodes.len() {
                return Err(SimError::InvalidDag {
                    dag: cdag.provenance.clone(),
                    message: "cycle among nodes".into(),
                });
            }
        }

        let node_state: BTreeMap<String, NodeState> = indeg
            .iter()
            .map(|(id, d)| {
                let state = if **d == 0 {
                    NodeState::Ready
                } else {
                    NodeState::Waiting { indeg: **d }
                };
                ((*id).clone(), state)
            })
            .collect();
        let initial_ready: Vec<String> = node_state
            .iter()
            .filter(|(_, s)| matches!(s, NodeState::Ready))
            .map(|(id, _)| id.clone())
            .collect();

        let id = self.dags.len();
        let site = cdag.site.clone();
        let remaining = cdag.nodes.len();
        self.dags.push(DagRun {
            cdag,
            events_hint: events,
            state: DagState::Active,
            node_state,
            children,
            remaining,
            inflight: 0,
            first_start_us: None,
            end_us: None,
        });
        let site_rt = self.sites.get_mut(&site).expect("checked above");
        site_rt.active_dags += 1;
        for node in initial_ready {
            site_rt.ready.push_back((id, node));
        }
        self.dispatch(&site);
        Ok(id)
    }

    fn dispatch(&mut self, site_id: &SiteId) {
        loop {
            let site = self.sites.get_mut(site_id).expect("site exists");
            if site.busy >= site.slots {
                return;
            }
            let Some((dag_id, node_id)) = site.ready.pop_front() else {
                return;
            };
            if self.dags[dag_id].state != DagState::Active {
                self.dags[dag_id]
                    .node_state
                    .insert(node_id, NodeState::Cancelled);
                continue;
            }
            self.start_node(dag_id, node_id, site_id.clone());
        }
    }

    fn start_node(&mut self, dag_id: DagId, node_id: String, site_id: SiteId) {
        let clock = self.clock_us;
        let provenance = self.dags[dag_id].cdag.provenance.clone();
        let scripted = match self.dags[dag_id].cdag.nodes[&node_id] {
            ConcreteNode::Execute { .. } => self.scripted.remove(&provenance),
            _ => None,
        };
        let site = self.sites.get_mut(&site_id).expect("site exists");
        let service = site.service_us(&self.dags[dag_id].cdag.nodes[&node_id]);
        let completion = clock + service;

        let planned_failure = if let Some(reason) = scripted {
            Some(reason)
        } else {
            match &self.dags[dag_id].cdag.nodes[&node_id] {
                ConcreteNode::Execute { .. } if site.failure_prob > 0.0 => {
                    let draw: f64 = self.rng.random();
                    (draw < site.failure_prob).then(|| "random_failure".to_string())
                }
                ConcreteNode::StageOut { .. } | ConcreteNode::Register { .. }
                    if site.in_outage(clock, completion) =>
                {
                    Some("site_outage".to_string())
                }
                _ => None,
            }
        };

        site.busy += 1;
        site.peak_busy = site.peak_busy.max(site.busy);
        let dag = &mut self.dags[dag_id];
        dag.inflight += 1;
        if dag.first_start_us.is_none() {
            dag.first_start_us = Some(clock);
            self.started.push((provenance, to_seconds(clock)));
        }
        dag.node_state
            .insert(node_id.clone(), NodeState::Running { planned_failure });
        self.seq += 1;
        self.events
            .push(Reverse((completion, self.seq, dag_id, node_id)));
    }

    /// Process every event with time ≤ `until_s` and advance the clock.
    /// Returns the DAGs that reached a terminal state, in event order.
    pub fn step(&mut self, until_s: f64) -> Vec<DagCompletion> {
        let until_us = to_micros(until_s).max(self.clock_us);
        let mut completions = Vec::new();
        while let Some(Reverse((time, _, _, _))) = self.events.peek() {
            if *time > until_us {
                break;
            }
            let Reverse((time, _, dag_id, node_id)) = self.events.pop().expect("peeked");
            self.clock_us = time;
            self.finish_node(dag_id, node_id, &mut completions);
        }
        self.clock_us = self.clock_us.max(until_us);
        completions
    }

    fn finish_node(&mut self, dag_id: DagId, node_id: String, completions: &mut Vec<DagCompletion>) {
        let site_id = self.dags[dag_id].cdag.site.clone();
        let planned_failure = match self.dags[dag_id].node_state.get(&node_id) {
            Some(NodeState::Running { planned_failure }) => planned_failure.clone(),
            other => unreachable!("completion event for non-running node {node_id}: {other:?}"),
        };
        {
            let site = self.sites.get_mut(&site_id).expect("site exists");
            site.busy -= 1;
        }
        let was_active = self.dags[dag_id].state == DagState::Active;
        self.dags[dag_id].inflight -= 1;

        let kind = self.dags[dag_id].cdag.nodes[&node_id].kind_name();
        match planned_failure {
            None => {
                self.dags[dag_id]
                    .node_state
                    .insert(node_id.clone(), NodeState::Done);
                self.dags[dag_id].remaining -= 1;
                self.apply_effects(dag_id, &node_id);
                self.trace_line(dag_id, &node_id, kind, "ok");
                if was_active {
                    let ready: Vec<String> = {
                        let dag = &mut self.dags[dag_id];
                        let mut newly_ready = Vec::new();
                        if let Some(children) = dag.children.get(&node_id).cloned() {
                            for child in children {
                                if let Some(NodeState::Waiting { indeg }) =
                                    dag.node_state.get_mut(&child)
                                {
                                    *indeg -= 1;
                                    if *indeg == 0 {
                                        dag.node_state.insert(child.clone(), NodeState::Ready);
                                        newly_ready.push(child);
                                    }
                                }
                            }
                        }
                        newly_ready
                    };
                    let site = self.sites.get_mut(&site_id).expect("site exists");
                    for child in ready {
                        site.ready.push_back((dag_id, child));
                    }
                    if self.dags[dag_id].remaining == 0 {
                        self.finalize(dag_id, DagState::Succeeded, completions);
                    }
                }
            }
            Some(reason) => {
                self.dags[dag_id]
                    .node_state
                    .insert(node_id.clone(), NodeState::Failed);
                self.trace_line(dag_id, &node_id, kind, &reason);
                if was_active {
                    self.cancel_downstream(dag_id, &node_id);
                    self.finalize(dag_id, DagState::Failed(reason), completions);
                }
            }
        }
        self.dispatch(&site_id);
    }

    fn apply_effects(&mut self, dag_id: DagId, node_id: &str) {
        let node = self.dags[dag_id].cdag.nodes[node_id].clone();
        match node {
            ConcreteNode::Execute { outputs, .. } => {
                let site = self.dags[dag_id].cdag.site.clone();
                let entry = self.fs.entry(site).or_default();
                for lfn in outputs {
                    entry.insert(lfn.as_str().to_string());
                }
            }
            ConcreteNode::StageIn { lfn, to_site, .. } => {
                self.fs
                    .entry(to_site)
                    .or_default()
                    .insert(lfn.as_str().to_string());
            }
            ConcreteNode::StageOut { lfn, to_site, to_pfn, .. } => {
                let entry = self.fs.entry(to_site).or_default();
                entry.insert(to_pfn);
                entry.insert(lfn.as_str().to_string());
            }
            ConcreteNode::Register { lfn, site, pfn } => {
                self.rls.register(lfn, site, pfn);
            }
        }
    }

    fn cancel_downstream(&mut self, dag_id: DagId, from: &str) {
        let mut queue = VecDeque::from([from.to_string()]);
        let mut seen = BTreeSet::new();
        while let Some(node) = queue.pop_front() {
            if let Some(children) = self.dags[dag_id].children.get(&node).cloned() {
                for child in children {
                    if !seen.insert(child.clone()) {
                        continue;
                    }
                    let state = self.dags[dag_id].node_state.get(&child);
                    if matches!(state, Some(NodeState::Waiting { .. }) | Some(NodeState::Ready)) {
                        self.dags[dag_id]
                            .node_state
                            .insert(child.clone(), NodeState::Cancelled);
                    }
                    queue.push_back(child);
                }
            }
        }
    }

    fn finalize(&mut self, dag_id: DagId, state: DagState, completions: &mut Vec<DagCompletion>) {
        let clock = self.clock_us;
        {
            let dag = &mut self.dags[dag_id];
            dag.state = state.clone();
            dag.end_us = Some(clock);
        }
        let site_id = self.dags[dag_id].cdag.site.clone();
        self.sites
            .get_mut(&site_id)
            .expect("site exists")
            .active_dags -= 1;

        let job_log = self.render_log(dag_id);
        let dag = &self.dags[dag_id];
        let outcome = match &state {
            DagState::Succeeded => DagOutcome::Succeeded,
            DagState::Failed(reason) => DagOutcome::Failed {
                reason: reason.clone(),
            },
            DagState::Active => unreachable!(),
        };
        completions.push(DagCompletion {
            dag: dag_id,
            dv_name: dag.cdag.provenance.clone(),
            site: site_id,
            time_s: to_seconds(clock),
            outcome,
            job_log,
        });
    }

    fn render_log(&self, dag_id: DagId) -> String {
        let dag = &self.dags[dag_id];
        let mut log = String::new();
        log.push_str(&format!("dv={}\n", dag.cdag.provenance));
        match &dag.state {
            DagState::Succeeded => {
                log.push_str("status=success\n");
                log.push_str(&format!("events={}\n", dag.events_hint));
            }
            DagState::Failed(reason) => {
                log.push_str("status=failure\n");
                log.push_str(&format!("reason={reason}\n"));
            }
            DagState::Active => unreachable!("log rendered only for terminal DAGs"),
        }
        let start = dag.first_start_us.map(to_seconds).unwrap_or(0.0);
        let end = dag.end_us.map(to_seconds).unwrap_or(start);
        log.push_str(&format!("wall_seconds={:.3}\n", end - start));
        log.push_str(&format!("start={start:.3}\n"));
        log.push_str(&format!("end={end:.3}\n"));
        for (node_id, node) in &dag.cdag.nodes {
            if let ConcreteNode::Register { lfn, site, pfn } = node {
                if dag.node_state.get(node_id) == Some(&NodeState::Done) {
                    log.push_str(&format!(
                        "outfile={lfn},{},{site},{pfn}\n",
                        self.output_file_bytes
                    ));
                }
            }
        }
        log
    }

    fn trace_line(&mut self, dag_id: DagId, node_id: &str, kind: &str, outcome: &str) {
        let line = format!(
            "{:.6} {} {} {} {}",
            to_seconds(self.clock_us),
            self.dags[dag_id].cdag.provenance,
            node_id,
            kind,
            outcome
        );
        self.trace.push(line);
    }

    /// Non-terminal DAGs currently assigned to `site`.
    pub fn running_count(&self, site: &SiteId) -> Result<usize, SimError> {
        self.sites
            .get(site)
            .map(|s| s.active_dags)
            .ok_or_else(|| SimError::UnknownSite(site.clone()))
    }

    pub fn active_dags(&self) -> usize {
        self.dags
            .iter()
            .filter(|d| d.state == DagState::Active)
            .count()
    }

    pub fn pending_events(&self) -> bool {
        !self.events.is_empty()
    }

    pub fn clock_s(&self) -> f64 {
        to_seconds(self.clock_us)
    }

    pub fn rls(&self) -> &ReplicaCatalog {
        &self.rls
    }

    /// Logical presence of files per site, as observed by executed nodes.
    pub fn site_files(&self, site: &SiteId) -> BTreeSet<String> {
        self.fs.get(site).cloned().unwrap_or_default()
    }

    pub fn peak_busy(&self, site: &SiteId) -> u32 {
        self.sites.get(site).map(|s| s.peak_busy).unwrap_or(0)
    }

    /// DAG start notifications since the last call.
    pub fn drain_started(&mut self) -> Vec<(String, f64)> {
        std::mem::take(&mut self.started)
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn export_trace(&self) -> String {
        let mut text = self.trace.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        text
    }

    pub fn submitted_count(&self) -> usize {
        self.dags.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstract_planner::plan_abstract;
    use crate::concrete_planner::{plan_concrete, PlanOptions};
    use crate::fixtures;
    use crate::vdl::LogicalFileName;

    fn site(s: &str) -> SiteId {
        SiteId::new(s).unwrap()
    }

    fn one_site_config(slots: u32, prob: f64) -> GridConfig {
        GridConfig {
            sites: vec![SiteSpec {
                site: site("ufl-hpc"),
                slots,
                exec_time_s: NodeTimes {
                    execute: 100.0,
                    stage_in: 5.0,
                    stage_out: 10.0,
                    register: 1.0,
                },
                per_job_failure_prob: prob,
                outages: vec![],
            }],
            seed: 42,
            rng: default_rng_name(),
            storage: Some(StorageTarget {
                site: site("ufl-store"),
                prefix: "/store".into(),
            }),
            output_file_bytes: default_output_bytes(),
        }
    }

    fn fixture_cdag() -> ConcreteDag {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let mut rls = ReplicaCatalog::new();
        for card in fixtures::CARD_FILES {
            rls.register(
                LogicalFileName::new(card).unwrap(),
                site("ufl-store"),
                format!("/store/{card}"),
            );
        }
        plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &rls,
            &StorageTarget {
                site: site("ufl-store"),
                prefix: "/store".into(),
            },
            &GridConfig::known_sites(&one_site_config(1, 0.0)),
            &PlanOptions::default(),
        )
        .unwrap()
    }

    fn seeded_rls() -> ReplicaCatalog {
        let mut rls = ReplicaCatalog::new();
        for card in fixtures::CARD_FILES {
            rls.register(
                LogicalFileName::new(card).unwrap(),
                site("ufl-store"),
                format!("/store/{card}"),
            );
        }
        rls
    }

    fn single_node_dag(name: &str, exec_site: &SiteId) -> ConcreteDag {
        let mut nodes = BTreeMap::new();
        nodes.insert(
            format!("exec-{name}"),
            ConcreteNode::Execute {
                dv: name.to_string(),
                inputs: BTreeSet::new(),
                outputs: BTreeSet::new(),
            },
        );
        ConcreteDag {
            site: exec_site.clone(),
            provenance: name.to_string(),
            nodes,
            edges: BTreeSet::new(),
        }
    }

    #[test]
    fn single_node_completes_at_service_time() {
        let config = one_site_config(4, 0.0);
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        sim.submit(single_node_dag("J", &site("ufl-hpc"))).unwrap();
        let completions = sim.step(1_000.0);
        assert_eq!(completions.len(), 1);
        assert_eq!(completions[0].outcome, DagOutcome::Succeeded);
        assert!((completions[0].time_s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_site_is_rejected() {
        let config = one_site_config(1, 0.0);
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        let err = sim.submit(single_node_dag("J", &site("elsewhere"))).unwrap_err();
        assert!(matches!(err, SimError::UnknownSite(_)));
        assert!(matches!(
            sim.running_count(&site("elsewhere")),
            Err(SimError::UnknownSite(_))
        ));
    }

    #[test]
    fn one_slot_site_serializes_jobs() {
        let config = one_site_config(1, 0.0);
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        sim.submit(single_node_dag("A", &site("ufl-hpc"))).unwrap();
        sim.submit(single_node_dag("B", &site("ufl-hpc"))).unwrap();
        assert_eq!(sim.running_count(&site("ufl-hpc")).unwrap(), 2);
        let first = sim.step(100.0);
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].dv_name, "A");
        assert_eq!(sim.running_count(&site("ufl-hpc")).unwrap(), 1);
        let second = sim.step(200.0);
        assert_eq!(second.len(), 1);
        assert_eq!(second[0].dv_name, "B");
        assert!((second[0].time_s - 200.0).abs() < 1e-9);
        assert_eq!(sim.peak_busy(&site("ufl-hpc")), 1);
    }

    #[test]
    fn zero_probability_always_succeeds() {
        let config = one_site_config(8, 0.0);
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        for i in 0..50 {
            sim.submit(single_node_dag(&format!("J{i}"), &site("ufl-hpc")))
                .unwrap();
        }
        let completions = sim.step(1e7);
        assert_eq!(completions.len(), 50);
        assert!(completions.iter().all(|c| c.outcome == DagOutcome::Succeeded));
    }

    #[test]
    fn unit_probability_always_fails() {
        let config = one_site_config(8, 1.0);
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        for i in 0..50 {
            sim.submit(single_node_dag(&format!("J{i}"), &site("ufl-hpc")))
                .unwrap();
        }
        let completions = sim.step(1e7);
        assert_eq!(completions.len(), 50);
        assert!(completions.iter().all(|c| matches!(
            &c.outcome,
            DagOutcome::Failed { reason } if reason == "random_failure"
        )));
    }

    #[test]
    fn binomial_failure_count_near_expectation() {
        // 10,000 single-node DAGs at p = 0.02: expect 200 ± 3σ (σ ≈ 14)
        let mut config = one_site_config(64, 0.02);
        config.seed = 7;
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        for i in 0..10_000 {
            sim.submit(single_node_dag(&format!("J{i}"), &site("ufl-hpc")))
                .unwrap();
        }
        let completions = sim.step(1e9);
        assert_eq!(completions.len(), 10_000);
        let failures = completions
            .iter()
            .filter(|c| matches!(c.outcome, DagOutcome::Failed { .. }))
            .count() as i64;
        assert!((failures - 200).abs() <= 42, "failures = {failures}");
    }

    #[test]
    fn fixture_dag_executes_registers_and_logs() {
        let config = one_site_config(8, 0.0);
        let mut sim = GridSim::new(&config, seeded_rls()).unwrap();
        let cdag = fixture_cdag();
        sim.submit_with_events(cdag, 250).unwrap();
        let completions = sim.step(1e6);
        assert_eq!(completions.len(), 1);
        let completion = &completions[0];
        assert_eq!(completion.outcome, DagOutcome::Succeeded);
        // all three outputs registered at storage
        let ntuple = LogicalFileName::new(fixtures::NTUPLE_FILE).unwrap();
        assert!(sim.rls().has_replica(&ntuple));
        assert!(sim
            .site_files(&site("ufl-hpc"))
            .contains(fixtures::NTUPLE_FILE));
        let (record, warnings) =
            crate::production::parse_job_log(&completion.job_log).unwrap();
        assert_eq!(warnings, 0);
        assert!(record.status.is_success());
        assert_eq!(record.produced_events, 250);
        assert_eq!(record.dv_name, fixtures::NTUPLE_DV);
        assert_eq!(record.output_sizes.len(), 3);
        assert!(record.output_locations.contains_key(&ntuple));
    }

    #[test]
    fn scripted_failure_beats_random_stream() {
        let config = one_site_config(8, 0.0);
        let mut sim = GridSim::new(&config, seeded_rls()).unwrap();
        sim.script_failure(fixtures::NTUPLE_DV, "preempted");
        sim.submit(fixture_cdag()).unwrap();
        let completions = sim.step(1e6);
        assert_eq!(completions.len(), 1);
        match &completions[0].outcome {
            DagOutcome::Failed { reason } => assert_eq!(reason, "preempted"),
            other => panic!("expected failure, got {other:?}"),
        }
        let (record, _) = crate::production::parse_job_log(&completions[0].job_log).unwrap();
        assert!(!record.status.is_success());
    }

    #[test]
    fn node_failure_cancels_downstream() {
        let config = one_site_config(8, 1.0);
        let mut sim = GridSim::new(&config, seeded_rls()).unwrap();
        sim.submit(fixture_cdag()).unwrap();
        let completions = sim.step(1e6);
        assert_eq!(completions.len(), 1);
        assert!(matches!(completions[0].outcome, DagOutcome::Failed { .. }));
        // nothing was registered: the register nodes never ran
        assert!(!sim
            .rls()
            .has_replica(&LogicalFileName::new(fixtures::NTUPLE_FILE).unwrap()));
        assert_eq!(sim.active_dags(), 0);
    }

    #[test]
    fn outage_fails_writebacks_in_window() {
        let mut config = one_site_config(8, 0.0);
        // executes end at 105s and 205s; stage-outs run 205..215
        config.sites[0].outages = vec![(200.0, 300.0)];
        let mut sim = GridSim::new(&config, seeded_rls()).unwrap();
        sim.submit(fixture_cdag()).unwrap();
        let completions = sim.step(1e6);
        assert_eq!(completions.len(), 1);
        match &completions[0].outcome {
            DagOutcome::Failed { reason } => assert_eq!(reason, "site_outage"),
            other => panic!("expected site_outage, got {other:?}"),
        }
    }

    #[test]
    fn outage_after_writebacks_is_harmless() {
        let mut config = one_site_config(8, 0.0);
        config.sites[0].outages = vec![(100_000.0, 200_000.0)];
        let mut sim = GridSim::new(&config, seeded_rls()).unwrap();
        sim.submit(fixture_cdag()).unwrap();
        let completions = sim.step(1e9);
        assert_eq!(completions[0].outcome, DagOutcome::Succeeded);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let run = |seed: u64| -> (String, usize) {
            let mut config = one_site_config(4, 0.1);
            config.seed = seed;
            let mut sim = GridSim::new(&config, seeded_rls()).unwrap();
            for i in 0..40 {
                sim.submit(single_node_dag(&format!("J{i}"), &site("ufl-hpc")))
                    .unwrap();
            }
            let completions = sim.step(1e9);
            (sim.export_trace(), completions.len())
        };
        let (trace_a, n_a) = run(99);
        let (trace_b, n_b) = run(99);
        assert_eq!(trace_a, trace_b);
        assert_eq!(n_a, n_b);
        let (trace_c, _) = run(100);
        assert_ne!(trace_a, trace_c);
    }

    #[test]
    fn slot_bound_is_respected() {
        let config = one_site_config(3, 0.0);
        let mut sim = GridSim::new(&config, ReplicaCatalog::new()).unwrap();
        for i in 0..20 {
            sim.submit(single_node_dag(&format!("J{i}"), &site("ufl-hpc")))
                .unwrap();
        }
        sim.step(1e9);
        assert_eq!(sim.peak_busy(&site("ufl-hpc")), 3);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut config = one_site_config(0, 0.0);
        assert!(matches!(config.validate(), Err(SimError::Config(_))));
        config.sites[0].slots = 1;
        config.sites[0].per_job_failure_prob = 1.5;
        assert!(matches!(config.validate(), Err(SimError::Config(_))));
        config.sites[0].per_job_failure_prob = 0.0;
        config.sites[0].outages = vec![(10.0, 5.0)];
        assert!(matches!(config.validate(), Err(SimError::Config(_))));
        config.sites[0].outages = vec![(0.0, 5.0), (4.0, 8.0)];
        assert!(matches!(config.validate(), Err(SimError::Config(_))));
        config.sites[0].outages = vec![(0.0, 5.0), (5.0, 8.0)];
        config.rng = "mt19937".into();
        assert!(matches!(config.validate(), Err(SimError::Config(_))));
    }
}
