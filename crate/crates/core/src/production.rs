//! Production front-end: the metadata store of production requests, event
//! job-splitting, derivation generation into the catalog, and absorption of
//! completion records parsed from job logs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replica::SiteId;
use crate::vdl::{
    ActualValue, ArgClass, Derivation, FormalArg, LogicalFileName, TemplateRef, Transformation,
};

pub const FORTRAN_STAGE: &str = "FORTRAN_SECTION";
pub const ORCA_STAGE: &str = "ORCA_SECTION";

fn default_pipeline() -> Vec<String> {
    vec![FORTRAN_STAGE.to_string(), ORCA_STAGE.to_string()]
}

/// A stored production request: how many events to produce, in chunks of
/// how many, from which card and geometry files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionRequest {
    pub project: String,
    pub total_events: u64,
    pub events_per_job: u64,
    pub kincard: LogicalFileName,
    pub simcard: LogicalFileName,
    pub geomfile: LogicalFileName,
    #[serde(default = "default_pipeline")]
    pub pipeline: Vec<String>,
}

impl ProductionRequest {
    pub fn validate(&self) -> Result<(), ProductionError> {
        if self.total_events == 0 {
            return Err(ProductionError::InvalidRequest(
                "total_events must be at least 1".into(),
            ));
        }
        if self.events_per_job == 0 {
            return Err(ProductionError::InvalidRequest(
                "events_per_job must be at least 1".into(),
            ));
        }
        let mut chars = self.project.chars();
        let head_ok = chars
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        if !head_ok || !self.project.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ProductionError::InvalidRequest(format!(
                "project `{}` is not an identifier",
                self.project
            )));
        }
        if self.pipeline != default_pipeline() {
            return Err(ProductionError::InvalidRequest(format!(
                "unsupported pipeline {:?}; expected [{FORTRAN_STAGE}, {ORCA_STAGE}]",
                self.pipeline
            )));
        }
        Ok(())
    }
}

/// Snapshot of a request as read from the metadata store.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDescription {
    pub request: ProductionRequest,
}

/// One job of a split production: `runnum` doubles as the random seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobSplit {
    pub runnum: u64,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CompletionStatus {
    Success,
    Failure { reason: String },
}

impl CompletionStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, CompletionStatus::Success)
    }
}

/// Parsed outcome of one executed DAG, as reported by its job log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub dv_name: String,
    #[serde(flatten)]
    pub status: CompletionStatus,
    #[serde(default)]
    pub output_sizes: BTreeMap<LogicalFileName, u64>,
    #[serde(default)]
    pub output_locations: BTreeMap<LogicalFileName, (SiteId, String)>,
    #[serde(default)]
    pub wall_seconds: Option<f64>,
    #[serde(default)]
    pub produced_events: u64,
    #[serde(default)]
    pub start_s: Option<f64>,
    #[serde(default)]
    pub end_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ProductionError {
    #[error("UnknownProject: `{0}`")]
    UnknownProject(String),
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
    #[error("LogFormatError at line {line}: {message}")]
    LogFormat { line: u32, message: String },
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError: {0}")]
    Json(#[from] serde_json::Error),
}

/// Requests plus an append-only list of completion records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetadataDb {
    requests: BTreeMap<String, ProductionRequest>,
    completions: Vec<CompletionRecord>,
}

#[derive(Serialize, Deserialize)]
struct DbFile {
    requests: Vec<ProductionRequest>,
    completions: Vec<CompletionRecord>,
}

impl MetadataDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_request(&mut self, request: ProductionRequest) -> Result<(), ProductionError> {
        request.validate()?;
        if let Some(existing) = self.requests.get(&request.project) {
            if *existing == request {
                return Ok(());
            }
            return Err(ProductionError::InvalidRequest(format!(
                "project `{}` already stored with different content",
                request.project
            )));
        }
        self.requests.insert(request.project.clone(), request);
        Ok(())
    }

    pub fn read_request(&self, project: &str) -> Result<JobDescription, ProductionError> {
        self.requests
            .get(project)
            .map(|request| JobDescription {
                request: request.clone(),
            })
            .ok_or_else(|| ProductionError::UnknownProject(project.to_string()))
    }

    /// Append-only; records are never mutated afterwards.
    pub fn write_completion(&mut self, record: CompletionRecord) {
        self.completions.push(record);
    }

    pub fn completions(&self) -> &[CompletionRecord] {
        &self.completions
    }

    pub fn success_count(&self) -> usize {
        self.completions
            .iter()
            .filter(|r| r.status.is_success())
            .count()
    }

    pub fn failure_count(&self) -> usize {
        self.completions.len() - self.success_count()
    }

    /// Events summed over successful completions.
    pub fn events_produced(&self) -> u64 {
        self.completions
            .iter()
            .filter(|r| r.status.is_success())
            .map(|r| r.produced_events)
            .sum()
    }

    pub fn success_rate(&self) -> f64 {
        if self.completions.is_empty() {
            return 0.0;
        }
        self.success_count() as f64 / self.completions.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<(), ProductionError> {
        let file = DbFile {
            requests: self.requests.values().cloned().collect(),
            completions: self.completions.clone(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProductionError> {
        let text = fs::read_to_string(path)?;
        let file: DbFile = serde_json::from_str(&text)?;
        let mut db = Self::new();
        for request in file.requests {
            db.add_request(request)?;
        }
        db.completions = file.completions;
        Ok(db)
    }
}

/// Split a request into independent jobs: ceil(total/per_job) jobs, run
/// numbers 1..=N, the last job carrying any remainder.
pub fn split_jobs(jd: &JobDescription) -> Vec<JobSplit> {
    let total = jd.request.total_events;
    let per_job = jd.request.events_per_job;
    let jobs = total.div_ceil(per_job);
    (1..=jobs)
        .map(|runnum| JobSplit {
            runnum,
            events: if runnum == jobs {
                total - per_job * (jobs - 1)
            } else {
                per_job
            },
        })
        .collect()
}

/// Everything `generate_derivations` writes into the catalog, plus the
/// final-stage derivation names in run order for scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProduction {
    pub transformations: Vec<Transformation>,
    pub derivations: Vec<Derivation>,
    pub targets: Vec<String>,
}

/// Generate the two-section derivations for every split. Pure function of
/// the job description: re-running yields identical objects.
pub fn generate_derivations(jd: &JobDescription, splits: &[JobSplit]) -> GeneratedProduction {
    let project = &jd.request.project;
    let upper = project.to_uppercase();
    let mut derivations = Vec::with_capacity(splits.len() * 2);
    let mut targets = Vec::with_capacity(splits.len());

    for split in splits {
        let run = split.runnum;
        let events = split.events.to_string();
        let fz = format!("{project}_{run}.fz");
        let fortran_log = format!("fortran.{project}_{run}.log");
        let ntuple = format!("{project}_{run}.ntpl");
        let orca_log = format!("orca.{project}_{run}.log");

        let sim_name = format!("{upper}_{run}_SIMULATION");
        derivations.push(Derivation {
            name: sim_name,
            transformation_name: FORTRAN_STAGE.into(),
            actuals: BTreeMap::from([
                param("runnum", run.to_string()),
                param("project", project.clone()),
                param("numevents", events.clone()),
                file("kincard", ArgClass::Input, jd.request.kincard.as_str()),
                file("simcard", ArgClass::Input, jd.request.simcard.as_str()),
                file("geomfile", ArgClass::Input, jd.request.geomfile.as_str()),
                file("logfile", ArgClass::Output, &fortran_log),
                file("outfile", ArgClass::Output, &fz),
            ]),
        });

        let ntuple_name = format!("{upper}_{run}_NTUPLE");
        derivations.push(Derivation {
            name: ntuple_name.clone(),
            transformation_name: ORCA_STAGE.into(),
            actuals: BTreeMap::from([
                param("runnum", run.to_string()),
                param("project", project.clone()),
                param("numevents", events),
                file("infile", ArgClass::Input, &fz),
                file("ntuple", ArgClass::Output, &ntuple),
                file("logfile", ArgClass::Output, &orca_log),
            ]),
        });
        targets.push(ntuple_name);
    }

    GeneratedProduction {
        transformations: vec![fortran_section(), orca_section()],
        derivations,
        targets,
    }
}

fn param(name: &str, value: String) -> (String, ActualValue) {
    (name.to_string(), ActualValue::Literal(value))
}

fn file(name: &str, class: ArgClass, lfn: &str) -> (String, ActualValue) {
    (
        name.to_string(),
        ActualValue::FileRef {
            class,
            lfn: LogicalFileName::new(lfn).expect("generated names are valid"),
        },
    )
}

fn formal(name: &str, class: ArgClass) -> FormalArg {
    FormalArg {
        name: name.into(),
        class,
    }
}

fn template(name: &str, class: ArgClass) -> TemplateRef {
    TemplateRef {
        class,
        name: name.into(),
    }
}

/// Schema of the simulation section.
pub fn fortran_section() -> Transformation {
    Transformation {
        name: FORTRAN_STAGE.into(),
        formals: vec![
            formal("runnum", ArgClass::None),
            formal("project", ArgClass::None),
            formal("numevents", ArgClass::None),
            formal("outfile", ArgClass::Output),
            formal("kincard", ArgClass::Input),
            formal("simcard", ArgClass::Input),
            formal("geomfile", ArgClass::Input),
            formal("logfile", ArgClass::Output),
        ],
        argument_template: vec![
            template("runnum", ArgClass::None),
            template("project", ArgClass::None),
            template("numevents", ArgClass::None),
            template("kincard", ArgClass::Input),
            template("simcard", ArgClass::Input),
            template("geomfile", ArgClass::Input),
            template("logfile", ArgClass::Output),
            template("outfile", ArgClass::Output),
        ],
    }
}

/// Schema of the reconstruction/analysis section.
pub fn orca_section() -> Transformation {
    Transformation {
        name: ORCA_STAGE.into(),
        formals: vec![
            formal("runnum", ArgClass::None),
            formal("project", ArgClass::None),
            formal("numevents", ArgClass::None),
            formal("infile", ArgClass::Input),
            formal("ntuple", ArgClass::Output),
            formal("logfile", ArgClass::Output),
        ],
        argument_template: vec![
            template("runnum", ArgClass::None),
            template("project", ArgClass::None),
            template("numevents", ArgClass::None),
            template("infile", ArgClass::Input),
            template("ntuple", ArgClass::Output),
            template("logfile", ArgClass::Output),
        ],
    }
}

/// Parse one job log. Returns the record plus the count of unknown keys
/// that were skipped.
///
/// Format: one `key=value` per line; mandatory keys `dv` and `status`;
/// optional `reason`, `events`, `wall_seconds`, `start`, `end`, and
/// repeated `outfile=<lfn>,<bytes>,<site>,<pfn>` entries.
pub fn parse_job_log(text: &str) -> Result<(CompletionRecord, usize), ProductionError> {
    let fail = |line: usize, message: String| ProductionError::LogFormat {
        line: line as u32 + 1,
        message,
    };

    let mut dv_name: Option<String> = None;
    let mut success: Option<bool> = None;
    let mut reason: Option<String> = None;
    let mut events: u64 = 0;
    let mut wall_seconds = None;
    let mut start_s = None;
    let mut end_s = None;
    let mut output_sizes = BTreeMap::new();
    let mut output_locations = BTreeMap::new();
    let mut unknown_keys = 0usize;
    let mut line_count = 0usize;

    for (idx, line) in text.lines().enumerate() {
        line_count = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(idx, format!("expected `key=value`, found `{line}`")))?;
        match key {
            "dv" => dv_name = Some(value.to_string()),
            "status" => match value {
                "success" => success = Some(true),
                "failure" => success = Some(false),
                other => {
                    return Err(fail(idx, format!("status must be success or failure, found `{other}`")))
                }
            },
            "reason" => reason = Some(value.to_string()),
            "events" => {
                events = value
                    .parse()
                    .map_err(|_| fail(idx, format!("events is not an integer: `{value}`")))?;
            }
            "wall_seconds" => {
                wall_seconds = Some(value.parse().map_err(|_| {
                    fail(idx, format!("wall_seconds is not a number: `{value}`"))
                })?);
            }
            "start" => {
                start_s = Some(value.parse().map_err(|_| {
                    fail(idx, format!("start is not a number: `{value}`"))
                })?);
            }
            "end" => {
                end_s = Some(
                    value
                        .parse()
                        .map_err(|_| fail(idx, format!("end is not a number: `{value}`")))?,
                );
            }
            "outfile" => {
                let mut parts = value.splitn(4, ',');
                let (lfn, bytes, site, pfn) =
                    match (parts.next(), parts.next(), parts.next(), parts.next()) {
                        (Some(l), Some(b), Some(s), Some(p)) => (l, b, s, p),
                        _ => {
                            return Err(fail(
                                idx,
                                "outfile needs `<lfn>,<bytes>,<site>,<pfn>`".into(),
                            ))
                        }
                    };
                let lfn = LogicalFileName::new(lfn).map_err(|e| fail(idx, e.to_string()))?;
                let bytes: u64 = bytes
                    .parse()
                    .map_err(|_| fail(idx, format!("outfile bytes is not an integer: `{bytes}`")))?;
                let site = SiteId::new(site).map_err(|e| fail(idx, e.to_string()))?;
                output_sizes.insert(lfn.clone(), bytes);
                output_locations.insert(lfn, (site, pfn.to_string()));
            }
            _ => unknown_keys += 1,
        }
    }

    let missing = |key: &str| ProductionError::LogFormat {
        line: line_count.max(1) as u32,
        message: format!("missing mandatory key `{key}`"),
    };
    let dv_name = dv_name.ok_or_else(|| missing("dv"))?;
    let success = success.ok_or_else(|| missing("status"))?;

    let status = if success {
        CompletionStatus::Success
    } else {
        CompletionStatus::Failure {
            reason: reason.unwrap_or_else(|| "unknown".to_string()),
        }
    };

    Ok((
        CompletionRecord {
            dv_name,
            status,
            output_sizes,
            output_locations,
            wall_seconds,
            produced_events: events,
            start_s,
            end_s,
        },
        unknown_keys,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::VirtualDataCatalog;
    use crate::vdl::{parse_vdl, VdlObject};

    fn request(total: u64, per_job: u64) -> ProductionRequest {
        ProductionRequest {
            project: "eg02_BigJets".into(),
            total_events: total,
            events_per_job: per_job,
            kincard: LogicalFileName::new("eg02_BigJets_Id_252.txt").unwrap(),
            simcard: LogicalFileName::new("STANDARD_125_Id_42.txt").unwrap(),
            geomfile: LogicalFileName::new("cms125.rz").unwrap(),
            pipeline: default_pipeline(),
        }
    }

    fn jd(total: u64, per_job: u64) -> JobDescription {
        JobDescription {
            request: request(total, per_job),
        }
    }

    #[test]
    fn read_request_round_trips() {
        let mut db = MetadataDb::new();
        db.add_request(request(150_000, 250)).unwrap();
        let jd = db.read_request("eg02_BigJets").unwrap();
        assert_eq!(jd.request.total_events, 150_000);
        assert_eq!(jd.request.events_per_job, 250);
        assert!(matches!(
            db.read_request("nope"),
            Err(ProductionError::UnknownProject(_))
        ));
    }

    #[test]
    fn split_matches_ceiling_division() {
        let splits = split_jobs(&jd(150_000, 250));
        assert_eq!(splits.len(), 600);
        assert!(splits.iter().all(|s| s.events == 250));
        assert_eq!(splits.first().unwrap().runnum, 1);
        assert_eq!(splits.last().unwrap().runnum, 600);
    }

    #[test]
    fn split_degenerate_and_wide() {
        let one = split_jobs(&jd(1, 250));
        assert_eq!(one, vec![JobSplit { runnum: 1, events: 1 }]);

        let wide = split_jobs(&jd(10_000, 1));
        assert_eq!(wide.len(), 10_000);
        assert!(wide.iter().all(|s| s.events == 1));
    }

    #[test]
    fn split_remainder_goes_to_last_job() {
        let splits = split_jobs(&jd(1001, 250));
        assert_eq!(splits.len(), 5);
        assert_eq!(splits[4].events, 1);
        assert_eq!(splits.iter().map(|s| s.events).sum::<u64>(), 1001);
    }

    #[test]
    fn generated_first_run_matches_listing_derivation() {
        let jd = jd(150_000, 250);
        let generated = generate_derivations(&jd, &split_jobs(&jd));
        let listing = parse_vdl(crate::fixtures::TWO_SECTION_LISTING).unwrap();
        let listing_dv = match &listing[1] {
            VdlObject::Derivation(dv) => dv.clone(),
            _ => unreachable!(),
        };
        assert_eq!(generated.derivations[0], listing_dv);
        let listing_tr = match &listing[0] {
            VdlObject::Transformation(tr) => tr.clone(),
            _ => unreachable!(),
        };
        assert_eq!(generated.transformations[0], listing_tr);
    }

    #[test]
    fn generated_runs_have_disjoint_outputs() {
        let jd = jd(500, 250);
        let generated = generate_derivations(&jd, &split_jobs(&jd));
        let mut catalog = VirtualDataCatalog::new();
        for tr in generated.transformations {
            catalog.insert(VdlObject::Transformation(tr)).unwrap();
        }
        for dv in generated.derivations {
            catalog.insert(VdlObject::Derivation(dv)).unwrap();
        }
        assert_eq!(generated.targets.len(), 2);
        for target in &generated.targets {
            catalog.binding_for(target).unwrap();
        }
    }

    #[test]
    fn zero_splits_generate_nothing() {
        let generated = generate_derivations(&jd(1, 1), &[]);
        assert!(generated.derivations.is_empty());
        assert!(generated.targets.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let jd = jd(1000, 250);
        let splits = split_jobs(&jd);
        assert_eq!(
            generate_derivations(&jd, &splits),
            generate_derivations(&jd, &splits)
        );
    }

    #[test]
    fn parse_success_log() {
        let log = "dv=EG02_BIGJETS_1_NTUPLE\nstatus=success\nevents=250\nwall_seconds=1030.5\nstart=10\nend=1040.5\noutfile=eg02_BigJets_1.ntpl,1048576,ufl-store,/store/eg02_BigJets_1.ntpl\n";
        let (record, warnings) = parse_job_log(log).unwrap();
        assert_eq!(record.dv_name, "EG02_BIGJETS_1_NTUPLE");
        assert!(record.status.is_success());
        assert_eq!(record.produced_events, 250);
        assert_eq!(warnings, 0);
        assert_eq!(
            record.output_sizes
                [&LogicalFileName::new("eg02_BigJets_1.ntpl").unwrap()],
            1_048_576
        );
    }

    #[test]
    fn parse_failure_log() {
        let log = "dv=X\nstatus=failure\nreason=preempted\n";
        let (record, _) = parse_job_log(log).unwrap();
        assert_eq!(
            record.status,
            CompletionStatus::Failure {
                reason: "preempted".into()
            }
        );
    }

    #[test]
    fn parse_empty_log_fails_at_line_one() {
        let err = parse_job_log("").unwrap_err();
        match err {
            ProductionError::LogFormat { line, .. } => assert_eq!(line, 1),
            other => panic!("expected LogFormatError, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_counted_not_fatal() {
        let log = "dv=X\nstatus=success\nnovel_key=hello\nanother=1\n";
        let (_, warnings) = parse_job_log(log).unwrap();
        assert_eq!(warnings, 2);
    }

    #[test]
    fn aggregates_reflect_written_completions() {
        let mut db = MetadataDb::new();
        assert_eq!(db.events_produced(), 0);
        assert_eq!(db.success_count() + db.failure_count(), 0);

        for i in 0..670 {
            db.write_completion(CompletionRecord {
                dv_name: format!("DV_{i}"),
                status: CompletionStatus::Success,
                output_sizes: BTreeMap::new(),
                output_locations: BTreeMap::new(),
                wall_seconds: None,
                produced_events: 250,
                start_s: None,
                end_s: None,
            });
        }
        assert_eq!(db.events_produced(), 167_500);

        let mut mixed = MetadataDb::new();
        for i in 0..5954 {
            mixed.write_completion(CompletionRecord {
                dv_name: format!("DV_{i}"),
                status: if i < 5559 {
                    CompletionStatus::Success
                } else {
                    CompletionStatus::Failure {
                        reason: "grid".into(),
                    }
                },
                output_sizes: BTreeMap::new(),
                output_locations: BTreeMap::new(),
                wall_seconds: None,
                produced_events: 1,
                start_s: None,
                end_s: None,
            });
        }
        assert!((mixed.success_rate() - 0.9337).abs() < 0.0001);
    }

    #[test]
    fn db_save_load_round_trip() {
        let mut db = MetadataDb::new();
        db.add_request(request(1000, 250)).unwrap();
        db.write_completion(CompletionRecord {
            dv_name: "D".into(),
            status: CompletionStatus::Failure {
                reason: "site_outage".into(),
            },
            output_sizes: BTreeMap::new(),
            output_locations: BTreeMap::new(),
            wall_seconds: Some(12.0),
            produced_events: 0,
            start_s: Some(1.0),
            end_s: Some(13.0),
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadb.json");
        db.save(&path).unwrap();
        assert_eq!(MetadataDb::load(&path).unwrap(), db);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let mut db = MetadataDb::new();
        let mut zero = request(0, 250);
        zero.total_events = 0;
        assert!(matches!(
            db.add_request(zero),
            Err(ProductionError::InvalidRequest(_))
        ));
        let mut bad_project = request(10, 1);
        bad_project.project = "has space".into();
        assert!(matches!(
            db.add_request(bad_project),
            Err(ProductionError::InvalidRequest(_))
        ));
    }
}
