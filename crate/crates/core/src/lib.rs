//! Virtual-data workflow system: a VDL parser and catalog, abstract and
//! concrete DAG planners backed by a replica location index, production
//! job-splitting, and a watermark scheduler driving a simulated
//! multi-site grid.

pub mod abstract_planner;
pub mod catalog;
pub mod concrete_planner;
pub mod fixtures;
pub mod grid_sim;
pub mod production;
pub mod replica;
pub mod scenario;
pub mod vdl;
pub mod workrunner;

pub use abstract_planner::{plan_abstract, topo_order, AbstractDag, PlanError};
pub use catalog::{CatalogError, VirtualDataCatalog};
pub use concrete_planner::{
    emit_dag_file, parse_dag_file, plan_concrete, prune, ConcreteDag, ConcreteError, ConcreteNode,
    PlanOptions, StorageTarget,
};
pub use grid_sim::{DagCompletion, DagOutcome, GridConfig, GridSim, SimError, SiteSpec};
pub use production::{
    generate_derivations, parse_job_log, split_jobs, CompletionRecord, CompletionStatus,
    JobDescription, MetadataDb, ProductionError, ProductionRequest,
};
pub use replica::{Replica, ReplicaCatalog, ReplicaError, SiteId};
pub use scenario::{run_scenario, run_scenario_file, ScenarioError, ScenarioOutcome, ScenarioSpec};
pub use vdl::{
    bind_derivation, parse_vdl, serialize_vdl, ArgClass, BindError, Binding, Derivation,
    LogicalFileName, Transformation, VdlError, VdlObject,
};
pub use workrunner::{
    GridView, JobRecord, JobStatus, SchedulerConfig, SchedulerError, SchedulerStats, SubmitAction,
    WorkRunner,
};
