//! `vds`: command-line front end for the virtual-data workflow tools.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vds::abstract_planner::plan_abstract;
use vds::catalog::VirtualDataCatalog;
use vds::concrete_planner::{emit_dag_file, plan_concrete, PlanOptions};
use vds::grid_sim::GridConfig;
use vds::production::{generate_derivations, split_jobs, MetadataDb};
use vds::replica::{ReplicaCatalog, SiteId};
use vds::scenario::run_scenario_file;
use vds::vdl::VdlObject;

#[derive(Parser)]
#[command(name = "vds", version, about = "virtual data workflow tools")]
struct Cli {
    /// Virtual data catalog file
    #[arg(long, global = true, default_value = "vdc.vdl")]
    catalog: PathBuf,
    /// Replica index file
    #[arg(long, global = true, default_value = "replicas.rls")]
    rls: PathBuf,
    /// Production metadata database
    #[arg(long, global = true, default_value = "metadb.json")]
    metadb: PathBuf,
    /// Grid configuration (sites, storage, seed)
    #[arg(long, global = true, default_value = "grid.json")]
    config: PathBuf,
    /// Override the grid seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Catalog manipulation
    Vdl {
        #[command(subcommand)]
        action: VdlAction,
    },
    /// Planning
    Plan {
        #[command(subcommand)]
        action: PlanAction,
    },
    /// Split a stored production request and write its derivations
    Produce { project: String },
    /// Run a simulation scenario to quiescence
    Simulate { scenario: PathBuf },
}

#[derive(Subcommand)]
enum VdlAction {
    /// Parse a VDL file and insert its objects
    Insert { file: PathBuf },
    /// Print catalog object names
    List,
    /// Dump the catalog as VDL text
    Export,
}

#[derive(Subcommand)]
enum PlanAction {
    /// Emit the abstract DAG for a derivation or logical file
    Abstract {
        target: String,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Emit the submit file for a site-resolved plan
    Concrete {
        target: String,
        /// Execution site
        #[arg(long)]
        site: String,
        /// Prune the target too when its outputs already have replicas
        #[arg(long)]
        skip_existing_target: bool,
        #[command(flatten)]
        out: OutputArg,
    },
}

#[derive(Args)]
struct OutputArg {
    /// Write to a file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutputArg {
    fn write(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => fs::write(path, text)
                .with_context(|| format!("writing {}", path.display()))?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Vdl { action } => match action {
            VdlAction::Insert { file } => {
                let text = fs::read_to_string(&file)
                    .with_context(|| format!("reading {}", file.display()))?;
                let _lock = Lock::acquire(&cli.catalog)?;
                let mut catalog = load_or_new_catalog(&cli.catalog)?;
                let count = catalog.insert_text(&text)?;
                catalog.save(&cli.catalog)?;
                println!("{count} objects inserted");
            }
            VdlAction::List => {
                let catalog = VirtualDataCatalog::load(&cli.catalog)
                    .with_context(|| format!("reading {}", cli.catalog.display()))?;
                for name in catalog.transformation_names() {
                    println!("TR {name}");
                }
                for name in catalog.derivation_names() {
                    println!("DV {name}");
                }
            }
            VdlAction::Export => {
                let catalog = VirtualDataCatalog::load(&cli.catalog)
                    .with_context(|| format!("reading {}", cli.catalog.display()))?;
                print!("{}", catalog.export());
            }
        },
        Command::Plan { action } => {
            let catalog = VirtualDataCatalog::load(&cli.catalog)
                .with_context(|| format!("reading {}", cli.catalog.display()))?;
            match action {
                PlanAction::Abstract { target, out } => {
                    let dag = plan_abstract(&catalog, &target)?;
                    out.write(&dag.export())?;
                }
                PlanAction::Concrete {
                    target,
                    site,
                    skip_existing_target,
                    out,
                } => {
                    let rls = ReplicaCatalog::load(&cli.rls)
                        .with_context(|| format!("reading {}", cli.rls.display()))?;
                    let grid = GridConfig::load(&cli.config)
                        .with_context(|| format!("reading {}", cli.config.display()))?;
                    let storage = grid.storage.clone().ok_or_else(|| {
                        anyhow::anyhow!("grid config {} has no storage target", cli.config.display())
                    })?;
                    let site = SiteId::new(site)?;
                    let known: BTreeSet<SiteId> = grid.known_sites();
                    let dag = plan_abstract(&catalog, &target)?;
                    let options = PlanOptions {
                        skip_existing_target,
                        keep: None,
                    };
                    let cdag = plan_concrete(&dag, &site, &rls, &storage, &known, &options)?;
                    out.write(&emit_dag_file(&cdag))?;
                }
            }
        }
        Command::Produce { project } => {
            let db = MetadataDb::load(&cli.metadb)
                .with_context(|| format!("reading {}", cli.metadb.display()))?;
            let jd = db.read_request(&project)?;
            let splits = split_jobs(&jd);
            let generated = generate_derivations(&jd, &splits);
            let _lock = Lock::acquire(&cli.catalog)?;
            let mut catalog = load_or_new_catalog(&cli.catalog)?;
            for tr in generated.transformations {
                catalog.insert(VdlObject::Transformation(tr))?;
            }
            for dv in generated.derivations {
                catalog.insert(VdlObject::Derivation(dv))?;
            }
            catalog.save(&cli.catalog)?;
            println!("{} jobs generated", splits.len());
        }
        Command::Simulate { scenario } => {
            let outcome = run_scenario_file(&scenario, cli.seed)?;
            let report = &outcome.report;
            println!(
                "submitted {} of {} jobs: {} succeeded, {} failed ({:.2}% failure), {} events produced, {:.0} s simulated",
                report.submitted,
                report.jobs,
                report.succeeded,
                report.failed,
                report.failure_fraction * 100.0,
                report.events_produced,
                report.sim_end_s
            );
            let spec = vds::scenario::load_spec(&scenario)?;
            if spec.stats_out.is_none() {
                println!("{}", serde_json::to_string_pretty(&report.stats)?);
            }
        }
    }
    Ok(())
}

fn load_or_new_catalog(path: &Path) -> Result<VirtualDataCatalog> {
    if path.exists() {
        Ok(VirtualDataCatalog::load(path)?)
    } else {
        Ok(VirtualDataCatalog::new())
    }
}

/// Exclusive advisory lock for mutation subcommands; `<path>.lock` exists
/// for the duration of the write.
struct Lock {
    path: PathBuf,
}

impl Lock {
    fn acquire(target: &Path) -> Result<Lock> {
        let path = PathBuf::from(format!("{}.lock", target.display()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "store `{}` is locked by another process (remove {} if stale)",
                    target.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("locking {}", target.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
