//! Concrete planning: map an abstract DAG onto one execution site, pruning
//! work whose outputs are already replicated and decorating the remainder
//! with stage-in, stage-out, and register nodes.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::abstract_planner::{AbstractDag, DagEdge};
use crate::replica::{ReplicaCatalog, SiteId};
use crate::vdl::LogicalFileName;

/// Destination for produced files: every stage-out copies to this site
/// under `prefix`, and the matching register publishes that location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageTarget {
    pub site: SiteId,
    pub prefix: String,
}

impl StorageTarget {
    pub fn pfn_for(&self, lfn: &LogicalFileName) -> String {
        format!("{}/{}", self.prefix.trim_end_matches('/'), lfn)
    }
}

/// Planner switches. `keep`, when set, restricts stage-out/register pairs
/// to the listed files; by default every declared output is shipped.
#[derive(Debug, Clone, Default)]
pub struct PlanOptions {
    pub skip_existing_target: bool,
    pub keep: Option<BTreeSet<LogicalFileName>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConcreteNode {
    Execute {
        dv: String,
        inputs: BTreeSet<LogicalFileName>,
        outputs: BTreeSet<LogicalFileName>,
    },
    StageIn {
        lfn: LogicalFileName,
        from_site: SiteId,
        from_pfn: String,
        to_site: SiteId,
    },
    StageOut {
        lfn: LogicalFileName,
        from_site: SiteId,
        to_site: SiteId,
        to_pfn: String,
    },
    Register {
        lfn: LogicalFileName,
        site: SiteId,
        pfn: String,
    },
}

impl ConcreteNode {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ConcreteNode::Execute { .. } => "execute",
            ConcreteNode::StageIn { .. } => "stagein",
            ConcreteNode::StageOut { .. } => "stageout",
            ConcreteNode::Register { .. } => "register",
        }
    }
}

/// Site-resolved, minimal workflow DAG ready for submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcreteDag {
    pub site: SiteId,
    pub provenance: String,
    pub nodes: BTreeMap<String, ConcreteNode>,
    pub edges: BTreeSet<(String, String)>,
}

impl ConcreteDag {
    pub fn execute_count(&self) -> usize {
        self.nodes
            .values()
            .filter(|n| matches!(n, ConcreteNode::Execute { .. }))
            .count()
    }

    pub fn has_execute(&self, dv: &str) -> bool {
        self.nodes
            .values()
            .any(|n| matches!(n, ConcreteNode::Execute { dv: name, .. } if name == dv))
    }
}

#[derive(Debug, Error)]
pub enum ConcreteError {
    #[error("MissingReplica: no replica anywhere for `{0}`")]
    MissingReplica(LogicalFileName),
    #[error("UnknownSite: `{0}`")]
    UnknownSite(SiteId),
    #[error("UnsatisfiableInput: `{lfn}` required by `{consumer}` has no replica after pruning")]
    UnsatisfiableInput {
        lfn: LogicalFileName,
        consumer: String,
    },
    #[error("TargetAlreadyMaterialized: every output of `{0}` already has a replica")]
    TargetAlreadyMaterialized(String),
    #[error("FormatError at line {line}: {message}")]
    Format { line: u32, message: String },
}

/// Remove nodes whose outputs are all replicated (the target stays), then
/// drop anything left without a path to the target. Inputs previously fed
/// by pruned producers become external inputs for later stage-in.
pub fn prune(dag: &AbstractDag, rls: &ReplicaCatalog) -> Result<AbstractDag, ConcreteError> {
    prune_with(dag, rls, true)
}

fn prune_with(
    dag: &AbstractDag,
    rls: &ReplicaCatalog,
    retain_target: bool,
) -> Result<AbstractDag, ConcreteError> {
    let materialized: BTreeSet<&String> = dag
        .nodes
        .iter()
        .filter(|n| {
            if retain_target && **n == dag.target {
                return false;
            }
            let binding = dag.binding(n).expect("binding for every node");
            !binding.outputs.is_empty() && binding.outputs.iter().all(|f| rls.has_replica(f))
        })
        .collect();

    let survivors: BTreeSet<String> = dag
        .nodes
        .iter()
        .filter(|n| !materialized.contains(n))
        .cloned()
        .collect();

    // Reachability to the target across surviving edges.
    let surviving_edges: Vec<&DagEdge> = dag
        .edges
        .iter()
        .filter(|e| survivors.contains(&e.producer) && survivors.contains(&e.consumer))
        .collect();
    let mut kept: BTreeSet<String> = BTreeSet::new();
    if survivors.contains(&dag.target) {
        kept.insert(dag.target.clone());
        loop {
            let grow: Vec<String> = surviving_edges
                .iter()
                .filter(|e| kept.contains(&e.consumer) && !kept.contains(&e.producer))
                .map(|e| e.producer.clone())
                .collect();
            if grow.is_empty() {
                break;
            }
            kept.extend(grow);
        }
    }
    if kept.is_empty() {
        return Err(ConcreteError::TargetAlreadyMaterialized(dag.target.clone()));
    }

    let edges: BTreeSet<DagEdge> = surviving_edges
        .into_iter()
        .filter(|e| kept.contains(&e.producer) && kept.contains(&e.consumer))
        .cloned()
        .collect();

    let mut external_inputs: BTreeSet<(LogicalFileName, String)> = dag
        .external_inputs
        .iter()
        .filter(|(_, consumer)| kept.contains(consumer))
        .cloned()
        .collect();
    for edge in &dag.edges {
        if kept.contains(&edge.consumer) && materialized.contains(&edge.producer) {
            if !rls.has_replica(&edge.lfn) {
                return Err(ConcreteError::UnsatisfiableInput {
                    lfn: edge.lfn.clone(),
                    consumer: edge.consumer.clone(),
                });
            }
            external_inputs.insert((edge.lfn.clone(), edge.consumer.clone()));
        }
    }

    let bindings = dag
        .bindings()
        .iter()
        .filter(|(n, _)| kept.contains(*n))
        .map(|(n, b)| (n.clone(), b.clone()))
        .collect();

    Ok(AbstractDag::from_parts(
        dag.target.clone(),
        kept,
        edges,
        external_inputs,
        bindings,
    ))
}

/// Prune against the replica service, then decorate the survivors: one
/// execute per derivation, one stage-in per external input, and a
/// stage-out/register pair per declared output.
pub fn plan_concrete(
    dag: &AbstractDag,
    site: &SiteId,
    rls: &ReplicaCatalog,
    storage: &StorageTarget,
    known_sites: &BTreeSet<SiteId>,
    options: &PlanOptions,
) -> Result<ConcreteDag, ConcreteError> {
    if !known_sites.contains(site) {
        return Err(ConcreteError::UnknownSite(site.clone()));
    }
    if !known_sites.contains(&storage.site) {
        return Err(ConcreteError::UnknownSite(storage.site.clone()));
    }

    let pruned = prune_with(dag, rls, !options.skip_existing_target)?;

    let mut nodes: BTreeMap<String, ConcreteNode> = BTreeMap::new();
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();

    for dv in &pruned.nodes {
        let binding = pruned.binding(dv).expect("binding for every node");
        nodes.insert(
            exec_id(dv),
            ConcreteNode::Execute {
                dv: dv.clone(),
                inputs: binding.inputs.clone(),
                outputs: binding.outputs.clone(),
            },
        );
    }

    // One stage-in per distinct external file, feeding every consumer.
    let mut staged: BTreeMap<LogicalFileName, Vec<String>> = BTreeMap::new();
    for (lfn, consumer) in &pruned.external_inputs {
        staged.entry(lfn.clone()).or_default().push(consumer.clone());
    }
    for (lfn, consumers) in staged {
        let (from_site, from_pfn) = pick_replica(rls, &lfn, site, &storage.site)
            .ok_or_else(|| ConcreteError::MissingReplica(lfn.clone()))?;
        let id = stagein_id(&lfn);
        nodes.insert(
            id.clone(),
            ConcreteNode::StageIn {
                lfn,
                from_site,
                from_pfn,
                to_site: site.clone(),
            },
        );
        for consumer in consumers {
            edges.insert((id.clone(), exec_id(&consumer)));
        }
    }

    for edge in &pruned.edges {
        edges.insert((exec_id(&edge.producer), exec_id(&edge.consumer)));
    }

    for dv in &pruned.nodes {
        let binding = pruned.binding(dv).expect("binding for every node");
        for lfn in &binding.outputs {
            if let Some(keep) = &options.keep {
                if !keep.contains(lfn) {
                    continue;
                }
            }
            let pfn = storage.pfn_for(lfn);
            let out_id = stageout_id(lfn);
            let reg_id = register_id(lfn);
            nodes.insert(
                out_id.clone(),
                ConcreteNode::StageOut {
                    lfn: lfn.clone(),
                    from_site: site.clone(),
                    to_site: storage.site.clone(),
                    to_pfn: pfn.clone(),
                },
            );
            nodes.insert(
                reg_id.clone(),
                ConcreteNode::Register {
                    lfn: lfn.clone(),
                    site: storage.site.clone(),
                    pfn,
                },
            );
            edges.insert((exec_id(dv), out_id.clone()));
            edges.insert((out_id, reg_id));
        }
    }

    Ok(ConcreteDag {
        site: site.clone(),
        provenance: pruned.target,
        nodes,
        edges,
    })
}

/// Replica preference: the execution site itself, then the storage site,
/// then the lexicographically smallest (site, pfn) pair.
fn pick_replica(
    rls: &ReplicaCatalog,
    lfn: &LogicalFileName,
    site: &SiteId,
    storage: &SiteId,
) -> Option<(SiteId, String)> {
    let replicas = rls.lookup(lfn);
    for preferred in [site, storage] {
        if let Some(found) = replicas.iter().find(|(s, _)| s == preferred) {
            return Some(found.clone());
        }
    }
    replicas.into_iter().next()
}

fn exec_id(dv: &str) -> String {
    format!("exec-{dv}")
}

fn stagein_id(lfn: &LogicalFileName) -> String {
    format!("stagein-{lfn}")
}

fn stageout_id(lfn: &LogicalFileName) -> String {
    format!("stageout-{lfn}")
}

fn register_id(lfn: &LogicalFileName) -> String {
    format!("register-{lfn}")
}

/// Render the submit file: `SITE`, then `JOB` lines sorted by id, then
/// `PARENT`/`CHILD` lines sorted.
pub fn emit_dag_file(cdag: &ConcreteDag) -> String {
    let mut out = String::new();
    out.push_str("SITE ");
    out.push_str(cdag.site.as_str());
    out.push('\n');
    for (id, node) in &cdag.nodes {
        match node {
            ConcreteNode::Execute { dv, .. } => {
                out.push_str(&format!("JOB {id} EXEC {dv}\n"));
            }
            ConcreteNode::StageIn {
                lfn,
                from_site,
                from_pfn,
                to_site,
            } => {
                out.push_str(&format!(
                    "JOB {id} STAGEIN {lfn} FROM {from_site} {from_pfn} TO {to_site}\n"
                ));
            }
            ConcreteNode::StageOut {
                lfn,
                from_site,
                to_site,
                to_pfn,
            } => {
                out.push_str(&format!(
                    "JOB {id} STAGEOUT {lfn} FROM {from_site} TO {to_site} {to_pfn}\n"
                ));
            }
            ConcreteNode::Register { lfn, site, pfn } => {
                out.push_str(&format!("JOB {id} REGISTER {lfn} {site} {pfn}\n"));
            }
        }
    }
    for (parent, child) in &cdag.edges {
        out.push_str(&format!("PARENT {parent} CHILD {child}\n"));
    }
    out
}

/// Parse a submit file back into a concrete DAG.
///
/// Execute input/output sets are reconstructed structurally from adjacent
/// stage nodes; the provenance is the sink execute node.
pub fn parse_dag_file(text: &str) -> Result<ConcreteDag, ConcreteError> {
    let fail = |line: usize, message: &str| ConcreteError::Format {
        line: line as u32 + 1,
        message: message.to_string(),
    };

    let mut site: Option<SiteId> = None;
    let mut nodes: BTreeMap<String, ConcreteNode> = BTreeMap::new();
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "SITE" => {
                if tokens.len() != 2 {
                    return Err(fail(idx, "expected `SITE <siteid>`"));
                }
                site = Some(SiteId::new(tokens[1]).map_err(|e| fail(idx, &e.to_string()))?);
            }
            "JOB" => {
                if tokens.len() < 3 {
                    return Err(fail(idx, "truncated JOB line"));
                }
                let id = tokens[1].to_string();
                let node = match (tokens[2], &tokens[3..]) {
                    ("EXEC", [dv]) => ConcreteNode::Execute {
                        dv: dv.to_string(),
                        inputs: BTreeSet::new(),
                        outputs: BTreeSet::new(),
                    },
                    ("STAGEIN", [lfn, "FROM", from_site, from_pfn, "TO", to_site]) => {
                        ConcreteNode::StageIn {
                            lfn: LogicalFileName::new(*lfn)
                                .map_err(|e| fail(idx, &e.to_string()))?,
                            from_site: SiteId::new(*from_site)
                                .map_err(|e| fail(idx, &e.to_string()))?,
                            from_pfn: from_pfn.to_string(),
                            to_site: SiteId::new(*to_site)
                                .map_err(|e| fail(idx, &e.to_string()))?,
                        }
                    }
                    ("STAGEOUT", [lfn, "FROM", from_site, "TO", to_site, to_pfn]) => {
                        ConcreteNode::StageOut {
                            lfn: LogicalFileName::new(*lfn)
                                .map_err(|e| fail(idx, &e.to_string()))?,
                            from_site: SiteId::new(*from_site)
                                .map_err(|e| fail(idx, &e.to_string()))?,
                            to_site: SiteId::new(*to_site)
                                .map_err(|e| fail(idx, &e.to_string()))?,
                            to_pfn: to_pfn.to_string(),
                        }
                    }
                    ("REGISTER", [lfn, reg_site, pfn]) => ConcreteNode::Register {
                        lfn: LogicalFileName::new(*lfn).map_err(|e| fail(idx, &e.to_string()))?,
                        site: SiteId::new(*reg_site).map_err(|e| fail(idx, &e.to_string()))?,
                        pfn: pfn.to_string(),
                    },
                    _ => return Err(fail(idx, "unrecognized JOB line")),
                };
                if nodes.insert(id.clone(), node).is_some() {
                    return Err(fail(idx, &format!("duplicate job id `{id}`")));
                }
            }
            "PARENT" => {
                if tokens.len() != 4 || tokens[2] != "CHILD" {
                    return Err(fail(idx, "expected `PARENT <id> CHILD <id>`"));
                }
                edges.insert((tokens[1].to_string(), tokens[3].to_string()));
            }
            other => return Err(fail(idx, &format!("unrecognized directive `{other}`"))),
        }
    }

    let site = site.ok_or_else(|| fail(0, "missing SITE line"))?;
    for (parent, child) in &edges {
        for id in [parent, child] {
            if !nodes.contains_key(id) {
                return Err(ConcreteError::Format {
                    line: 0,
                    message: format!("edge references unknown job `{id}`"),
                });
            }
        }
    }

    // Rebuild execute I/O from adjacent stage nodes.
    let mut io: BTreeMap<String, (BTreeSet<LogicalFileName>, BTreeSet<LogicalFileName>)> =
        BTreeMap::new();
    for (parent, child) in &edges {
        if let (Some(ConcreteNode::StageIn { lfn, .. }), Some(ConcreteNode::Execute { .. })) =
            (nodes.get(parent), nodes.get(child))
        {
            io.entry(child.clone()).or_default().0.insert(lfn.clone());
        }
        if let (Some(ConcreteNode::Execute { .. }), Some(ConcreteNode::StageOut { lfn, .. })) =
            (nodes.get(parent), nodes.get(child))
        {
            io.entry(parent.clone()).or_default().1.insert(lfn.clone());
        }
    }
    for (id, (ins, outs)) in io {
        if let Some(ConcreteNode::Execute { inputs, outputs, .. }) = nodes.get_mut(&id) {
            *inputs = ins;
            *outputs = outs;
        }
    }

    // Provenance: the execute node that feeds no further execute node.
    let execs: BTreeSet<&String> = nodes
        .iter()
        .filter(|(_, n)| matches!(n, ConcreteNode::Execute { .. }))
        .map(|(id, _)| id)
        .collect();
    if execs.is_empty() {
        return Err(ConcreteError::Format {
            line: 0,
            message: "no EXEC job in file".into(),
        });
    }
    let provenance = execs
        .iter()
        .find(|id| {
            !edges.iter().any(|(p, c)| {
                &p == *id && matches!(nodes.get(c), Some(ConcreteNode::Execute { .. }))
            })
        })
        .and_then(|id| match nodes.get(*id) {
            Some(ConcreteNode::Execute { dv, .. }) => Some(dv.clone()),
            _ => None,
        })
        .expect("at least one sink execute");

    Ok(ConcreteDag {
        site,
        provenance,
        nodes,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstract_planner::plan_abstract;
    use crate::fixtures;

    fn lfn(s: &str) -> LogicalFileName {
        LogicalFileName::new(s).unwrap()
    }

    fn site(s: &str) -> SiteId {
        SiteId::new(s).unwrap()
    }

    fn storage() -> StorageTarget {
        StorageTarget {
            site: site("ufl-store"),
            prefix: "/store".into(),
        }
    }

    fn known_sites() -> BTreeSet<SiteId> {
        BTreeSet::from([site("ufl-hpc"), site("ufl-store")])
    }

    fn seeded_rls() -> ReplicaCatalog {
        let mut rls = ReplicaCatalog::new();
        for card in fixtures::CARD_FILES {
            rls.register(lfn(card), site("ufl-store"), format!("/store/{card}"));
        }
        rls
    }

    #[test]
    fn prune_on_empty_rls_is_identity() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let pruned = prune(&dag, &ReplicaCatalog::new()).unwrap();
        assert_eq!(pruned, dag);
    }

    #[test]
    fn prune_removes_materialized_producer() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let mut rls = ReplicaCatalog::new();
        rls.register(lfn(fixtures::FZ_FILE), site("ufl-store"), "/store/fz");
        rls.register(
            lfn("fortran.eg02_BigJets_1.log"),
            site("ufl-store"),
            "/store/log",
        );
        let pruned = prune(&dag, &rls).unwrap();
        assert_eq!(pruned.nodes, BTreeSet::from([fixtures::NTUPLE_DV.to_string()]));
        assert!(pruned.edges.is_empty());
        assert!(pruned
            .external_inputs
            .contains(&(lfn(fixtures::FZ_FILE), fixtures::NTUPLE_DV.to_string())));
        pruned.validate().unwrap();
    }

    #[test]
    fn prune_requires_all_outputs_replicated() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        // only the fz exists, the log does not: producer must still run
        let mut rls = ReplicaCatalog::new();
        rls.register(lfn(fixtures::FZ_FILE), site("ufl-store"), "/store/fz");
        let pruned = prune(&dag, &rls).unwrap();
        assert_eq!(pruned.nodes.len(), 2);
    }

    #[test]
    fn prune_target_is_retained_even_when_materialized() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::FORTRAN_DV).unwrap();
        let mut rls = ReplicaCatalog::new();
        rls.register(lfn(fixtures::FZ_FILE), site("ufl-store"), "/store/fz");
        rls.register(
            lfn("fortran.eg02_BigJets_1.log"),
            site("ufl-store"),
            "/store/log",
        );
        let pruned = prune(&dag, &rls).unwrap();
        assert_eq!(pruned.nodes, BTreeSet::from([fixtures::FORTRAN_DV.to_string()]));
    }

    #[test]
    fn prune_is_idempotent() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let mut rls = ReplicaCatalog::new();
        rls.register(lfn(fixtures::FZ_FILE), site("ufl-store"), "/store/fz");
        rls.register(
            lfn("fortran.eg02_BigJets_1.log"),
            site("ufl-store"),
            "/store/log",
        );
        let once = prune(&dag, &rls).unwrap();
        let twice = prune(&once, &rls).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn two_stage_plan_decorates_fully() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let cdag = plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &seeded_rls(),
            &storage(),
            &known_sites(),
            &PlanOptions::default(),
        )
        .unwrap();

        assert_eq!(cdag.execute_count(), 2);
        let stageins = cdag
            .nodes
            .values()
            .filter(|n| matches!(n, ConcreteNode::StageIn { .. }))
            .count();
        let stageouts = cdag
            .nodes
            .values()
            .filter(|n| matches!(n, ConcreteNode::StageOut { .. }))
            .count();
        let registers = cdag
            .nodes
            .values()
            .filter(|n| matches!(n, ConcreteNode::Register { .. }))
            .count();
        assert_eq!(stageins, 3);
        assert_eq!(stageouts, 3);
        assert_eq!(registers, 3);
        // the fz flows directly between the executes at the same site
        assert!(cdag.edges.contains(&(
            format!("exec-{}", fixtures::FORTRAN_DV),
            format!("exec-{}", fixtures::NTUPLE_DV)
        )));
    }

    #[test]
    fn missing_replica_is_an_error() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let mut rls = seeded_rls();
        let geom = lfn("cms125.rz");
        rls.unregister(&geom, &site("ufl-store"));
        let err = plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &rls,
            &storage(),
            &known_sites(),
            &PlanOptions::default(),
        )
        .unwrap_err();
        match err {
            ConcreteError::MissingReplica(missing) => assert_eq!(missing, geom),
            other => panic!("expected MissingReplica, got {other:?}"),
        }
    }

    #[test]
    fn unknown_site_is_an_error() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let err = plan_concrete(
            &dag,
            &site("nowhere"),
            &seeded_rls(),
            &storage(),
            &known_sites(),
            &PlanOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ConcreteError::UnknownSite(_)));
    }

    #[test]
    fn stagein_prefers_execution_site_replica() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::FORTRAN_DV).unwrap();
        let mut rls = seeded_rls();
        rls.register(lfn("cms125.rz"), site("ufl-hpc"), "/local/cms125.rz");
        let cdag = plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &rls,
            &storage(),
            &known_sites(),
            &PlanOptions::default(),
        )
        .unwrap();
        match cdag.nodes.get("stagein-cms125.rz").unwrap() {
            ConcreteNode::StageIn { from_site, from_pfn, .. } => {
                assert_eq!(from_site, &site("ufl-hpc"));
                assert_eq!(from_pfn, "/local/cms125.rz");
            }
            other => panic!("unexpected node {other:?}"),
        }
    }

    #[test]
    fn skip_existing_target_rejects_materialized_plan() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::FORTRAN_DV).unwrap();
        let mut rls = seeded_rls();
        rls.register(lfn(fixtures::FZ_FILE), site("ufl-store"), "/store/fz");
        rls.register(
            lfn("fortran.eg02_BigJets_1.log"),
            site("ufl-store"),
            "/store/log",
        );
        let err = plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &rls,
            &storage(),
            &known_sites(),
            &PlanOptions {
                skip_existing_target: true,
                keep: None,
            },
        )
        .unwrap_err();
        assert!(matches!(err, ConcreteError::TargetAlreadyMaterialized(_)));
    }

    #[test]
    fn keep_set_limits_stageouts() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let cdag = plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &seeded_rls(),
            &storage(),
            &known_sites(),
            &PlanOptions {
                skip_existing_target: false,
                keep: Some(BTreeSet::from([lfn(fixtures::NTUPLE_FILE)])),
            },
        )
        .unwrap();
        let stageouts = cdag
            .nodes
            .values()
            .filter(|n| matches!(n, ConcreteNode::StageOut { .. }))
            .count();
        assert_eq!(stageouts, 1);
    }

    #[test]
    fn submit_file_round_trips_textually() {
        let catalog = fixtures::two_stage_catalog();
        let dag = plan_abstract(&catalog, fixtures::NTUPLE_DV).unwrap();
        let cdag = plan_concrete(
            &dag,
            &site("ufl-hpc"),
            &seeded_rls(),
            &storage(),
            &known_sites(),
            &PlanOptions::default(),
        )
        .unwrap();
        let text = emit_dag_file(&cdag);
        let parsed = parse_dag_file(&text).unwrap();
        assert_eq!(emit_dag_file(&parsed), text);
        assert_eq!(parsed.site, cdag.site);
        assert_eq!(parsed.provenance, cdag.provenance);
        assert_eq!(parsed.edges, cdag.edges);

        let parent_line = format!(
            "PARENT exec-{} CHILD exec-{}",
            fixtures::FORTRAN_DV,
            fixtures::NTUPLE_DV
        );
        assert_eq!(text.lines().filter(|l| **l == parent_line).count(), 1);
    }

    #[test]
    fn submit_file_requires_site_and_exec() {
        assert!(matches!(
            parse_dag_file("JOB exec-a EXEC a\n"),
            Err(ConcreteError::Format { .. })
        ));
        assert!(matches!(
            parse_dag_file("SITE x\n"),
            Err(ConcreteError::Format { .. })
        ));
    }
}
