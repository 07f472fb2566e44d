//! Abstract planning: recursive traversal of the catalog's derivation graph
//! into a location- and existence-independent DAG with maximal data
//! dependencies.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::catalog::{CatalogError, VirtualDataCatalog};
use crate::vdl::{BindError, Binding, LogicalFileName};

/// Edge of an abstract DAG: `consumer` reads `lfn` produced by `producer`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DagEdge {
    pub producer: String,
    pub consumer: String,
    pub lfn: LogicalFileName,
}

/// Existence-independent workflow DAG for one requested derivation.
///
/// Every input of every node is covered by exactly one edge or external
/// input, every node reaches the target, and the per-node bindings snapshot
/// the full input/output sets used to build the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractDag {
    pub target: String,
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<DagEdge>,
    pub external_inputs: BTreeSet<(LogicalFileName, String)>,
    bindings: BTreeMap<String, Binding>,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("UnknownTarget: `{0}` is neither a derivation nor a produced logical file")]
    UnknownTarget(String),
    #[error("UnknownTransformation: derivation `{derivation}` references `{transformation}`")]
    UnknownTransformation {
        derivation: String,
        transformation: String,
    },
    #[error("CycleDetected: {}", path.join(" -> "))]
    CycleDetected { path: Vec<String> },
    #[error("{source} (while binding `{derivation}`)")]
    Bind {
        derivation: String,
        source: BindError,
    },
}

impl AbstractDag {
    pub fn binding(&self, node: &str) -> Option<&Binding> {
        self.bindings.get(node)
    }

    pub fn bindings(&self) -> &BTreeMap<String, Binding> {
        &self.bindings
    }

    pub(crate) fn from_parts(
        target: String,
        nodes: BTreeSet<String>,
        edges: BTreeSet<DagEdge>,
        external_inputs: BTreeSet<(LogicalFileName, String)>,
        bindings: BTreeMap<String, Binding>,
    ) -> Self {
        AbstractDag {
            target,
            nodes,
            edges,
            external_inputs,
            bindings,
        }
    }

    /// Line-oriented export: `NODE`, `EDGE`, `EXT`, then `TARGET` lines,
    /// each kind sorted lexicographically.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            out.push_str("NODE ");
            out.push_str(node);
            out.push('\n');
        }
        for edge in &self.edges {
            out.push_str("EDGE ");
            out.push_str(&edge.producer);
            out.push(' ');
            out.push_str(&edge.consumer);
            out.push(' ');
            out.push_str(edge.lfn.as_str());
            out.push('\n');
        }
        for (lfn, consumer) in &self.external_inputs {
            out.push_str("EXT ");
            out.push_str(lfn.as_str());
            out.push(' ');
            out.push_str(consumer);
            out.push('\n');
        }
        out.push_str("TARGET ");
        out.push_str(&self.target);
        out.push('\n');
        out
    }

    /// Check the structural invariants; used by tests and debug assertions.
    pub fn validate(&self) -> Result<(), String> {
        if !self.nodes.contains(&self.target) {
            return Err(format!("target `{}` not among nodes", self.target));
        }
        for edge in &self.edges {
            if !self.nodes.contains(&edge.producer) || !self.nodes.contains(&edge.consumer) {
                return Err(format!("edge {edge:?} references a missing node"));
            }
            let producer = self
                .bindings
                .get(&edge.producer)
                .ok_or_else(|| format!("no binding for `{}`", edge.producer))?;
            let consumer = self
                .bindings
                .get(&edge.consumer)
                .ok_or_else(|| format!("no binding for `{}`", edge.consumer))?;
            if !producer.outputs.contains(&edge.lfn) || !consumer.inputs.contains(&edge.lfn) {
                return Err(format!("edge {edge:?} label not in producer outputs ∩ consumer inputs"));
            }
        }
        for node in &self.nodes {
            let binding = self
                .bindings
                .get(node)
                .ok_or_else(|| format!("no binding for `{node}`"))?;
            for input in &binding.inputs {
                let by_edge = self
                    .edges
                    .iter()
                    .filter(|e| &e.consumer == node && &e.lfn == input)
                    .count();
                let by_ext = usize::from(
                    self.external_inputs
                        .contains(&(input.clone(), node.clone())),
                );
                if by_edge + by_ext != 1 {
                    return Err(format!(
                        "input `{input}` of `{node}` covered {} times",
                        by_edge + by_ext
                    ));
                }
            }
        }
        // acyclicity and reachability fall out of topo_order + reverse walk
        if topo_order_checked(self).is_none() {
            return Err("cycle among nodes".into());
        }
        let mut reaches = BTreeSet::from([self.target.clone()]);
        loop {
            let grow: Vec<String> = self
                .edges
                .iter()
                .filter(|e| reaches.contains(&e.consumer) && !reaches.contains(&e.producer))
                .map(|e| e.producer.clone())
                .collect();
            if grow.is_empty() {
                break;
            }
            reaches.extend(grow);
        }
        if reaches.len() != self.nodes.len() {
            return Err("disconnected nodes that cannot reach the target".into());
        }
        Ok(())
    }
}

/// Plan the abstract DAG for a requested derivation name or output file.
///
/// Physical existence of replicas is deliberately not consulted: the graph
/// carries every producible dependency.
pub fn plan_abstract(
    catalog: &VirtualDataCatalog,
    request: &str,
) -> Result<AbstractDag, PlanError> {
    let target = resolve_target(catalog, request)?;

    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut external_inputs = BTreeSet::new();
    let mut bindings = BTreeMap::new();

    // Iterative depth-first traversal with an on-path set for cycle reporting.
    enum Step {
        Enter(String),
        Leave(String),
    }
    let mut stack = vec![Step::Enter(target.clone())];
    let mut on_path: Vec<String> = Vec::new();
    let mut done: BTreeSet<String> = BTreeSet::new();

    while let Some(step) = stack.pop() {
        match step {
            Step::Leave(name) => {
                on_path.pop();
                done.insert(name);
            }
            Step::Enter(name) => {
                if done.contains(&name) {
                    continue;
                }
                if let Some(at) = on_path.iter().position(|n| n == &name) {
                    let mut path: Vec<String> = on_path[at..].to_vec();
                    path.push(name);
                    return Err(PlanError::CycleDetected { path });
                }
                on_path.push(name.clone());
                stack.push(Step::Leave(name.clone()));

                let binding = binding_of(catalog, &name)?;
                nodes.insert(name.clone());
                for input in &binding.inputs {
                    match catalog.find_producer(input) {
                        Some(producer) => {
                            edges.insert(DagEdge {
                                producer: producer.name.clone(),
                                consumer: name.clone(),
                                lfn: input.clone(),
                            });
                            stack.push(Step::Enter(producer.name.clone()));
                        }
                        None => {
                            external_inputs.insert((input.clone(), name.clone()));
                        }
                    }
                }
                bindings.insert(name.clone(), binding);
            }
        }
    }

    let dag = AbstractDag::from_parts(target, nodes, edges, external_inputs, bindings);
    debug_assert_eq!(dag.validate(), Ok(()));
    Ok(dag)
}

fn resolve_target(catalog: &VirtualDataCatalog, request: &str) -> Result<String, PlanError> {
    if catalog.derivation(request).is_some() {
        return Ok(request.to_string());
    }
    if let Ok(lfn) = LogicalFileName::new(request) {
        if let Some(producer) = catalog.find_producer(&lfn) {
            return Ok(producer.name.clone());
        }
    }
    Err(PlanError::UnknownTarget(request.to_string()))
}

fn binding_of(catalog: &VirtualDataCatalog, dv_name: &str) -> Result<Binding, PlanError> {
    catalog.binding_for(dv_name).map_err(|e| match e {
        CatalogError::UnknownDerivation(name) => PlanError::UnknownTarget(name),
        CatalogError::UnknownTransformation {
            derivation,
            transformation,
        } => PlanError::UnknownTransformation {
            derivation,
            transformation,
        },
        CatalogError::Bind(source) => PlanError::Bind {
            derivation: dv_name.to_string(),
            source,
        },
        other => PlanError::UnknownTarget(other.to_string()),
    })
}

/// Deterministic topological order: producers before consumers, ties broken
/// by lexicographic node name.
pub fn topo_order(dag: &AbstractDag) -> Vec<String> {
    topo_order_checked(dag).expect("abstract DAG is acyclic by construction")
}

fn topo_order_checked(dag: &AbstractDag) -> Option<Vec<String>> {
    let mut indegree: BTreeMap<&str, usize> =
        dag.nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let mut children: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for edge in &dag.edges {
        if children
            .entry(edge.producer.as_str())
            .or_default()
            .insert(edge.consumer.as_str())
        {
            *indegree.get_mut(edge.consumer.as_str())? += 1;
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(dag.nodes.len());
    while let Some(node) = ready.iter().next().copied() {
        ready.remove(node);
        order.push(node.to_string());
        if let Some(next) = children.get(node) {
            for child in next {
                let d = indegree.get_mut(child)?;
                *d -= 1;
                if *d == 0 {
                    ready.insert(child);
                }
            }
        }
    }
    (order.len() == dag.nodes.len()).then_some(order)
}
