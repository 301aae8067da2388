//! Topological ordering with stage partitioning (Kahn's algorithm).
//!
//! Besides the flat order, the residual in-degree-zero frontier at each
//! step forms a *stage*: nodes in one stage have no edges among themselves,
//! so their turns may run concurrently. Ties break by ascending node id,
//! which makes the order deterministic.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::EngineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    /// All nodes, every edge (u, v) with u strictly before v.
    pub order: Vec<String>,
    /// Stage partition; concatenating stages yields `order`.
    pub stages: Vec<Vec<String>>,
}

/// Order `nodes` against directed `edges`. Fails with [`EngineError::CycleDetected`]
/// (listing one offending cycle) when the graph is not acyclic, and with
/// [`EngineError::InvalidConfig`] when an edge references an unknown node.
pub fn topological_order(
    nodes: &[String],
    edges: &[(String, String)],
) -> Result<TopoOrder, EngineError> {
    let node_set: BTreeSet<&str> = nodes.iter().map(|s| s.as_str()).collect();
    if node_set.len() != nodes.len() {
        return Err(EngineError::InvalidConfig(
            "duplicate node ids in graph".into(),
        ));
    }
    let mut in_degree: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let mut successors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen_edges: BTreeSet<(&str, &str)> = BTreeSet::new();
    for (from, to) in edges {
        for end in [from, to] {
            if !node_set.contains(end.as_str()) {
                return Err(EngineError::InvalidConfig(format!(
                    "edge ({from} -> {to}) references unknown node {end:?}"
                )));
            }
        }
        if from == to {
            return Err(EngineError::CycleDetected(vec![from.clone(), to.clone()]));
        }
        // Parallel edges collapse to one dependency.
        if seen_edges.insert((from.as_str(), to.as_str())) {
            *in_degree.get_mut(to.as_str()).expect("known node") += 1;
            successors
                .entry(from.as_str())
                .or_default()
                .push(to.as_str());
        }
    }

    let mut order = Vec::with_capacity(nodes.len());
    let mut stages = Vec::new();
    let mut remaining: BTreeSet<&str> = node_set.clone();
    while !remaining.is_empty() {
        // BTreeSet iteration gives the ascending-id tie-break for free.
        let frontier: Vec<&str> = remaining
            .iter()
            .copied()
            .filter(|n| in_degree[n] == 0)
            .collect();
        if frontier.is_empty() {
            let mut predecessors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for (&from, succs) in &successors {
                for &to in succs {
                    predecessors.entry(to).or_default().push(from);
                }
            }
            return Err(EngineError::CycleDetected(find_cycle(
                &remaining,
                &predecessors,
            )));
        }
        for &node in &frontier {
            remaining.remove(node);
            for &succ in successors.get(node).map(Vec::as_slice).unwrap_or(&[]) {
                *in_degree.get_mut(succ).expect("known node") -= 1;
            }
            order.push(node.to_string());
        }
        stages.push(frontier.into_iter().map(str::to_string).collect());
    }
    Ok(TopoOrder { order, stages })
}

/// Recover one cycle for the error message. When the frontier empties with
/// nodes remaining, every remaining node has at least one remaining
/// predecessor (its residual in-degree is nonzero), so walking predecessors
/// must revisit a node; reversing that walk yields a cycle in edge
/// direction.
fn find_cycle(remaining: &BTreeSet<&str>, predecessors: &BTreeMap<&str, Vec<&str>>) -> Vec<String> {
    let start = *remaining.iter().next().expect("non-empty remainder");
    let mut path: Vec<&str> = vec![start];
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    seen.insert(start, 0);
    let mut current = start;
    loop {
        let next = predecessors
            .get(current)
            .and_then(|preds| preds.iter().find(|p| remaining.contains(*p)))
            .copied()
            .expect("remaining nodes all have a remaining predecessor");
        if let Some(&pos) = seen.get(next) {
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|s| s.to_string()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        seen.insert(next, path.len());
        path.push(next);
        current = next;
    }
}
