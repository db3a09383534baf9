//! Attribution circuit graphs: input, feature and output nodes joined by
//! directed edges carrying `activation * influence` weights.
//!
//! Graphs arrive pre-traced. This module checks them, summarizes them, and
//! restricts them to a set of selected token positions anchored at the
//! rightmost selected position.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Input,
    Feature,
    Output,
}

impl NodeKind {
    pub fn index(self) -> usize {
        match self {
            NodeKind::Input => 0,
            NodeKind::Feature => 1,
            NodeKind::Output => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitNode {
    pub id: u64,
    pub kind: NodeKind,
    /// Inputs sit at layer -1 and outputs one past the deepest feature layer.
    pub layer: i64,
    pub position: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_index: Option<i64>,
    pub activation: f64,
}

impl CircuitNode {
    fn order_key(&self) -> (i64, i64) {
        (self.layer, self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitEdge {
    pub src: u64,
    pub dst: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionGraph {
    pub nodes: Vec<CircuitNode>,
    pub edges: Vec<CircuitEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_position: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub inputs: usize,
    pub features: usize,
    pub outputs: usize,
    pub edges: usize,
    pub total_abs_weight: f64,
    pub max_layer: i64,
}

impl GraphStats {
    pub fn nodes(&self) -> usize {
        self.inputs + self.features + self.outputs
    }
}

/// Attribution weight of an edge: source activation times its linear
/// influence on the target.
pub fn edge_weight(activation: f64, influence: f64) -> f64 {
    activation * influence
}

impl AttributionGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Map from node id to its index in `nodes`.
    pub fn index_of(&self) -> HashMap<u64, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Distinct token positions carrying input or feature nodes.
    pub fn source_positions(&self) -> BTreeSet<i64> {
        self.nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Output)
            .map(|n| n.position)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let report = validate_graph(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(report))
        }
    }
}

/// Check every structural invariant and return the full list of
/// violations. An empty list means the graph is valid.
pub fn validate_graph(g: &AttributionGraph) -> Vec<String> {
    let mut report = Vec::new();
    let mut by_id: HashMap<u64, &CircuitNode> = HashMap::with_capacity(g.nodes.len());

    for node in &g.nodes {
        if by_id.insert(node.id, node).is_some() {
            report.push(format!("duplicate node id {}", node.id));
        }
        if !node.activation.is_finite() {
            report.push(format!("node {} has non-finite activation", node.id));
        }
        if node.position < 0 {
            report.push(format!("node {} has negative position", node.id));
        }
        match node.kind {
            NodeKind::Feature => {
                if node.feature_index.is_none() {
                    report.push(format!("feature node {} missing feature_index", node.id));
                }
                if !(node.activation > 0.0) {
                    report.push(format!("inactive feature node {}", node.id));
                }
            }
            NodeKind::Input | NodeKind::Output => {
                if node.feature_index.is_some() {
                    report.push(format!(
                        "{:?} node {} must not carry feature_index",
                        node.kind, node.id
                    ));
                }
            }
        }
    }

    for e in &g.edges {
        if e.src == e.dst {
            report.push(format!("self loop on node {}", e.src));
            continue;
        }
        if !e.weight.is_finite() {
            report.push(format!("edge {}->{} has non-finite weight", e.src, e.dst));
        }
        match (by_id.get(&e.src), by_id.get(&e.dst)) {
            (Some(s), Some(d)) => {
                if s.order_key() >= d.order_key() {
                    report.push(format!(
                        "edge {}->{} does not increase (layer, position)",
                        e.src, e.dst
                    ));
                }
            }
            _ => {
                report.push(format!("edge {}->{} has a missing endpoint", e.src, e.dst));
            }
        }
    }

    if has_cycle(g) {
        report.push("cycle detected".to_string());
    }

    if let Some(anchor) = g.anchor_position {
        if !g.nodes.iter().any(|n| n.kind == NodeKind::Output) {
            report.push(format!("anchor {anchor} set but graph has no output node"));
        }
    }
    report
}

fn has_cycle(g: &AttributionGraph) -> bool {
    let index = g.index_of();
    let n = g.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        let (Some(&s), Some(&d)) = (index.get(&e.src), index.get(&e.dst)) else {
            continue;
        };
        out[s].push(d);
        indeg[d] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = queue.pop_front() {
        seen += 1;
        for &j in &out[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                queue.push_back(j);
            }
        }
    }
    seen < n
}

/// Restrict a traced circuit to the selected token positions.
///
/// The anchor is the rightmost selected position. Input and feature nodes
/// survive when their position is selected, output nodes only at the anchor.
/// Only edges with both endpoints kept survive, with their original weights,
/// and nodes left without incident edges are dropped (anchor outputs stay).
pub fn restrict_circuit(
    g: &AttributionGraph,
    selected_positions: &BTreeSet<i64>,
) -> Result<AttributionGraph> {
    g.validate()?;
    let anchor = *selected_positions
        .iter()
        .next_back()
        .ok_or_else(|| Error::InvalidArgument("selected_positions is empty".into()))?;

    if !g
        .nodes
        .iter()
        .any(|n| n.kind == NodeKind::Output && n.position == anchor)
    {
        return Err(Error::AnchorWithoutOutput { anchor });
    }

    let keep: HashSet<u64> = g
        .nodes
        .iter()
        .filter(|n| match n.kind {
            NodeKind::Output => n.position == anchor,
            _ => selected_positions.contains(&n.position),
        })
        .map(|n| n.id)
        .collect();

    let edges: Vec<CircuitEdge> = g
        .edges
        .iter()
        .filter(|e| keep.contains(&e.src) && keep.contains(&e.dst))
        .cloned()
        .collect();

    let touched: HashSet<u64> = edges.iter().flat_map(|e| [e.src, e.dst]).collect();
    let nodes = g
        .nodes
        .iter()
        .filter(|n| keep.contains(&n.id))
        .filter(|n| n.kind == NodeKind::Output || touched.contains(&n.id))
        .cloned()
        .collect();

    Ok(AttributionGraph {
        nodes,
        edges,
        anchor_position: Some(anchor),
    })
}

pub fn graph_stats(g: &AttributionGraph) -> GraphStats {
    let mut stats = GraphStats::default();
    for n in &g.nodes {
        match n.kind {
            NodeKind::Input => stats.inputs += 1,
            NodeKind::Feature => stats.features += 1,
            NodeKind::Output => stats.outputs += 1,
        }
    }
    stats.edges = g.edges.len();
    stats.total_abs_weight = g.edges.iter().map(|e| e.weight.abs()).sum();
    stats.max_layer = g.nodes.iter().map(|n| n.layer).max().unwrap_or(0);
    stats
}
