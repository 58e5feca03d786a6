//! Workload DAG: operators with resource/bitwidth/latency attributes,
//! forward data-dependency edges, and loop-carried back-edges.
//!
//! Node ids are dense `0..|V|` after parsing; the file format may use
//! arbitrary integer ids, which are remapped in declaration order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single operator (DAG node).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operator {
    pub id: usize,
    /// Functional-unit slots consumed while the operator executes.
    pub resource: u64,
    /// Storage units occupied by the operator's output.
    pub bitwidth: u64,
    /// Execution latency in steps, >= 1.
    pub latency: u64,
}

impl Operator {
    pub fn new(id: usize) -> Self {
        Operator {
            id,
            resource: 1,
            bitwidth: 1,
            latency: 1,
        }
    }
}

/// Loop-carried dependency: the producer's output is needed by the consumer
/// `distance` iterations later, so `s_consumer + distance*II >= s_producer + Lat(producer)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackEdge {
    pub consumer: usize,
    pub producer: usize,
    pub distance: u64,
}

/// Validated workload graph. Forward edges are acyclic; back-edges are kept
/// separately and never participate in topological structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    ops: Vec<Operator>,
    edges: Vec<(usize, usize)>,
    back_edges: Vec<BackEdge>,
    has_explicit_sink: bool,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate node id {0}")]
    DuplicateNodeId(i64),
    #[error("unknown node {node} in {context}")]
    UnknownNode { node: i64, context: String },
    #[error("self-loop forward edge on node {0}")]
    SelfLoop(i64),
    #[error("duplicate edge [{0}, {1}]")]
    DuplicateEdge(i64, i64),
    #[error("cycle in forward edges")]
    Cycle,
    #[error("node {node}: negative {field}")]
    NegativeWeight { node: i64, field: &'static str },
    #[error("node {node}: latency must be >= 1")]
    InvalidLatency { node: i64 },
    #[error("back-edge ({consumer}, {producer}): distance must be >= 1")]
    InvalidDistance { consumer: i64, producer: i64 },
    #[error("depth {depth} infeasible: critical path needs {min_depth} steps")]
    InfeasibleDepth { depth: u64, min_depth: u64 },
}

impl Graph {
    /// Builds and validates a graph from dense-id operators.
    pub fn new(
        ops: Vec<Operator>,
        edges: Vec<(usize, usize)>,
        back_edges: Vec<BackEdge>,
    ) -> Result<Self, GraphError> {
        Self::with_sink_flag(ops, edges, back_edges, false)
    }

    fn with_sink_flag(
        ops: Vec<Operator>,
        edges: Vec<(usize, usize)>,
        back_edges: Vec<BackEdge>,
        has_explicit_sink: bool,
    ) -> Result<Self, GraphError> {
        let n = ops.len();
        for (i, op) in ops.iter().enumerate() {
            if op.id != i {
                return Err(GraphError::DuplicateNodeId(op.id as i64));
            }
            if op.latency == 0 {
                return Err(GraphError::InvalidLatency { node: i as i64 });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(GraphError::UnknownNode {
                    node: u.max(v) as i64,
                    context: format!("edge [{u}, {v}]"),
                });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u as i64));
            }
            if !seen.insert((u, v)) {
                return Err(GraphError::DuplicateEdge(u as i64, v as i64));
            }
        }
        for be in &back_edges {
            if be.consumer >= n || be.producer >= n {
                return Err(GraphError::UnknownNode {
                    node: be.consumer.max(be.producer) as i64,
                    context: format!("back-edge ({}, {})", be.consumer, be.producer),
                });
            }
            if be.distance == 0 {
                return Err(GraphError::InvalidDistance {
                    consumer: be.consumer as i64,
                    producer: be.producer as i64,
                });
            }
        }
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(u, v) in &edges {
            succs[u].push(v);
            preds[v].push(u);
        }
        for adj in preds.iter_mut().chain(succs.iter_mut()) {
            adj.sort_unstable();
        }
        let g = Graph {
            ops,
            edges,
            back_edges,
            has_explicit_sink,
            preds,
            succs,
        };
        // Kahn's algorithm doubles as the cycle check.
        if g.try_topo_order().is_none() {
            return Err(GraphError::Cycle);
        }
        Ok(g)
    }

    /// Test/bench convenience: `n` default operators plus the given edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Graph::new((0..n).map(Operator::new).collect(), edges.to_vec(), vec![])
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[Operator] {
        &self.ops
    }

    pub fn op(&self, i: usize) -> &Operator {
        &self.ops[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn back_edges(&self) -> &[BackEdge] {
        &self.back_edges
    }

    pub fn preds(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    pub fn succs(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    pub fn has_explicit_sink(&self) -> bool {
        self.has_explicit_sink
    }

    /// Replaces the back-edge set (used by workload augmentation).
    pub fn with_back_edges(&self, back_edges: Vec<BackEdge>) -> Result<Self, GraphError> {
        Graph::with_sink_flag(
            self.ops.clone(),
            self.edges.clone(),
            back_edges,
            self.has_explicit_sink,
        )
    }

    fn try_topo_order(&self) -> Option<Vec<usize>> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        let n = self.len();
        let mut indeg: Vec<usize> = (0..n).map(|v| self.preds[v].len()).collect();
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
            .filter(|&v| indeg[v] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &w in &self.succs[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(Reverse(w));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Minimum feasible depth: the latency-weighted critical path length.
    pub fn critical_path(&self) -> u64 {
        let order = topo_order(self);
        let mut finish = vec![0u64; self.len()];
        let mut best = 0;
        for &v in &order {
            let start = self.preds[v].iter().map(|&u| finish[u]).max().unwrap_or(0);
            finish[v] = start + self.ops[v].latency;
            best = best.max(finish[v]);
        }
        best
    }

    /// Serializes to the graph JSON format; `parse_graph` restores the exact value.
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .ops
                .iter()
                .map(|op| NodeSpec {
                    id: op.id as i64,
                    r: Some(op.resource as i64),
                    b: Some(op.bitwidth as i64),
                    lat: Some(op.latency as i64),
                })
                .collect(),
            edges: self.edges.iter().map(|&(u, v)| (u as i64, v as i64)).collect(),
            back_edges: self
                .back_edges
                .iter()
                .map(|be| BackEdgeSpec {
                    consumer: be.consumer as i64,
                    producer: be.producer as i64,
                    distance: be.distance as i64,
                })
                .collect(),
            has_explicit_sink: self.has_explicit_sink,
        };
        serde_json::to_string(&file).expect("graph serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct NodeSpec {
    id: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<i64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeSpec>,
    #[serde(default)]
    edges: Vec<(i64, i64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    back_edges: Vec<BackEdgeSpec>,
    #[serde(default, skip_serializing_if = "is_false")]
    has_explicit_sink: bool,
}

#[derive(Serialize, Deserialize)]
struct BackEdgeSpec {
    consumer: i64,
    producer: i64,
    distance: i64,
}

/// Parses and validates a graph JSON document. File ids may be arbitrary
/// integers; they are remapped to dense `0..|V|` preserving declaration order.
/// Omitted node fields default to r=1, b=1, lat=1.
pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let file: GraphFile = serde_json::from_str(text)?;
    let mut id_map = std::collections::HashMap::new();
    let mut ops = Vec::with_capacity(file.nodes.len());
    for (idx, node) in file.nodes.iter().enumerate() {
        if id_map.insert(node.id, idx).is_some() {
            return Err(GraphError::DuplicateNodeId(node.id));
        }
        let r = node.r.unwrap_or(1);
        let b = node.b.unwrap_or(1);
        let lat = node.lat.unwrap_or(1);
        if r < 0 {
            return Err(GraphError::NegativeWeight {
                node: node.id,
                field: "r",
            });
        }
        if b < 0 {
            return Err(GraphError::NegativeWeight {
                node: node.id,
                field: "b",
            });
        }
        if lat < 1 {
            return Err(GraphError::InvalidLatency { node: node.id });
        }
        ops.push(Operator {
            id: idx,
            resource: r as u64,
            bitwidth: b as u64,
            latency: lat as u64,
        });
    }
    let lookup = |raw: i64, context: &dyn Fn() -> String| {
        id_map.get(&raw).copied().ok_or_else(|| GraphError::UnknownNode {
            node: raw,
            context: context(),
        })
    };
    let mut edges = Vec::with_capacity(file.edges.len());
    for &(u_raw, v_raw) in &file.edges {
        let ctx = || format!("edge [{u_raw}, {v_raw}]");
        edges.push((lookup(u_raw, &ctx)?, lookup(v_raw, &ctx)?));
    }
    let mut back_edges = Vec::with_capacity(file.back_edges.len());
    for be in &file.back_edges {
        let ctx = || format!("back-edge ({}, {})", be.consumer, be.producer);
        if be.distance < 1 {
            return Err(GraphError::InvalidDistance {
                consumer: be.consumer,
                producer: be.producer,
            });
        }
        back_edges.push(BackEdge {
            consumer: lookup(be.consumer, &ctx)?,
            producer: lookup(be.producer, &ctx)?,
            distance: be.distance as u64,
        });
    }
    Graph::with_sink_flag(ops, edges, back_edges, file.has_explicit_sink)
}

/// Appends an explicit sink (r=0, b=0, lat=1) fed by every node with
/// out-degree 0, so leaf outputs are carried toward the end of the schedule.
/// No-op on an already-augmented graph.
pub fn add_sink(g: &Graph) -> Graph {
    if g.has_explicit_sink {
        return g.clone();
    }
    let n = g.len();
    let mut ops = g.ops.clone();
    ops.push(Operator {
        id: n,
        resource: 0,
        bitwidth: 0,
        latency: 1,
    });
    let mut edges = g.edges.clone();
    for v in 0..n {
        if g.succs[v].is_empty() {
            edges.push((v, n));
        }
    }
    Graph::with_sink_flag(ops, edges, g.back_edges.clone(), true)
        .expect("sink augmentation preserves validity")
}

/// Deterministic topological order: producers before consumers, ties broken
/// by ascending id.
pub fn topo_order(g: &Graph) -> Vec<usize> {
    g.try_topo_order()
        .expect("forward edges are acyclic by construction")
}

/// Earliest (ASAP) and latest (ALAP) start steps per operator for a depth
/// bound `D`, ignoring back-edges. Steps are 0-indexed; D-1 is the last
/// usable index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthBounds {
    pub asap: Vec<u64>,
    pub alap: Vec<u64>,
}

impl DepthBounds {
    pub fn slack(&self, i: usize) -> u64 {
        self.alap[i] - self.asap[i]
    }
}

/// Computes ASAP/ALAP bounds. Errors when the critical path exceeds `depth`,
/// carrying the minimum feasible depth.
pub fn compute_bounds(g: &Graph, depth: u64) -> Result<DepthBounds, GraphError> {
    let order = topo_order(g);
    let n = g.len();
    let mut asap = vec![0u64; n];
    for &v in &order {
        asap[v] = g
            .preds(v)
            .iter()
            .map(|&u| asap[u] + g.op(u).latency)
            .max()
            .unwrap_or(0);
    }
    // tail[v]: longest latency-weighted path from v's start to the last finish
    let mut tail = vec![0u64; n];
    for &v in order.iter().rev() {
        let succ_tail = g.succs(v).iter().map(|&w| tail[w]).max().unwrap_or(0);
        tail[v] = g.op(v).latency + succ_tail;
    }
    let min_depth = (0..n).map(|v| asap[v] + tail[v]).max().unwrap_or(0);
    if min_depth > depth {
        return Err(GraphError::InfeasibleDepth { depth, min_depth });
    }
    let alap = (0..n).map(|v| depth - tail[v]).collect();
    Ok(DepthBounds { asap, alap })
}
