//! Synthetic layered-DAG workload generation with optional back-edge
//! augmentation for modulo-scheduling instances. Deterministic per seed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{BackEdge, Graph, GraphError, Operator};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("not enough ancestor-descendant pairs for back-edges (need {need}, have {have})")]
    NoEligiblePairs { need: usize, have: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Generates a layered DAG: `n` nodes over `layers` nonempty layers, edges
/// only from earlier to later layers (each candidate pair kept with
/// probability `density`), plus a guaranteed edge from the previous layer
/// into every non-first-layer node, so the critical path equals `layers`.
/// Resource demands and bitwidths are drawn uniformly from {1, 2, 3}.
pub fn gen_random_dag(
    n: usize,
    layers: usize,
    density: f64,
    seed: u64,
) -> Result<Graph, WorkloadError> {
    if layers < 1 || n < layers {
        return Err(WorkloadError::InvalidParams(format!(
            "need n >= layers >= 1, got n={n}, layers={layers}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(WorkloadError::InvalidParams(format!(
            "density must be in (0, 1], got {density}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // one node per layer guaranteed, the rest spread uniformly
    let mut layer_sizes = vec![1usize; layers];
    for _ in 0..(n - layers) {
        layer_sizes[rng.gen_range(0..layers)] += 1;
    }
    // ids are layer-major
    let mut layer_of = Vec::with_capacity(n);
    for (l, &size) in layer_sizes.iter().enumerate() {
        layer_of.extend(std::iter::repeat(l).take(size));
    }
    let mut layer_start = vec![0usize; layers + 1];
    for l in 0..layers {
        layer_start[l + 1] = layer_start[l] + layer_sizes[l];
    }
    let ops: Vec<Operator> = (0..n)
        .map(|i| Operator {
            id: i,
            resource: rng.gen_range(1..=3),
            bitwidth: rng.gen_range(1..=3),
            latency: 1,
        })
        .collect();
    let mut edges = Vec::new();
    let mut has_prev_layer_pred = vec![false; n];
    for u in 0..n {
        for v in (u + 1)..n {
            if layer_of[v] > layer_of[u] && rng.gen_bool(density) {
                edges.push((u, v));
                if layer_of[v] == layer_of[u] + 1 {
                    has_prev_layer_pred[v] = true;
                }
            }
        }
    }
    // connectivity guarantee keeps the critical path at `layers`
    for v in 0..n {
        let l = layer_of[v];
        if l > 0 && !has_prev_layer_pred[v] {
            let u = rng.gen_range(layer_start[l - 1]..layer_start[l]);
            edges.push((u, v));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(Graph::new(ops, edges, vec![])?)
}

/// Adds `floor(ratio * |V|)` back-edges, each tying an ancestor (consumer)
/// to one of its forward-reachable descendants (producer) with a uniform
/// distance in [1, max_distance]. Pairs are sampled without replacement.
pub fn augment_backedges(
    g: &Graph,
    ratio: f64,
    max_distance: u64,
    seed: u64,
) -> Result<Graph, WorkloadError> {
    if !(ratio >= 0.0) {
        return Err(WorkloadError::InvalidParams(format!(
            "ratio must be >= 0, got {ratio}"
        )));
    }
    if max_distance < 1 {
        return Err(WorkloadError::InvalidParams(
            "max_distance must be >= 1".into(),
        ));
    }
    let count = (ratio * g.len() as f64).floor() as usize;
    if count == 0 {
        return Ok(g.clone());
    }
    // forward-reachable pairs in deterministic (ancestor, descendant) order
    let n = g.len();
    let mut eligible = Vec::new();
    for anc in 0..n {
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = g.succs(anc).to_vec();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend_from_slice(g.succs(v));
            }
        }
        for (desc, &reachable) in seen.iter().enumerate() {
            if reachable {
                eligible.push((anc, desc));
            }
        }
    }
    if eligible.len() < count {
        return Err(WorkloadError::NoEligiblePairs {
            need: count,
            have: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, eligible.len(), count);
    let mut back_edges = g.back_edges().to_vec();
    for idx in chosen.iter() {
        let (anc, desc) = eligible[idx];
        back_edges.push(BackEdge {
            consumer: anc,
            producer: desc,
            distance: rng.gen_range(1..=max_distance),
        });
    }
    Ok(g.with_back_edges(back_edges)?)
}
