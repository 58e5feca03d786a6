//! Brute-force exact optimizer for tiny instances; the ground truth the
//! acceptance suite measures against.

use thiserror::Error;

use crate::graph::{compute_bounds, topo_order, Graph, GraphError};
use crate::schedule::{
    check_feasible, eval_objective, DepMargin, ProblemSpec, Schedule, ScheduleError,
};

/// Hard size caps keeping the enumeration at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    pub max_nodes: usize,
    pub max_depth: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_nodes: 8,
            max_depth: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    Optimal { schedule: Schedule, objective: f64 },
    Infeasible,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance exceeds oracle limits: |V|={nodes} (max {max_nodes}), D={depth} (max {max_depth})")]
    TooLarge {
        nodes: usize,
        depth: u64,
        max_nodes: usize,
        max_depth: u64,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Exhaustively enumerates step assignments inside the per-node windows,
/// pruning partial assignments that already break a forward dependency.
/// Returns the minimum-objective feasible schedule, ties broken by
/// lexicographically smallest step vector; `Infeasible` when nothing passes.
pub fn enumerate_optimal(
    g: &Graph,
    spec: &ProblemSpec,
    limits: OracleLimits,
) -> Result<OracleOutcome, OracleError> {
    if g.len() > limits.max_nodes || spec.depth > limits.max_depth {
        return Err(OracleError::TooLarge {
            nodes: g.len(),
            depth: spec.depth,
            max_nodes: limits.max_nodes,
            max_depth: limits.max_depth,
        });
    }
    spec.validate(g)?;
    let n = g.len();
    if n == 0 {
        return Ok(OracleOutcome::Optimal {
            schedule: Schedule::new(vec![]),
            objective: 0.0,
        });
    }
    // ASAP/ALAP windows prune the latency-margin search; chaining allows
    // step sharing outside those windows, so fall back to the full range.
    let (lo, hi): (Vec<i64>, Vec<i64>) = match spec.dep_margin {
        DepMargin::Latency => {
            let bounds = match compute_bounds(g, spec.depth) {
                Ok(b) => b,
                Err(GraphError::InfeasibleDepth { .. }) => return Ok(OracleOutcome::Infeasible),
                Err(e) => return Err(e.into()),
            };
            (
                bounds.asap.iter().map(|&t| t as i64).collect(),
                bounds.alap.iter().map(|&t| t as i64).collect(),
            )
        }
        DepMargin::Chaining => (vec![0; n], vec![spec.depth as i64 - 1; n]),
    };
    let order = topo_order(g);
    let mut steps = vec![0i64; n];
    let mut best: Option<(Vec<i64>, f64)> = None;

    struct Search<'a> {
        g: &'a Graph,
        spec: &'a ProblemSpec,
        order: &'a [usize],
        lo: &'a [i64],
        hi: &'a [i64],
    }
    impl Search<'_> {
        fn run(
            &self,
            idx: usize,
            steps: &mut Vec<i64>,
            best: &mut Option<(Vec<i64>, f64)>,
        ) -> Result<(), OracleError> {
            if idx == self.order.len() {
                let schedule = Schedule::new(steps.clone());
                let report = check_feasible(self.g, &schedule, self.spec)?;
                if report.feasible {
                    let obj = eval_objective(self.g, &schedule, self.spec)?;
                    let better = match best {
                        None => true,
                        Some((s, b)) => obj < *b || (obj == *b && steps < s),
                    };
                    if better {
                        *best = Some((steps.clone(), obj));
                    }
                }
                return Ok(());
            }
            let v = self.order[idx];
            let dep_lo = self
                .g
                .preds(v)
                .iter()
                .map(|&u| match self.spec.dep_margin {
                    DepMargin::Latency => steps[u] + self.g.op(u).latency as i64,
                    DepMargin::Chaining => steps[u],
                })
                .max()
                .unwrap_or(i64::MIN);
            for t in self.lo[v].max(dep_lo)..=self.hi[v] {
                steps[v] = t;
                self.run(idx + 1, steps, best)?;
            }
            Ok(())
        }
    }

    Search {
        g,
        spec,
        order: &order,
        lo: &lo,
        hi: &hi,
    }
    .run(0, &mut steps, &mut best)?;

    Ok(match best {
        Some((steps, objective)) => OracleOutcome::Optimal {
            schedule: Schedule::new(steps),
            objective,
        },
        None => OracleOutcome::Infeasible,
    })
}
