//! Operator scheduling for DAG workloads.
//!
//! The crate provides:
//! - [`graph`]: the workload DAG, parsing/serialization, topological order,
//!   and ASAP/ALAP depth bounds;
//! - [`schedule`]: discrete schedules and exact evaluators for every
//!   objective/constraint (resource, memory, communication, modulo variants);
//! - [`relax`]: a per-operator Gaussian relaxation with differentiable
//!   expected objectives and constraint violations, including analytic
//!   gradients;
//! - [`optimizer`]: a first-order augmented-Lagrangian loop (Adam) with
//!   rounding, periodic legalization, and anytime tracing;
//! - [`legalize`]: greedy repair passes for regular and modulo schedules;
//! - [`baselines`]: list scheduling and force-directed scheduling;
//! - [`oracle`]: exhaustive enumeration for tiny instances;
//! - [`workloads`]: synthetic layered-DAG instance generation.

pub mod baselines;
pub mod graph;
pub mod legalize;
pub mod normal;
pub mod optimizer;
pub mod oracle;
pub mod relax;
pub mod schedule;
pub mod workloads;

pub use graph::{
    add_sink, compute_bounds, parse_graph, topo_order, BackEdge, DepthBounds, Graph, GraphError,
    Operator,
};
pub use optimizer::{
    alm_update, init_params, optimize, optimize_with_init, round_schedule, AdamState,
    OptimizeError, OptimizeResult, OptimizerConfig, TracePoint,
};
pub use relax::{
    total_loss, GaussianParams, LossBreakdown, Multipliers, ParamGrad, RecMargin, RelaxConfig,
    RelaxError, ViolationTerms,
};
pub use schedule::{
    check_feasible, eval_objective, DepMargin, FeasibilityReport, Formulation, ProblemSpec,
    Schedule, ScheduleError,
};
