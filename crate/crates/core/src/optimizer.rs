//! First-order augmented-Lagrangian optimization loop.
//!
//! Each iteration evaluates the relaxed loss, takes one Adam step on the
//! 2|V| parameters, and bumps the constraint multipliers by rho * violation.
//! Every `legalize_every` iterations (and once at the end) the means are
//! rounded to a discrete schedule; if that schedule is infeasible it is
//! legalized and the parameters are re-centered on the repaired schedule.
//! The best feasible discrete schedule seen so far is tracked and returned,
//! together with an anytime trace.
//!
//! Checkpoints also re-arm exploration: the log-std vector is reset to its
//! slack-proportional initialization and the means receive a seeded uniform
//! perturbation of radius `jitter` (< 0.5, so the perturbed means still
//! round back to the schedule just harvested). Without this the smooth-max
//! of the expected profile rewards ever-growing sigmas, which decouples the
//! relaxed loss from every rounding; with it the loop behaves as a
//! gradient-guided basin hopper. Runs are bit-reproducible for a fixed
//! config seed.

use std::io::{self, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{compute_bounds, Graph, GraphError};
use crate::legalize::{legalize_modulo, legalize_regular};
use crate::relax::{
    total_loss, GaussianParams, LossBreakdown, Multipliers, ParamGrad, RecMargin, RelaxConfig,
    RelaxError, ViolationTerms,
};
use crate::schedule::{
    check_feasible, eval_objective, FeasibilityReport, Formulation, ProblemSpec, Schedule,
    ScheduleError,
};

/// Loop hyperparameters. Defaults follow the uniform setting used across
/// all formulations; `legalize_every = 1` rounds and repairs after every
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub rho: f64,
    pub tau: f64,
    pub kappa: f64,
    pub lambda_init: f64,
    pub sigma_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_iters: u64,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
    pub legalize_every: u64,
    /// Seeds the checkpoint perturbations; fixed seed, identical run.
    pub seed: u64,
    /// Radius of the uniform mean perturbation applied at checkpoints.
    /// Must stay below 0.5 so perturbed means round back to their anchor.
    pub jitter: f64,
    pub rec_margin: RecMargin,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-2,
            rho: 1e-4,
            tau: 1e-2,
            kappa: 1.0 / 6.0,
            lambda_init: 1e-6,
            sigma_min: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_iters: 10_000,
            time_limit: None,
            legalize_every: 50,
            seed: 0,
            jitter: 0.49,
            rec_margin: RecMargin::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn relax_config(&self) -> RelaxConfig {
        RelaxConfig {
            tau: self.tau,
            sigma_min: self.sigma_min,
            rec_margin: self.rec_margin,
        }
    }
}

/// Adam moment estimates for the 2|V| parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_mu: Vec<f64>,
    v_mu: Vec<f64>,
    m_ls: Vec<f64>,
    v_ls: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m_mu: vec![0.0; n],
            v_mu: vec![0.0; n],
            m_ls: vec![0.0; n],
            v_ls: vec![0.0; n],
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m_mu.iter_mut().for_each(|x| *x = 0.0);
        self.v_mu.iter_mut().for_each(|x| *x = 0.0);
        self.m_ls.iter_mut().for_each(|x| *x = 0.0);
        self.v_ls.iter_mut().for_each(|x| *x = 0.0);
        self.step = 0;
    }

    pub fn len(&self) -> usize {
        self.m_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_mu.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error("non-finite gradient for {param}")]
    NonFiniteGradient { param: String },
    #[error("no feasible schedule found within limits")]
    InfeasibleUnderLimits {
        last_report: Option<FeasibilityReport>,
    },
}

/// One bias-corrected Adam update over (mu, log_sigma). Errors on a
/// non-finite gradient entry, naming the offending parameter.
pub fn adam_step(
    params: &mut GaussianParams,
    grad: &ParamGrad,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<(), OptimizeError> {
    assert_eq!(params.len(), state.len(), "adam state size mismatch");
    if let Some(param) = grad.first_non_finite() {
        return Err(OptimizeError::NonFiniteGradient { param });
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.adam_beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(state.step as i32);
    let update = |x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..x.len() {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            x[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    };
    update(params.mu_mut(), &grad.mu, &mut state.m_mu, &mut state.v_mu);
    update(
        params.log_sigma_mut(),
        &grad.log_sigma,
        &mut state.m_ls,
        &mut state.v_ls,
    );
    Ok(())
}

/// Multiplier update: lambda_i += rho * violation_i.
pub fn alm_update(mult: &mut Multipliers, violations: &ViolationTerms) {
    mult.lambda.dep += mult.rho * violations.dep;
    mult.lambda.rec += mult.rho * violations.rec;
    mult.lambda.res += mult.rho * violations.res;
}

/// Rounds the means half-up and clamps into [0, depth-1].
pub fn round_schedule(p: &GaussianParams, depth: u64) -> Schedule {
    Schedule::new(
        p.mu()
            .iter()
            .map(|&m| ((m + 0.5).floor() as i64).clamp(0, depth as i64 - 1))
            .collect(),
    )
}

/// Initializes mu at the ASAP/ALAP midpoint (or a warm-start schedule) and
/// sigma proportional to each node's slack.
pub fn init_params(
    g: &Graph,
    spec: &ProblemSpec,
    cfg: &OptimizerConfig,
    warm_start: Option<&Schedule>,
) -> Result<GaussianParams, OptimizeError> {
    let bounds = compute_bounds(g, spec.depth)?;
    let mu: Vec<f64> = match warm_start {
        Some(s) => {
            if s.len() != g.len() {
                return Err(OptimizeError::Schedule(ScheduleError::SizeMismatch {
                    got: s.len(),
                    want: g.len(),
                }));
            }
            s.steps.iter().map(|&t| t as f64).collect()
        }
        None => (0..g.len())
            .map(|i| (bounds.asap[i] + bounds.alap[i]) as f64 / 2.0)
            .collect(),
    };
    let sigma: Vec<f64> = (0..g.len())
        .map(|i| (cfg.kappa * bounds.slack(i) as f64).max(cfg.sigma_min))
        .collect();
    Ok(GaussianParams::from_mu_sigma(mu, &sigma, cfg.sigma_min))
}

/// One anytime-trace sample, recorded at every legalization checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub iter: u64,
    pub wall_ms: f64,
    pub total_loss: f64,
    pub loss_obj: f64,
    pub v_dep: f64,
    pub v_rec: f64,
    pub v_res: f64,
    /// Discrete objective of the rounded (pre-legalization) schedule.
    pub rounded_obj: f64,
    /// Whether the rounded schedule was already feasible.
    pub feasible: bool,
    /// Best feasible objective so far (inf before the first one).
    pub best_obj: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub best_schedule: Schedule,
    pub best_objective: f64,
    pub trace: Vec<TracePoint>,
    pub iterations: u64,
    pub wall_time: f64,
}

/// Writes the trace in the fixed CSV layout (floats carry 9 significant
/// digits).
pub fn write_trace_csv<W: Write>(trace: &[TracePoint], w: &mut W) -> io::Result<()> {
    writeln!(
        w,
        "iter,wall_ms,total_loss,loss_obj,v_dep,v_rec,v_res,rounded_obj,feasible,best_obj"
    )?;
    for t in trace {
        writeln!(
            w,
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{},{:.8e}",
            t.iter,
            t.wall_ms,
            t.total_loss,
            t.loss_obj,
            t.v_dep,
            t.v_rec,
            t.v_res,
            t.rounded_obj,
            t.feasible,
            t.best_obj
        )?;
    }
    Ok(())
}

/// Runs the full loop from the default midpoint initialization.
pub fn optimize(
    g: &Graph,
    spec: &ProblemSpec,
    cfg: &OptimizerConfig,
) -> Result<OptimizeResult, OptimizeError> {
    optimize_with_init(g, spec, cfg, None)
}

/// Runs the full loop; `warm_start` overrides the initial means (e.g. a
/// list-scheduling result).
pub fn optimize_with_init(
    g: &Graph,
    spec: &ProblemSpec,
    cfg: &OptimizerConfig,
    warm_start: Option<&Schedule>,
) -> Result<OptimizeResult, OptimizeError> {
    spec.validate(g).map_err(OptimizeError::Schedule)?;
    assert!(
        cfg.jitter >= 0.0 && cfg.jitter < 0.5,
        "jitter must lie in [0, 0.5)"
    );
    let start = Instant::now();
    let relax_cfg = cfg.relax_config();
    let mut params = init_params(g, spec, cfg, warm_start)?;
    // slack-proportional spread, restored at every checkpoint
    let sigma0 = params.sigmas();
    let mut jrng = ChaCha8Rng::seed_from_u64(cfg.seed);
    apply_jitter(&mut params, cfg, &mut jrng);
    let mut adam = AdamState::new(g.len());
    let mut mult = Multipliers::new(cfg.lambda_init, cfg.rho);
    let mut best: Option<(Schedule, f64)> = None;
    let mut last_report: Option<FeasibilityReport> = None;
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut prev_mu = params.mu().to_vec();

    // convergence: best unchanged and ||delta mu||_inf < 1e-4 for 200
    // consecutive iterations
    const QUIET_WINDOW: u64 = 200;
    const QUIET_DELTA: f64 = 1e-4;
    let mut quiet_iters = 0u64;

    let legalize_every = cfg.legalize_every.max(1);
    let mut iter = 0u64;
    let mut last_checkpoint_iter = u64::MAX;

    while iter < cfg.max_iters {
        if let Some(limit) = cfg.time_limit {
            if start.elapsed().as_secs_f64() >= limit {
                break;
            }
        }
        let loss = total_loss(g, &params, spec, &mult, &relax_cfg)?;
        prev_mu.copy_from_slice(params.mu());
        adam_step(&mut params, &loss.grad, &mut adam, cfg)?;
        alm_update(&mut mult, &loss.violations);
        iter += 1;

        let max_delta = params
            .mu()
            .iter()
            .zip(&prev_mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let best_before = best.as_ref().map(|b| b.1);

        let mut reinitialized = false;
        if iter % legalize_every == 0 {
            checkpoint(
                g,
                spec,
                cfg,
                &loss,
                &mut params,
                &mut adam,
                &sigma0,
                &mut jrng,
                &mut best,
                &mut last_report,
                &mut trace,
                iter,
                &start,
                &mut reinitialized,
            )?;
            last_checkpoint_iter = iter;
        }

        let best_now = best.as_ref().map(|b| b.1);
        if !reinitialized && max_delta < QUIET_DELTA && best_now == best_before {
            quiet_iters += 1;
        } else {
            quiet_iters = 0;
        }
        if quiet_iters >= QUIET_WINDOW {
            break;
        }
    }

    // final checkpoint so the loop always ends on a rounded+repaired sample
    if last_checkpoint_iter != iter || best.is_none() {
        let loss = total_loss(g, &params, spec, &mult, &relax_cfg)?;
        let mut reinitialized = false;
        checkpoint(
            g,
            spec,
            cfg,
            &loss,
            &mut params,
            &mut adam,
            &sigma0,
            &mut jrng,
            &mut best,
            &mut last_report,
            &mut trace,
            iter,
            &start,
            &mut reinitialized,
        )?;
    }

    let wall_time = start.elapsed().as_secs_f64();
    match best {
        Some((best_schedule, best_objective)) => Ok(OptimizeResult {
            best_schedule,
            best_objective,
            trace,
            iterations: iter,
            wall_time,
        }),
        None => Err(OptimizeError::InfeasibleUnderLimits { last_report }),
    }
}

fn apply_jitter(params: &mut GaussianParams, cfg: &OptimizerConfig, rng: &mut ChaCha8Rng) {
    if cfg.jitter > 0.0 {
        for m in params.mu_mut() {
            *m += rng.gen_range(-cfg.jitter..=cfg.jitter);
        }
    }
}

// Round, legalize if infeasible, evaluate discretely, update best-so-far,
// then re-arm exploration: restore the slack-proportional sigmas and jitter
// the means. When legalization ran, the means are first re-centered on the
// repaired schedule and the Adam moments dropped (they refer to a point the
// search just abandoned).
#[allow(clippy::too_many_arguments)]
fn checkpoint(
    g: &Graph,
    spec: &ProblemSpec,
    cfg: &OptimizerConfig,
    loss: &LossBreakdown,
    params: &mut GaussianParams,
    adam: &mut AdamState,
    sigma0: &[f64],
    jrng: &mut ChaCha8Rng,
    best: &mut Option<(Schedule, f64)>,
    last_report: &mut Option<FeasibilityReport>,
    trace: &mut Vec<TracePoint>,
    iter: u64,
    start: &Instant,
    reinitialized: &mut bool,
) -> Result<(), OptimizeError> {
    let rounded = round_schedule(params, spec.depth);
    let rounded_report = check_feasible(g, &rounded, spec)?;
    let rounded_obj = eval_objective(g, &rounded, spec)?;

    // candidate: a fully feasible schedule eligible for best-so-far.
    // anchor: where the means re-center when the rounding was infeasible —
    // the repair output even when it still breaks the resource cap (the
    // multiplier pressure then works from a dependency-sound point).
    let (candidate, anchor) = if rounded_report.feasible {
        *last_report = Some(rounded_report);
        (Some(rounded.clone()), None)
    } else {
        let legalized = match spec.formulation {
            Formulation::A | Formulation::B => Some(legalize_regular(g, &rounded, spec.depth)?),
            Formulation::C => {
                let ii = spec.ii.expect("validated: Formulation C carries II");
                legalize_modulo(g, &rounded, spec.depth, ii).ok()
            }
        };
        match legalized {
            Some(s) => {
                let rep = check_feasible(g, &s, spec)?;
                *last_report = Some(rep);
                (rep.feasible.then(|| s.clone()), Some(s))
            }
            None => {
                // modulo repair failed; anchor on the dependency-sound
                // repair so the recurrence pressure resumes from a schedule
                // the fixed-point pass can actually work with
                *last_report = Some(rounded_report);
                (None, Some(legalize_regular(g, &rounded, spec.depth)?))
            }
        }
    };

    let repaired = !rounded_report.feasible;
    let mu = match &anchor {
        Some(a) => a.steps.iter().map(|&t| t as f64).collect(),
        None => params.mu().to_vec(),
    };
    *params = GaussianParams::from_mu_sigma(mu, sigma0, cfg.sigma_min);
    apply_jitter(params, cfg, jrng);
    if repaired {
        adam.reset();
        *reinitialized = true;
    }

    if let Some(cand) = candidate {
        let obj = eval_objective(g, &cand, spec)?;
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            *best = Some((cand, obj));
        }
    }

    trace.push(TracePoint {
        iter,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        total_loss: loss.total,
        loss_obj: loss.objective,
        v_dep: loss.violations.dep,
        v_rec: loss.violations.rec,
        v_res: loss.violations.res,
        rounded_obj,
        feasible: rounded_report.feasible,
        best_obj: best.as_ref().map_or(f64::INFINITY, |b| b.1),
    });
    Ok(())
}
