//! Gaussian stochastic relaxation of the discrete scheduling problem.
//!
//! Each operator's step is modeled as an independent Gaussian
//! `X_i ~ N(mu_i, sigma_i^2)`; rounding `X_i` to the nearest in-range step
//! induces per-step probabilities `P_i^d` (differences of normal CDFs, with
//! the tails absorbed into the first and last step). Every objective and
//! constraint violation is expressed as an expectation under these
//! distributions, differentiable in `(mu, log_sigma)`.
//!
//! The triple sums that define the dependency, communication, and
//! recurrence expectations are reduced to `O(D)` per edge via CDF prefix
//! sums and first-moment suffix sums; equivalence to the literal nested
//! sums is a tested invariant. Gradients are assembled analytically (the
//! CDF derivative is the normal PDF) and checked against central finite
//! differences.

use thiserror::Error;

use crate::graph::Graph;
use crate::normal::{norm_cdf, norm_pdf};
use crate::schedule::{DepMargin, Formulation, ProblemSpec};

/// Floor for the raw log-std variable; softplus of this is ~9e-14, so a
/// target sigma of exactly sigma_min is representable to roundoff.
pub const LOG_SIGMA_FLOOR: f64 = -30.0;

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus on y > 0.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The 2|V| trainable scalars: a mean and an unconstrained log-std per
/// operator. The effective standard deviation is
/// `sigma_i = sigma_min + softplus(log_sigma_i) > sigma_min > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mu: Vec<f64>,
    log_sigma: Vec<f64>,
    sigma_min: f64,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>, sigma_min: f64) -> Self {
        assert_eq!(mu.len(), log_sigma.len());
        assert!(sigma_min > 0.0);
        GaussianParams {
            mu,
            log_sigma,
            sigma_min,
        }
    }

    /// Builds params hitting the given target sigmas (each >= sigma_min).
    pub fn from_mu_sigma(mu: Vec<f64>, sigma: &[f64], sigma_min: f64) -> Self {
        let log_sigma = sigma
            .iter()
            .map(|&s| {
                let excess = s - sigma_min;
                if excess <= 0.0 {
                    LOG_SIGMA_FLOOR
                } else {
                    softplus_inv(excess).max(LOG_SIGMA_FLOOR)
                }
            })
            .collect();
        GaussianParams::new(mu, log_sigma, sigma_min)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Number of trainable scalars: 2|V|.
    pub fn num_trainable(&self) -> usize {
        self.mu.len() + self.log_sigma.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_sigma(&self) -> &[f64] {
        &self.log_sigma
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn log_sigma_mut(&mut self) -> &mut [f64] {
        &mut self.log_sigma
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigma_min + softplus(self.log_sigma[i])
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.sigma(i)).collect()
    }
}

/// Named expected-violation values (or their multipliers).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ViolationTerms {
    pub dep: f64,
    pub rec: f64,
    pub res: f64,
}

/// Augmented-Lagrangian state: one multiplier per named constraint plus the
/// global penalty weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipliers {
    pub lambda: ViolationTerms,
    pub rho: f64,
}

impl Multipliers {
    pub fn new(lambda_init: f64, rho: f64) -> Self {
        Multipliers {
            lambda: ViolationTerms {
                dep: lambda_init,
                rec: lambda_init,
                res: lambda_init,
            },
            rho,
        }
    }
}

/// Which bound the expected recurrence violation integrates. `Strict`
/// counts every assignment that breaks the discrete recurrence constraint;
/// `Appendix` shifts the producer bound one step later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecMargin {
    #[default]
    Strict,
    Appendix,
}

/// Relaxation knobs: smooth-max temperature and the sigma floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxConfig {
    pub tau: f64,
    pub sigma_min: f64,
    pub rec_margin: RecMargin,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig {
            tau: 1e-2,
            sigma_min: 0.05,
            rec_margin: RecMargin::default(),
        }
    }
}

/// Gradient with respect to the 2|V| trainable scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(n: usize) -> Self {
        ParamGrad {
            mu: vec![0.0; n],
            log_sigma: vec![0.0; n],
        }
    }

    /// Name of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, &v) in self.mu.iter().enumerate() {
            if !v.is_finite() {
                return Some(format!("mu[{i}]"));
            }
        }
        for (i, &v) in self.log_sigma.iter().enumerate() {
            if !v.is_finite() {
                return Some(format!("log_sigma[{i}]"));
            }
        }
        None
    }
}

/// Value of the augmented-Lagrangian loss with all the pieces broken out.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Expected objective for the spec's formulation.
    pub objective: f64,
    pub violations: ViolationTerms,
    /// objective + sum_i (lambda_i * V_i + rho/2 * V_i^2).
    pub total: f64,
    pub grad: ParamGrad,
}

/// One loss term in isolation, for gradient verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Objective,
    Dep,
    Rec,
    Res,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermEval {
    pub value: f64,
    pub grad: ParamGrad,
}

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("node {node} stores output (b={bitwidth}) but has no successor; run add_sink first")]
    MissingSink { node: usize, bitwidth: u64 },
    #[error("invalid problem spec: {0}")]
    Spec(String),
}

/// Probability that operator `i` rounds to step `d` under the boundary rule
/// (the lower tail is absorbed into step 0 and the upper tail into step D-1).
pub fn step_prob(p: &GaussianParams, i: usize, d: u64, depth: u64) -> f64 {
    debug_assert!(d < depth);
    let mu = p.mu[i];
    let sig = p.sigma(i);
    let upper = if d + 1 == depth {
        1.0
    } else {
        norm_cdf((d as f64 + 0.5 - mu) / sig)
    };
    let lower = if d == 0 {
        0.0
    } else {
        norm_cdf((d as f64 - 0.5 - mu) / sig)
    };
    upper - lower
}

/// Prefix sum of `step_prob` up to and including `d`; 0 at d = -1 and 1 at
/// d >= D-1.
pub fn step_cdf(p: &GaussianParams, i: usize, d: i64, depth: u64) -> f64 {
    if d < 0 {
        0.0
    } else if d >= depth as i64 - 1 {
        1.0
    } else {
        norm_cdf((d as f64 + 0.5 - p.mu[i]) / p.sigma(i))
    }
}

// Per-node step distribution with partial derivatives, precomputed once per
// loss evaluation. `c[d]` is the prefix CDF (c[D-1] = 1 exactly), `p[d]` the
// bucket probability; derivatives are with respect to (mu_i, sigma_i).
struct NodeDist {
    p: Vec<f64>,
    c: Vec<f64>,
    dp_mu: Vec<f64>,
    dp_sigma: Vec<f64>,
    dc_mu: Vec<f64>,
    dc_sigma: Vec<f64>,
}

struct Dists {
    depth: usize,
    nodes: Vec<NodeDist>,
}

impl Dists {
    fn build(g: &Graph, params: &GaussianParams, depth: u64) -> Self {
        assert_eq!(g.len(), params.len(), "params/graph size mismatch");
        assert!(depth >= 1);
        let dd = depth as usize;
        let nodes = (0..g.len())
            .map(|i| {
                let mu = params.mu[i];
                let sig = params.sigma(i);
                let mut c = vec![0.0; dd];
                let mut dc_mu = vec![0.0; dd];
                let mut dc_sigma = vec![0.0; dd];
                for d in 0..dd - 1 {
                    let z = (d as f64 + 0.5 - mu) / sig;
                    let pdf = norm_pdf(z);
                    c[d] = norm_cdf(z);
                    dc_mu[d] = -pdf / sig;
                    dc_sigma[d] = -z * pdf / sig;
                }
                c[dd - 1] = 1.0;
                let mut p = vec![0.0; dd];
                let mut dp_mu = vec![0.0; dd];
                let mut dp_sigma = vec![0.0; dd];
                for d in 0..dd {
                    let (c_prev, dmu_prev, dsig_prev) = if d == 0 {
                        (0.0, 0.0, 0.0)
                    } else {
                        (c[d - 1], dc_mu[d - 1], dc_sigma[d - 1])
                    };
                    p[d] = c[d] - c_prev;
                    dp_mu[d] = dc_mu[d] - dmu_prev;
                    dp_sigma[d] = dc_sigma[d] - dsig_prev;
                }
                NodeDist {
                    p,
                    c,
                    dp_mu,
                    dp_sigma,
                    dc_mu,
                    dc_sigma,
                }
            })
            .collect();
        Dists { depth: dd, nodes }
    }

    // CDF and its derivatives at an arbitrary (possibly out-of-range) index.
    fn cdf_at(&self, node: usize, idx: i64) -> (f64, f64, f64) {
        if idx < 0 {
            (0.0, 0.0, 0.0)
        } else if idx >= self.depth as i64 - 1 {
            (1.0, 0.0, 0.0)
        } else {
            let n = &self.nodes[node];
            let d = idx as usize;
            (n.c[d], n.dc_mu[d], n.dc_sigma[d])
        }
    }
}

// Gradient accumulator in (mu, sigma) space; converted to (mu, log_sigma)
// once at the end via the softplus chain rule.
struct GradAccum {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl GradAccum {
    fn zeros(n: usize) -> Self {
        GradAccum {
            mu: vec![0.0; n],
            sigma: vec![0.0; n],
        }
    }

    fn scaled_add(&mut self, other: &GradAccum, w: f64) {
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += w * b;
        }
        for (a, b) in self.sigma.iter_mut().zip(&other.sigma) {
            *a += w * b;
        }
    }

    fn into_param_grad(self, params: &GaussianParams) -> ParamGrad {
        let log_sigma = self
            .sigma
            .iter()
            .zip(params.log_sigma.iter())
            .map(|(&ds, &ls)| ds * sigmoid(ls))
            .collect();
        ParamGrad {
            mu: self.mu,
            log_sigma,
        }
    }
}

// Expected count of dependency-violated edges:
// sum over edges (i,j) of sum_{d_i} P_i[d_i] * C_j[d_i - 1 + offset],
// offset 0 for chaining (the literal triple sum) and Lat(i) for latency.
fn dep_term(g: &Graph, dists: &Dists, margin: DepMargin, acc: &mut GradAccum) -> f64 {
    let mut total = 0.0;
    for &(i, j) in g.edges() {
        let off: i64 = match margin {
            DepMargin::Chaining => 0,
            DepMargin::Latency => g.op(i).latency as i64,
        };
        let ni = &dists.nodes[i];
        for di in 0..dists.depth {
            let (cj, dcj_mu, dcj_sigma) = dists.cdf_at(j, di as i64 - 1 + off);
            total += ni.p[di] * cj;
            acc.mu[i] += ni.dp_mu[di] * cj;
            acc.sigma[i] += ni.dp_sigma[di] * cj;
            acc.mu[j] += ni.p[di] * dcj_mu;
            acc.sigma[j] += ni.p[di] * dcj_sigma;
        }
    }
    total
}

// Expected total edge length, counting ordered pairs d_j >= d_i.
// O(D) per edge: a suffix pass over the consumer's moments gives the value
// and producer gradients, a prefix pass over the producer's moments gives
// the consumer gradients.
fn comm_term(g: &Graph, dists: &Dists, acc: &mut GradAccum) -> f64 {
    let mut total = 0.0;
    let dd = dists.depth;
    for &(i, j) in g.edges() {
        let ni = &dists.nodes[i];
        let nj = &dists.nodes[j];
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        for d in (0..dd).rev() {
            let df = d as f64;
            s0 += nj.p[d];
            s1 += df * nj.p[d];
            let w = s1 - df * s0;
            total += ni.p[d] * w;
            acc.mu[i] += ni.dp_mu[d] * w;
            acc.sigma[i] += ni.dp_sigma[d] * w;
        }
        let mut q0 = 0.0;
        let mut q1 = 0.0;
        for d in 0..dd {
            let df = d as f64;
            q0 += ni.p[d];
            q1 += df * ni.p[d];
            let w = df * q0 - q1;
            acc.mu[j] += nj.dp_mu[d] * w;
            acc.sigma[j] += nj.dp_sigma[d] * w;
        }
    }
    total
}

// Expected recurrence violation over back-edges (consumer i, producer j, k):
// sum_{d_i} P_i[d_i] * P(X_j rounds past the deadline d_i + k*II).
fn rec_term(g: &Graph, dists: &Dists, ii: u64, margin: RecMargin, acc: &mut GradAccum) -> f64 {
    let mut total = 0.0;
    for be in g.back_edges() {
        let (i, j) = (be.consumer, be.producer);
        let off: i64 = match margin {
            RecMargin::Strict => -(g.op(j).latency as i64),
            RecMargin::Appendix => 0,
        };
        let ni = &dists.nodes[i];
        for di in 0..dists.depth {
            let idx = di as i64 + (be.distance * ii) as i64 + off;
            let (cj, dcj_mu, dcj_sigma) = dists.cdf_at(j, idx);
            let w = 1.0 - cj;
            total += ni.p[di] * w;
            acc.mu[i] += ni.dp_mu[di] * w;
            acc.sigma[i] += ni.dp_sigma[di] * w;
            acc.mu[j] -= ni.p[di] * dcj_mu;
            acc.sigma[j] -= ni.p[di] * dcj_sigma;
        }
    }
    total
}

fn resource_profile(g: &Graph, dists: &Dists) -> Vec<f64> {
    let mut profile = vec![0.0; dists.depth];
    for i in 0..g.len() {
        let r = g.op(i).resource as f64;
        if r == 0.0 {
            continue;
        }
        for (d, slot) in profile.iter_mut().enumerate() {
            *slot += r * dists.nodes[i].p[d];
        }
    }
    profile
}

// Accumulates sum_d weights[d] * d(profile[d])/d(theta_i) for every node.
fn resource_profile_grad(g: &Graph, dists: &Dists, weights: &[f64], acc: &mut GradAccum) {
    for i in 0..g.len() {
        let r = g.op(i).resource as f64;
        if r == 0.0 {
            continue;
        }
        let ni = &dists.nodes[i];
        for (d, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                acc.mu[i] += w * r * ni.dp_mu[d];
                acc.sigma[i] += w * r * ni.dp_sigma[d];
            }
        }
    }
}

fn require_sink(g: &Graph) -> Result<(), RelaxError> {
    for i in 0..g.len() {
        let b = g.op(i).bitwidth;
        if b > 0 && g.succs(i).is_empty() {
            return Err(RelaxError::MissingSink {
                node: i,
                bitwidth: b,
            });
        }
    }
    Ok(())
}

// Expected memory profile:
// M(d) = sum_i b_i * C_i[d] * (1 - prod_{j in succ(i)} C_j[d]).
fn memory_profile(g: &Graph, dists: &Dists) -> Result<Vec<f64>, RelaxError> {
    require_sink(g)?;
    let mut profile = vec![0.0; dists.depth];
    for i in 0..g.len() {
        let b = g.op(i).bitwidth as f64;
        if b == 0.0 {
            continue;
        }
        let ni = &dists.nodes[i];
        for (d, slot) in profile.iter_mut().enumerate() {
            let mut prod = 1.0;
            for &j in g.succs(i) {
                prod *= dists.nodes[j].c[d];
            }
            *slot += b * ni.c[d] * (1.0 - prod);
        }
    }
    Ok(profile)
}

fn memory_profile_grad(g: &Graph, dists: &Dists, weights: &[f64], acc: &mut GradAccum) {
    let mut pre: Vec<f64> = Vec::new();
    let mut suf: Vec<f64> = Vec::new();
    for i in 0..g.len() {
        let b = g.op(i).bitwidth as f64;
        if b == 0.0 {
            continue;
        }
        let succs = g.succs(i);
        let m = succs.len();
        let ni = &dists.nodes[i];
        for (d, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            // prefix/suffix products over successor CDFs so each
            // one-left-out product is O(1)
            pre.clear();
            pre.resize(m + 1, 1.0);
            suf.clear();
            suf.resize(m + 1, 1.0);
            for (t, &j) in succs.iter().enumerate() {
                pre[t + 1] = pre[t] * dists.nodes[j].c[d];
            }
            for (t, &j) in succs.iter().enumerate().rev() {
                suf[t] = dists.nodes[j].c[d] * suf[t + 1];
            }
            let prod = pre[m];
            let coeff = w * b;
            acc.mu[i] += coeff * (1.0 - prod) * ni.dc_mu[d];
            acc.sigma[i] += coeff * (1.0 - prod) * ni.dc_sigma[d];
            for (t, &j) in succs.iter().enumerate() {
                let excl = pre[t] * suf[t + 1];
                let nj = &dists.nodes[j];
                acc.mu[j] -= coeff * ni.c[d] * excl * nj.dc_mu[d];
                acc.sigma[j] -= coeff * ni.c[d] * excl * nj.dc_sigma[d];
            }
        }
    }
}

fn wrap_profile(linear: &[f64], ii: u64) -> Vec<f64> {
    let mut wrapped = vec![0.0; ii as usize];
    for (d, &x) in linear.iter().enumerate() {
        wrapped[d % ii as usize] += x;
    }
    wrapped
}

// Distributes weights on the wrapped profile back onto linear steps.
fn unwrap_weights(wrapped: &[f64], ii: u64, depth: usize) -> Vec<f64> {
    (0..depth).map(|d| wrapped[d % ii as usize]).collect()
}

/// LogSumExp smooth maximum, `tau * ln(sum exp(x/tau))`, computed with a
/// max shift for overflow safety.
pub fn smooth_max(profile: &[f64], tau: f64) -> f64 {
    assert!(!profile.is_empty(), "smooth_max of an empty profile");
    assert!(tau > 0.0);
    let m = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = profile.iter().map(|&x| ((x - m) / tau).exp()).sum();
    m + tau * sum.ln()
}

fn smooth_max_weights(profile: &[f64], tau: f64) -> Vec<f64> {
    let m = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = profile.iter().map(|&x| ((x - m) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Total amount by which the profile exceeds the cap, summed over steps.
pub fn excess_violation(profile: &[f64], cap: f64) -> f64 {
    profile.iter().map(|&x| (x - cap).max(0.0)).sum()
}

fn excess_weights(profile: &[f64], cap: f64) -> Vec<f64> {
    profile
        .iter()
        .map(|&x| if x > cap { 1.0 } else { 0.0 })
        .collect()
}

/// Expected number of dependency violations across all edges.
pub fn expected_dep_violation(g: &Graph, p: &GaussianParams, depth: u64, margin: DepMargin) -> f64 {
    let dists = Dists::build(g, p, depth);
    dep_term(g, &dists, margin, &mut GradAccum::zeros(g.len()))
}

/// Expected total edge length (communication overhead).
pub fn expected_comm(g: &Graph, p: &GaussianParams, depth: u64) -> f64 {
    let dists = Dists::build(g, p, depth);
    comm_term(g, &dists, &mut GradAccum::zeros(g.len()))
}

/// Expected per-step resource usage.
pub fn expected_resource_profile(g: &Graph, p: &GaussianParams, depth: u64) -> Vec<f64> {
    resource_profile(g, &Dists::build(g, p, depth))
}

/// Expected per-step memory usage; requires a sink-augmented graph.
pub fn expected_memory_profile(
    g: &Graph,
    p: &GaussianParams,
    depth: u64,
) -> Result<Vec<f64>, RelaxError> {
    memory_profile(g, &Dists::build(g, p, depth))
}

/// Expected modulo resource reservation (length II).
pub fn expected_modulo_resource_profile(
    g: &Graph,
    p: &GaussianParams,
    depth: u64,
    ii: u64,
) -> Vec<f64> {
    wrap_profile(&expected_resource_profile(g, p, depth), ii)
}

/// Expected modulo memory reservation (length II).
pub fn expected_modulo_memory_profile(
    g: &Graph,
    p: &GaussianParams,
    depth: u64,
    ii: u64,
) -> Result<Vec<f64>, RelaxError> {
    Ok(wrap_profile(&expected_memory_profile(g, p, depth)?, ii))
}

/// Expected number of recurrence violations across all back-edges.
pub fn expected_rec_violation(
    g: &Graph,
    p: &GaussianParams,
    depth: u64,
    ii: u64,
    margin: RecMargin,
) -> f64 {
    if g.back_edges().is_empty() {
        return 0.0;
    }
    let dists = Dists::build(g, p, depth);
    rec_term(g, &dists, ii, margin, &mut GradAccum::zeros(g.len()))
}

fn objective_term(
    g: &Graph,
    dists: &Dists,
    spec: &ProblemSpec,
    cfg: &RelaxConfig,
    acc: &mut GradAccum,
) -> Result<f64, RelaxError> {
    match spec.formulation {
        Formulation::A => {
            let profile = resource_profile(g, dists);
            let lse = smooth_max(&profile, cfg.tau);
            let weights = smooth_max_weights(&profile, cfg.tau);
            resource_profile_grad(g, dists, &weights, acc);
            let mut comm_acc = GradAccum::zeros(g.len());
            let comm = comm_term(g, dists, &mut comm_acc);
            acc.scaled_add(&comm_acc, spec.alpha);
            Ok(lse + spec.alpha * comm)
        }
        Formulation::B => {
            let profile = memory_profile(g, dists)?;
            let lse = smooth_max(&profile, cfg.tau);
            let weights = smooth_max_weights(&profile, cfg.tau);
            memory_profile_grad(g, dists, &weights, acc);
            Ok(lse)
        }
        Formulation::C => {
            let ii = spec
                .ii
                .ok_or_else(|| RelaxError::Spec("Formulation C requires II".into()))?;
            let linear = memory_profile(g, dists)?;
            let wrapped = wrap_profile(&linear, ii);
            let lse = smooth_max(&wrapped, cfg.tau);
            let weights = unwrap_weights(&smooth_max_weights(&wrapped, cfg.tau), ii, dists.depth);
            memory_profile_grad(g, dists, &weights, acc);
            Ok(lse)
        }
    }
}

/// Evaluates one loss term and its gradient in isolation. The recurrence
/// and resource-excess terms are identically zero outside Formulation C.
pub fn eval_term(
    g: &Graph,
    p: &GaussianParams,
    spec: &ProblemSpec,
    cfg: &RelaxConfig,
    term: LossTerm,
) -> Result<TermEval, RelaxError> {
    let dists = Dists::build(g, p, spec.depth);
    let mut acc = GradAccum::zeros(g.len());
    let value = match term {
        LossTerm::Objective => objective_term(g, &dists, spec, cfg, &mut acc)?,
        LossTerm::Dep => dep_term(g, &dists, spec.dep_margin, &mut acc),
        LossTerm::Rec => match (spec.formulation, spec.ii) {
            (Formulation::C, Some(ii)) if !g.back_edges().is_empty() => {
                rec_term(g, &dists, ii, cfg.rec_margin, &mut acc)
            }
            _ => 0.0,
        },
        LossTerm::Res => match (spec.formulation, spec.ii, spec.resource_cap) {
            (Formulation::C, Some(ii), Some(cap)) => {
                let wrapped = wrap_profile(&resource_profile(g, &dists), ii);
                let value = excess_violation(&wrapped, cap as f64);
                let weights =
                    unwrap_weights(&excess_weights(&wrapped, cap as f64), ii, dists.depth);
                resource_profile_grad(g, &dists, &weights, &mut acc);
                value
            }
            _ => 0.0,
        },
    };
    Ok(TermEval {
        value,
        grad: acc.into_param_grad(p),
    })
}

/// Assembles the full augmented-Lagrangian loss
/// `L = objective + sum_i (lambda_i * V_i + rho/2 * V_i^2)`
/// together with its gradient over the 2|V| parameters.
pub fn total_loss(
    g: &Graph,
    p: &GaussianParams,
    spec: &ProblemSpec,
    mult: &Multipliers,
    cfg: &RelaxConfig,
) -> Result<LossBreakdown, RelaxError> {
    let dists = Dists::build(g, p, spec.depth);
    let n = g.len();

    let mut acc = GradAccum::zeros(n);
    let objective = objective_term(g, &dists, spec, cfg, &mut acc)?;

    let mut dep_acc = GradAccum::zeros(n);
    let v_dep = dep_term(g, &dists, spec.dep_margin, &mut dep_acc);

    let mut rec_acc = GradAccum::zeros(n);
    let mut res_acc = GradAccum::zeros(n);
    let (v_rec, v_res) = if spec.formulation == Formulation::C {
        let ii = spec
            .ii
            .ok_or_else(|| RelaxError::Spec("Formulation C requires II".into()))?;
        let cap = spec
            .resource_cap
            .ok_or_else(|| RelaxError::Spec("Formulation C requires a resource cap".into()))?;
        let v_rec = if g.back_edges().is_empty() {
            0.0
        } else {
            rec_term(g, &dists, ii, cfg.rec_margin, &mut rec_acc)
        };
        let wrapped = wrap_profile(&resource_profile(g, &dists), ii);
        let v_res = excess_violation(&wrapped, cap as f64);
        let weights = unwrap_weights(&excess_weights(&wrapped, cap as f64), ii, dists.depth);
        resource_profile_grad(g, &dists, &weights, &mut res_acc);
        (v_rec, v_res)
    } else {
        (0.0, 0.0)
    };

    let violations = ViolationTerms {
        dep: v_dep,
        rec: v_rec,
        res: v_res,
    };
    let penalty = |lambda: f64, v: f64| lambda * v + 0.5 * mult.rho * v * v;
    let total = objective
        + penalty(mult.lambda.dep, v_dep)
        + penalty(mult.lambda.rec, v_rec)
        + penalty(mult.lambda.res, v_res);

    // d/dtheta [lambda*V + rho/2 V^2] = (lambda + rho*V) dV/dtheta
    acc.scaled_add(&dep_acc, mult.lambda.dep + mult.rho * v_dep);
    acc.scaled_add(&rec_acc, mult.lambda.rec + mult.rho * v_rec);
    acc.scaled_add(&res_acc, mult.lambda.res + mult.rho * v_res);

    Ok(LossBreakdown {
        objective,
        violations,
        total,
        grad: acc.into_param_grad(p),
    })
}
