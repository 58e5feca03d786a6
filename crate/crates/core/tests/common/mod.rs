//! Shared helpers for the acceptance suite: literal nested-sum references
//! for the expected-violation formulas, finite-difference gradients, and
//! deterministic random instances. The references here intentionally avoid
//! the library's O(D) reductions so they can act as independent checks.

use opsched_core::graph::Graph;
use opsched_core::relax::{step_prob, GaussianParams, ParamGrad, RecMargin};
use opsched_core::schedule::DepMargin;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Literal triple sum for the expected dependency violation: for every edge
/// (i, j), sum over all (d_i, d_j) pairs that violate the margin.
pub fn naive_dep_violation(g: &Graph, p: &GaussianParams, depth: u64, margin: DepMargin) -> f64 {
    let mut total = 0.0;
    for &(i, j) in g.edges() {
        let bound = |di: u64| -> u64 {
            // first NON-violating consumer step for producer step d_i
            match margin {
                DepMargin::Chaining => di,
                DepMargin::Latency => di + g.op(i).latency,
            }
        };
        for di in 0..depth {
            for dj in 0..bound(di).min(depth) {
                total += step_prob(p, i, di, depth) * step_prob(p, j, dj, depth);
            }
        }
    }
    total
}

/// Literal triple sum for the expected communication overhead.
pub fn naive_comm(g: &Graph, p: &GaussianParams, depth: u64) -> f64 {
    let mut total = 0.0;
    for &(i, j) in g.edges() {
        for di in 0..depth {
            for dj in di..depth {
                total += step_prob(p, i, di, depth)
                    * step_prob(p, j, dj, depth)
                    * (dj - di) as f64;
            }
        }
    }
    total
}

/// Literal double sum for the expected recurrence violation of back-edges
/// (consumer i, producer j, distance k).
pub fn naive_rec_violation(
    g: &Graph,
    p: &GaussianParams,
    depth: u64,
    ii: u64,
    margin: RecMargin,
) -> f64 {
    let mut total = 0.0;
    for be in g.back_edges() {
        let (i, j) = (be.consumer, be.producer);
        for di in 0..depth {
            // first violating producer step
            let first = match margin {
                RecMargin::Strict => {
                    (di + be.distance * ii + 1).saturating_sub(g.op(j).latency)
                }
                RecMargin::Appendix => di + be.distance * ii + 1,
            };
            for dj in first..depth {
                total += step_prob(p, i, di, depth) * step_prob(p, j, dj, depth);
            }
        }
    }
    total
}

/// Central finite differences over both parameter vectors.
pub fn fd_grad(p: &GaussianParams, h: f64, mut f: impl FnMut(&GaussianParams) -> f64) -> ParamGrad {
    let mut grad = ParamGrad::zeros(p.len());
    for i in 0..p.len() {
        let mut hi = p.clone();
        hi.mu_mut()[i] += h;
        let mut lo = p.clone();
        lo.mu_mut()[i] -= h;
        grad.mu[i] = (f(&hi) - f(&lo)) / (2.0 * h);
        let mut hi = p.clone();
        hi.log_sigma_mut()[i] += h;
        let mut lo = p.clone();
        lo.log_sigma_mut()[i] -= h;
        grad.log_sigma[i] = (f(&hi) - f(&lo)) / (2.0 * h);
    }
    grad
}

/// Relative error below 1e-4 with an absolute floor of 1e-6.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= 1e-6_f64.max(1e-4 * analytic.abs().max(numeric.abs()))
}

pub fn assert_grads_close(label: &str, analytic: &ParamGrad, numeric: &ParamGrad) {
    for i in 0..analytic.mu.len() {
        assert!(
            grad_close(analytic.mu[i], numeric.mu[i]),
            "{label}: mu[{i}] analytic {} vs fd {}",
            analytic.mu[i],
            numeric.mu[i]
        );
        assert!(
            grad_close(analytic.log_sigma[i], numeric.log_sigma[i]),
            "{label}: log_sigma[{i}] analytic {} vs fd {}",
            analytic.log_sigma[i],
            numeric.log_sigma[i]
        );
    }
}

/// Random parameters with moderate spreads (sigma roughly in [0.4, 1.4]).
pub fn rand_params(rng: &mut ChaCha8Rng, n: usize, depth: u64) -> GaussianParams {
    let mu = (0..n).map(|_| rng.gen_range(0.0..depth as f64)).collect();
    let log_sigma = (0..n).map(|_| rng.gen_range(-1.0..0.3)).collect();
    GaussianParams::new(mu, log_sigma, 0.05)
}

/// Point-mass parameters at integer steps (sigma pinned to the floor).
pub fn point_masses(steps: &[i64], sigma_min: f64) -> GaussianParams {
    let mu: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let sigma = vec![sigma_min; steps.len()];
    GaussianParams::from_mu_sigma(mu, &sigma, sigma_min)
}
