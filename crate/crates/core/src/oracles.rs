//! Independent ground-truth machinery used to validate the analytic
//! pipeline: finite differences, adaptive quadrature, a sort-and-threshold
//! simplex projection, fixed-point power balancing, Monte Carlo rate
//! estimation, and exhaustive discrete search.
//!
//! Nothing here shares code with the implementation paths it checks.

use crate::channel::{sample_ue_channels, ChannelSet};
use crate::metrics::{gains_from_propagated, sinr, LinkGains};
use crate::scsi::{rate_upper_bound, zeta_from_gains, ZetaContext};
use crate::stack::{cascade_apply, PhaseProfile};
use crate::{PowerAlloc, RMatrix, RVector};
use rand::Rng;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("non-finite objective at perturbation ({0}, {1})")]
    NonFiniteEvaluation(usize, usize),
    #[error("fixed-point power iteration did not settle in {0} iterations")]
    NonConvergence(usize),
    #[error("search space of {0} evaluations exceeds the cap of {1}")]
    SearchSpaceExceeded(u128, u128),
    #[error("objective was never finite on the search grid")]
    EmptySearch,
}

/// Central finite differences of a scalar field over a real tensor.
pub fn finite_diff_gradient<F>(f: F, x: &RMatrix, h: f64) -> Result<RMatrix, OracleError>
where
    F: Fn(&RMatrix) -> f64,
{
    let mut grad = RMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            probe[(r, c)] = x[(r, c)] + h;
            let up = f(&probe);
            probe[(r, c)] = x[(r, c)] - h;
            let down = f(&probe);
            probe[(r, c)] = x[(r, c)];
            let d = (up - down) / (2.0 * h);
            if !d.is_finite() {
                return Err(OracleError::NonFiniteEvaluation(r, c));
            }
            grad[(r, c)] = d;
        }
    }
    Ok(grad)
}

/// Adaptive Simpson quadrature to an absolute tolerance.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Reference e^x E1(x) by quadrature of e^{-u} / (x + u) over u >= 0.
pub fn exp_e1_quadrature(x: f64) -> f64 {
    let integrand = |u: f64| (-u).exp() / (x + u);
    adaptive_simpson(&integrand, 0.0, 80.0, 1e-13)
}

/// Sort-and-threshold Euclidean projection onto the probability simplex.
pub fn project_simplex_reference(v: &RVector) -> RVector {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut active = 0usize;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let offset = (cumulative - 1.0) / (i as f64 + 1.0);
        if u - offset > 0.0 {
            active = i + 1;
        }
    }
    let top: f64 = sorted.iter().take(active).sum();
    let offset = (top - 1.0) / active as f64;
    v.map(|u| (u - offset).max(0.0))
}

/// Max-min SINR balancing by normalized fixed-point iteration on the
/// interference functions; test-side counterpart of the bisection solver.
pub fn fixed_point_power(
    gains: &LinkGains,
    budget: f64,
) -> Result<(PowerAlloc, f64), OracleError> {
    let k = gains.users();
    let max_iters = 10_000;
    let mut p = RVector::from_element(k, budget / k as f64);
    for _ in 0..max_iters {
        let mut next = RVector::zeros(k);
        for u in 0..k {
            let mut interference = gains.noise;
            for j in 0..k {
                if j != u {
                    interference += gains.s[(u, j)] * p[j];
                }
            }
            next[u] = interference / gains.s[(u, u)];
        }
        next *= budget / next.sum();
        let drift = (0..k)
            .map(|u| (next[u] - p[u]).abs() / p[u].max(1e-300))
            .fold(0.0, f64::max);
        p = next;
        if drift < 1e-14 {
            let power = PowerAlloc::new(p);
            let t = sinr(gains, &power).min();
            return Ok((power, t));
        }
    }
    Err(OracleError::NonConvergence(max_iters))
}

/// Monte Carlo estimate with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub ci_half_width: f64,
    pub trials: usize,
}

/// Average minimum achievable rate of a fixed policy over fading draws.
pub fn mc_average_min_rate<R: Rng>(
    theta: &PhaseProfile,
    power: &PowerAlloc,
    channels: &ChannelSet,
    noise: f64,
    trials: usize,
    rng: &mut R,
) -> McEstimate {
    let sampler = |rng: &mut R| sample_ue_channels(&channels.r_sqrt, &channels.betas, rng);
    mc_average_min_rate_with(theta, power, channels, noise, trials, &mut |_| {
        sampler(rng)
    })
}

/// Same estimator with an injected channel sampler (tests feed a constant
/// matrix to pin the distribution).
pub fn mc_average_min_rate_with(
    theta: &PhaseProfile,
    power: &PowerAlloc,
    channels: &ChannelSet,
    noise: f64,
    trials: usize,
    draw: &mut dyn FnMut(usize) -> crate::CMatrix,
) -> McEstimate {
    let gw = cascade_apply(theta, channels, &channels.w1);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for t in 0..trials {
        let h = draw(t);
        let gains = gains_from_propagated(&h, &gw, noise);
        let rate = (1.0 + sinr(&gains, power).min()).log2();
        sum += rate;
        sum_sq += rate * rate;
    }
    let n = trials as f64;
    let mean = sum / n;
    let variance = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    McEstimate {
        mean,
        ci_half_width: 1.96 * (variance / n).sqrt(),
        trials,
    }
}

/// Winner of an exhaustive discrete search.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub power: PowerAlloc,
    pub theta: PhaseProfile,
    pub objective: f64,
    pub evaluations: u128,
}

/// Cap on the number of grid evaluations.
pub const SEARCH_CAP: u128 = 10_000_000;

/// Brute-force search over every quantized phase profile and every power
/// split on the budget simplex grid.
///
/// The objective is the min-SINR when a fading draw is present in
/// `channels`, otherwise the average-rate bound. Ties keep the first
/// (lexicographically smallest) maximizer.
pub fn exhaustive_search(
    channels: &ChannelSet,
    bits: u32,
    power_step: f64,
    budget: f64,
    noise: f64,
) -> Result<SearchResult, OracleError> {
    let m = channels.elements();
    let layers = channels.layers();
    let k = channels.users();
    let levels = 1u128 << bits;
    let cells = (m * layers) as u32;
    let phase_count = levels.checked_pow(cells).ok_or(OracleError::SearchSpaceExceeded(
        u128::MAX,
        SEARCH_CAP,
    ))?;
    let steps = (1.0 / power_step).round() as u64;
    let grid = compositions_count(steps, k as u64);
    let total = phase_count
        .checked_mul(grid as u128)
        .ok_or(OracleError::SearchSpaceExceeded(u128::MAX, SEARCH_CAP))?;
    if total > SEARCH_CAP {
        return Err(OracleError::SearchSpaceExceeded(total, SEARCH_CAP));
    }

    let powers = enumerate_simplex_grid(steps, k, budget);
    let ctx = channels.h.is_none().then(|| ZetaContext::new(channels));

    let step_angle = TAU / levels as f64;
    let mut best: Option<(f64, PhaseProfile, PowerAlloc)> = None;
    let mut digits = vec![0u64; cells as usize];
    let mut evaluations: u128 = 0;
    loop {
        let theta = PhaseProfile {
            theta: RMatrix::from_fn(layers, m, |l, el| {
                digits[l * m + el] as f64 * step_angle
            }),
            quantized: true,
        };
        let gw = cascade_apply(&theta, channels, &channels.w1);
        for power in &powers {
            evaluations += 1;
            let objective = match (&channels.h, &ctx) {
                (Some(h), _) => {
                    let gains = gains_from_propagated(h, &gw, noise);
                    if power.watts.iter().all(|&p| p > 0.0) {
                        sinr(&gains, power).min()
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                (None, Some(ctx)) => {
                    let q = RVector::from_fn(k, |user, _| {
                        let col = gw.column(user);
                        (col.adjoint() * &ctx.r_rec * col)[(0, 0)].re
                    });
                    match zeta_from_gains(&q, &ctx.betas, power) {
                        Ok(z) => rate_upper_bound(z, noise).unwrap_or(f64::NEG_INFINITY),
                        Err(_) => f64::NEG_INFINITY,
                    }
                }
                _ => unreachable!(),
            };
            if objective.is_finite() {
                let better = match &best {
                    Some((obj, _, _)) => objective > *obj,
                    None => true,
                };
                if better {
                    best = Some((objective, theta.clone(), power.clone()));
                }
            }
        }
        // Advance the phase odometer, most significant digit first so the
        // scan order is lexicographic over the flattened profile.
        let mut pos = cells as usize;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < levels as u64 {
                break;
            }
            digits[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if pos == usize::MAX {
            break;
        }
    }

    let (objective, theta, power) = best.ok_or(OracleError::EmptySearch)?;
    Ok(SearchResult {
        power,
        theta,
        objective,
        evaluations,
    })
}

fn compositions_count(total: u64, parts: u64) -> u64 {
    // C(total + parts - 1, parts - 1), small arguments only.
    let mut acc: u128 = 1;
    for i in 0..(parts - 1) {
        acc = acc * (total + 1 + i) as u128 / (i + 1) as u128;
    }
    acc.min(u64::MAX as u128) as u64
}

/// All power vectors with entries on the grid step * budget summing to the
/// budget, in lexicographic order.
fn enumerate_simplex_grid(steps: u64, k: usize, budget: f64) -> Vec<PowerAlloc> {
    let mut out = Vec::new();
    let mut current = vec![0u64; k];
    fn recurse(
        current: &mut Vec<u64>,
        idx: usize,
        remaining: u64,
        steps: u64,
        budget: f64,
        out: &mut Vec<PowerAlloc>,
    ) {
        if idx == current.len() - 1 {
            current[idx] = remaining;
            let p = RVector::from_fn(current.len(), |i, _| {
                current[i] as f64 / steps as f64 * budget
            });
            out.push(PowerAlloc::new(p));
            return;
        }
        for units in 0..=remaining {
            current[idx] = units;
            recurse(current, idx + 1, remaining - units, steps, budget, out);
        }
    }
    recurse(&mut current, 0, steps, steps, budget, &mut out);
    out
}
