//! Max-min SINR optimization under instantaneous CSI.
//!
//! Alternates two sub-solvers until the balanced SINR stops improving:
//!
//! * power control for fixed phases — the max-min problem is solved by
//!   bisection on the target SINR `t`; feasibility of a given `t` reduces
//!   to a K x K linear balance system whose positive solution is checked
//!   against the power budget;
//! * phase optimization for fixed powers — the minimax reformulation over
//!   simplex weights is solved by a two-time-scale gradient descent-ascent
//!   loop: projected descent on the weights, Armijo-backtracked ascent on
//!   the phases, with the descent step slaved to the ascent step so the
//!   inner minimization dominates.
//!
//! Phases stay continuous during optimization and are quantized once at
//! the end.

use crate::channel::ChannelSet;
use crate::config::{GdaParams, ScenarioConfig};
use crate::metrics::{gains_from_propagated, sinr, LinkGains, MetricsError, RateReport};
use crate::stack::{cascade_apply, LayerColumns, PhaseProfile, StackError};
use crate::{C64, CMatrix, PowerAlloc, RMatrix, RVector};
use thiserror::Error;

/// Outer alternation cap.
pub const OUTER_MAX_ITERS: usize = 500;

/// Inner iterations the descent-ascent loop may spend without a relative
/// max-min gain before it reports convergence.
pub const CONVERGENCE_PATIENCE: usize = 40;

#[derive(Debug, Error)]
pub enum IcsiError {
    #[error("direct gain of user {0} is zero; SINR balancing undefined")]
    ZeroDirectGain(usize),
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error("instantaneous optimization requires a sampled channel matrix")]
    MissingFading,
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Weights on the probability simplex steering the minimax objective
/// toward the worst user.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessWeights {
    pub lam: RVector,
}

impl FairnessWeights {
    pub fn uniform(k: usize) -> Self {
        Self {
            lam: RVector::from_element(k, 1.0 / k as f64),
        }
    }

    /// Wraps a projected vector; rescales away the residual the finite
    /// projection accuracy leaves on the sum.
    pub fn from_projected(y: RVector) -> Self {
        let sum = y.sum();
        Self { lam: y / sum }
    }
}

/// Euclidean projection of `v` onto the probability simplex.
///
/// The KKT system reduces to one scalar equation in the equality
/// multiplier `eta`: sum_k max(eta, 2 v_k) - 2 - K eta = 0, which is
/// monotone and bracketed by [(2/K) sum(v) - 2/K, 2 max(v)]. Bisection on
/// it stops once the residual is below `accuracy`; the multiplier then
/// yields the inequality multipliers and the projection in closed form.
pub fn project_simplex(v: &RVector, accuracy: f64) -> RVector {
    let k = v.len();
    let kf = k as f64;
    let residual = |eta: f64| -> f64 {
        v.iter().map(|&vi| eta.max(2.0 * vi)).sum::<f64>() - 2.0 - kf * eta
    };
    let mut lo = 2.0 / kf * v.sum() - 2.0 / kf;
    let mut hi = 2.0 * v.max();
    // residual(lo) >= 0 >= residual(hi); keep the bracket while halving.
    let mut eta = 0.5 * (lo + hi);
    for _ in 0..200 {
        eta = 0.5 * (lo + hi);
        let r = residual(eta);
        if r.abs() <= accuracy {
            break;
        }
        if r > 0.0 {
            lo = eta;
        } else {
            hi = eta;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    RVector::from_fn(k, |i, _| {
        let xi = (eta - 2.0 * v[i]).max(0.0);
        v[i] + (xi - eta) / 2.0
    })
}

/// Gradient of the weighted minimax objective with respect to the
/// weights: exactly the SINR vector.
pub fn lambda_gradient(gains: &LinkGains, power: &PowerAlloc) -> RVector {
    sinr(gains, power)
}

/// Max-min power control for fixed phases.
///
/// Maximizes min_k SINR_k subject to the total budget. At the optimum all
/// SINRs are balanced and the budget is fully used; the returned target is
/// accurate to a relative 1e-8 or better.
pub fn gp_power_allocation(
    gains: &LinkGains,
    budget: f64,
) -> Result<(PowerAlloc, f64), IcsiError> {
    let k = gains.users();
    for u in 0..k {
        if !(gains.s[(u, u)] > 0.0) {
            return Err(IcsiError::ZeroDirectGain(u));
        }
    }
    if k == 1 {
        let t = gains.s[(0, 0)] * budget / gains.noise;
        return Ok((PowerAlloc::new(RVector::from_element(1, budget)), t));
    }

    // Largest conceivable balanced SINR: every user alone with the budget.
    let mut hi = (0..k)
        .map(|u| gains.s[(u, u)] * budget / gains.noise)
        .fold(f64::INFINITY, f64::min);
    hi *= 1.0 + 1e-9;
    let mut lo = 0.0;
    let mut best: Option<RVector> = None;
    for _ in 0..200 {
        let t = 0.5 * (lo + hi);
        match balance_powers(gains, t) {
            Some(p) if p.iter().all(|&x| x > 0.0) && p.sum() <= budget => {
                lo = t;
                best = Some(p);
            }
            _ => hi = t,
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    let mut p = best.unwrap_or_else(|| {
        // Fall back to the zero-interference split at a minuscule target.
        RVector::from_fn(k, |u, _| budget * gains.noise / gains.s[(u, u)])
    });
    // Spend the whole budget; the correction is O(bisection width).
    p *= budget / p.sum();
    let power = PowerAlloc::new(p);
    let t_star = sinr(gains, &power).min();
    Ok((power, t_star))
}

/// Solves the SINR balance system s_kk p_k = t (sum_{j!=k} s_kj p_j + noise)
/// for the power vector; None when the system is singular at this `t`.
fn balance_powers(gains: &LinkGains, t: f64) -> Option<RVector> {
    let k = gains.users();
    let a = RMatrix::from_fn(k, k, |r, c| {
        if r == c {
            gains.s[(r, r)]
        } else {
            -t * gains.s[(r, c)]
        }
    });
    let rhs = RVector::from_element(k, t * gains.noise);
    a.lu().solve(&rhs)
}

/// Analytic gradient of the weighted minimax objective with respect to
/// every phase shift, layers x elements.
///
/// Entry (l, m) couples the m-th dyad of layer l with the user/stream
/// inner products; the whole tensor assembles from the per-layer column
/// cascades in O(L M K^2) after O(L M^2 K) propagation.
pub fn phase_gradient(
    theta: &PhaseProfile,
    channels: &ChannelSet,
    h: &CMatrix,
    power: &PowerAlloc,
    weights: &FairnessWeights,
    noise: f64,
) -> Result<RMatrix, IcsiError> {
    let cols = LayerColumns::build(theta, channels, &channels.w1, h);
    let f_mat = h.ad_mul(&cols.gx); // entries h_k^H G w_j
    let k = f_mat.nrows();
    let layers = theta.layers();
    let m = theta.elements();

    let p = &power.watts;
    let mut omega = RVector::zeros(k);
    let mut gamma = RVector::zeros(k);
    for u in 0..k {
        let mut interference = 0.0;
        for j in 0..k {
            if j != u {
                interference += f_mat[(u, j)].norm_sqr() * p[j];
            }
        }
        omega[u] = 1.0 / (interference + noise);
        gamma[u] = f_mat[(u, u)].norm_sqr() * p[u] * omega[u];
    }

    // Weight matrix of the bilinear form: d_kj = c_kj * f_kj with
    // c_kk = lam_k w_k p_k and c_kj = -lam_k w_k gamma_k p_j off-diagonal.
    let mut d = CMatrix::zeros(k, k);
    for u in 0..k {
        let lw = weights.lam[u] * omega[u];
        for j in 0..k {
            let c = if j == u {
                lw * p[u]
            } else {
                -lw * gamma[u] * p[j]
            };
            d[(u, j)] = f_mat[(u, j)] * c;
        }
    }

    let mut grad = RMatrix::zeros(layers, m);
    for l in 0..layers {
        let u_l = &cols.u[l];
        let v_l = &cols.v[l];
        for el in 0..m {
            let phasor_conj = C64::new(0.0, -theta.theta[(l, el)]).exp();
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..k {
                let mut col = C64::new(0.0, 0.0);
                for u in 0..k {
                    col += v_l[(el, u)] * d[(u, j)];
                }
                acc += u_l[(el, j)].conj() * col;
            }
            grad[(l, el)] = 2.0 * (phasor_conj * acc).im;
        }
    }
    Ok(grad)
}

/// One inner-loop iteration record.
#[derive(Debug, Clone, Copy)]
pub struct GdaTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub min_sinr: f64,
    pub ascent_step: f64,
    pub descent_step: f64,
}

/// Result of one descent-ascent run.
#[derive(Debug, Clone)]
pub struct GdaResult {
    pub theta: PhaseProfile,
    pub trace: Vec<GdaTraceRow>,
    pub converged: bool,
}

/// Descent-ascent phase optimization from the all-zero profile.
pub fn gda_beamforming(
    channels: &ChannelSet,
    h: &CMatrix,
    power: &PowerAlloc,
    noise: f64,
    params: &GdaParams,
) -> Result<GdaResult, IcsiError> {
    let theta0 = PhaseProfile::zeros(channels.layers(), channels.elements());
    gda_beamforming_from(theta0, channels, h, power, noise, params)
}

/// Descent-ascent phase optimization warm-started from `theta0`.
///
/// Returns the iterate with the best min-SINR seen (including the start),
/// so a warm-started call never regresses the true max-min objective.
pub fn gda_beamforming_from(
    theta0: PhaseProfile,
    channels: &ChannelSet,
    h: &CMatrix,
    power: &PowerAlloc,
    noise: f64,
    params: &GdaParams,
) -> Result<GdaResult, IcsiError> {
    let proj_accuracy = params.proj_accuracy.min(1e-10);
    let eval = |theta: &PhaseProfile| -> LinkGains {
        gains_from_propagated(h, &cascade_apply(theta, channels, &channels.w1), noise)
    };

    let mut theta = theta0;
    let mut weights = FairnessWeights::uniform(h.ncols());
    let mut gains = eval(&theta);
    let mut gamma = sinr(&gains, power);

    let mut best_theta = theta.clone();
    let mut best_min_sinr = gamma.min();

    // The ascent step starts at step0 once per call and only shrinks
    // inside it; the weight-descent step stays slaved to tau times it.
    let mut mu = params.step0;
    let mut descent_step = 1.0;
    let mut trace = Vec::new();
    let mut converged = false;
    // The weighted surrogate oscillates around saddles while the weights
    // chase the active user, so convergence watches the max-min value
    // itself: stop once it has not gained conv_tol (relatively) within a
    // patience window.
    let mut anchor = best_min_sinr;
    let mut anchor_iter = 0usize;

    for iter in 1..=params.max_iters {
        // Projected descent on the weights; the gradient is the SINR vector.
        let bar = &weights.lam - &gamma * descent_step;
        weights = FairnessWeights::from_projected(project_simplex(&bar, proj_accuracy));

        let grad = phase_gradient(&theta, channels, h, power, &weights, noise)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(IcsiError::NonFiniteGradient(iter));
        }
        let grad_norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        let objective_at = |g: &LinkGains| weights.lam.dot(&sinr(g, power));
        let f0 = objective_at(&gains);
        let stationary = grad_norm_sq <= (1e-12 * f0.abs().max(1e-300)).powi(2);

        let mut moved = false;
        if grad_norm_sq > 0.0 && !stationary {
            for _ in 0..200 {
                let candidate = PhaseProfile {
                    theta: &theta.theta + &grad * mu,
                    quantized: false,
                };
                let cand_gains = eval(&candidate);
                if objective_at(&cand_gains) >= f0 + params.nu * mu * grad_norm_sq {
                    theta = candidate;
                    gains = cand_gains;
                    moved = true;
                    break;
                }
                mu *= params.kappa;
                if mu * grad_norm_sq < 1e-18 * f0.abs().max(1e-300) {
                    break;
                }
            }
        }
        descent_step = params.tau * mu.max(f64::MIN_POSITIVE);

        gamma = sinr(&gains, power);
        let min_sinr = gamma.min();
        if min_sinr > best_min_sinr {
            best_min_sinr = min_sinr;
            best_theta = theta.clone();
        }
        let objective = weights.lam.dot(&gamma);
        trace.push(GdaTraceRow {
            iter,
            objective,
            min_sinr,
            ascent_step: if moved { mu } else { 0.0 },
            descent_step,
        });

        if best_min_sinr > anchor * (1.0 + params.conv_tol) + 1e-300 {
            anchor = best_min_sinr;
            anchor_iter = iter;
        } else if iter - anchor_iter >= CONVERGENCE_PATIENCE || !moved {
            converged = true;
            break;
        }
    }

    Ok(GdaResult {
        theta: best_theta,
        trace,
        converged,
    })
}

/// Joint power/phase report of one optimization run.
#[derive(Debug, Clone)]
pub struct OptReport {
    /// Outer-iteration objective: balanced SINR for the instantaneous
    /// pipeline, bound denominator for the statistical one.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Deployed power allocation; statistical runs re-split it for the
    /// quantized stack.
    pub power: PowerAlloc,
    /// Continuous phases, wrapped into [0, 2 pi).
    pub phases: PhaseProfile,
    pub phases_quantized: PhaseProfile,
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Instantaneous {
        /// Evaluation with quantized phases (the deployable policy).
        report: RateReport,
        /// Evaluation with continuous phases.
        report_continuous: RateReport,
    },
    Statistical {
        zeta: f64,
        rate_bound: f64,
        zeta_continuous: f64,
        rate_bound_continuous: f64,
    },
}

impl OptReport {
    /// Min-rate of the deployable (quantized) policy.
    pub fn min_rate(&self) -> f64 {
        match &self.outcome {
            Outcome::Instantaneous { report, .. } => report.min_rate,
            Outcome::Statistical { rate_bound, .. } => *rate_bound,
        }
    }

    pub fn quantized_report(&self) -> Option<&RateReport> {
        match &self.outcome {
            Outcome::Instantaneous { report, .. } => Some(report),
            _ => None,
        }
    }

    pub fn continuous_report(&self) -> Option<&RateReport> {
        match &self.outcome {
            Outcome::Instantaneous {
                report_continuous, ..
            } => Some(report_continuous),
            _ => None,
        }
    }
}

/// Per-outer-iteration detail retained by [`optimize_detailed`].
#[derive(Debug, Clone)]
pub struct OuterIterationDetail {
    pub outer_iter: usize,
    /// Balanced SINR after the power step.
    pub t_star: f64,
    /// Inner descent-ascent trace of this round (empty on the final
    /// convergence check).
    pub inner: Vec<GdaTraceRow>,
}

/// Full alternating optimization under instantaneous CSI.
///
/// Starts from zero phases, alternates power balancing and phase ascent
/// until the balanced SINR stalls, then quantizes the phases and
/// re-evaluates the final policy.
pub fn optimize(channels: &ChannelSet, config: &ScenarioConfig) -> Result<OptReport, IcsiError> {
    optimize_detailed(channels, config).map(|(report, _)| report)
}

/// [`optimize`] plus the per-iteration inner traces, for convergence studies.
pub fn optimize_detailed(
    channels: &ChannelSet,
    config: &ScenarioConfig,
) -> Result<(OptReport, Vec<OuterIterationDetail>), IcsiError> {
    let h = channels.h.as_ref().ok_or(IcsiError::MissingFading)?;
    let noise = config.noise_power;
    let budget = config.power_budget;
    let params = &config.gda;

    // Alternation starts from zero phases and an equal split: the phase
    // step runs first because the balanced powers of the unconfigured
    // stack are badly skewed by the path-loss spread and trap the whole
    // alternation in a low-value basin.
    let mut theta = PhaseProfile::zeros(channels.layers(), channels.elements());
    let mut trace: Vec<f64> = Vec::new();
    let mut details: Vec<OuterIterationDetail> = Vec::new();
    let mut power = PowerAlloc::equal(budget, channels.users());
    let mut converged = false;

    for outer_iter in 1..=OUTER_MAX_ITERS {
        let gda = gda_beamforming_from(theta, channels, h, &power, noise, params)?;
        theta = gda.theta;
        let gains = gains_from_propagated(h, &cascade_apply(&theta, channels, &channels.w1), noise);
        let (p, t_star) = gp_power_allocation(&gains, budget)?;
        power = p;
        details.push(OuterIterationDetail {
            outer_iter,
            t_star,
            inner: gda.trace,
        });
        let stalled = trace
            .last()
            .is_some_and(|&prev| (t_star - prev).abs() <= params.conv_tol * prev.abs().max(1e-300));
        trace.push(t_star);
        if stalled {
            converged = true;
            break;
        }
    }

    let phases = theta.normalized();
    let phases_quantized = phases.quantize_all(config.quant_bits);
    let gains_q = gains_from_propagated(
        h,
        &cascade_apply(&phases_quantized, channels, &channels.w1),
        noise,
    );
    let gains_c =
        gains_from_propagated(h, &cascade_apply(&phases, channels, &channels.w1), noise);
    let report = RateReport::from_gains(&gains_q, &power)?;
    let report_continuous = RateReport::from_gains(&gains_c, &power)?;

    Ok((
        OptReport {
            objective_trace: trace,
            converged,
            power,
            phases,
            phases_quantized,
            outcome: Outcome::Instantaneous {
                report,
                report_continuous,
            },
        },
        details,
    ))
}
