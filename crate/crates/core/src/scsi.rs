//! Max-min rate optimization under statistical CSI.
//!
//! With only the exit-layer correlation and path losses known, the average
//! minimum rate has no usable closed form, but dropping interference gives
//! each user an exponentially distributed SNR whose minimum admits the
//! exact average rate log2(e) e^x E1(x) with x = noise times the bound
//! denominator
//!
//!   zeta(theta, p) = sum_k 1 / (beta_k p_k q_k),
//!   q_k = sum_i rho_i |v_i^H G w_k|^2,
//!
//! (rho_i, v_i) the eigenpairs of the exit correlation. Minimizing zeta
//! maximizes the bound; the alternation pairs a closed-form power split
//! with Armijo-backtracked gradient descent on the phases.

use crate::channel::ChannelSet;
use crate::config::{GdParams, ScenarioConfig};
use crate::icsi::{OptReport, Outcome};
use crate::stack::{backward_columns, forward_columns, PhaseProfile, StackError};
use crate::{C64, CMatrix, PowerAlloc, RMatrix, RVector};
use thiserror::Error;

/// Outer alternation cap.
pub const OUTER_MAX_ITERS: usize = 500;

#[derive(Debug, Error)]
pub enum ScsiError {
    #[error("degenerate beam: correlation-weighted gain of user {0} is not positive")]
    DegenerateBeam(usize),
    #[error("zero gain passed to the power split for user {0}")]
    ZeroGain(usize),
    #[error("exponential integral requires a positive argument, got {0}")]
    NonPositiveArgument(f64),
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error(transparent)]
    Stack(#[from] StackError),
}

/// Statistical context: eigen structure of the exit correlation plus the
/// per-user path gains, shared by every bound evaluation.
#[derive(Debug, Clone)]
pub struct ZetaContext {
    /// Clamped eigenvalues of the exit correlation.
    pub eig_values: RVector,
    /// Orthonormal eigenvectors, one per column.
    pub eig_vectors: CMatrix,
    /// Eigen reconstruction sum_i rho_i v_i v_i^H (equals the correlation
    /// up to the clamp); used by the gradient fast path.
    pub r_rec: CMatrix,
    pub betas: RVector,
}

impl ZetaContext {
    pub fn new(channels: &ChannelSet) -> Self {
        let mut scaled = channels.eig_vectors.clone();
        for (j, rho) in channels.eig_values.iter().enumerate() {
            let s = C64::new(*rho, 0.0);
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= s;
            }
        }
        let r_rec = &scaled * channels.eig_vectors.adjoint();
        Self {
            eig_values: channels.eig_values.clone(),
            eig_vectors: channels.eig_vectors.clone(),
            r_rec,
            betas: channels.betas.clone(),
        }
    }
}

/// Correlation-weighted beam gains q_k = sum_i rho_i |v_i^H G w_k|^2,
/// evaluated as the literal eigen-sum.
pub fn beam_gains(ctx: &ZetaContext, theta: &PhaseProfile, channels: &ChannelSet) -> RVector {
    let (_, gx) = forward_columns(theta, channels, &channels.w1);
    let t = ctx.eig_vectors.ad_mul(&gx);
    RVector::from_fn(gx.ncols(), |k, _| {
        ctx.eig_values
            .iter()
            .enumerate()
            .map(|(i, rho)| rho * t[(i, k)].norm_sqr())
            .sum()
    })
}

/// Bound denominator for explicit gains; errors on a degenerate beam.
pub fn zeta_from_gains(
    gains: &RVector,
    betas: &RVector,
    power: &PowerAlloc,
) -> Result<f64, ScsiError> {
    let mut total = 0.0;
    for k in 0..gains.len() {
        let q = gains[k];
        if !(q > 0.0) || !q.is_finite() {
            return Err(ScsiError::DegenerateBeam(k));
        }
        total += 1.0 / (betas[k] * power.watts[k] * q);
    }
    Ok(total)
}

/// Bound denominator zeta(theta, p).
pub fn zeta(
    ctx: &ZetaContext,
    theta: &PhaseProfile,
    channels: &ChannelSet,
    power: &PowerAlloc,
) -> Result<f64, ScsiError> {
    zeta_from_gains(&beam_gains(ctx, theta, channels), &ctx.betas, power)
}

/// Analytic gradient of zeta with respect to every phase shift.
///
/// Same dyad structure as the instantaneous gradient, with the user
/// channels replaced by the correlation-weighted propagated columns.
pub fn phase_gradient(
    ctx: &ZetaContext,
    theta: &PhaseProfile,
    channels: &ChannelSet,
    power: &PowerAlloc,
) -> Result<RMatrix, ScsiError> {
    let (u, gx) = forward_columns(theta, channels, &channels.w1);
    let z = &ctx.r_rec * &gx;
    let v = backward_columns(theta, channels, &z);

    let k = gx.ncols();
    let mut weight = RVector::zeros(k);
    for user in 0..k {
        // q_k via the reconstruction; equals the eigen-sum.
        let q: f64 = gx
            .column(user)
            .iter()
            .zip(z.column(user).iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        if !(q > 0.0) || !q.is_finite() {
            return Err(ScsiError::DegenerateBeam(user));
        }
        weight[user] = 1.0 / (ctx.betas[user] * power.watts[user] * q * q);
    }

    let layers = theta.layers();
    let m = theta.elements();
    let mut grad = RMatrix::zeros(layers, m);
    for l in 0..layers {
        let u_l = &u[l];
        let v_l = &v[l];
        for el in 0..m {
            let phasor_conj = C64::new(0.0, -theta.theta[(l, el)]).exp();
            let mut acc = C64::new(0.0, 0.0);
            for user in 0..k {
                acc += u_l[(el, user)].conj() * v_l[(el, user)] * weight[user];
            }
            // d zeta / d theta = sum_k weight_k * (-c_mk).
            grad[(l, el)] = -2.0 * (phasor_conj * acc).im;
        }
    }
    Ok(grad)
}

/// Closed-form power split minimizing sum_k c_k / p_k on the budget
/// hyperplane: p_k proportional to sqrt(c_k) with c_k = 1/(beta_k q_k).
pub fn power_allocation(
    gains: &RVector,
    betas: &RVector,
    budget: f64,
) -> Result<PowerAlloc, ScsiError> {
    let k = gains.len();
    let mut roots = RVector::zeros(k);
    for u in 0..k {
        let c = betas[u] * gains[u];
        if !(c > 0.0) || !c.is_finite() {
            return Err(ScsiError::ZeroGain(u));
        }
        roots[u] = (1.0 / c).sqrt();
    }
    let total: f64 = roots.sum();
    Ok(PowerAlloc::new(roots * (budget / total)))
}

/// e^x E1(x) with E1 the exponential integral; computed as the product so
/// large arguments never overflow.
///
/// Power series below 1, continued fraction (modified Lentz) above.
pub fn exp_e1(x: f64) -> Result<f64, ScsiError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(ScsiError::NonPositiveArgument(x));
    }
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    if x <= 1.0 {
        // E1(x) = -gamma - ln x + sum_{n>=1} (-1)^{n+1} x^n / (n n!).
        let mut sum = 0.0;
        let mut term = 1.0; // x^n / n!
        for n in 1..=40 {
            term *= x / n as f64;
            let inc = term / n as f64;
            sum += if n % 2 == 1 { inc } else { -inc };
            if inc.abs() < 1e-18 * sum.abs().max(1.0) {
                break;
            }
        }
        Ok(x.exp() * (-EULER_GAMMA - x.ln() + sum))
    } else {
        // e^x E1(x) = 1 / (x + 1 - 1^2/(x + 3 - 2^2/(x + 5 - ...))).
        let tiny = 1e-300;
        let mut f = x + 1.0;
        if f == 0.0 {
            f = tiny;
        }
        let mut c = f;
        let mut d = 0.0;
        for n in 1..=500u32 {
            let a = -((n as f64) * (n as f64));
            let b = x + 2.0 * n as f64 + 1.0;
            d = b + a * d;
            if d == 0.0 {
                d = tiny;
            }
            c = b + a / c;
            if c == 0.0 {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok(1.0 / f)
    }
}

/// Average minimum-rate bound log2(e) e^{zeta sigma^2} E1(zeta sigma^2),
/// bits/s/Hz.
pub fn rate_upper_bound(zeta: f64, noise: f64) -> Result<f64, ScsiError> {
    Ok(std::f64::consts::LOG2_E * exp_e1(zeta * noise)?)
}

/// CDF of the interference-free SNR bound of one user:
/// F(z) = 1 - exp(-noise z / (beta p q)).
pub fn snr_bound_cdf(z: f64, noise: f64, beta: f64, power: f64, beam_gain: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    1.0 - (-noise * z / (beta * power * beam_gain)).exp()
}

/// One descent iteration record.
#[derive(Debug, Clone, Copy)]
pub struct GdTraceRow {
    pub iter: usize,
    pub zeta: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct GdResult {
    pub theta: PhaseProfile,
    pub trace: Vec<GdTraceRow>,
    pub converged: bool,
}

/// Armijo-backtracked gradient descent on zeta from the all-zero profile.
pub fn gd_beamforming(
    ctx: &ZetaContext,
    channels: &ChannelSet,
    power: &PowerAlloc,
    params: &GdParams,
) -> Result<GdResult, ScsiError> {
    let theta0 = PhaseProfile::zeros(channels.layers(), channels.elements());
    gd_beamforming_from(theta0, ctx, channels, power, params)
}

/// Descent warm-started from `theta0`; the zeta trace never increases.
pub fn gd_beamforming_from(
    theta0: PhaseProfile,
    ctx: &ZetaContext,
    channels: &ChannelSet,
    power: &PowerAlloc,
    params: &GdParams,
) -> Result<GdResult, ScsiError> {
    let mut theta = theta0;
    let mut current = zeta(ctx, &theta, channels, power)?;
    let mut trace = Vec::new();
    let mut converged = false;

    // One step-size reset per call; Armijo only shrinks it afterwards.
    let mut step = params.step0;
    for iter in 1..=params.max_iters {
        let grad = phase_gradient(ctx, &theta, channels, power)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ScsiError::NonFiniteGradient(iter));
        }
        let grad_norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        let stationary = grad_norm_sq <= (1e-12 * current.abs().max(1e-300)).powi(2);

        let mut accepted = false;
        if grad_norm_sq > 0.0 && !stationary {
            for _ in 0..200 {
                let candidate = PhaseProfile {
                    theta: &theta.theta - &grad * step,
                    quantized: false,
                };
                let cand = zeta(ctx, &candidate, channels, power)?;
                if cand <= current - params.nu * step * grad_norm_sq {
                    theta = candidate;
                    current = cand;
                    accepted = true;
                    break;
                }
                step *= params.kappa;
                if step * grad_norm_sq < 1e-18 * current.abs().max(1e-300) {
                    break;
                }
            }
        }
        trace.push(GdTraceRow {
            iter,
            zeta: current,
            step: if accepted { step } else { 0.0 },
        });
        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2].zeta;
            if (prev - current).abs() <= params.conv_tol * prev.abs().max(1e-300) {
                converged = true;
                break;
            }
        }
        if !accepted {
            converged = true;
            break;
        }
    }

    Ok(GdResult {
        theta,
        trace,
        converged,
    })
}

/// Per-outer-iteration detail retained by [`optimize_detailed`].
#[derive(Debug, Clone)]
pub struct OuterIterationDetail {
    pub outer_iter: usize,
    /// Bound denominator after this round.
    pub zeta: f64,
    pub inner: Vec<GdTraceRow>,
}

/// Full alternating optimization under statistical CSI.
///
/// Any sampled fading in `channels` is ignored; only the correlation,
/// path gains, and diffraction matrices matter here.
pub fn optimize(channels: &ChannelSet, config: &ScenarioConfig) -> Result<OptReport, ScsiError> {
    optimize_detailed(channels, config).map(|(report, _)| report)
}

/// [`optimize`] plus the per-iteration inner traces, for convergence studies.
pub fn optimize_detailed(
    channels: &ChannelSet,
    config: &ScenarioConfig,
) -> Result<(OptReport, Vec<OuterIterationDetail>), ScsiError> {
    let ctx = ZetaContext::new(channels);
    let budget = config.power_budget;
    let params = &config.gd;

    let mut theta = PhaseProfile::zeros(channels.layers(), channels.elements());
    let mut power = PowerAlloc::equal(budget, channels.users());
    let mut trace: Vec<f64> = Vec::new();
    let mut details: Vec<OuterIterationDetail> = Vec::new();
    let mut converged = false;

    for outer_iter in 1..=OUTER_MAX_ITERS {
        let q = beam_gains(&ctx, &theta, channels);
        power = power_allocation(&q, &ctx.betas, budget)?;
        let gd = gd_beamforming_from(theta, &ctx, channels, &power, params)?;
        theta = gd.theta;
        let z = zeta(&ctx, &theta, channels, &power)?;
        details.push(OuterIterationDetail {
            outer_iter,
            zeta: z,
            inner: gd.trace.clone(),
        });
        if let Some(&prev) = trace.last() {
            if (prev - z).abs() <= params.conv_tol * prev.abs().max(1e-300) {
                trace.push(z);
                converged = true;
                break;
            }
        }
        trace.push(z);
    }

    let phases = theta.normalized();
    let phases_quantized = phases.quantize_all(config.quant_bits);
    let zeta_continuous = zeta(&ctx, &phases, channels, &power)?;
    // The deployed power split re-solves the closed form for the
    // quantized stack; phases are hardware-limited, powers are not.
    let q_quantized = beam_gains(&ctx, &phases_quantized, channels);
    power = power_allocation(&q_quantized, &ctx.betas, budget)?;
    let zeta_quantized = zeta_from_gains(&q_quantized, &ctx.betas, &power)?;
    let noise = config.noise_power;

    Ok((
        OptReport {
            objective_trace: trace,
            converged,
            power,
            phases,
            phases_quantized,
            outcome: Outcome::Statistical {
                zeta: zeta_quantized,
                rate_bound: rate_upper_bound(zeta_quantized, noise)?,
                zeta_continuous,
                rate_bound_continuous: rate_upper_bound(zeta_continuous, noise)?,
            },
        },
        details,
    ))
}
