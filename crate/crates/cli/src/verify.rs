//! Built-in oracle replay: every analytic piece of the pipeline checked
//! against an independent reference at small scale.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use simfair_core::channel::{psd_sqrt, standard_complex_gaussian, ChannelSet};
use simfair_core::icsi::{
    gp_power_allocation, phase_gradient as icsi_gradient, project_simplex, FairnessWeights,
};
use simfair_core::metrics::{gains_from_propagated, sinr, LinkGains};
use simfair_core::oracles::{
    exp_e1_quadrature, finite_diff_gradient, fixed_point_power, project_simplex_reference,
};
use simfair_core::scsi::{
    beam_gains, exp_e1, phase_gradient as scsi_gradient, power_allocation, zeta, ZetaContext,
};
use simfair_core::stack::{cascade_apply, BeamformerCascade, PhaseProfile};
use simfair_core::{CMatrix, PowerAlloc, RMatrix, RVector};

fn random_channels(m: usize, n: usize, layers: usize, rng: &mut ChaCha12Rng) -> ChannelSet {
    let w1 = CMatrix::from_fn(m, n, |_, _| standard_complex_gaussian(rng));
    let w_inter = (1..layers)
        .map(|_| CMatrix::from_fn(m, m, |_, _| standard_complex_gaussian(rng)))
        .collect();
    let x = CMatrix::from_fn(m, m, |_, _| standard_complex_gaussian(rng));
    let r = &x * x.adjoint() / Complex::new(m as f64, 0.0);
    let (r_sqrt, eig_values, eig_vectors) = psd_sqrt(&r).unwrap();
    ChannelSet {
        w1,
        w_inter,
        r_ris: r,
        r_sqrt,
        eig_values,
        eig_vectors,
        betas: RVector::from_fn(n, |_, _| 0.5 + rng.gen::<f64>()),
        h: None,
    }
}

fn random_profile(layers: usize, m: usize, rng: &mut ChaCha12Rng) -> PhaseProfile {
    PhaseProfile {
        theta: RMatrix::from_fn(layers, m, |_, _| rng.gen::<f64>() * std::f64::consts::TAU),
        quantized: false,
    }
}

fn report(name: &str, pass: bool, detail: String) -> u32 {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("{tag}  {name}: {detail}");
    u32::from(!pass)
}

/// Runs every check; returns the number of failures.
pub fn run_all(seed: u64) -> u32 {
    let mut failures = 0;
    failures += gradient_instantaneous(seed);
    failures += gradient_statistical(seed);
    failures += simplex_projection(seed);
    failures += power_control(seed);
    failures += closed_form_power(seed);
    failures += exponential_integral();
    failures += cascade_identity(seed);
    failures
}

fn gradient_instantaneous(seed: u64) -> u32 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let (m, n, layers) = (6, 3, 2);
        let ch = random_channels(m, n, layers, &mut rng);
        let h = CMatrix::from_fn(m, n, |_, _| standard_complex_gaussian(&mut rng));
        let p = PowerAlloc::new(RVector::from_fn(n, |_, _| 0.2 + rng.gen::<f64>()));
        let raw = RVector::from_fn(n, |_, _| rng.gen::<f64>());
        let weights = FairnessWeights {
            lam: &raw / raw.sum(),
        };
        let noise = 0.5;
        let theta = random_profile(layers, m, &mut rng);
        let analytic = icsi_gradient(&theta, &ch, &h, &p, &weights, noise).unwrap();
        let numeric = finite_diff_gradient(
            |t: &RMatrix| {
                let prof = PhaseProfile {
                    theta: t.clone(),
                    quantized: false,
                };
                let gains = gains_from_propagated(&h, &cascade_apply(&prof, &ch, &ch.w1), noise);
                weights.lam.dot(&sinr(&gains, &p))
            },
            &theta.theta,
            1e-6,
        )
        .unwrap();
        worst = worst.max((&analytic - &numeric).norm() / numeric.norm());
    }
    report(
        "gradient-instantaneous",
        worst <= 1e-5,
        format!("worst rel l2 error {worst:.2e} (tol 1e-5)"),
    )
}

fn gradient_statistical(seed: u64) -> u32 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xa5a5);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let (m, n, layers) = (6, 3, 2);
        let ch = random_channels(m, n, layers, &mut rng);
        let ctx = ZetaContext::new(&ch);
        let p = PowerAlloc::new(RVector::from_fn(n, |_, _| 0.2 + rng.gen::<f64>()));
        let theta = random_profile(layers, m, &mut rng);
        let analytic = scsi_gradient(&ctx, &theta, &ch, &p).unwrap();
        let numeric = finite_diff_gradient(
            |t: &RMatrix| {
                let prof = PhaseProfile {
                    theta: t.clone(),
                    quantized: false,
                };
                zeta(&ctx, &prof, &ch, &p).unwrap()
            },
            &theta.theta,
            1e-6,
        )
        .unwrap();
        worst = worst.max((&analytic - &numeric).norm() / numeric.norm());
    }
    report(
        "gradient-statistical",
        worst <= 1e-5,
        format!("worst rel l2 error {worst:.2e} (tol 1e-5)"),
    )
}

fn simplex_projection(seed: u64) -> u32 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x51);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = 1 + rng.gen_range(0..16);
        let v = RVector::from_fn(k, |_, _| rng.gen::<f64>() * 8.0 - 4.0);
        let bisected = project_simplex(&v, 1e-8);
        let reference = project_simplex_reference(&v);
        worst = worst.max((bisected - reference).amax());
    }
    report(
        "simplex-projection",
        worst <= 1e-6,
        format!("worst deviation {worst:.2e} (tol 1e-6)"),
    )
}

fn power_control(seed: u64) -> u32 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9c);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = 4;
        let mut s = RMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() * 0.5);
        for u in 0..k {
            s[(u, u)] = 1.0 + rng.gen::<f64>() * 3.0;
        }
        let gains = LinkGains { s, noise: 0.1 };
        let (_, t_bisect) = gp_power_allocation(&gains, 2.0).unwrap();
        let (_, t_fixed) = fixed_point_power(&gains, 2.0).unwrap();
        worst = worst.max((t_bisect - t_fixed).abs() / t_fixed);
    }
    report(
        "power-control",
        worst <= 1e-6,
        format!("worst |dt*|/t* {worst:.2e} (tol 1e-6)"),
    )
}

fn closed_form_power(seed: u64) -> u32 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x77);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let k = 4;
        let gains = RVector::from_fn(k, |_, _| 0.1 + rng.gen::<f64>() * 5.0);
        let betas = RVector::from_fn(k, |_, _| 0.1 + rng.gen::<f64>());
        let p = power_allocation(&gains, &betas, 1.0).unwrap();
        let ratios: Vec<f64> = (0..k)
            .map(|u| 1.0 / (betas[u] * gains[u] * p.watts[u] * p.watts[u]))
            .collect();
        for r in &ratios {
            worst = worst.max((r - ratios[0]).abs() / ratios[0]);
        }
    }
    report(
        "closed-form-power",
        worst <= 1e-9,
        format!("worst KKT residual {worst:.2e} (tol 1e-9)"),
    )
}

fn exponential_integral() -> u32 {
    let mut worst: f64 = 0.0;
    for x in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let implemented = exp_e1(x).unwrap();
        let quadrature = exp_e1_quadrature(x);
        worst = worst.max((implemented - quadrature).abs() / quadrature);
    }
    report(
        "exponential-integral",
        worst <= 1e-8,
        format!("worst rel error vs quadrature {worst:.2e} (tol 1e-8)"),
    )
}

fn cascade_identity(seed: u64) -> u32 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xca);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (m, layers) = (5, 4);
        let ch = random_channels(m, 2, layers, &mut rng);
        let theta = random_profile(layers, m, &mut rng);
        let cascade = BeamformerCascade::build(&theta, &ch).unwrap();
        for l in 1..=layers {
            let (a, b) = cascade.partial_products(l).unwrap();
            let phasors = theta.layer_phasors(l - 1);
            let mut mid = a.clone();
            for (i, ph) in phasors.iter().enumerate() {
                for j in 0..mid.ncols() {
                    mid[(i, j)] *= ph;
                }
            }
            worst = worst.max((b * mid - &cascade.g).norm() / cascade.g.norm());
        }
        // Beam gains stay consistent between the eigen-sum and the
        // quadratic form along the way.
        let ctx = ZetaContext::new(&ch);
        let q = beam_gains(&ctx, &theta, &ch);
        let gw = &cascade.g * &ch.w1;
        for k in 0..2 {
            let col = gw.column(k);
            let direct = (col.adjoint() * &ch.r_ris * col)[(0, 0)].re;
            worst = worst.max((q[k] - direct).abs() / direct.max(1e-30));
        }
    }
    report(
        "cascade-identity",
        worst <= 1e-10,
        format!("worst rel error {worst:.2e} (tol 1e-10)"),
    )
}
