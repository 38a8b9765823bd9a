//! Seeded experiment harness: benchmark schemes, parameter sweeps, and
//! convergence traces, emitted as CSV (with an optional JSON mirror).
//!
//! Determinism contract: every trial derives its own generator as
//! `splitmix64(seed XOR trial_index)`, and each random purpose inside a
//! trial (fading draw, random phase draws) owns an independent stream
//! salted from that trial seed, so any scheme subset reproduces the same
//! draws in any execution order. Trials run in parallel; rows are emitted
//! in (value, trial) order regardless.

use crate::channel::ChannelSet;
use crate::config::ScenarioConfig;
use crate::geometry::build_layout;
use crate::icsi::{self, gda_beamforming, OptReport, Outcome};
use crate::metrics::{
    gains_from_propagated, FairnessIndices, MetricsError, RateReport,
};
use crate::oracles::{exhaustive_search, mc_average_min_rate, McEstimate, OracleError};
use crate::scsi;
use crate::stack::{cascade_apply, PhaseProfile};
use crate::{dbm_to_watts, watts_to_dbm, PowerAlloc, RMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const SALT_FADING: u64 = 0x6661_6465;
const SALT_EQ_PHASES: u64 = 0x6571_7068;
const SALT_GP_PHASES: u64 = 0x6770_7068;
const SALT_MC: u64 = 0x6d63_6d63;

/// Stat-CSI runs quantize to 3 bits unless the caller overrides.
pub const SCSI_DEFAULT_BITS: u32 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Icsi(#[from] crate::icsi::IcsiError),
    #[error(transparent)]
    Scsi(#[from] crate::scsi::ScsiError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// 64-bit mixing finalizer used by the per-trial seed splitter.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Documented splitter: trial seed = splitmix64(base XOR trial index).
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    splitmix64(base ^ trial)
}

fn stream(seed: u64, salt: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(seed ^ salt))
}

/// What a sweep runs per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Proposed instantaneous-CSI pipeline (quantized output).
    Icsi,
    /// Proposed statistical-CSI pipeline.
    Scsi,
    /// One of the comparison schemes.
    Benchmark(BenchScheme),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BenchScheme {
    /// Proposed pipeline without the final quantization.
    Continuous,
    /// Equal power split plus the descent-ascent phase optimizer.
    EqualPowerGda,
    /// Power from the proposed optimizer paired with random phases.
    GpRandom,
    /// Equal power split paired with random phases.
    EqualRandom,
    /// Brute-force search on the quantized grid (statistical objective).
    Exhaustive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Icsi => write!(f, "icsi"),
            Mode::Scsi => write!(f, "scsi"),
            Mode::Benchmark(b) => write!(f, "benchmark:{b}"),
        }
    }
}

impl fmt::Display for BenchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BenchScheme::Continuous => "continuous",
            BenchScheme::EqualPowerGda => "equal+gda",
            BenchScheme::GpRandom => "gp+random",
            BenchScheme::EqualRandom => "equal+random",
            BenchScheme::Exhaustive => "exhaustive",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "icsi" => Ok(Mode::Icsi),
            "scsi" => Ok(Mode::Scsi),
            "benchmark:continuous" => Ok(Mode::Benchmark(BenchScheme::Continuous)),
            "benchmark:equal+gda" => Ok(Mode::Benchmark(BenchScheme::EqualPowerGda)),
            "benchmark:gp+random" => Ok(Mode::Benchmark(BenchScheme::GpRandom)),
            "benchmark:equal+random" => Ok(Mode::Benchmark(BenchScheme::EqualRandom)),
            "benchmark:exhaustive" => Ok(Mode::Benchmark(BenchScheme::Exhaustive)),
            other => Err(format!(
                "unknown mode {other:?}; expected icsi, scsi, or benchmark:{{continuous, \
                 equal+gda, gp+random, equal+random, exhaustive}}"
            )),
        }
    }
}

/// Which scenario knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepVar {
    Layers,
    Elements,
    PowerDbm,
    Bits,
    Users,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SweepVar::Layers => "L",
            SweepVar::Elements => "M",
            SweepVar::PowerDbm => "P_dBm",
            SweepVar::Bits => "b",
            SweepVar::Users => "K",
        };
        write!(f, "{name}")
    }
}

impl FromStr for SweepVar {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l" | "layers" => Ok(SweepVar::Layers),
            "m" | "elements" => Ok(SweepVar::Elements),
            "p" | "p_dbm" | "power" | "power_dbm" => Ok(SweepVar::PowerDbm),
            "b" | "bits" => Ok(SweepVar::Bits),
            "k" | "users" => Ok(SweepVar::Users),
            other => Err(format!(
                "unknown sweep variable {other:?}; expected L, M, P_dBm, b, or K"
            )),
        }
    }
}

/// One sweep request.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub mode: Mode,
    pub sweep_var: SweepVar,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Monte Carlo draws per statistical-CSI trial row.
    pub mc_draws: usize,
    /// Quantization override; `None` keeps the mode default (config bits
    /// for instantaneous runs, 3 for statistical ones).
    pub quant_bits: Option<u32>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ExperimentError::InvalidSpec("no sweep values".into()));
        }
        if self.trials == 0 {
            return Err(ExperimentError::InvalidSpec("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Applies one sweep value onto a base configuration.
pub fn apply_sweep_value(
    base: &ScenarioConfig,
    var: SweepVar,
    value: f64,
) -> Result<ScenarioConfig, ExperimentError> {
    let mut cfg = base.clone();
    match var {
        SweepVar::Layers => cfg.num_layers = value as usize,
        SweepVar::Elements => cfg.elements_per_layer = value as usize,
        SweepVar::PowerDbm => cfg.power_budget = dbm_to_watts(value),
        SweepVar::Bits => cfg.quant_bits = value as u32,
        SweepVar::Users => cfg = cfg.with_users(value as usize),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Flat metrics of one scheme on one trial.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeOutcome {
    pub min_rate: f64,
    pub rate_bound: Option<f64>,
    pub fairness: FairnessIndices,
    pub iterations: usize,
    pub converged: bool,
}

impl SchemeOutcome {
    fn from_report(report: &RateReport, iterations: usize, converged: bool) -> Self {
        Self {
            min_rate: report.min_rate,
            rate_bound: None,
            fairness: report.fairness,
            iterations,
            converged,
        }
    }
}

/// Uniformly random quantized profile on the `bits`-bit grid.
fn random_quantized_profile(
    layers: usize,
    elements: usize,
    bits: u32,
    rng: &mut ChaCha12Rng,
) -> PhaseProfile {
    let levels = 1u64 << bits;
    let step = std::f64::consts::TAU / levels as f64;
    PhaseProfile {
        theta: RMatrix::from_fn(layers, elements, |_, _| {
            rng.gen_range(0..levels) as f64 * step
        }),
        quantized: true,
    }
}

fn evaluate_policy(
    channels: &ChannelSet,
    theta: &PhaseProfile,
    power: &PowerAlloc,
    noise: f64,
) -> Result<RateReport, MetricsError> {
    let h = channels.h.as_ref().expect("instantaneous evaluation needs fading");
    let gains = gains_from_propagated(h, &cascade_apply(theta, channels, &channels.w1), noise);
    RateReport::from_gains(&gains, power)
}

/// All instantaneous-CSI schemes evaluated on one shared fading draw.
#[derive(Debug, Clone)]
pub struct IcsiBenchTrial {
    pub proposed: SchemeOutcome,
    pub continuous: SchemeOutcome,
    pub equal_gda: SchemeOutcome,
    pub gp_random: SchemeOutcome,
    pub equal_random: SchemeOutcome,
    /// Min-rate of the proposed continuous phases re-quantized at each
    /// requested bit width, in the same order as `requant_bits`.
    pub requantized_min_rates: Vec<f64>,
}

/// Runs every instantaneous benchmark on one trial, sharing the proposed
/// optimization run where schemes overlap.
pub fn run_icsi_bench_trial(
    cfg: &ScenarioConfig,
    deterministic: &ChannelSet,
    seed: u64,
    requant_bits: &[u32],
) -> Result<IcsiBenchTrial, ExperimentError> {
    let noise = cfg.noise_power;
    let mut channels = deterministic.clone();
    channels.sample_fading(&mut stream(seed, SALT_FADING));

    let report = icsi::optimize(&channels, cfg)?;
    let (proposed, continuous) = match &report.outcome {
        Outcome::Instantaneous {
            report: quantized,
            report_continuous,
        } => (
            SchemeOutcome::from_report(
                quantized,
                report.objective_trace.len(),
                report.converged,
            ),
            SchemeOutcome::from_report(
                report_continuous,
                report.objective_trace.len(),
                report.converged,
            ),
        ),
        _ => unreachable!(),
    };

    // Equal power plus the same phase optimizer.
    let equal_power = PowerAlloc::equal(cfg.power_budget, cfg.num_users);
    let h = channels.h.as_ref().unwrap();
    let gda = gda_beamforming(&channels, h, &equal_power, noise, &cfg.gda)?;
    let equal_theta = gda.theta.normalized().quantize_all(cfg.quant_bits);
    let equal_gda = SchemeOutcome::from_report(
        &evaluate_policy(&channels, &equal_theta, &equal_power, noise)?,
        gda.trace.len(),
        gda.converged,
    );

    // Optimized power, random phases.
    let layers = channels.layers();
    let m = channels.elements();
    let gp_theta =
        random_quantized_profile(layers, m, cfg.quant_bits, &mut stream(seed, SALT_GP_PHASES));
    let gp_random = SchemeOutcome::from_report(
        &evaluate_policy(&channels, &gp_theta, &report.power, noise)?,
        0,
        true,
    );

    // Equal power, random phases.
    let eq_theta =
        random_quantized_profile(layers, m, cfg.quant_bits, &mut stream(seed, SALT_EQ_PHASES));
    let equal_random = SchemeOutcome::from_report(
        &evaluate_policy(&channels, &eq_theta, &equal_power, noise)?,
        0,
        true,
    );

    let requantized_min_rates = requant_bits
        .iter()
        .map(|&bits| {
            let theta_b = report.phases.quantize_all(bits);
            evaluate_policy(&channels, &theta_b, &report.power, noise).map(|r| r.min_rate)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(IcsiBenchTrial {
        proposed,
        continuous,
        equal_gda,
        gp_random,
        equal_random,
        requantized_min_rates,
    })
}

/// One CSV record; carries the complete physical scenario so any row can
/// be replayed from the file alone (optimizer parameters are the config
/// defaults unless a scenario file overrode them).
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub record: String,
    pub scheme: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub trial: Option<usize>,
    pub trial_seed: Option<u64>,
    pub num_antennas: usize,
    pub num_users: usize,
    pub elements: usize,
    pub layers: usize,
    pub bits: u32,
    pub power_dbm: f64,
    pub carrier_ghz: f64,
    pub element_size_wavelengths: f64,
    pub thickness_wavelengths: f64,
    pub bs_ue_distance_m: f64,
    pub ue_spacing_m: f64,
    pub pathloss_ref_db: f64,
    pub pathloss_exponent: f64,
    pub ref_distance_m: f64,
    pub noise_dbm: f64,
    pub bs_gain_dbi: f64,
    pub base_seed: u64,
    pub min_rate: Option<f64>,
    pub rate_bound: Option<f64>,
    pub fairness_min_max: Option<f64>,
    pub fairness_jain: Option<f64>,
    pub fairness_gini_complement: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub mean_min_rate: Option<f64>,
    pub ci_half_width: Option<f64>,
}

pub const CSV_HEADER: &str = "record,scheme,sweep_var,sweep_value,trial,trial_seed,num_antennas,\
num_users,elements,layers,bits,power_dbm,carrier_ghz,element_size_wavelengths,\
thickness_wavelengths,bs_ue_distance_m,ue_spacing_m,pathloss_ref_db,pathloss_exponent,\
ref_distance_m,noise_dbm,bs_gain_dbi,base_seed,min_rate,rate_bound,fairness_min_max,\
fairness_jain,fairness_gini_complement,iterations,converged,mean_min_rate,ci_half_width";

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        fn opt_f(v: &Option<f64>) -> String {
            v.map(|x| format!("{x:?}")).unwrap_or_default()
        }
        fn opt_u(v: &Option<usize>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{},{},{},{},{},{},{}",
            self.record,
            self.scheme,
            self.sweep_var,
            format_args!("{:?}", self.sweep_value),
            opt_u(&self.trial),
            self.trial_seed.map(|s| s.to_string()).unwrap_or_default(),
            self.num_antennas,
            self.num_users,
            self.elements,
            self.layers,
            self.bits,
            self.power_dbm,
            self.carrier_ghz,
            self.element_size_wavelengths,
            self.thickness_wavelengths,
            self.bs_ue_distance_m,
            self.ue_spacing_m,
            self.pathloss_ref_db,
            self.pathloss_exponent,
            self.ref_distance_m,
            self.noise_dbm,
            self.bs_gain_dbi,
            self.base_seed,
            opt_f(&self.min_rate),
            opt_f(&self.rate_bound),
            opt_f(&self.fairness_min_max),
            opt_f(&self.fairness_jain),
            opt_f(&self.fairness_gini_complement),
            opt_u(&self.iterations),
            self.converged.map(|c| c.to_string()).unwrap_or_default(),
            opt_f(&self.mean_min_rate),
            opt_f(&self.ci_half_width),
        )
    }
}

/// Full sweep output: raw rows then per-value aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.rows.iter().chain(self.aggregates.iter()) {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }
}

fn base_row(
    spec: &SweepSpec,
    cfg: &ScenarioConfig,
    value: f64,
    scheme: &str,
    bits: u32,
) -> SweepRow {
    let wavelength = cfg.wavelength();
    SweepRow {
        record: "trial".into(),
        scheme: scheme.to_string(),
        sweep_var: spec.sweep_var.to_string(),
        sweep_value: value,
        trial: None,
        trial_seed: None,
        num_antennas: cfg.num_bs_antennas,
        num_users: cfg.num_users,
        elements: cfg.elements_per_layer,
        layers: cfg.num_layers,
        bits,
        power_dbm: watts_to_dbm(cfg.power_budget),
        carrier_ghz: cfg.carrier_frequency / 1e9,
        element_size_wavelengths: cfg.element_size_x / wavelength,
        thickness_wavelengths: cfg.sim_thickness / wavelength,
        bs_ue_distance_m: cfg.bs_ue_distance,
        ue_spacing_m: cfg.ue_spacing,
        pathloss_ref_db: crate::linear_to_db(cfg.pathloss_ref),
        pathloss_exponent: cfg.pathloss_exponent,
        ref_distance_m: cfg.ref_distance,
        noise_dbm: watts_to_dbm(cfg.noise_power),
        bs_gain_dbi: crate::linear_to_db(cfg.bs_antenna_gain * cfg.bs_antenna_gain),
        base_seed: spec.seed,
        min_rate: None,
        rate_bound: None,
        fairness_min_max: None,
        fairness_jain: None,
        fairness_gini_complement: None,
        iterations: None,
        converged: None,
        mean_min_rate: None,
        ci_half_width: None,
    }
}

fn fill_outcome(row: &mut SweepRow, outcome: &SchemeOutcome) {
    row.min_rate = Some(outcome.min_rate);
    row.rate_bound = outcome.rate_bound;
    row.fairness_min_max = Some(outcome.fairness.min_max);
    row.fairness_jain = Some(outcome.fairness.jain);
    row.fairness_gini_complement = Some(outcome.fairness.gini_complement);
    row.iterations = Some(outcome.iterations);
    row.converged = Some(outcome.converged);
}

/// Runs one sweep; rows come back in (value, trial) order.
pub fn run_sweep(spec: &SweepSpec, base: &ScenarioConfig) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();

    for &value in &spec.values {
        let mut cfg = apply_sweep_value(base, spec.sweep_var, value)?;
        if let Some(bits) = spec.quant_bits {
            cfg.quant_bits = bits;
        } else if spec.sweep_var != SweepVar::Bits
            && matches!(spec.mode, Mode::Scsi | Mode::Benchmark(BenchScheme::Exhaustive))
        {
            cfg.quant_bits = SCSI_DEFAULT_BITS;
        }
        let layout = build_layout(&cfg)?;
        let deterministic = ChannelSet::build(&cfg, &layout)?;

        let value_rows: Vec<Result<SweepRow, ExperimentError>> = match spec.mode {
            Mode::Icsi
            | Mode::Benchmark(
                BenchScheme::Continuous
                | BenchScheme::EqualPowerGda
                | BenchScheme::GpRandom
                | BenchScheme::EqualRandom,
            ) => (0..spec.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = trial_seed(spec.seed, trial as u64);
                    let outcome = run_icsi_scheme(spec.mode, &cfg, &deterministic, seed)?;
                    let mut row = base_row(spec, &cfg, value, &spec.mode.to_string(), cfg.quant_bits);
                    row.trial = Some(trial);
                    row.trial_seed = Some(seed);
                    fill_outcome(&mut row, &outcome);
                    Ok(row)
                })
                .collect(),
            Mode::Scsi => {
                // One deterministic optimization per value; trials vary
                // only the Monte Carlo evaluation of the true average.
                let report = scsi::optimize(&deterministic, &cfg)?;
                let bound = match &report.outcome {
                    Outcome::Statistical { rate_bound, .. } => *rate_bound,
                    _ => unreachable!(),
                };
                (0..spec.trials)
                    .into_par_iter()
                    .map(|trial| {
                        let seed = trial_seed(spec.seed, trial as u64);
                        let mc = mc_policy_rate(&deterministic, &report, &cfg, seed, spec.mc_draws);
                        let mut row =
                            base_row(spec, &cfg, value, &spec.mode.to_string(), cfg.quant_bits);
                        row.trial = Some(trial);
                        row.trial_seed = Some(seed);
                        row.min_rate = Some(mc.mean);
                        row.ci_half_width = Some(mc.ci_half_width);
                        row.rate_bound = Some(bound);
                        row.iterations = Some(report.objective_trace.len());
                        row.converged = Some(report.converged);
                        Ok(row)
                    })
                    .collect()
            }
            Mode::Benchmark(BenchScheme::Exhaustive) => {
                let result = exhaustive_search(
                    &deterministic,
                    cfg.quant_bits,
                    0.01,
                    cfg.power_budget,
                    cfg.noise_power,
                )?;
                (0..spec.trials)
                    .into_par_iter()
                    .map(|trial| {
                        let seed = trial_seed(spec.seed, trial as u64);
                        let mc = mc_at(
                            &deterministic,
                            &result.theta,
                            &result.power,
                            &cfg,
                            seed,
                            spec.mc_draws,
                        );
                        let mut row =
                            base_row(spec, &cfg, value, &spec.mode.to_string(), cfg.quant_bits);
                        row.trial = Some(trial);
                        row.trial_seed = Some(seed);
                        row.min_rate = Some(mc.mean);
                        row.ci_half_width = Some(mc.ci_half_width);
                        row.rate_bound = Some(result.objective);
                        row.iterations = Some(0);
                        row.converged = Some(true);
                        Ok(row)
                    })
                    .collect()
            }
        };

        let mut min_rates = Vec::with_capacity(spec.trials);
        let mut bounds = Vec::new();
        for row in value_rows {
            let row = row?;
            if let Some(r) = row.min_rate {
                min_rates.push(r);
            }
            if let Some(b) = row.rate_bound {
                bounds.push(b);
            }
            rows.push(row);
        }

        let mut agg = base_row(spec, &cfg, value, &spec.mode.to_string(), cfg.quant_bits);
        agg.record = "aggregate".into();
        let (mean, ci) = mean_ci(&min_rates);
        agg.mean_min_rate = Some(mean);
        agg.ci_half_width = Some(ci);
        if !bounds.is_empty() {
            agg.rate_bound = Some(bounds.iter().sum::<f64>() / bounds.len() as f64);
        }
        aggregates.push(agg);
    }

    Ok(SweepResult { rows, aggregates })
}

/// Runs exactly one instantaneous scheme, doing only the work it needs:
/// random-phase schemes skip every optimizer except the power source they
/// quote, and the descent-ascent benchmark skips the alternation.
fn run_icsi_scheme(
    mode: Mode,
    cfg: &ScenarioConfig,
    deterministic: &ChannelSet,
    seed: u64,
) -> Result<SchemeOutcome, ExperimentError> {
    let noise = cfg.noise_power;
    let mut channels = deterministic.clone();
    channels.sample_fading(&mut stream(seed, SALT_FADING));
    let layers = channels.layers();
    let m = channels.elements();

    Ok(match mode {
        Mode::Icsi | Mode::Benchmark(BenchScheme::Continuous) => {
            let report = icsi::optimize(&channels, cfg)?;
            let iterations = report.objective_trace.len();
            let converged = report.converged;
            match (&report.outcome, mode) {
                (Outcome::Instantaneous { report: q, .. }, Mode::Icsi) => {
                    SchemeOutcome::from_report(q, iterations, converged)
                }
                (
                    Outcome::Instantaneous {
                        report_continuous, ..
                    },
                    _,
                ) => SchemeOutcome::from_report(report_continuous, iterations, converged),
                _ => unreachable!(),
            }
        }
        Mode::Benchmark(BenchScheme::GpRandom) => {
            let report = icsi::optimize(&channels, cfg)?;
            let theta = random_quantized_profile(
                layers,
                m,
                cfg.quant_bits,
                &mut stream(seed, SALT_GP_PHASES),
            );
            SchemeOutcome::from_report(
                &evaluate_policy(&channels, &theta, &report.power, noise)?,
                0,
                true,
            )
        }
        Mode::Benchmark(BenchScheme::EqualPowerGda) => {
            let equal_power = PowerAlloc::equal(cfg.power_budget, cfg.num_users);
            let h = channels.h.as_ref().unwrap();
            let gda = gda_beamforming(&channels, h, &equal_power, noise, &cfg.gda)?;
            let theta = gda.theta.normalized().quantize_all(cfg.quant_bits);
            SchemeOutcome::from_report(
                &evaluate_policy(&channels, &theta, &equal_power, noise)?,
                gda.trace.len(),
                gda.converged,
            )
        }
        Mode::Benchmark(BenchScheme::EqualRandom) => {
            let equal_power = PowerAlloc::equal(cfg.power_budget, cfg.num_users);
            let theta = random_quantized_profile(
                layers,
                m,
                cfg.quant_bits,
                &mut stream(seed, SALT_EQ_PHASES),
            );
            SchemeOutcome::from_report(
                &evaluate_policy(&channels, &theta, &equal_power, noise)?,
                0,
                true,
            )
        }
        Mode::Scsi | Mode::Benchmark(BenchScheme::Exhaustive) => unreachable!(),
    })
}

fn mc_policy_rate(
    deterministic: &ChannelSet,
    report: &OptReport,
    cfg: &ScenarioConfig,
    seed: u64,
    draws: usize,
) -> McEstimate {
    mc_at(
        deterministic,
        &report.phases_quantized,
        &report.power,
        cfg,
        seed,
        draws,
    )
}

fn mc_at(
    deterministic: &ChannelSet,
    theta: &PhaseProfile,
    power: &PowerAlloc,
    cfg: &ScenarioConfig,
    seed: u64,
    draws: usize,
) -> McEstimate {
    let mut rng = stream(seed, SALT_MC);
    mc_average_min_rate(
        theta,
        power,
        deterministic,
        cfg.noise_power,
        draws.max(1),
        &mut rng,
    )
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// One inner-iteration record: the enclosing round's objective (balanced
/// SINR or bound denominator), the inner surrogate value, and the two
/// step sizes — (ascent, descent) for the instantaneous mode, (descent, 0)
/// for the statistical one.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InnerTraceRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub outer_objective: f64,
    pub objective: f64,
    pub primary_step: f64,
    pub secondary_step: f64,
}

/// Per-outer-iteration objective trace of one run.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTrace {
    pub mode: String,
    pub outer: Vec<f64>,
    pub converged: bool,
    pub inner: Vec<InnerTraceRow>,
}

impl ConvergenceTrace {
    pub fn outer_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (i, obj) in self.outer.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", i + 1, obj));
        }
        out
    }

    pub fn inner_csv(&self) -> String {
        let mut out =
            String::from("outer_iter,inner_iter,outer_objective,objective,primary_step,secondary_step\n");
        for r in &self.inner {
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?}\n",
                r.outer_iter,
                r.inner_iter,
                r.outer_objective,
                r.objective,
                r.primary_step,
                r.secondary_step
            ));
        }
        out
    }
}

/// Runs one seeded optimization and returns its convergence trace plus
/// the final report. `channels` may be preloaded (for example from an
/// archive) to share identical propagation state across runs; otherwise
/// it is built from the configuration.
pub fn run_convergence_with(
    mode: Mode,
    cfg: &ScenarioConfig,
    seed: u64,
    channels: Option<ChannelSet>,
) -> Result<(ConvergenceTrace, OptReport), ExperimentError> {
    let mut channels = match channels {
        Some(c) => c,
        None => {
            let layout = build_layout(cfg)?;
            ChannelSet::build(cfg, &layout)?
        }
    };
    match mode {
        Mode::Icsi => {
            if channels.h.is_none() {
                channels.sample_fading(&mut stream(seed, SALT_FADING));
            }
            let (report, details) = icsi::optimize_detailed(&channels, cfg)?;
            let inner = details
                .iter()
                .flat_map(|d| {
                    d.inner.iter().map(move |row| InnerTraceRow {
                        outer_iter: d.outer_iter,
                        inner_iter: row.iter,
                        outer_objective: d.t_star,
                        objective: row.objective,
                        primary_step: row.ascent_step,
                        secondary_step: row.descent_step,
                    })
                })
                .collect();
            Ok((
                ConvergenceTrace {
                    mode: mode.to_string(),
                    outer: report.objective_trace.clone(),
                    converged: report.converged,
                    inner,
                },
                report,
            ))
        }
        Mode::Scsi => {
            let (report, details) = scsi::optimize_detailed(&channels, cfg)?;
            let inner = details
                .iter()
                .flat_map(|d| {
                    d.inner.iter().map(move |row| InnerTraceRow {
                        outer_iter: d.outer_iter,
                        inner_iter: row.iter,
                        outer_objective: d.zeta,
                        objective: row.zeta,
                        primary_step: row.step,
                        secondary_step: 0.0,
                    })
                })
                .collect();
            Ok((
                ConvergenceTrace {
                    mode: mode.to_string(),
                    outer: report.objective_trace.clone(),
                    converged: report.converged,
                    inner,
                },
                report,
            ))
        }
        Mode::Benchmark(_) => Err(ExperimentError::InvalidSpec(
            "convergence traces exist for the icsi and scsi modes only".into(),
        )),
    }
}

/// Runs one seeded optimization and returns its convergence trace.
pub fn run_convergence(
    mode: Mode,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<ConvergenceTrace, ExperimentError> {
    let cfg = match mode {
        Mode::Scsi => {
            let mut c = cfg.clone();
            c.quant_bits = SCSI_DEFAULT_BITS;
            c
        }
        _ => cfg.clone(),
    };
    run_convergence_with(mode, &cfg, seed, None).map(|(trace, _)| trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.elements_per_layer = 4;
        cfg.num_layers = 2;
        cfg.num_users = 2;
        cfg.num_bs_antennas = 2;
        cfg.gda.max_iters = 60;
        cfg.gd.max_iters = 60;
        cfg
    }

    #[test]
    fn seed_splitter_is_stable_and_spreads() {
        assert_eq!(trial_seed(1, 0), trial_seed(1, 0));
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
    }

    #[test]
    fn mode_and_var_parsing() {
        assert_eq!(Mode::from_str("icsi").unwrap(), Mode::Icsi);
        assert_eq!(
            Mode::from_str("benchmark:equal+random").unwrap(),
            Mode::Benchmark(BenchScheme::EqualRandom)
        );
        assert!(Mode::from_str("nope").is_err());
        assert_eq!(SweepVar::from_str("L").unwrap(), SweepVar::Layers);
        assert_eq!(SweepVar::from_str("p_dbm").unwrap(), SweepVar::PowerDbm);
        assert!(SweepVar::from_str("zz").is_err());
    }

    #[test]
    fn sweep_rows_are_deterministic() {
        let spec = SweepSpec {
            mode: Mode::Benchmark(BenchScheme::EqualRandom),
            sweep_var: SweepVar::Layers,
            values: vec![1.0, 2.0],
            trials: 3,
            seed: 9,
            mc_draws: 10,
            quant_bits: None,
        };
        let cfg = tiny_config();
        let a = run_sweep(&spec, &cfg).unwrap().to_csv();
        let b = run_sweep(&spec, &cfg).unwrap().to_csv();
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
        // 2 values x 3 trials + 2 aggregates.
        assert_eq!(a.trim_end().lines().count(), 1 + 6 + 2);
    }

    #[test]
    fn equal_random_changes_with_trial() {
        let spec = SweepSpec {
            mode: Mode::Benchmark(BenchScheme::EqualRandom),
            sweep_var: SweepVar::Layers,
            values: vec![2.0],
            trials: 4,
            seed: 3,
            mc_draws: 10,
            quant_bits: None,
        };
        let out = run_sweep(&spec, &tiny_config()).unwrap();
        let rates: Vec<f64> = out.rows.iter().map(|r| r.min_rate.unwrap()).collect();
        assert!(rates.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let spec = SweepSpec {
            mode: Mode::Benchmark(BenchScheme::EqualRandom),
            sweep_var: SweepVar::PowerDbm,
            values: vec![0.0],
            trials: 5,
            seed: 14,
            mc_draws: 10,
            quant_bits: None,
        };
        let out = run_sweep(&spec, &tiny_config()).unwrap();
        let rates: Vec<f64> = out.rows.iter().map(|r| r.min_rate.unwrap()).collect();
        let (mean, ci) = mean_ci(&rates);
        assert_eq!(out.aggregates[0].mean_min_rate, Some(mean));
        assert_eq!(out.aggregates[0].ci_half_width, Some(ci));
    }

    #[test]
    fn scsi_sweep_reports_bound_and_mc() {
        let spec = SweepSpec {
            mode: Mode::Scsi,
            sweep_var: SweepVar::PowerDbm,
            values: vec![10.0],
            trials: 2,
            seed: 5,
            mc_draws: 50,
            quant_bits: None,
        };
        let out = run_sweep(&spec, &tiny_config()).unwrap();
        for row in &out.rows {
            assert_eq!(row.bits, SCSI_DEFAULT_BITS);
            let bound = row.rate_bound.unwrap();
            let mc = row.min_rate.unwrap();
            assert!(bound.is_finite() && bound > 0.0);
            assert!(mc.is_finite() && mc >= 0.0);
        }
    }

    #[test]
    fn bit_sweep_keeps_swept_bits() {
        // The statistical default must not clobber a swept quantization.
        let spec = SweepSpec {
            mode: Mode::Scsi,
            sweep_var: SweepVar::Bits,
            values: vec![1.0, 4.0],
            trials: 1,
            seed: 5,
            mc_draws: 10,
            quant_bits: None,
        };
        let out = run_sweep(&spec, &tiny_config()).unwrap();
        let bits: Vec<u32> = out.rows.iter().map(|r| r.bits).collect();
        assert_eq!(bits, vec![1, 4]);
        // Coarser quantization cannot beat finer on the bound.
        let bounds: Vec<f64> = out.rows.iter().map(|r| r.rate_bound.unwrap()).collect();
        assert!(bounds[0] <= bounds[1] * (1.0 + 1e-9));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SweepSpec {
            mode: Mode::Icsi,
            sweep_var: SweepVar::Layers,
            values: vec![],
            trials: 1,
            seed: 0,
            mc_draws: 10,
            quant_bits: None,
        };
        assert!(run_sweep(&spec, &tiny_config()).is_err());
        spec.values = vec![1.0];
        spec.trials = 0;
        assert!(run_sweep(&spec, &tiny_config()).is_err());
        // Non-square element sweep value fails config validation.
        spec.trials = 1;
        spec.sweep_var = SweepVar::Elements;
        spec.values = vec![5.0];
        assert!(run_sweep(&spec, &tiny_config()).is_err());
    }

    #[test]
    fn convergence_traces_monotone() {
        let cfg = tiny_config();
        let icsi_trace = run_convergence(Mode::Icsi, &cfg, 11).unwrap();
        assert!(!icsi_trace.outer.is_empty());
        assert!(icsi_trace.outer.len() <= icsi::OUTER_MAX_ITERS);
        for w in icsi_trace.outer.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-8), "icsi outer must not decrease");
        }
        let scsi_trace = run_convergence(Mode::Scsi, &cfg, 11).unwrap();
        assert!(!scsi_trace.outer.is_empty());
        for w in scsi_trace.outer.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-8), "scsi outer must not increase");
        }
        let csv = icsi_trace.outer_csv();
        assert!(csv.starts_with("iteration,objective"));
        assert!(run_convergence(Mode::Benchmark(BenchScheme::EqualRandom), &cfg, 1).is_err());
    }
}
