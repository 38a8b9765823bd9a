//! Scenario configuration: physical constants, array sizes, and optimizer
//! parameters, loadable from a TOML key-value file.
//!
//! Defaults reproduce the reference simulation setup: 28 GHz carrier,
//! half-wavelength elements, a five-wavelength-thick stack, users on a
//! 10 m-spaced line at 10 m range, -30 dB reference path loss with
//! exponent 3.5, -90 dBm noise, and a 10 dBm power budget.

use crate::{db_to_linear, dbm_to_watts, SPEED_OF_LIGHT};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not parse config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Step-size and convergence parameters of the descent-ascent phase
/// optimizer used under instantaneous CSI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdaParams {
    /// Backtracking shrink factor for the ascent step, in (0,1).
    pub kappa: f64,
    /// Sufficient-increase slope of the backtracking test, in (0,1).
    pub nu: f64,
    /// Time-scale ratio between the descent and ascent steps (> 1 keeps
    /// the minimization over the fairness weights dominant).
    pub tau: f64,
    /// Bisection accuracy of the simplex projection.
    pub proj_accuracy: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Initial ascent step, reset at every iteration.
    pub step0: f64,
    /// Relative objective-change tolerance.
    pub conv_tol: f64,
}

impl Default for GdaParams {
    fn default() -> Self {
        Self {
            kappa: 0.8,
            nu: 0.3,
            tau: 10.0,
            proj_accuracy: 1e-4,
            max_iters: 500,
            step0: 1.0,
            conv_tol: 1e-4,
        }
    }
}

/// Parameters of the descent-only phase optimizer used under statistical
/// CSI. Same semantics as [`GdaParams`] minus the ascent machinery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdParams {
    pub kappa: f64,
    pub nu: f64,
    /// Initial descent step, reset at every iteration.
    pub step0: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
}

impl Default for GdParams {
    fn default() -> Self {
        Self {
            kappa: 0.8,
            nu: 0.3,
            step0: 1.0,
            max_iters: 500,
            conv_tol: 1e-4,
        }
    }
}

/// All physical and algorithmic constants of one scenario.
///
/// Linear units internally: lengths in meters, powers in watts, gains as
/// linear factors. dB/dBm conversion happens at the file/CLI boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Carrier frequency, Hz.
    pub carrier_frequency: f64,
    /// Number of BS antennas; one data stream per antenna, so this always
    /// equals `num_users`.
    pub num_bs_antennas: usize,
    /// Number of single-antenna users.
    pub num_users: usize,
    /// Scattering elements per layer; must be a perfect square (square grid).
    pub elements_per_layer: usize,
    /// Number of metasurface layers.
    pub num_layers: usize,
    /// Element length along x, meters.
    pub element_size_x: f64,
    /// Element width along y, meters.
    pub element_size_y: f64,
    /// Total stack thickness, meters.
    pub sim_thickness: f64,
    /// Perpendicular BS-user distance, meters.
    pub bs_ue_distance: f64,
    /// Spacing between consecutive users along y, meters.
    pub ue_spacing: f64,
    /// Reference path gain at `ref_distance`, linear power ratio.
    pub pathloss_ref: f64,
    /// Path loss exponent.
    pub pathloss_exponent: f64,
    /// Reference distance, meters.
    pub ref_distance: f64,
    /// Noise power per user, watts.
    pub noise_power: f64,
    /// Total transmit power budget, watts.
    pub power_budget: f64,
    /// BS antenna gain as a linear amplitude factor applied to each column
    /// of the BS-to-first-layer matrix.
    pub bs_antenna_gain: f64,
    /// Phase-shift quantization bits.
    pub quant_bits: u32,
    /// Base RNG seed.
    pub rng_seed: u64,
    /// Descent-ascent optimizer parameters (instantaneous CSI).
    pub gda: GdaParams,
    /// Descent optimizer parameters (statistical CSI).
    pub gd: GdParams,
}

impl ScenarioConfig {
    /// Wavelength in meters, derived from the carrier frequency.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Side length of the square element grid.
    pub fn grid_side(&self) -> usize {
        (self.elements_per_layer as f64).sqrt().round() as usize
    }

    /// Checks every structural invariant; call before building a layout.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.carrier_frequency <= 0.0 {
            return fail("carrier frequency must be positive".into());
        }
        if self.num_users == 0 || self.num_bs_antennas == 0 {
            return fail("user and antenna counts must be nonzero".into());
        }
        if self.num_bs_antennas != self.num_users {
            return fail(format!(
                "one stream per antenna requires num_bs_antennas ({}) == num_users ({})",
                self.num_bs_antennas, self.num_users
            ));
        }
        let side = self.grid_side();
        if side * side != self.elements_per_layer || self.elements_per_layer == 0 {
            return fail(format!(
                "elements_per_layer ({}) must be a nonzero perfect square",
                self.elements_per_layer
            ));
        }
        if self.num_layers == 0 {
            return fail("num_layers must be nonzero".into());
        }
        for (name, v) in [
            ("element_size_x", self.element_size_x),
            ("element_size_y", self.element_size_y),
            ("sim_thickness", self.sim_thickness),
            ("bs_ue_distance", self.bs_ue_distance),
            ("ue_spacing", self.ue_spacing),
            ("ref_distance", self.ref_distance),
            ("pathloss_ref", self.pathloss_ref),
            ("noise_power", self.noise_power),
            ("power_budget", self.power_budget),
            ("bs_antenna_gain", self.bs_antenna_gain),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.bs_ue_distance <= self.sim_thickness {
            return fail("users must lie beyond the stack (bs_ue_distance > sim_thickness)".into());
        }
        if self.quant_bits == 0 || self.quant_bits > 30 {
            return fail(format!("quant_bits must be in 1..=30, got {}", self.quant_bits));
        }
        for (name, v, lo, hi) in [
            ("gda.kappa", self.gda.kappa, 0.0, 1.0),
            ("gda.nu", self.gda.nu, 0.0, 1.0),
            ("gd.kappa", self.gd.kappa, 0.0, 1.0),
            ("gd.nu", self.gd.nu, 0.0, 1.0),
        ] {
            if !(v > lo && v < hi) {
                return fail(format!("{name} must lie strictly in ({lo},{hi}), got {v}"));
            }
        }
        if !(self.gda.tau > 0.0) || !(self.gda.proj_accuracy > 0.0) {
            return fail("gda.tau and gda.proj_accuracy must be positive".into());
        }
        Ok(())
    }

    /// Loads a TOML file; keys absent from the file keep their defaults.
    /// Distances are meters except element/stack sizes, which the file
    /// states in wavelengths; powers and gains are dB/dBm in the file.
    pub fn from_toml_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text)?;
        let cfg = file.into_config();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Returns a copy with the user count (and therefore antenna count) replaced.
    pub fn with_users(&self, k: usize) -> Self {
        let mut c = self.clone();
        c.num_users = k;
        c.num_bs_antennas = k;
        c
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let carrier_frequency = 28e9;
        let wavelength = SPEED_OF_LIGHT / carrier_frequency;
        Self {
            carrier_frequency,
            num_bs_antennas: 4,
            num_users: 4,
            elements_per_layer: 36,
            num_layers: 4,
            element_size_x: wavelength / 2.0,
            element_size_y: wavelength / 2.0,
            sim_thickness: 5.0 * wavelength,
            bs_ue_distance: 10.0,
            ue_spacing: 10.0,
            pathloss_ref: db_to_linear(-30.0),
            pathloss_exponent: 3.5,
            ref_distance: 1.0,
            noise_power: dbm_to_watts(-90.0),
            power_budget: dbm_to_watts(10.0),
            bs_antenna_gain: db_to_linear(5.0).sqrt(),
            quant_bits: 8,
            rng_seed: 1,
            gda: GdaParams::default(),
            gd: GdParams::default(),
        }
    }
}

/// On-disk representation; every field optional with Table-like defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    carrier_frequency_hz: Option<f64>,
    num_users: Option<usize>,
    elements_per_layer: Option<usize>,
    num_layers: Option<usize>,
    element_size_wavelengths: Option<f64>,
    sim_thickness_wavelengths: Option<f64>,
    bs_ue_distance_m: Option<f64>,
    ue_spacing_m: Option<f64>,
    pathloss_ref_db: Option<f64>,
    pathloss_exponent: Option<f64>,
    ref_distance_m: Option<f64>,
    noise_power_dbm: Option<f64>,
    power_budget_dbm: Option<f64>,
    bs_antenna_gain_dbi: Option<f64>,
    quant_bits: Option<u32>,
    rng_seed: Option<u64>,
    #[serde(default)]
    gda: Option<GdaParams>,
    #[serde(default)]
    gd: Option<GdParams>,
}

impl FileConfig {
    fn into_config(self) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        if let Some(f) = self.carrier_frequency_hz {
            cfg.carrier_frequency = f;
        }
        let wavelength = cfg.wavelength();
        // Element and stack sizes track the (possibly overridden) carrier.
        let el = self.element_size_wavelengths.unwrap_or(0.5);
        cfg.element_size_x = el * wavelength;
        cfg.element_size_y = el * wavelength;
        cfg.sim_thickness = self.sim_thickness_wavelengths.unwrap_or(5.0) * wavelength;
        if let Some(k) = self.num_users {
            cfg.num_users = k;
            cfg.num_bs_antennas = k;
        }
        if let Some(m) = self.elements_per_layer {
            cfg.elements_per_layer = m;
        }
        if let Some(l) = self.num_layers {
            cfg.num_layers = l;
        }
        if let Some(d) = self.bs_ue_distance_m {
            cfg.bs_ue_distance = d;
        }
        if let Some(d) = self.ue_spacing_m {
            cfg.ue_spacing = d;
        }
        if let Some(db) = self.pathloss_ref_db {
            cfg.pathloss_ref = db_to_linear(db);
        }
        if let Some(a) = self.pathloss_exponent {
            cfg.pathloss_exponent = a;
        }
        if let Some(d) = self.ref_distance_m {
            cfg.ref_distance = d;
        }
        if let Some(dbm) = self.noise_power_dbm {
            cfg.noise_power = dbm_to_watts(dbm);
        }
        if let Some(dbm) = self.power_budget_dbm {
            cfg.power_budget = dbm_to_watts(dbm);
        }
        if let Some(dbi) = self.bs_antenna_gain_dbi {
            cfg.bs_antenna_gain = db_to_linear(dbi).sqrt();
        }
        if let Some(b) = self.quant_bits {
            cfg.quant_bits = b;
        }
        if let Some(s) = self.rng_seed {
            cfg.rng_seed = s;
        }
        if let Some(gda) = self.gda {
            cfg.gda = gda;
        }
        if let Some(gd) = self.gd {
            cfg.gd = gd;
        }
        cfg
    }
}
