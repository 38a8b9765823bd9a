//! Max-min fairness optimization for stacked-metasurface MISO downlinks.
//!
//! A base station feeds a stack of reconfigurable metasurface layers that
//! performs analog, wave-domain beamforming toward single-antenna users.
//! This crate builds the scenario geometry, the Rayleigh-Sommerfeld
//! diffraction channels and the correlated Rayleigh fading model, and then
//! jointly optimizes per-user transmit power and the per-element phase
//! shifts of every layer so that the worst user's rate is maximized:
//!
//! * [`icsi`] — instantaneous CSI: geometric-programming power control by
//!   SINR balancing plus gradient descent-ascent over the phase profile.
//! * [`scsi`] — statistical CSI: a closed-form upper bound on the average
//!   minimum rate is optimized by closed-form power allocation plus
//!   gradient descent over the phase profile.
//! * [`oracles`] — independent reference machinery (finite differences,
//!   exhaustive search, Monte Carlo, fixed-point power control) used to
//!   validate the analytic gradients, projections, and bounds.
//! * [`experiments`] — seeded sweep/convergence harness emitting CSV.

pub mod archive;
pub mod channel;
pub mod config;
pub mod experiments;
pub mod geometry;
pub mod icsi;
pub mod metrics;
pub mod oracles;
pub mod scsi;
pub mod stack;

pub use config::{GdParams, GdaParams, ScenarioConfig};
pub use geometry::Layout;

use nalgebra::Complex;

/// Complex scalar used throughout.
pub type C64 = Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVector = nalgebra::DVector<C64>;
/// Dynamically sized real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;
/// Dynamically sized real column vector.
pub type RVector = nalgebra::DVector<f64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Per-user transmit powers in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAlloc {
    pub watts: RVector,
}

impl PowerAlloc {
    pub fn new(watts: RVector) -> Self {
        Self { watts }
    }

    /// Equal split of a total budget across `k` users.
    pub fn equal(total: f64, k: usize) -> Self {
        Self {
            watts: RVector::from_element(k, total / k as f64),
        }
    }

    pub fn total(&self) -> f64 {
        self.watts.sum()
    }
}

/// Convert a dB power ratio to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert a linear power ratio to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Convert dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Convert watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_unit_conversions() {
        assert!((dbm_to_watts(-90.0) - 1e-12).abs() < 1e-24);
        assert!((dbm_to_watts(10.0) - 0.01).abs() < 1e-15);
        assert!((db_to_linear(-30.0) - 1e-3).abs() < 1e-15);
        assert!((watts_to_dbm(0.01) - 10.0).abs() < 1e-12);
    }
}
