//! 3-D positions of BS antennas, stack layers, and users.
//!
//! Axes: the BS array lies on the x-axis centered at the origin, layers are
//! parallel to the x-y plane and stacked along +z, users sit on a line
//! parallel to the y-axis at z = `bs_ue_distance`.

use crate::config::{ConfigError, ScenarioConfig};
use crate::RMatrix;
use nalgebra::Vector3;

pub type Point = Vector3<f64>;

/// Deterministic scenario geometry.
#[derive(Debug, Clone)]
pub struct Layout {
    /// BS antenna positions, half-wavelength pitch along x.
    pub bs_positions: Vec<Point>,
    /// `layer_positions[l]` holds the element grid of layer `l+1`; layers
    /// are indexed front-to-back, the first one nearest the BS.
    pub layer_positions: Vec<Vec<Point>>,
    /// User positions along the y-axis line.
    pub ue_positions: Vec<Point>,
    /// Spacing between consecutive layers, meters.
    pub layer_spacing: f64,
    /// Distance from the BS plane to the first layer, meters.
    pub bs_to_layer1: f64,
}

/// Builds the layout for a validated configuration.
///
/// Layer `l` (1-based) sits at z = l * thickness / num_layers; elements form
/// a centered square grid with the element pitch. User `k` (1-based) sits at
/// (0, ue_spacing * (k-1), bs_ue_distance).
pub fn build_layout(config: &ScenarioConfig) -> Result<Layout, ConfigError> {
    config.validate()?;
    let wavelength = config.wavelength();
    let n = config.num_bs_antennas;
    let side = config.grid_side();
    let spacing = config.sim_thickness / config.num_layers as f64;

    // Antenna pitch is half a wavelength, centered at the origin.
    let bs_positions = (0..n)
        .map(|i| {
            let x = (i as f64 - (n as f64 - 1.0) / 2.0) * wavelength / 2.0;
            Point::new(x, 0.0, 0.0)
        })
        .collect();

    let layer_positions = (1..=config.num_layers)
        .map(|l| grid_at_z(side, config.element_size_x, config.element_size_y, l as f64 * spacing))
        .collect();

    let ue_positions = (0..config.num_users)
        .map(|k| Point::new(0.0, config.ue_spacing * k as f64, config.bs_ue_distance))
        .collect();

    Ok(Layout {
        bs_positions,
        layer_positions,
        ue_positions,
        layer_spacing: spacing,
        bs_to_layer1: spacing,
    })
}

/// Centered `side x side` grid in the plane z = `z`, row-major over (y, x).
fn grid_at_z(side: usize, dx: f64, dy: f64, z: f64) -> Vec<Point> {
    let mut points = Vec::with_capacity(side * side);
    let half = (side as f64 - 1.0) / 2.0;
    for iy in 0..side {
        for ix in 0..side {
            points.push(Point::new(
                (ix as f64 - half) * dx,
                (iy as f64 - half) * dy,
                z,
            ));
        }
    }
    points
}

/// Matrix of Euclidean distances; entry (i, j) = |a[i] - b[j]|.
pub fn pairwise_distances(a: &[Point], b: &[Point]) -> RMatrix {
    RMatrix::from_fn(a.len(), b.len(), |i, j| (a[i] - b[j]).norm())
}

/// Line-of-sight distance from the stack exit plane to user `k` (0-based).
pub fn ue_distance(config: &ScenarioConfig, k: usize) -> f64 {
    let dz = config.bs_ue_distance - config.sim_thickness;
    let dy = config.ue_spacing * k as f64;
    (dz * dz + dy * dy).sqrt()
}
