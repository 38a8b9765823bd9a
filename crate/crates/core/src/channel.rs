//! Propagation model: Rayleigh-Sommerfeld diffraction matrices between
//! layers, the isotropic-scattering spatial correlation at the stack exit,
//! distance-dependent path loss, and the correlated Rayleigh fading sampler
//! for the user channels.

use crate::config::ScenarioConfig;
use crate::geometry::{pairwise_distances, ue_distance, Layout};
use crate::{C64, CMatrix, CVector, RVector};
use nalgebra::SymmetricEigen;
use rand::Rng;
use std::f64::consts::PI;
use thiserror::Error;

/// Eigenvalues below this are treated as exact zeros of the correlation
/// matrix before taking square roots or eigen-sums.
pub const EIGENVALUE_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("layer index {0} out of range 2..={1}")]
    LayerOutOfRange(usize, usize),
    #[error("user distance {0:.3} m is below the reference distance {1:.3} m")]
    BelowReferenceDistance(f64, f64),
    #[error("matrix is not Hermitian within {0:e}")]
    NotHermitian(f64),
}

/// Rayleigh-Sommerfeld coupling coefficient between two elements at
/// distance `dist`, for an emitting aperture `dx * dy` and propagation
/// depth `depth` along the stack axis.
fn diffraction_coeff(dx: f64, dy: f64, depth: f64, dist: f64, wavelength: f64) -> C64 {
    let amplitude = dx * dy * depth / (dist * dist);
    let radial = C64::new(1.0 / (2.0 * PI * dist), -1.0 / wavelength);
    let phase = C64::new(0.0, 2.0 * PI * dist / wavelength).exp();
    amplitude * radial * phase
}

/// Diffraction matrix from layer `l - 1` to layer `l` (1-based, `l >= 2`).
/// Entry (i, j) couples element j of the previous layer to element i.
pub fn interlayer_matrix(
    layout: &Layout,
    l: usize,
    wavelength: f64,
    dx: f64,
    dy: f64,
) -> Result<CMatrix, ChannelError> {
    let layers = layout.layer_positions.len();
    if l < 2 || l > layers {
        return Err(ChannelError::LayerOutOfRange(l, layers));
    }
    let dist = pairwise_distances(&layout.layer_positions[l - 1], &layout.layer_positions[l - 2]);
    let depth = layout.layer_spacing;
    Ok(CMatrix::from_fn(dist.nrows(), dist.ncols(), |i, j| {
        diffraction_coeff(dx, dy, depth, dist[(i, j)], wavelength)
    }))
}

/// Diffraction matrix from the BS antennas to the first layer, including
/// the antenna amplitude gain on every column. Entry (m, n) couples
/// antenna n to element m.
pub fn bs_to_layer1_matrix(
    layout: &Layout,
    wavelength: f64,
    dx: f64,
    dy: f64,
    antenna_gain: f64,
) -> CMatrix {
    let dist = pairwise_distances(&layout.layer_positions[0], &layout.bs_positions);
    let depth = layout.bs_to_layer1;
    CMatrix::from_fn(dist.nrows(), dist.ncols(), |m, n| {
        antenna_gain * diffraction_coeff(dx, dy, depth, dist[(m, n)], wavelength)
    })
}

/// Spatial correlation of the exit layer under isotropic scattering:
/// entry (i, j) = sinc(2 d_ij / wavelength) with d_ij the in-plane
/// distance between elements i and j.
pub fn ris_correlation(layout: &Layout, wavelength: f64) -> CMatrix {
    let grid = &layout.layer_positions[0];
    CMatrix::from_fn(grid.len(), grid.len(), |i, j| {
        let dh = grid[i].x - grid[j].x;
        let dv = grid[i].y - grid[j].y;
        C64::new(sinc(2.0 * (dh * dh + dv * dv).sqrt() / wavelength), 0.0)
    })
}

/// Normalized sinc: sin(pi x) / (pi x).
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Linear path gain of user `k` (0-based): ref_gain * (d_k / d_0)^(-alpha).
pub fn path_loss(config: &ScenarioConfig, k: usize) -> Result<f64, ChannelError> {
    let d = ue_distance(config, k);
    if d < config.ref_distance {
        return Err(ChannelError::BelowReferenceDistance(d, config.ref_distance));
    }
    Ok(config.pathloss_ref * (d / config.ref_distance).powf(-config.pathloss_exponent))
}

/// Hermitian PSD square root S with S S^H = R; eigenvalues below the clamp
/// are zeroed. Also returns the (clamped) eigenvalues and eigenvectors.
pub fn psd_sqrt(r: &CMatrix) -> Result<(CMatrix, RVector, CMatrix), ChannelError> {
    let tol = 1e-10;
    let asym = (r - r.adjoint()).norm() / r.norm().max(1.0);
    if asym > tol {
        return Err(ChannelError::NotHermitian(tol));
    }
    let eig = SymmetricEigen::new(r.clone());
    let vals = eig.eigenvalues.map(|v| if v < EIGENVALUE_CLAMP { 0.0 } else { v });
    let vecs = eig.eigenvectors;
    let mut sqrt = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        let s = C64::new(v.sqrt(), 0.0);
        for i in 0..sqrt.nrows() {
            sqrt[(i, j)] *= s;
        }
    }
    let sqrt = &sqrt * vecs.adjoint();
    Ok((sqrt, vals, vecs))
}

/// Draws one standard complex Gaussian (unit variance per complex entry)
/// via Box-Muller over the generator's uniform stream.
pub fn standard_complex_gaussian<R: Rng>(rng: &mut R) -> C64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let radius = (-u1.ln()).sqrt(); // variance 1/2 per quadrature
    let angle = 2.0 * PI * u2;
    C64::new(radius * angle.cos(), radius * angle.sin())
}

/// Samples the M x K user channel matrix: column k = sqrt(beta_k) *
/// r_sqrt * q_k with q_k i.i.d. standard complex Gaussian. Columns are
/// drawn in user order, entries in element order.
pub fn sample_ue_channels<R: Rng>(r_sqrt: &CMatrix, betas: &RVector, rng: &mut R) -> CMatrix {
    let m = r_sqrt.nrows();
    let k = betas.len();
    let mut h = CMatrix::zeros(m, k);
    let mut q = CVector::zeros(m);
    for user in 0..k {
        for i in 0..m {
            q[i] = standard_complex_gaussian(rng);
        }
        let col = r_sqrt * &q * C64::new(betas[user].sqrt(), 0.0);
        h.set_column(user, &col);
    }
    h
}

/// Deterministic propagation state plus (optionally) one fading draw.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// BS to first layer, M x N.
    pub w1: CMatrix,
    /// Inter-layer matrices for layers 2..=L, each M x M.
    pub w_inter: Vec<CMatrix>,
    /// Exit-layer spatial correlation, M x M Hermitian PSD.
    pub r_ris: CMatrix,
    /// PSD square root of `r_ris`.
    pub r_sqrt: CMatrix,
    /// Clamped eigenvalues of `r_ris`.
    pub eig_values: RVector,
    /// Matching orthonormal eigenvectors (columns).
    pub eig_vectors: CMatrix,
    /// Per-user linear path gains.
    pub betas: RVector,
    /// Sampled user channels (instantaneous-CSI runs only), M x K.
    pub h: Option<CMatrix>,
}

impl ChannelSet {
    /// Builds every deterministic quantity from the layout; no fading draw.
    pub fn build(config: &ScenarioConfig, layout: &Layout) -> Result<Self, ChannelError> {
        let wl = config.wavelength();
        let (dx, dy) = (config.element_size_x, config.element_size_y);
        let w1 = bs_to_layer1_matrix(layout, wl, dx, dy, config.bs_antenna_gain);
        let w_inter = (2..=config.num_layers)
            .map(|l| interlayer_matrix(layout, l, wl, dx, dy))
            .collect::<Result<Vec<_>, _>>()?;
        let r_ris = ris_correlation(layout, wl);
        let (r_sqrt, eig_values, eig_vectors) = psd_sqrt(&r_ris)?;
        let mut betas = RVector::zeros(config.num_users);
        for k in 0..config.num_users {
            betas[k] = path_loss(config, k)?;
        }
        Ok(Self {
            w1,
            w_inter,
            r_ris,
            r_sqrt,
            eig_values,
            eig_vectors,
            betas,
            h: None,
        })
    }

    /// Number of elements per layer.
    pub fn elements(&self) -> usize {
        self.w1.nrows()
    }

    /// Number of users / BS antennas.
    pub fn users(&self) -> usize {
        self.betas.len()
    }

    /// Number of layers.
    pub fn layers(&self) -> usize {
        self.w_inter.len() + 1
    }

    /// Draws and stores one fading realization.
    pub fn sample_fading<R: Rng>(&mut self, rng: &mut R) {
        self.h = Some(sample_ue_channels(&self.r_sqrt, &self.betas, rng));
    }

    /// Copy with a fresh fading draw, leaving `self` untouched.
    pub fn with_fading<R: Rng>(&self, rng: &mut R) -> Self {
        let mut c = self.clone();
        c.sample_fading(rng);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_layout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unit_layout(m: usize, layers: usize) -> (ScenarioConfig, Layout) {
        // Wavelength-1 toy scenario: carrier = c so wavelength = 1 m.
        let mut cfg = ScenarioConfig::default();
        cfg.carrier_frequency = crate::SPEED_OF_LIGHT;
        cfg.element_size_x = 0.5;
        cfg.element_size_y = 0.5;
        cfg.sim_thickness = 5.0;
        cfg.elements_per_layer = m;
        cfg.num_layers = layers;
        cfg.bs_ue_distance = 100.0;
        cfg.pathloss_ref = 1e-3;
        cfg.bs_antenna_gain = 1.0;
        (cfg.clone(), build_layout(&cfg).unwrap())
    }

    #[test]
    fn interlayer_axial_entry_matches_hand_value() {
        // wavelength 1, dx = dy = 0.5, layer spacing 1.25, aligned elements:
        // coefficient = 0.2 * (1/(2.5 pi) - j) * e^{j 2.5 pi} = 0.2 + 0.0254648j.
        let (_, layout) = unit_layout(4, 4);
        let w = interlayer_matrix(&layout, 2, 1.0, 0.5, 0.5).unwrap();
        for i in 0..4 {
            let v = w[(i, i)];
            assert!((v.re - 0.2).abs() < 1e-4, "re {}", v.re);
            assert!((v.im - 0.02546).abs() < 1e-4, "im {}", v.im);
        }
    }

    #[test]
    fn interlayer_symmetry_between_congruent_grids() {
        let (_, layout) = unit_layout(9, 3);
        let w = interlayer_matrix(&layout, 2, 1.0, 0.5, 0.5).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let d = (w[(i, j)] - w[(j, i)]).norm();
                assert!(d < 1e-14);
            }
        }
    }

    #[test]
    fn interlayer_modulus_matches_closed_form() {
        let (_, layout) = unit_layout(9, 3);
        let wl = 1.0;
        let w = interlayer_matrix(&layout, 3, wl, 0.5, 0.5).unwrap();
        let dist = pairwise_distances(&layout.layer_positions[2], &layout.layer_positions[1]);
        for i in 0..9 {
            for j in 0..9 {
                let d = dist[(i, j)];
                let expected = (0.5 * 0.5 * layout.layer_spacing / (d * d))
                    * ((1.0 / (2.0 * PI * d)).powi(2) + 1.0 / (wl * wl)).sqrt();
                assert!((w[(i, j)].norm() - expected).abs() < 1e-12 * expected);
            }
        }
    }

    #[test]
    fn layer_index_bounds_checked() {
        let (_, layout) = unit_layout(4, 2);
        assert!(interlayer_matrix(&layout, 1, 1.0, 0.5, 0.5).is_err());
        assert!(interlayer_matrix(&layout, 3, 1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn bs_matrix_gain_scaling_and_degenerate_geometry() {
        let mut cfg = ScenarioConfig::default();
        cfg.carrier_frequency = crate::SPEED_OF_LIGHT;
        cfg.element_size_x = 0.5;
        cfg.element_size_y = 0.5;
        cfg.sim_thickness = 1.25; // single layer at z = 1.25
        cfg.elements_per_layer = 1;
        cfg.num_layers = 1;
        cfg.num_users = 1;
        cfg.num_bs_antennas = 1;
        cfg.bs_ue_distance = 100.0;
        cfg.bs_antenna_gain = 1.0;
        let layout = build_layout(&cfg).unwrap();
        let w = bs_to_layer1_matrix(&layout, 1.0, 0.5, 0.5, 1.0);
        // Same geometry as the aligned interlayer case above.
        assert!((w[(0, 0)].re - 0.2).abs() < 1e-4);
        assert!((w[(0, 0)].im - 0.02546).abs() < 1e-4);
        // Doubling the power gain doubles |entry|^2.
        let g = 2f64.sqrt();
        let w2 = bs_to_layer1_matrix(&layout, 1.0, 0.5, 0.5, g);
        let ratio = w2[(0, 0)].norm_sqr() / w[(0, 0)].norm_sqr();
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_unit_diagonal_and_neighbor_values() {
        let (cfg, layout) = unit_layout(4, 2);
        let wl = cfg.wavelength();
        let r = ris_correlation(&layout, wl);
        // Unit diagonal.
        for i in 0..4 {
            assert!((r[(i, i)].re - 1.0).abs() < 1e-15);
            assert_eq!(r[(i, i)].im, 0.0);
        }
        // Horizontal neighbors at half-wavelength pitch: sinc(1) = 0.
        assert!(r[(0, 1)].re.abs() < 1e-15);
        // Diagonal neighbors: sinc(sqrt(2)) computed directly.
        let expect = sinc(2f64.sqrt());
        assert!((expect + 0.2169).abs() < 1e-4);
        assert!((r[(0, 3)].re - expect).abs() < 1e-15);
    }

    #[test]
    fn path_loss_reference_and_monotonicity() {
        let cfg = ScenarioConfig::default(); // 28 GHz, thickness 5 wavelengths
        // Nearest user: d = 10 - 5 wavelengths = 9.946 m; hand-evaluated gain.
        let d0 = cfg.bs_ue_distance - cfg.sim_thickness;
        let expected = 1e-3 * (d0 / 1.0).powf(-3.5);
        let b = path_loss(&cfg, 0).unwrap();
        assert!((b - expected).abs() < 1e-12 * expected);
        assert!((b - 3.22e-7).abs() < 0.01e-7, "beta_1 = {b:e}");
        // Strictly decreasing along the user line.
        let mut prev = b;
        for k in 1..4 {
            let bk = path_loss(&cfg, k).unwrap();
            assert!(bk < prev && bk > 0.0);
            prev = bk;
        }
    }

    #[test]
    fn path_loss_at_reference_distance_is_ref_gain() {
        let mut cfg = ScenarioConfig::default();
        cfg.bs_ue_distance = cfg.sim_thickness + cfg.ref_distance;
        let b = path_loss(&cfg, 0).unwrap();
        assert!((b - cfg.pathloss_ref).abs() < 1e-15);
    }

    #[test]
    fn path_loss_rejects_inside_reference_distance() {
        let mut cfg = ScenarioConfig::default();
        cfg.bs_ue_distance = cfg.sim_thickness + 0.5;
        assert!(matches!(
            path_loss(&cfg, 0),
            Err(ChannelError::BelowReferenceDistance(..))
        ));
    }

    #[test]
    fn psd_sqrt_identity_and_diagonal() {
        let eye = CMatrix::identity(3, 3);
        let (s, vals, _) = psd_sqrt(&eye).unwrap();
        assert!((&s - &eye).norm() < 1e-12);
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(4.0, 0.0),
            C64::new(9.0, 0.0),
        ]));
        let (s, _, _) = psd_sqrt(&d).unwrap();
        assert!((s[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!((s[(1, 1)].re - 3.0).abs() < 1e-12);
        assert!(s[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_reconstructs_random_psd() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = 8;
        let x = CMatrix::from_fn(m, m, |_, _| standard_complex_gaussian(&mut rng));
        let r = &x * x.adjoint() / C64::new(m as f64, 0.0);
        let (s, _, _) = psd_sqrt(&r).unwrap();
        let err = (&s * s.adjoint() - &r).norm() / r.norm();
        assert!(err < 1e-8, "reconstruction error {err:e}");
    }

    #[test]
    fn psd_sqrt_rejects_non_hermitian() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = C64::new(0.5, 0.0);
        assert!(psd_sqrt(&m).is_err());
    }

    #[test]
    fn fading_unit_second_moment_with_identity_correlation() {
        let m = 4;
        let eye = CMatrix::identity(m, m);
        let betas = RVector::from_element(2, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let draws = 25_000; // 2 users x 4 elements x 25k = 2e5 entries
        let mut acc = 0.0;
        for _ in 0..draws {
            let h = sample_ue_channels(&eye, &betas, &mut rng);
            acc += h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = acc / (draws as f64 * (m * 2) as f64);
        assert!((mean - 1.0).abs() < 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn fading_zero_gain_gives_zero_column() {
        let eye = CMatrix::identity(3, 3);
        let betas = RVector::from_vec(vec![1.0, 0.0]);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let h = sample_ue_channels(&eye, &betas, &mut rng);
        assert!(h.column(1).iter().all(|z| z.norm() == 0.0));
        assert!(h.column(0).iter().any(|z| z.norm() > 0.0));
    }

    #[test]
    fn fading_recovers_correlation_matrix() {
        // Empirical covariance of h / sqrt(beta) approaches the correlation.
        let (cfg, layout) = unit_layout(4, 2);
        let r = ris_correlation(&layout, cfg.wavelength());
        let (s, _, _) = psd_sqrt(&r).unwrap();
        let betas = RVector::from_element(1, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let trials = 100_000;
        let mut cov = CMatrix::zeros(4, 4);
        for _ in 0..trials {
            let h = sample_ue_channels(&s, &betas, &mut rng);
            let col = h.column(0);
            cov += col * col.adjoint();
        }
        cov /= C64::new(trials as f64, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (cov[(i, j)] - r[(i, j)]).norm() < 0.05,
                    "entry ({i},{j}): {} vs {}",
                    cov[(i, j)],
                    r[(i, j)]
                );
            }
        }
    }

    #[test]
    fn channel_set_shapes_and_eig_trace() {
        let mut cfg = ScenarioConfig::default();
        cfg.elements_per_layer = 16;
        cfg.num_layers = 3;
        cfg.num_users = 2;
        cfg.num_bs_antennas = 2;
        let layout = build_layout(&cfg).unwrap();
        let set = ChannelSet::build(&cfg, &layout).unwrap();
        assert_eq!(set.w1.shape(), (16, 2));
        assert_eq!(set.w_inter.len(), 2);
        assert_eq!(set.r_ris.shape(), (16, 16));
        assert!(set.h.is_none());
        // Unit diagonal makes the eigenvalues sum to the element count.
        let trace: f64 = set.eig_values.iter().sum();
        assert!((trace - 16.0).abs() < 1e-8, "eig sum {trace}");
        // Path gains decrease along the user line.
        assert!(set.betas[0] > set.betas[1]);
    }

    #[test]
    fn moduli_shrink_with_distance_in_far_zone() {
        let (_, layout) = unit_layout(9, 3);
        let w = interlayer_matrix(&layout, 2, 1.0, 0.5, 0.5).unwrap();
        let dist = pairwise_distances(&layout.layer_positions[1], &layout.layer_positions[0]);
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for i in 0..9 {
            for j in 0..9 {
                pairs.push((dist[(i, j)], w[(i, j)].norm()));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for win in pairs.windows(2) {
            if win[1].0 - win[0].0 > 1e-12 {
                assert!(win[1].1 < win[0].1, "modulus not decreasing: {win:?}");
            }
        }
    }
}
