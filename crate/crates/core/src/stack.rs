//! Phase profile of the layer stack and the wave-domain beamformer it
//! induces.
//!
//! The composite beamformer is G = T_L W_L T_{L-1} ... W_2 T_1 where T_l is
//! the diagonal unit-modulus phase matrix of layer l and W_l the diffraction
//! matrix feeding it. Gradient formulas need, per layer, the prefix product
//! A_l (everything to the right of T_l) and the suffix product B_l
//! (everything to the left), so that B_l T_l A_l = G for every l.
//!
//! Optimizer inner loops never materialize the M x M products; they push
//! the K relevant columns through the stack instead (see [`LayerColumns`]),
//! which drops the per-iteration cost from O(L M^3) to O(L M^2 K).

use crate::channel::ChannelSet;
use crate::{C64, CMatrix, RMatrix};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StackError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("layer index {0} out of range 1..={1}")]
    LayerOutOfRange(usize, usize),
}

/// Per-element phase shifts, layers x elements, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    /// Row l holds layer l+1; unconstrained radians during optimization.
    pub theta: RMatrix,
    /// True once every entry lies on the quantization grid.
    pub quantized: bool,
}

impl PhaseProfile {
    /// All-zero profile for `layers` x `elements`.
    pub fn zeros(layers: usize, elements: usize) -> Self {
        Self {
            theta: RMatrix::zeros(layers, elements),
            quantized: false,
        }
    }

    pub fn layers(&self) -> usize {
        self.theta.nrows()
    }

    pub fn elements(&self) -> usize {
        self.theta.ncols()
    }

    /// Wraps every entry into [0, 2 pi).
    pub fn normalized(&self) -> Self {
        Self {
            theta: self.theta.map(wrap_angle),
            quantized: self.quantized,
        }
    }

    /// Quantizes every entry to `bits` bits.
    pub fn quantize_all(&self, bits: u32) -> Self {
        Self {
            theta: self.theta.map(|t| quantize_phase(t, bits)),
            quantized: true,
        }
    }

    /// Unit-modulus diagonal entries e^{j theta} of layer `l` (0-based).
    pub fn layer_phasors(&self, l: usize) -> Vec<C64> {
        (0..self.elements())
            .map(|m| C64::new(0.0, self.theta[(l, m)]).exp())
            .collect()
    }
}

/// Wraps an angle into [0, 2 pi).
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can return the modulus itself when the input is a tiny
    // negative number.
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Rounds a phase to the nearest point of the 2^bits uniform grid over
/// [0, 2 pi), wrapping the top rounding bin back to zero. The input is
/// wrapped first so grid points map to themselves exactly.
pub fn quantize_phase(theta: f64, bits: u32) -> f64 {
    let step = TAU / (1u64 << bits) as f64;
    let wrapped = wrap_angle(theta);
    wrap_angle(step * (wrapped / step + 0.5).floor())
}

/// Full composite beamformer G (elements x elements).
///
/// With a single layer this is just the diagonal phase matrix.
pub fn compose_beamformer(theta: &PhaseProfile, channels: &ChannelSet) -> Result<CMatrix, StackError> {
    check_dims(theta, channels)?;
    let m = channels.elements();
    let mut g = CMatrix::identity(m, m);
    scale_rows_by_phasors(&mut g, &theta.layer_phasors(0));
    for (idx, w) in channels.w_inter.iter().enumerate() {
        g = w * g;
        scale_rows_by_phasors(&mut g, &theta.layer_phasors(idx + 1));
    }
    Ok(g)
}

/// Per-layer split of the cascade: `b[l] * diag(phasors_l) * a[l] == g`.
#[derive(Debug, Clone)]
pub struct BeamformerCascade {
    pub g: CMatrix,
    /// Prefix products; `a[0]` is the identity.
    pub a: Vec<CMatrix>,
    /// Suffix products; `b[L-1]` is the identity.
    pub b: Vec<CMatrix>,
}

impl BeamformerCascade {
    pub fn build(theta: &PhaseProfile, channels: &ChannelSet) -> Result<Self, StackError> {
        check_dims(theta, channels)?;
        let m = channels.elements();
        let layers = channels.layers();

        // Prefix: a[l] = W_{l+1} T_l ... T_1 (0-based storage), a[0] = I.
        let mut a = Vec::with_capacity(layers);
        a.push(CMatrix::identity(m, m));
        for l in 1..layers {
            let mut prev = a[l - 1].clone();
            scale_rows_by_phasors(&mut prev, &theta.layer_phasors(l - 1));
            a.push(&channels.w_inter[l - 1] * prev);
        }

        // Suffix: b[l] = T_L W_L ... T_{l+2} W_{l+2}, b[L-1] = I.
        let mut b = vec![CMatrix::identity(m, m); layers];
        for l in (0..layers.saturating_sub(1)).rev() {
            let mut w = channels.w_inter[l].clone();
            scale_rows_by_phasors(&mut w, &theta.layer_phasors(l + 1));
            b[l] = &b[l + 1] * w;
        }

        let mut g = a[layers - 1].clone();
        scale_rows_by_phasors(&mut g, &theta.layer_phasors(layers - 1));
        Ok(Self { g, a, b })
    }

    /// The (A_l, B_l) pair for layer `l` (1-based, matching the physical
    /// layer numbering).
    pub fn partial_products(&self, l: usize) -> Result<(&CMatrix, &CMatrix), StackError> {
        let layers = self.a.len();
        if l < 1 || l > layers {
            return Err(StackError::LayerOutOfRange(l, layers));
        }
        Ok((&self.a[l - 1], &self.b[l - 1]))
    }
}

/// Standalone accessor mirroring [`BeamformerCascade::partial_products`].
pub fn partial_products(
    theta: &PhaseProfile,
    channels: &ChannelSet,
    l: usize,
) -> Result<(CMatrix, CMatrix), StackError> {
    let cascade = BeamformerCascade::build(theta, channels)?;
    let (a, b) = cascade.partial_products(l)?;
    Ok((a.clone(), b.clone()))
}

/// Applies G to a block of columns without forming G: returns G X.
pub fn cascade_apply(theta: &PhaseProfile, channels: &ChannelSet, x: &CMatrix) -> CMatrix {
    let mut y = x.clone();
    scale_rows_by_phasors(&mut y, &theta.layer_phasors(0));
    let mut scratch = CMatrix::zeros(y.nrows(), y.ncols());
    for (idx, w) in channels.w_inter.iter().enumerate() {
        w.mul_to(&y, &mut scratch);
        std::mem::swap(&mut y, &mut scratch);
        scale_rows_by_phasors(&mut y, &theta.layer_phasors(idx + 1));
    }
    y
}

/// Column-cascade workspace for gradient assembly.
///
/// For a right-hand block X (typically the BS columns) and a left-hand
/// block Y (typically the user channels), holds per layer l:
///   u[l] = A_l X  and  v[l] = B_l^H Y,
/// plus the fully propagated gx = G X. Row m of u[l]/v[l] gives the inner
/// products of X/Y with the m-th gradient dyad of layer l.
#[derive(Debug, Clone)]
pub struct LayerColumns {
    pub u: Vec<CMatrix>,
    pub v: Vec<CMatrix>,
    pub gx: CMatrix,
}

impl LayerColumns {
    pub fn build(theta: &PhaseProfile, channels: &ChannelSet, x: &CMatrix, y: &CMatrix) -> Self {
        let (u, gx) = forward_columns(theta, channels, x);
        let v = backward_columns(theta, channels, y);
        Self { u, v, gx }
    }
}

/// Prefix propagation: returns (u, G x) with u[l] = A_{l+1} x.
pub fn forward_columns(
    theta: &PhaseProfile,
    channels: &ChannelSet,
    x: &CMatrix,
) -> (Vec<CMatrix>, CMatrix) {
    let layers = channels.layers();
    let mut u = Vec::with_capacity(layers);
    u.push(x.clone());
    let mut scratch = CMatrix::zeros(x.nrows(), x.ncols());
    for l in 1..layers {
        let mut prev = u[l - 1].clone();
        scale_rows_by_phasors(&mut prev, &theta.layer_phasors(l - 1));
        channels.w_inter[l - 1].mul_to(&prev, &mut scratch);
        u.push(scratch.clone());
    }
    let mut gx = u[layers - 1].clone();
    scale_rows_by_phasors(&mut gx, &theta.layer_phasors(layers - 1));
    (u, gx)
}

/// Suffix propagation: returns v with v[l] = B_{l+1}^H y.
pub fn backward_columns(theta: &PhaseProfile, channels: &ChannelSet, y: &CMatrix) -> Vec<CMatrix> {
    let layers = channels.layers();
    let mut v = vec![CMatrix::zeros(y.nrows(), y.ncols()); layers];
    v[layers - 1] = y.clone();
    let mut scratch = CMatrix::zeros(y.nrows(), y.ncols());
    for l in (0..layers.saturating_sub(1)).rev() {
        // v[l] = W_{l+2}^H conj(T_{l+2}) v[l+1] in 1-based layer terms.
        let mut next = v[l + 1].clone();
        let phasors = theta.layer_phasors(l + 1);
        for (i, ph) in phasors.iter().enumerate() {
            let c = ph.conj();
            for col in 0..next.ncols() {
                next[(i, col)] *= c;
            }
        }
        channels.w_inter[l].ad_mul_to(&next, &mut scratch);
        v[l] = scratch.clone();
    }
    v
}

fn check_dims(theta: &PhaseProfile, channels: &ChannelSet) -> Result<(), StackError> {
    if theta.layers() != channels.layers() || theta.elements() != channels.elements() {
        return Err(StackError::DimensionMismatch(format!(
            "profile is {}x{}, channels expect {}x{}",
            theta.layers(),
            theta.elements(),
            channels.layers(),
            channels.elements()
        )));
    }
    for w in &channels.w_inter {
        if w.nrows() != channels.elements() || w.ncols() != channels.elements() {
            return Err(StackError::DimensionMismatch(format!(
                "inter-layer matrix is {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
    }
    Ok(())
}

fn scale_rows_by_phasors(m: &mut CMatrix, phasors: &[C64]) {
    for (i, ph) in phasors.iter().enumerate() {
        for j in 0..m.ncols() {
            m[(i, j)] *= ph;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::standard_complex_gaussian;
    use crate::RVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    /// Synthetic channel set with Gaussian matrices; `h` left empty.
    pub(crate) fn random_channels(
        m: usize,
        n: usize,
        layers: usize,
        rng: &mut ChaCha12Rng,
    ) -> ChannelSet {
        let w1 = CMatrix::from_fn(m, n, |_, _| standard_complex_gaussian(rng));
        let w_inter = (1..layers)
            .map(|_| CMatrix::from_fn(m, m, |_, _| standard_complex_gaussian(rng)))
            .collect();
        let x = CMatrix::from_fn(m, m, |_, _| standard_complex_gaussian(rng));
        let r = &x * x.adjoint() / C64::new(m as f64, 0.0);
        let (r_sqrt, eig_values, eig_vectors) = crate::channel::psd_sqrt(&r).unwrap();
        ChannelSet {
            w1,
            w_inter,
            r_ris: r,
            r_sqrt,
            eig_values,
            eig_vectors,
            betas: RVector::from_element(n, 1.0),
            h: None,
        }
    }

    pub(crate) fn random_profile(layers: usize, m: usize, rng: &mut ChaCha12Rng) -> PhaseProfile {
        PhaseProfile {
            theta: RMatrix::from_fn(layers, m, |_, _| rng.gen::<f64>() * TAU),
            quantized: false,
        }
    }

    #[test]
    fn quantize_grid_points_and_wrapping() {
        assert_eq!(quantize_phase(0.0, 1), 0.0);
        assert_eq!(quantize_phase(0.0, 8), 0.0);
        // 3 pi / 4 rounds up to pi with a single bit.
        assert!((quantize_phase(3.0 * PI / 4.0, 1) - PI).abs() < 1e-15);
        // 1.9 pi rounds to 2 pi which wraps to zero.
        assert_eq!(quantize_phase(1.9 * PI, 1), 0.0);
        // pi / 3 rounds to pi / 2 with two bits.
        assert!((quantize_phase(PI / 3.0, 2) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn quantize_idempotent_and_bounded_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for bits in [1u32, 2, 3, 8] {
            let step = TAU / (1u64 << bits) as f64;
            for _ in 0..200 {
                let t = rng.gen::<f64>() * 4.0 * TAU - 2.0 * TAU;
                let q = quantize_phase(t, bits);
                assert!((0.0..TAU).contains(&q));
                assert_eq!(quantize_phase(q, bits), q, "not idempotent at {t}");
                // Distance on the circle is at most half a step.
                let d = (wrap_angle(t) - q).abs();
                let circ = d.min(TAU - d);
                assert!(circ <= step / 2.0 + 1e-12, "error {circ} at {t}");
            }
        }
    }

    #[test]
    fn single_layer_beamformer_is_diagonal_phase() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let ch = random_channels(3, 2, 1, &mut rng);
        let theta = random_profile(1, 3, &mut rng);
        let g = compose_beamformer(&theta, &ch).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    let expect = C64::new(0.0, theta.theta[(0, i)]).exp();
                    assert!((g[(i, j)] - expect).norm() < 1e-15);
                } else {
                    assert_eq!(g[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn zero_phases_reduce_to_interlayer_matrix() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let ch = random_channels(4, 2, 2, &mut rng);
        let theta = PhaseProfile::zeros(2, 4);
        let g = compose_beamformer(&theta, &ch).unwrap();
        assert!((&g - &ch.w_inter[0]).norm() < 1e-14);
    }

    #[test]
    fn beamformer_matches_naive_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (m, layers) = (4, 3);
        let ch = random_channels(m, 2, layers, &mut rng);
        let theta = random_profile(layers, m, &mut rng);
        let g = compose_beamformer(&theta, &ch).unwrap();

        // Naive: build each diagonal matrix and multiply left to right.
        let diag = |l: usize| {
            CMatrix::from_diagonal(&crate::CVector::from_vec(theta.layer_phasors(l)))
        };
        let naive = diag(2) * &ch.w_inter[1] * diag(1) * &ch.w_inter[0] * diag(0);
        assert!((&g - &naive).norm() / naive.norm() < 1e-13);
    }

    #[test]
    fn partial_products_identity_cases_and_reconstruction() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let (m, layers) = (5, 4);
        let ch = random_channels(m, 3, layers, &mut rng);
        let theta = random_profile(layers, m, &mut rng);
        let cascade = BeamformerCascade::build(&theta, &ch).unwrap();

        let (a1, _) = cascade.partial_products(1).unwrap();
        assert!((a1 - CMatrix::identity(m, m)).norm() < 1e-15);
        let (_, bl) = cascade.partial_products(layers).unwrap();
        assert!((bl - CMatrix::identity(m, m)).norm() < 1e-15);

        for l in 1..=layers {
            let (a, b) = cascade.partial_products(l).unwrap();
            let mut mid = a.clone();
            scale_rows_by_phasors(&mut mid, &theta.layer_phasors(l - 1));
            let recon = b * mid;
            let err = (&recon - &cascade.g).norm() / cascade.g.norm();
            assert!(err < 1e-10, "layer {l}: {err:e}");
        }

        assert!(cascade.partial_products(0).is_err());
        assert!(cascade.partial_products(layers + 1).is_err());
    }

    #[test]
    fn column_cascade_agrees_with_full_products() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let (m, n, layers) = (6, 3, 3);
        let ch = random_channels(m, n, layers, &mut rng);
        let theta = random_profile(layers, m, &mut rng);
        let cascade = BeamformerCascade::build(&theta, &ch).unwrap();

        let y = CMatrix::from_fn(m, n, |_, _| standard_complex_gaussian(&mut rng));
        let cols = LayerColumns::build(&theta, &ch, &ch.w1, &y);

        assert!((&cols.gx - &(&cascade.g * &ch.w1)).norm() < 1e-12);
        for l in 0..layers {
            let ua = &cascade.a[l] * &ch.w1;
            assert!((&cols.u[l] - &ua).norm() < 1e-12, "u mismatch at layer {l}");
            let vb = cascade.b[l].adjoint() * &y;
            assert!((&cols.v[l] - &vb).norm() < 1e-12, "v mismatch at layer {l}");
        }

        let applied = cascade_apply(&theta, &ch, &ch.w1);
        assert!((&applied - &cols.gx).norm() < 1e-12);
    }

    #[test]
    fn global_phase_shift_leaves_gains_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let (m, n, layers) = (4, 2, 3);
        let ch = random_channels(m, n, layers, &mut rng);
        let theta = random_profile(layers, m, &mut rng);
        let g = compose_beamformer(&theta, &ch).unwrap();

        let mut shifted = theta.clone();
        let c = 0.7;
        for j in 0..m {
            shifted.theta[(1, j)] += c;
        }
        let g2 = compose_beamformer(&shifted, &ch).unwrap();
        let rot = C64::new(0.0, c).exp();
        assert!((&g2 - &(g.clone() * rot)).norm() < 1e-12 * g.norm().max(1.0));

        let h = CMatrix::from_fn(m, n, |_, _| standard_complex_gaussian(&mut rng));
        let f1 = h.ad_mul(&(&g * &ch.w1));
        let f2 = h.ad_mul(&(&g2 * &ch.w1));
        for (z1, z2) in f1.iter().zip(f2.iter()) {
            assert!((z1.norm_sqr() - z2.norm_sqr()).abs() < 1e-12 * z1.norm_sqr().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let ch = random_channels(4, 2, 2, &mut rng);
        let theta = PhaseProfile::zeros(3, 4);
        assert!(compose_beamformer(&theta, &ch).is_err());
        let theta = PhaseProfile::zeros(2, 5);
        assert!(compose_beamformer(&theta, &ch).is_err());
    }
}
