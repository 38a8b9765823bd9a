//! Link gains, SINRs, achievable rates, and fairness indices.

use crate::{CMatrix, PowerAlloc, RMatrix, RVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("all rates are zero; fairness indices undefined")]
    AllZeroRates,
}

/// Squared channel-beamformer gains: entry (k, j) = |h_k^H G w_j|^2,
/// together with the per-user noise power.
#[derive(Debug, Clone)]
pub struct LinkGains {
    pub s: RMatrix,
    pub noise: f64,
}

impl LinkGains {
    pub fn users(&self) -> usize {
        self.s.nrows()
    }
}

/// Gains from explicit H (M x K), G (M x M), and W1 (M x N), N = K.
pub fn link_gains(h: &CMatrix, g: &CMatrix, w1: &CMatrix, noise: f64) -> Result<LinkGains, MetricsError> {
    let m = g.nrows();
    if h.nrows() != m || w1.nrows() != m || g.ncols() != m {
        return Err(MetricsError::DimensionMismatch(format!(
            "H {}x{}, G {}x{}, W1 {}x{}",
            h.nrows(),
            h.ncols(),
            g.nrows(),
            g.ncols(),
            w1.nrows(),
            w1.ncols()
        )));
    }
    if h.ncols() != w1.ncols() {
        return Err(MetricsError::DimensionMismatch(
            "one BS column per user required".into(),
        ));
    }
    Ok(gains_from_propagated(h, &(g * w1), noise))
}

/// Gains when G W1 is already available (column-cascade fast path).
pub fn gains_from_propagated(h: &CMatrix, gw: &CMatrix, noise: f64) -> LinkGains {
    let f = h.ad_mul(gw);
    LinkGains {
        s: RMatrix::from_fn(f.nrows(), f.ncols(), |k, j| f[(k, j)].norm_sqr()),
        noise,
    }
}

/// Per-user SINR under the given power allocation.
pub fn sinr(gains: &LinkGains, power: &PowerAlloc) -> RVector {
    let k = gains.users();
    RVector::from_fn(k, |u, _| {
        let mut interference = 0.0;
        for j in 0..k {
            if j != u {
                interference += gains.s[(u, j)] * power.watts[j];
            }
        }
        gains.s[(u, u)] * power.watts[u] / (interference + gains.noise)
    })
}

/// Spectral efficiencies log2(1 + sinr).
pub fn rates(sinr: &RVector) -> RVector {
    sinr.map(|g| (1.0 + g).log2())
}

/// Min-max ratio, Jain's index, and the Gini complement (all in [0, 1],
/// 1 meaning perfectly even rates).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FairnessIndices {
    pub min_max: f64,
    pub jain: f64,
    pub gini_complement: f64,
}

pub fn fairness_indices(rates: &RVector) -> Result<FairnessIndices, MetricsError> {
    let k = rates.len() as f64;
    let sum: f64 = rates.sum();
    if sum <= 0.0 {
        return Err(MetricsError::AllZeroRates);
    }
    let max = rates.max();
    let min = rates.min();
    let sum_sq: f64 = rates.iter().map(|r| r * r).sum();
    let mean = sum / k;
    let mut abs_diff = 0.0;
    for i in 0..rates.len() {
        for j in 0..rates.len() {
            abs_diff += (rates[i] - rates[j]).abs();
        }
    }
    let gini = abs_diff / (2.0 * k * k * mean);
    Ok(FairnessIndices {
        min_max: min / max,
        jain: sum * sum / (k * sum_sq),
        gini_complement: 1.0 - gini,
    })
}

/// Everything the harness records about one policy evaluation.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub sinr: RVector,
    pub rates: RVector,
    pub min_rate: f64,
    pub fairness: FairnessIndices,
}

impl RateReport {
    pub fn from_gains(gains: &LinkGains, power: &PowerAlloc) -> Result<Self, MetricsError> {
        let sinr_v = sinr(gains, power);
        let rates_v = rates(&sinr_v);
        let fairness = fairness_indices(&rates_v)?;
        Ok(Self {
            min_rate: rates_v.min(),
            sinr: sinr_v,
            rates: rates_v,
            fairness,
        })
    }

    pub fn min_sinr(&self) -> f64 {
        self.sinr.min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::standard_complex_gaussian;
    use crate::C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn gains_match_naive_inner_products() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let (m, k) = (4, 2);
        let h = CMatrix::from_fn(m, k, |_, _| standard_complex_gaussian(&mut rng));
        let g = CMatrix::from_fn(m, m, |_, _| standard_complex_gaussian(&mut rng));
        let w1 = CMatrix::from_fn(m, k, |_, _| standard_complex_gaussian(&mut rng));
        let gains = link_gains(&h, &g, &w1, 1.0).unwrap();
        for u in 0..k {
            for j in 0..k {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..m {
                    for b in 0..m {
                        acc += h[(a, u)].conj() * g[(a, b)] * w1[(b, j)];
                    }
                }
                let expect = acc.norm_sqr();
                assert!(
                    (gains.s[(u, j)] - expect).abs() < 1e-10 * expect.max(1.0),
                    "({u},{j})"
                );
            }
        }
    }

    #[test]
    fn orthogonal_channel_gives_zero_gains() {
        // G W1 spans e1; h lies on e2.
        let mut g = CMatrix::zeros(2, 2);
        g[(0, 0)] = C64::new(1.0, 0.0);
        let w1 = CMatrix::identity(2, 1);
        let mut h = CMatrix::zeros(2, 1);
        h[(1, 0)] = C64::new(1.0, 0.0);
        let gains = link_gains(&h, &g, &w1, 1.0).unwrap();
        assert_eq!(gains.s[(0, 0)], 0.0);
    }

    #[test]
    fn single_user_sinr_has_no_interference() {
        let gains = LinkGains {
            s: RMatrix::from_element(1, 1, 3.0),
            noise: 2.0,
        };
        let p = PowerAlloc::new(RVector::from_element(1, 4.0));
        let g = sinr(&gains, &p);
        assert!((g[0] - 6.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_gains_reduce_to_snr() {
        let gains = LinkGains {
            s: RMatrix::from_diagonal(&RVector::from_vec(vec![2.0, 5.0])),
            noise: 0.5,
        };
        let p = PowerAlloc::new(RVector::from_vec(vec![1.0, 2.0]));
        let g = sinr(&gains, &p);
        assert!((g[0] - 4.0).abs() < 1e-15);
        assert!((g[1] - 20.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_user_example() {
        let gains = LinkGains {
            s: RMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
            noise: 1.0,
        };
        let p = PowerAlloc::new(RVector::from_element(2, 1.0));
        let g = sinr(&gains, &p);
        assert!((g[0] - 1.0).abs() < 1e-15);
        assert!((g[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sinr_monotone_in_powers() {
        let gains = LinkGains {
            s: RMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.4, 1.5]),
            noise: 0.1,
        };
        let p = PowerAlloc::new(RVector::from_vec(vec![1.0, 1.0]));
        let base = sinr(&gains, &p);
        let p_up = PowerAlloc::new(RVector::from_vec(vec![1.1, 1.0]));
        let up = sinr(&gains, &p_up);
        assert!(up[0] > base[0]);
        assert!(up[1] < base[1]);
    }

    #[test]
    fn fairness_equal_rates_are_perfect() {
        let r = RVector::from_element(4, 2.5);
        let f = fairness_indices(&r).unwrap();
        assert!((f.min_max - 1.0).abs() < 1e-15);
        assert!((f.jain - 1.0).abs() < 1e-15);
        assert!((f.gini_complement - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fairness_hand_example() {
        let r = RVector::from_vec(vec![1.0, 3.0]);
        let f = fairness_indices(&r).unwrap();
        assert!((f.min_max - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.jain - 0.8).abs() < 1e-15);
        assert!((f.gini_complement - 0.75).abs() < 1e-15);
    }

    #[test]
    fn fairness_single_user_and_all_zero() {
        let r = RVector::from_element(1, 0.7);
        let f = fairness_indices(&r).unwrap();
        assert_eq!((f.min_max, f.jain, f.gini_complement), (1.0, 1.0, 1.0));
        let z = RVector::zeros(3);
        assert!(fairness_indices(&z).is_err());
    }

    #[test]
    fn min_rate_consistent_with_min_sinr() {
        let gains = LinkGains {
            s: RMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.4, 1.5]),
            noise: 0.1,
        };
        let p = PowerAlloc::new(RVector::from_vec(vec![0.6, 0.4]));
        let report = RateReport::from_gains(&gains, &p).unwrap();
        let expect = (1.0 + report.sinr.min()).log2();
        assert!((report.min_rate - expect).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let h = CMatrix::zeros(3, 2);
        let g = CMatrix::zeros(4, 4);
        let w1 = CMatrix::zeros(4, 2);
        assert!(link_gains(&h, &g, &w1, 1.0).is_err());
    }
}
