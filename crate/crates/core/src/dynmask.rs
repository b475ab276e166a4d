//! Dynamic mask: drop pixels whose reprojection loss is above the
//! `beta`-quantile in *both* source channels.
//!
//! A pixel that is badly explained by only one neighbor is usually an
//! occlusion and is already handled by the per-pixel minimum; a pixel badly
//! explained by both is likely on a moving object.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{BinaryMask, LossMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    beta: f64,
}

impl QuantileSpec {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid(format!("beta must be in (0, 1], got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Row-major copy of loss channel `ch` (0-based).
pub fn flatten_channel(losses: &LossMap, ch: usize) -> Result<Vec<f64>> {
    if ch >= losses.channels() {
        return Err(invalid(format!(
            "channel {ch} out of range for a {}-channel loss map",
            losses.channels()
        )));
    }
    Ok(losses.channel(ch).to_vec())
}

/// Linear-interpolation quantile: with `v` sorted ascending and
/// `h = beta * (n - 1)`, `q = v[⌊h⌋] + (h - ⌊h⌋) (v[⌊h⌋+1] - v[⌊h⌋])`.
pub fn quantile(values: &[f64], beta: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("quantile of an empty sequence"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("quantile level must be in [0, 1], got {beta}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("quantile input must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = beta * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// `M_c(p) = 1` iff `L_c(p) > q` (strict).
pub fn channel_mask(losses: &LossMap, ch: usize, threshold: f64) -> Result<BinaryMask> {
    if !threshold.is_finite() {
        return Err(invalid("threshold must be finite"));
    }
    let plane = flatten_channel(losses, ch)?;
    let (h, w) = losses.shape();
    BinaryMask::new(h, w, plane.iter().map(|&l| u8::from(l > threshold)).collect())
}

/// The per-channel thresholds and the resulting keep mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMask {
    pub thresholds: [f64; 2],
    /// 1 = keep, 0 = masked out.
    pub mask: BinaryMask,
}

/// `M_dynamic = 1 - (M_1 ∧ M_2)` with per-channel quantiles at level `beta`.
pub fn dynamic_mask(losses: &LossMap, beta: f64) -> Result<BinaryMask> {
    Ok(dynamic_mask_with_thresholds(losses, beta)?.mask)
}

pub fn dynamic_mask_with_thresholds(losses: &LossMap, beta: f64) -> Result<DynamicMask> {
    let spec = QuantileSpec::new(beta)?;
    if losses.channels() != 2 {
        return Err(invalid(format!(
            "dynamic mask expects 2 loss channels, got {}",
            losses.channels()
        )));
    }
    let q0 = quantile(losses.channel(0), spec.beta())?;
    let q1 = quantile(losses.channel(1), spec.beta())?;
    let high0 = channel_mask(losses, 0, q0)?;
    let high1 = channel_mask(losses, 1, q1)?;
    Ok(DynamicMask {
        thresholds: [q0, q1],
        mask: high0.and(&high1)?.inverted(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Quantile straight from the order statistics, for cross-checking.
    fn order_statistic_quantile(values: &[f64], beta: f64) -> f64 {
        let mut v = values.to_vec();
        // insertion sort keeps this independent of the library sort
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && v[j - 1] > v[j] {
                v.swap(j - 1, j);
                j -= 1;
            }
        }
        let h = beta * (v.len() - 1) as f64;
        let k = h.floor() as usize;
        let upper = v[(k + 1).min(v.len() - 1)];
        v[k] + (h - k as f64) * (upper - v[k])
    }

    #[test]
    fn flatten_is_row_major() {
        let l = LossMap::new(2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(flatten_channel(&l, 0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flatten_channel(&l, 1).unwrap(), vec![5.0, 6.0, 7.0, 8.0]);
        assert!(flatten_channel(&l, 2).is_err());
        let one = LossMap::new(1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(flatten_channel(&one, 0).unwrap(), vec![0.5]);
    }

    #[test]
    fn flatten_then_reshape_restores_plane() {
        let l = LossMap::new(2, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let flat = flatten_channel(&l, 0).unwrap();
        assert_eq!(LossMap::new(2, 3, 1, flat).unwrap(), l);
    }

    #[test]
    fn quantile_interpolates() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_abs_diff_eq!(quantile(&v, 0.8).unwrap(), 0.82, epsilon = 1e-12);
        assert_eq!(quantile(&v, 1.0).unwrap(), 1.0);
        assert_eq!(quantile(&[0.7; 9], 0.35).unwrap(), 0.7);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn channel_mask_is_strict() {
        let l = LossMap::new(1, 4, 1, vec![0.0, 0.0, 5.0, 0.0]).unwrap();
        assert_eq!(channel_mask(&l, 0, 0.0).unwrap().data(), &[0, 0, 1, 0]);
        let eq = LossMap::new(1, 3, 1, vec![0.2; 3]).unwrap();
        assert_eq!(channel_mask(&eq, 0, 0.2).unwrap().count_ones(), 0);
        assert_eq!(channel_mask(&eq, 0, -1.0).unwrap().count_ones(), 3);
    }

    #[test]
    fn dynamic_mask_hand_trace() {
        let l = LossMap::new(1, 4, 2, vec![0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 7.0, 0.0]).unwrap();
        let dm = dynamic_mask_with_thresholds(&l, 0.5).unwrap();
        assert_eq!(dm.thresholds, [0.0, 0.0]);
        assert_eq!(dm.mask.data(), &[1, 1, 0, 1]);
    }

    #[test]
    fn beta_one_masks_nothing() {
        let l = LossMap::new(2, 2, 2, vec![0.1, 0.9, 0.3, 0.4, 0.8, 0.2, 0.6, 0.5]).unwrap();
        assert_eq!(dynamic_mask(&l, 1.0).unwrap(), BinaryMask::ones(2, 2));
    }

    #[test]
    fn single_channel_outlier_is_kept() {
        let l = LossMap::new(1, 4, 2, vec![0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(dynamic_mask(&l, 0.5).unwrap().data(), &[1, 1, 1, 1]);
    }

    #[test]
    fn dynamic_mask_rejects_bad_inputs() {
        let one = LossMap::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert!(dynamic_mask(&one, 0.8).is_err());
        let two = LossMap::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        assert!(dynamic_mask(&two, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn quantile_matches_order_statistics(
            v in proptest::collection::vec(0.0f64..10.0, 1..60),
            beta in 0.0f64..=1.0,
        ) {
            let q = quantile(&v, beta).unwrap();
            prop_assert!((q - order_statistic_quantile(&v, beta)).abs() <= 1e-12);
        }

        #[test]
        fn masked_fraction_is_bounded(
            l in proptest::collection::vec(0.0f64..1.0, 2 * 35),
            beta in 0.05f64..=1.0,
        ) {
            let losses = LossMap::new(5, 7, 2, l).unwrap();
            let m = dynamic_mask(&losses, beta).unwrap();
            prop_assert!(m.zero_fraction() <= (1.0 - beta) + 1.0 / 35.0 + 1e-12);
        }

        #[test]
        fn mask_is_invariant_under_increasing_maps(
            l in proptest::collection::vec(0.0f64..1.0, 2 * 24),
            beta in 0.05f64..=1.0,
        ) {
            let losses = LossMap::new(4, 6, 2, l.clone()).unwrap();
            let mapped = LossMap::new(4, 6, 2, l.iter().map(|x| x.exp()).collect()).unwrap();
            let a = dynamic_mask(&losses, beta).unwrap();
            let b = dynamic_mask(&mapped, beta).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
