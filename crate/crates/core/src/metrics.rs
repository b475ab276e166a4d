//! Standard depth-evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, invalid, Result};
use crate::grid::{BinaryMask, DepthMap};

pub const DEFAULT_CAP: f64 = 80.0;

/// Smallest predicted depth considered during evaluation.
pub const MIN_PRED: f64 = 1e-3;

pub const CSV_HEADER: &str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl DepthMetrics {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    pub fn to_csv_row(&self) -> String {
        self.as_array()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub cap: f64,
    pub median_scale: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            median_scale: false,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `max(p, g) < thr · min(p, g)`; avoids the rounding a ratio would
/// introduce right at the threshold.
fn within(p: f64, g: f64, thr: f64) -> bool {
    p.max(g) < thr * p.min(g)
}

/// Metrics over pixels with `0 < gt <= cap` and `valid = 1` (all pixels if
/// `valid` is `None`). Predictions are clamped to `[MIN_PRED, cap]`.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, valid: Option<&BinaryMask>, opts: EvalOptions) -> Result<DepthMetrics> {
    ensure_same_shape("evaluate", pred.shape(), gt.shape())?;
    if let Some(v) = valid {
        ensure_same_shape("evaluate mask", pred.shape(), v.shape())?;
    }
    if !(opts.cap > MIN_PRED) {
        return Err(invalid(format!("depth cap must exceed {MIN_PRED}, got {}", opts.cap)));
    }
    let mut p = Vec::new();
    let mut g = Vec::new();
    for (i, (&pi, &gi)) in pred.data().iter().zip(gt.data()).enumerate() {
        if gi > 0.0 && gi <= opts.cap && valid.is_none_or(|m| m.is_set(i)) {
            p.push(pi);
            g.push(gi);
        }
    }
    if g.is_empty() {
        return Err(invalid("no valid pixels to evaluate"));
    }
    if opts.median_scale {
        let ratio = median(&mut g.clone()) / median(&mut p.clone());
        p.iter_mut().for_each(|v| *v *= ratio);
    }
    p.iter_mut().for_each(|v| *v = v.clamp(MIN_PRED, opts.cap));

    let n = g.len() as f64;
    let mut acc = [0.0; 7];
    for (&pi, &gi) in p.iter().zip(&g) {
        let diff = pi - gi;
        acc[0] += diff.abs() / gi;
        acc[1] += diff * diff / gi;
        acc[2] += diff * diff;
        acc[3] += (pi.ln() - gi.ln()).powi(2);
        acc[4] += f64::from(u8::from(within(pi, gi, 1.25)));
        acc[5] += f64::from(u8::from(within(pi, gi, 1.25 * 1.25)));
        acc[6] += f64::from(u8::from(within(pi, gi, 1.25 * 1.25 * 1.25)));
    }
    Ok(DepthMetrics {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
    })
}

/// Metrics on the static (`oracle = 0`) and dynamic (`oracle = 1`) pixels.
/// A side with no pixels in range is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    #[serde(rename = "static")]
    pub static_region: Option<DepthMetrics>,
    #[serde(rename = "dynamic")]
    pub dynamic_region: Option<DepthMetrics>,
}

pub fn region_split_evaluate(pred: &DepthMap, gt: &DepthMap, oracle: &BinaryMask, opts: EvalOptions) -> Result<RegionMetrics> {
    ensure_same_shape("region split", pred.shape(), oracle.shape())?;
    let side = |mask: &BinaryMask| -> Result<Option<DepthMetrics>> {
        let in_range = gt
            .data()
            .iter()
            .enumerate()
            .any(|(i, &g)| mask.is_set(i) && g > 0.0 && g <= opts.cap);
        if in_range {
            evaluate(pred, gt, Some(mask), opts).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(RegionMetrics {
        static_region: side(&oracle.inverted())?,
        dynamic_region: side(oracle)?,
    })
}
