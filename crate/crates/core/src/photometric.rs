//! Photometric error (SSIM + L1), per-pixel minimum reprojection,
//! edge-aware smoothness, and the masked per-depth objective.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, invalid, Error, Result};
use crate::grid::{BinaryMask, DepthMap, Field, ImageGrid, LossMap};

/// SSIM stabilizers for unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// SSIM / L1 mixing weight.
    pub alpha: f64,
    /// Smoothness weight.
    pub gamma: f64,
    /// Dynamic-mask quantile level.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            gamma: 0.001,
            beta: 0.8,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, gamma: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, gamma, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

fn check_images(what: &str, a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    ensure_same_shape(what, a.shape(), b.shape())?;
    if a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "{what}: {} vs {} channels",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

/// Reflect-101 index (edge pixel not repeated).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// SSIM of a single channel at one pixel, over the reflect-padded 3x3 window.
#[inline]
fn ssim_at(a: &ImageGrid, b: &ImageGrid, ch: usize, row: usize, col: usize) -> f64 {
    let (h, w) = a.shape();
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dr in -1..=1isize {
        let r = reflect(row as isize + dr, h);
        for dc in -1..=1isize {
            let c = reflect(col as isize + dc, w);
            let x = a.get(r, c, ch);
            let y = b.get(r, c, ch);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    let mu_a = sa / 9.0;
    let mu_b = sb / 9.0;
    let var_a = saa / 9.0 - mu_a * mu_a;
    let var_b = sbb / 9.0 - mu_b * mu_b;
    let cov = sab / 9.0 - mu_a * mu_b;
    let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
    let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
    num / den
}

/// Channel-averaged SSIM at one pixel.
#[inline]
pub(crate) fn ssim_pixel(a: &ImageGrid, b: &ImageGrid, row: usize, col: usize) -> f64 {
    let c = a.channels();
    (0..c).map(|ch| ssim_at(a, b, ch, row, col)).sum::<f64>() / c as f64
}

/// Windowed SSIM (3x3 mean filter, reflect padding), averaged over channels.
pub fn ssim_map(a: &ImageGrid, b: &ImageGrid) -> Result<Field> {
    check_images("ssim", a, b)?;
    let (h, w) = a.shape();
    let mut data = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            data.push(ssim_pixel(a, b, row, col));
        }
    }
    Field::new(h, w, data)
}

#[inline]
pub(crate) fn l1_pixel(a: &ImageGrid, b: &ImageGrid, row: usize, col: usize) -> f64 {
    let pa = a.pixel(row, col);
    let pb = b.pixel(row, col);
    pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / pa.len() as f64
}

/// `pe = alpha/2 * (1 - SSIM) + (1 - alpha) * |a - b|` per pixel, with the
/// L1 term averaged over channels.
pub fn photometric_error(a: &ImageGrid, b: &ImageGrid, weights: &LossWeights) -> Result<LossMap> {
    check_images("photometric error", a, b)?;
    let (h, w) = a.shape();
    let mut data = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            data.push(pe_pixel(a, b, row, col, weights.alpha));
        }
    }
    LossMap::new(h, w, 1, data)
}

#[inline]
pub(crate) fn pe_pixel(a: &ImageGrid, b: &ImageGrid, row: usize, col: usize, alpha: f64) -> f64 {
    let l1 = l1_pixel(a, b, row, col);
    if alpha > 0.0 {
        // rounding can push SSIM a hair above 1
        (alpha / 2.0 * (1.0 - ssim_pixel(a, b, row, col)) + (1.0 - alpha) * l1).max(0.0)
    } else {
        l1
    }
}

/// Output of the per-pixel minimum over source frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprojectionLoss {
    /// Single-channel minimum loss; 0 where no channel is valid.
    pub loss: LossMap,
    /// 1 where every source channel was invalid.
    pub both_invalid: BinaryMask,
    /// Index of the channel chosen per pixel (`usize::MAX` if none).
    pub argmin: Vec<usize>,
}

impl ReprojectionLoss {
    /// Wraps a loss map in which every pixel is valid.
    pub fn all_valid(loss: LossMap) -> Result<Self> {
        if loss.channels() != 1 {
            return Err(invalid("expected a single-channel loss"));
        }
        let (h, w) = loss.shape();
        Ok(Self {
            loss,
            both_invalid: BinaryMask::zeros(h, w),
            argmin: vec![0; h * w],
        })
    }

    pub fn support_count(&self) -> usize {
        self.both_invalid.data().len() - self.both_invalid.count_ones()
    }
}

/// Per-pixel minimum over the two source-frame loss channels, skipping
/// channels whose warp was invalid at that pixel.
pub fn min_reprojection(losses: &LossMap, validity: &[BinaryMask]) -> Result<ReprojectionLoss> {
    if losses.channels() != 2 {
        return Err(invalid(format!(
            "minimum reprojection expects 2 source channels, got {}",
            losses.channels()
        )));
    }
    if validity.len() != 2 {
        return Err(invalid("need one validity mask per channel"));
    }
    for v in validity {
        ensure_same_shape("min reprojection validity", losses.shape(), v.shape())?;
    }
    let (h, w) = losses.shape();
    let n = h * w;
    let mut out = vec![0.0; n];
    let mut none = vec![0u8; n];
    let mut argmin = vec![usize::MAX; n];
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for ch in 0..2 {
            if validity[ch].is_set(i) {
                let v = losses.channel(ch)[i];
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((ch, v));
                }
            }
        }
        match best {
            Some((ch, v)) => {
                out[i] = v;
                argmin[i] = ch;
            }
            None => none[i] = 1,
        }
    }
    Ok(ReprojectionLoss {
        loss: LossMap::new(h, w, 1, out)?,
        both_invalid: BinaryMask::new(h, w, none)?,
        argmin,
    })
}

/// Channel-mean absolute image differences along columns and rows.
fn image_gradients(img: &ImageGrid) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = img.shape();
    let mut gx = Vec::with_capacity(h * w.saturating_sub(1));
    for row in 0..h {
        for col in 0..w.saturating_sub(1) {
            gx.push(diff_pixel(img, (row, col), (row, col + 1)));
        }
    }
    let mut gy = Vec::with_capacity(h.saturating_sub(1) * w);
    for row in 0..h.saturating_sub(1) {
        for col in 0..w {
            gy.push(diff_pixel(img, (row, col), (row + 1, col)));
        }
    }
    (gx, gy)
}

/// Sign with `sign(0) = 0` (the subgradient choice at a kink).
#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn diff_pixel(img: &ImageGrid, p: (usize, usize), q: (usize, usize)) -> f64 {
    let a = img.pixel(p.0, p.1);
    let b = img.pixel(q.0, q.1);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Edge-aware smoothness of the mean-normalized depth:
/// `mean(|dx d*| e^{-|dx I|}) + mean(|dy d*| e^{-|dy I|})`, `d* = d / mean(d)`.
pub fn edge_aware_smoothness(depth: &DepthMap, img: &ImageGrid) -> Result<f64> {
    Ok(smoothness_with_gradient(depth, img, false)?.0)
}

/// Smoothness value and, if requested, its gradient with respect to every
/// depth value.
pub(crate) fn smoothness_with_gradient(
    depth: &DepthMap,
    img: &ImageGrid,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    ensure_same_shape("smoothness", depth.shape(), img.shape())?;
    let (h, w) = depth.shape();
    let n = h * w;
    let mean = depth.mean();
    let (gx, gy) = image_gradients(img);
    let d = depth.data();
    let nx = gx.len();
    let ny = gy.len();

    // S = Σ_x |Δd| w / nx + Σ_y |Δd| w / ny ; L = S / mean
    let mut s = 0.0;
    let mut grad_s = if want_grad { vec![0.0; n] } else { Vec::new() };
    if nx > 0 {
        let mut acc = 0.0;
        for row in 0..h {
            for col in 0..w - 1 {
                let i = row * w + col;
                let wgt = (-gx[row * (w - 1) + col]).exp();
                let diff = d[i + 1] - d[i];
                acc += diff.abs() * wgt;
                if want_grad {
                    let g = sign(diff) * wgt / nx as f64;
                    grad_s[i + 1] += g;
                    grad_s[i] -= g;
                }
            }
        }
        s += acc / nx as f64;
    }
    if ny > 0 {
        let mut acc = 0.0;
        for row in 0..h - 1 {
            for col in 0..w {
                let i = row * w + col;
                let wgt = (-gy[i]).exp();
                let diff = d[i + w] - d[i];
                acc += diff.abs() * wgt;
                if want_grad {
                    let g = sign(diff) * wgt / ny as f64;
                    grad_s[i + w] += g;
                    grad_s[i] -= g;
                }
            }
        }
        s += acc / ny as f64;
    }
    let loss = s / mean;
    if want_grad {
        // d(S/m)/dd_k = S'_k / m - S / (m^2 n)
        let shift = s / (mean * mean * n as f64);
        for g in &mut grad_s {
            *g = *g / mean - shift;
        }
    }
    Ok((loss, grad_s))
}

/// `mean(L_ph * M_dynamic) + gamma * L_s`, where the mean runs over pixels
/// with at least one valid warp.
pub fn masked_depth_loss(
    lph: &ReprojectionLoss,
    m_dynamic: &BinaryMask,
    depth: &DepthMap,
    img: &ImageGrid,
    weights: &LossWeights,
) -> Result<f64> {
    ensure_same_shape("masked loss mask", lph.loss.shape(), m_dynamic.shape())?;
    ensure_same_shape("masked loss depth", lph.loss.shape(), depth.shape())?;
    let photometric = masked_photometric_mean(lph, m_dynamic);
    let smooth = if weights.gamma > 0.0 {
        weights.gamma * edge_aware_smoothness(depth, img)?
    } else {
        0.0
    };
    Ok(photometric + smooth)
}

pub(crate) fn masked_photometric_mean(lph: &ReprojectionLoss, m_dynamic: &BinaryMask) -> f64 {
    let support = lph.support_count();
    if support == 0 {
        return 0.0;
    }
    let sum: f64 = lph
        .loss
        .data()
        .iter()
        .zip(m_dynamic.data())
        .filter(|(_, &m)| m == 1)
        .map(|(l, _)| *l)
        .sum();
    sum / support as f64
}

/// Three-part training objective: the sum of the mono, multi-frame and
/// fused-depth losses.
pub fn total_objective(loss_mono: f64, loss_multi: f64, loss_fuse: f64) -> Result<f64> {
    for (name, v) in [("mono", loss_mono), ("multi", loss_multi), ("fuse", loss_fuse)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid(format!("{name} loss must be finite and >= 0, got {v}")));
        }
    }
    Ok(loss_mono + loss_multi + loss_fuse)
}
