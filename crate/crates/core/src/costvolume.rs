//! Plane-sweep cost volume with auto-masking of camera-stationary pixels.
//!
//! Pixels whose value is unchanged between the reference frame and the
//! previous frame are points that move with the camera (or a camera that did
//! not move at all). They are zeroed in both feature maps before the sweep.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, invalid, Error, Result};
use crate::geometry::{project_pixel, sample_plane, CameraModel, RigidPose};
use crate::grid::{block_max_pool, BinaryMask, DepthMap, ImageGrid};

/// Multi-channel feature planes (C×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[ch * n..(ch + 1) * n]
    }
}

/// Candidate depths for the sweep, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHypotheses {
    bins: Vec<f64>,
}

impl DepthHypotheses {
    pub fn new(bins: Vec<f64>) -> Result<Self> {
        if bins.len() < 2 {
            return Err(invalid("need at least two depth hypotheses"));
        }
        if bins.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(invalid("depth hypotheses must be positive"));
        }
        if bins.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("depth hypotheses must be strictly increasing"));
        }
        Ok(Self { bins })
    }

    /// `count` bins spaced uniformly in inverse depth over `[min, max]`.
    pub fn uniform_inverse(min: f64, max: f64, count: usize) -> Result<Self> {
        if !(min > 0.0 && max > min) {
            return Err(invalid(format!("bad depth range [{min}, {max}]")));
        }
        if count < 2 {
            return Err(invalid("need at least two depth hypotheses"));
        }
        let (inv_near, inv_far) = (1.0 / min, 1.0 / max);
        let step = (inv_near - inv_far) / (count - 1) as f64;
        // far to near in inverse depth gives increasing depth when reversed
        let mut bins: Vec<f64> = (0..count)
            .map(|i| {
                if i == 0 {
                    min
                } else if i == count - 1 {
                    max
                } else {
                    1.0 / (inv_near - step * i as f64)
                }
            })
            .collect();
        bins.dedup();
        Self::new(bins)
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.bins[0], self.bins[self.bins.len() - 1])
    }

    /// Width of the bin interval containing `depth` (clamped to the ends).
    pub fn spacing_at(&self, depth: f64) -> f64 {
        let k = self.bins.partition_point(|&b| b <= depth);
        let hi = k.clamp(1, self.bins.len() - 1);
        self.bins[hi] - self.bins[hi - 1]
    }
}

/// Matching costs, bin-major (D×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl CostVolume {
    pub fn new(bins: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != bins * height * width {
            return Err(Error::Shape("cost volume size mismatch".into()));
        }
        if data.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("costs must be finite and nonnegative"));
        }
        Ok(Self {
            bins,
            height,
            width,
            data,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, bin: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[bin * n..(bin + 1) * n]
    }

    #[inline]
    pub fn get(&self, bin: usize, pixel: usize) -> f64 {
        self.data[bin * self.height * self.width + pixel]
    }

    /// A volume with no signal at all (e.g. every feature masked out).
    pub fn is_degenerate(&self) -> bool {
        self.data.iter().all(|&c| c == 0.0)
    }

    /// Index of the cheapest bin per pixel (first one on ties).
    pub fn argmin(&self) -> Vec<usize> {
        let n = self.height * self.width;
        (0..n)
            .map(|i| {
                (0..self.bins)
                    .min_by(|&a, &b| self.get(a, i).total_cmp(&self.get(b, i)))
                    .expect("at least two bins")
            })
            .collect()
    }

    /// Minimum cost per pixel.
    pub fn min_cost(&self) -> Vec<f64> {
        let n = self.height * self.width;
        (0..n)
            .map(|i| (0..self.bins).map(|b| self.get(b, i)).fold(f64::INFINITY, f64::min))
            .collect()
    }
}

/// Per-pixel distribution over depth bins, bin-major (D×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbabilityVolume {
    /// Validates nonnegativity and per-pixel normalization (1e-5).
    pub fn new(bins: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("probability volume needs at least two bins"));
        }
        if data.len() != bins * height * width {
            return Err(Error::Shape("probability volume size mismatch".into()));
        }
        if data.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("probabilities must be finite and nonnegative"));
        }
        let n = height * width;
        for i in 0..n {
            let sum: f64 = (0..bins).map(|b| data[b * n + i]).sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(invalid(format!("probabilities at pixel {i} sum to {sum}")));
            }
        }
        Ok(Self {
            bins,
            height,
            width,
            data,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, bin: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[bin * n..(bin + 1) * n]
    }

    /// The distribution of one pixel, copied into `out` (length = bins).
    pub fn column_into(&self, pixel: usize, out: &mut [f64]) {
        let n = self.height * self.width;
        for (b, o) in out.iter_mut().enumerate() {
            *o = self.data[b * n + pixel];
        }
    }
}

/// `M_eq = 1` where the two frames agree on every channel. Agreement means
/// a channel-max absolute difference `<= tolerance`; `tolerance = 0`
/// demands exact equality.
pub fn consistency_mask(i_t: &ImageGrid, i_prev: &ImageGrid, tolerance: f64) -> Result<BinaryMask> {
    ensure_same_shape("consistency mask", i_t.shape(), i_prev.shape())?;
    if i_t.channels() != i_prev.channels() {
        return Err(Error::Shape("consistency mask: channel count differs".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(invalid("tolerance must be >= 0"));
    }
    let (h, w) = i_t.shape();
    Ok(BinaryMask::from_fn(h, w, |r, c| {
        i_t.pixel(r, c)
            .iter()
            .zip(i_prev.pixel(r, c))
            .all(|(a, b)| (a - b).abs() <= tolerance)
    }))
}

/// `M_cost = 1 - M_eq`.
pub fn cvam_mask(m_eq: &BinaryMask) -> BinaryMask {
    m_eq.inverted()
}

/// Brings the auto-mask to feature resolution `/2^scale` by block-max
/// pooling, so a block keeps its features if any pixel in it changed.
pub fn downsample_cvam(m_cost: &BinaryMask, scale: u32) -> Result<BinaryMask> {
    let factor = 1usize
        .checked_shl(scale)
        .filter(|f| *f <= m_cost.height().max(m_cost.width()).max(1) * 2)
        .ok_or_else(|| invalid(format!("scale {scale} too large")))?;
    block_max_pool(m_cost, factor)
}

/// Multiplies every feature channel by the mask.
pub fn apply_cvam(features: &FeatureMap, m_down: &BinaryMask) -> Result<FeatureMap> {
    ensure_same_shape("apply cvam", features.shape(), m_down.shape())?;
    let n = features.height * features.width;
    let data = features
        .data
        .iter()
        .enumerate()
        .map(|(i, &f)| if m_down.is_set(i % n) { f } else { 0.0 })
        .collect();
    FeatureMap::new(features.height, features.width, features.channels, data)
}

fn block_average(img: &ImageGrid, factor: usize) -> (usize, usize, Vec<f64>) {
    let gray = img.channel_mean();
    let (h, w) = gray.shape();
    let oh = h.div_ceil(factor);
    let ow = w.div_ceil(factor);
    let mut sum = vec![0.0; oh * ow];
    let mut count = vec![0usize; oh * ow];
    for r in 0..h {
        for c in 0..w {
            let k = (r / factor) * ow + c / factor;
            sum[k] += gray.get(r, c, 0);
            count[k] += 1;
        }
    }
    let data = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    (oh, ow, data)
}

/// Deterministic stand-in for a learned encoder: block-averaged intensity
/// plus absolute horizontal and vertical Sobel responses (scaled by 1/4 to
/// stay in unit range), at resolution `/2^scale`.
pub fn extract_features(img: &ImageGrid, scale: u32) -> Result<FeatureMap> {
    if scale > 2 {
        return Err(invalid(format!("feature scale must be 0, 1 or 2, got {scale}")));
    }
    let (h, w, base) = block_average(img, 1 << scale);
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        base[r * w + c]
    };
    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    data[..n].copy_from_slice(&base);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            let i = r as usize * w + c as usize;
            data[n + i] = gx.abs() / 4.0;
            data[2 * n + i] = gy.abs() / 4.0;
        }
    }
    FeatureMap::new(h, w, 3, data)
}

/// Sweeps the source features over every depth hypothesis. `cam` must
/// describe the feature resolution. The per-pixel cost is the channel-mean
/// L1 distance, averaged over the valid cells of a `(2r+1)²` window; cells
/// whose warp leaves the source get 10× the largest valid cost.
pub fn build_cost_volume(
    f_ref: &FeatureMap,
    f_src: &FeatureMap,
    hyps: &DepthHypotheses,
    pose: &RigidPose,
    cam: &CameraModel,
    aggregation_radius: usize,
) -> Result<CostVolume> {
    ensure_same_shape("cost volume features", f_ref.shape(), f_src.shape())?;
    if f_ref.channels != f_src.channels {
        return Err(Error::Shape("cost volume: feature channel count differs".into()));
    }
    let (h, w) = f_ref.shape();
    let n = h * w;
    let channels = f_ref.channels;
    let mut data = vec![0.0; hyps.len() * n];
    let mut valid = vec![false; hyps.len() * n];
    let mut raw = vec![0.0; n];
    let mut raw_valid = vec![false; n];
    let mut max_valid: f64 = 0.0;
    for (b, &depth) in hyps.bins().iter().enumerate() {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                raw_valid[i] = false;
                let Some(p) = project_pixel(r, c, depth, pose, cam) else {
                    continue;
                };
                let mut cost = 0.0;
                let mut ok = true;
                for ch in 0..channels {
                    match sample_plane(f_src.plane(ch), h, w, p.col, p.row) {
                        Some(v) => cost += (f_ref.plane(ch)[i] - v).abs(),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    raw[i] = cost / channels as f64;
                    raw_valid[i] = true;
                }
            }
        }
        let rad = aggregation_radius;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if !raw_valid[i] {
                    continue;
                }
                let (mut sum, mut count) = (0.0, 0usize);
                for rr in r.saturating_sub(rad)..(r + rad + 1).min(h) {
                    for cc in c.saturating_sub(rad)..(c + rad + 1).min(w) {
                        let k = rr * w + cc;
                        if raw_valid[k] {
                            sum += raw[k];
                            count += 1;
                        }
                    }
                }
                let cost = sum / count as f64;
                max_valid = max_valid.max(cost);
                data[b * n + i] = cost;
                valid[b * n + i] = true;
            }
        }
    }
    let sentinel = 10.0 * max_valid;
    for (cell, ok) in data.iter_mut().zip(&valid) {
        if !ok {
            *cell = sentinel;
        }
    }
    CostVolume::new(hyps.len(), h, w, data)
}

/// Per-pixel softmax of `-cost / temperature` over bins.
pub fn cost_to_probability(cv: &CostVolume, temperature: f64) -> Result<ProbabilityVolume> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let n = cv.height * cv.width;
    let mut data = vec![0.0; cv.data.len()];
    for i in 0..n {
        let max_logit = (0..cv.bins)
            .map(|b| -cv.get(b, i) / temperature)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for b in 0..cv.bins {
            let e = (-cv.get(b, i) / temperature - max_logit).exp();
            data[b * n + i] = e;
            total += e;
        }
        for b in 0..cv.bins {
            data[b * n + i] /= total;
        }
    }
    ProbabilityVolume::new(cv.bins, cv.height, cv.width, data)
}

/// Expected depth under the per-pixel bin distribution.
pub fn soft_argmin_depth(pv: &ProbabilityVolume, hyps: &DepthHypotheses) -> Result<DepthMap> {
    if pv.bins != hyps.len() {
        return Err(Error::Shape(format!(
            "{} probability bins vs {} hypotheses",
            pv.bins,
            hyps.len()
        )));
    }
    let n = pv.height * pv.width;
    let data = (0..n)
        .map(|i| {
            hyps.bins()
                .iter()
                .enumerate()
                .map(|(b, d)| pv.data[b * n + i] * d)
                .sum::<f64>()
                // rounding can nudge the mean a hair outside the bin range
                .clamp(hyps.bins()[0], hyps.bins()[hyps.len() - 1])
        })
        .collect();
    DepthMap::new(pv.height, pv.width, data)
}

/// Nearest-neighbour upsampling of a feature-resolution depth map back to
/// `height`×`width`.
pub fn upsample_depth(depth: &DepthMap, factor: usize, height: usize, width: usize) -> Result<DepthMap> {
    if factor == 0 {
        return Err(invalid("upsampling factor must be >= 1"));
    }
    if depth.height() != height.div_ceil(factor) || depth.width() != width.div_ceil(factor) {
        return Err(Error::Shape("upsample target does not match the depth map".into()));
    }
    DepthMap::from_fn(height, width, |r, c| depth.get(r / factor, c / factor))
}

/// Settings of the multi-frame depth path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiFrameConfig {
    pub cvam: bool,
    /// Feature pyramid level; features live at `1/2^scale` resolution.
    pub scale: u32,
    /// Equality tolerance for the consistency mask.
    pub tau_eq: f64,
    pub temperature: f64,
    /// Radius of the window over which matching costs are averaged.
    pub aggregation_radius: usize,
    pub bins: usize,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for MultiFrameConfig {
    fn default() -> Self {
        Self {
            cvam: true,
            scale: 0,
            tau_eq: 1e-3,
            temperature: 0.005,
            aggregation_radius: 3,
            bins: 32,
            depth_min: 2.0,
            depth_max: 40.0,
        }
    }
}

impl MultiFrameConfig {
    pub fn hypotheses(&self) -> Result<DepthHypotheses> {
        DepthHypotheses::uniform_inverse(self.depth_min, self.depth_max, self.bins)
    }
}

/// Everything the multi-frame path produces for one reference frame.
#[derive(Debug, Clone)]
pub struct MultiFrameOutput {
    pub hypotheses: DepthHypotheses,
    /// Auto-mask at input resolution (1 = keep).
    pub m_cost: BinaryMask,
    /// Auto-mask at feature resolution.
    pub m_down: BinaryMask,
    pub cost: CostVolume,
    pub probability: ProbabilityVolume,
    /// Soft-argmin depth, upsampled to input resolution.
    pub depth: DepthMap,
    /// Set when the auto-mask removed every pixel (stationary camera).
    pub degenerate: bool,
}

/// Reference frame `i_t` against the previous frame: auto-mask, features,
/// sweep, softmax and soft-argmin.
pub fn multi_frame_depth(
    i_t: &ImageGrid,
    i_prev: &ImageGrid,
    pose_t_to_prev: &RigidPose,
    cam: &CameraModel,
    cfg: &MultiFrameConfig,
) -> Result<MultiFrameOutput> {
    let hyps = cfg.hypotheses()?;
    let factor = 1usize << cfg.scale;
    let (h, w) = i_t.shape();
    let m_cost = if cfg.cvam {
        cvam_mask(&consistency_mask(i_t, i_prev, cfg.tau_eq)?)
    } else {
        BinaryMask::ones(h, w)
    };
    let m_down = downsample_cvam(&m_cost, cfg.scale)?;
    let mut f_ref = extract_features(i_t, cfg.scale)?;
    let mut f_src = extract_features(i_prev, cfg.scale)?;
    if cfg.cvam {
        f_ref = apply_cvam(&f_ref, &m_down)?;
        f_src = apply_cvam(&f_src, &m_down)?;
    }
    let feat_cam = cam.downscaled(factor);
    let cost = build_cost_volume(&f_ref, &f_src, &hyps, pose_t_to_prev, &feat_cam, cfg.aggregation_radius)?;
    let probability = cost_to_probability(&cost, cfg.temperature)?;
    let coarse = soft_argmin_depth(&probability, &hyps)?;
    let depth = upsample_depth(&coarse, factor, h, w)?;
    Ok(MultiFrameOutput {
        hypotheses: hyps,
        degenerate: cfg.cvam && m_cost.count_ones() == 0,
        m_cost,
        m_down,
        cost,
        probability,
        depth,
    })
}
