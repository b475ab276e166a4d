//! Direct per-pixel depth refinement on the masked photometric objective,
//! its gradients, and the component ablation harness.
//!
//! The objective for a depth map `D` is
//! `L(D) = mean_support(L_ph(D) · M_dynamic) + gamma · L_s(D)`, where `L_ph`
//! is the per-pixel minimum over the two source frames. With fusion enabled
//! the fused depth `F = (1 - U)·D_multi + U·D` contributes a second term
//! `L(F)`; since `D_multi` is fixed, its own loss is a constant and is left
//! out.
//!
//! Descent directions are `S·P·S·g` with `S = K B K + (I - K)` for the keep
//! mask `K` and box filter `B`, and `P` a positive diagonal holding each
//! pixel's inverse running RMS of `S·g`. `S` is symmetric, so the direction
//! is a descent direction; pixels outside `K` neither send nor receive
//! smoothed gradient, and move only under the smoothness term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costvolume::{multi_frame_depth, MultiFrameConfig};
use crate::dynmask::dynamic_mask;
use crate::error::{ensure_same_shape, invalid, Result};
use crate::geometry::{inverse_warp, project_pixel, projection_depth_derivative, sample_bilinear, sample_bilinear_with_gradient};
use crate::grid::{BinaryMask, DepthMap, Field, ImageGrid, LossMap};
use crate::metrics::{region_split_evaluate, DepthMetrics, EvalOptions, RegionMetrics};
use crate::photometric::{
    masked_photometric_mean, min_reprojection, pe_pixel, photometric_error, sign, smoothness_with_gradient,
    LossWeights, ReprojectionLoss,
};
use crate::seu::{fuse_depth, uncertainty_from_volume, SeuParams, UncertaintyField};
use crate::synth::{generate_triplet, FrameTriplet, SceneSpec};

/// Which photometric error the refinement minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// Pure L1 (`alpha = 0`) with analytic gradients.
    L1Only,
    /// SSIM + L1 with the default `alpha`, differentiated numerically.
    FullPeNumeric,
}

impl AlphaMode {
    pub fn alpha(self) -> f64 {
        match self {
            AlphaMode::L1Only => 0.0,
            AlphaMode::FullPeNumeric => LossWeights::default().alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Base step (meters) along the RMS-normalized direction.
    pub step: f64,
    pub iterations: usize,
    pub alpha_mode: AlphaMode,
    pub dm_enabled: bool,
    /// First iteration at which the dynamic mask is applied.
    pub dm_start_iteration: usize,
    pub beta: f64,
    pub gamma: f64,
    pub depth_min: f64,
    pub depth_cap: f64,
    /// Step halvings tried before an iteration gives up.
    pub max_halvings: usize,
    /// Radius of the box filter smoothing the descent direction (0 = none).
    pub smoothing_radius: usize,
    /// Central-difference step (meters) for the numeric gradient.
    pub fd_step: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            step: 0.2,
            iterations: 150,
            alpha_mode: AlphaMode::L1Only,
            dm_enabled: true,
            dm_start_iteration: 0,
            beta: 0.8,
            gamma: 0.1,
            depth_min: 0.1,
            depth_cap: crate::metrics::DEFAULT_CAP,
            max_halvings: 10,
            smoothing_radius: 4,
            fd_step: 1e-4,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid(format!("step must be > 0, got {}", self.step)));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        if !(self.depth_min > 0.0 && self.depth_cap > self.depth_min) {
            return Err(invalid(format!(
                "bad depth clamp [{}, {}]",
                self.depth_min, self.depth_cap
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(invalid("finite-difference step must be > 0"));
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha_mode.alpha(),
            gamma: self.gamma,
            beta: self.beta,
        }
    }

    fn dm_active(&self, iteration: usize) -> bool {
        self.dm_enabled && iteration >= self.dm_start_iteration
    }
}

/// Per-source photometric losses for one depth map.
#[derive(Debug, Clone)]
pub struct PhotometricState {
    pub warped: [ImageGrid; 2],
    pub validity: [BinaryMask; 2],
    /// Two-channel loss map, previous frame first.
    pub losses: LossMap,
    pub reprojection: ReprojectionLoss,
}

pub fn photometric_state(depth: &DepthMap, triplet: &FrameTriplet, alpha: f64) -> Result<PhotometricState> {
    ensure_same_shape("photometric state", depth.shape(), triplet.shape())?;
    let weights = LossWeights {
        alpha,
        ..LossWeights::default()
    };
    let [(prev, pose_prev), (next, pose_next)] = triplet.sources();
    let a = inverse_warp(prev, depth, pose_prev, &triplet.camera)?;
    let b = inverse_warp(next, depth, pose_next, &triplet.camera)?;
    let pe_a = photometric_error(&triplet.center, &a.image, &weights)?;
    let pe_b = photometric_error(&triplet.center, &b.image, &weights)?;
    let losses = LossMap::stack(&[&pe_a, &pe_b])?;
    let validity = [a.validity, b.validity];
    let reprojection = min_reprojection(&losses, &validity)?;
    Ok(PhotometricState {
        warped: [a.image, b.image],
        validity,
        losses,
        reprojection,
    })
}

/// Keep mask for the current losses: the dynamic mask, or all ones.
pub fn keep_mask(state: &PhotometricState, dm: bool, beta: f64) -> Result<BinaryMask> {
    if dm {
        dynamic_mask(&state.losses, beta)
    } else {
        let (h, w) = state.losses.shape();
        Ok(BinaryMask::ones(h, w))
    }
}

/// `mean_support(L_ph · M) + gamma · L_s` for a given mask.
pub fn objective(
    depth: &DepthMap,
    triplet: &FrameTriplet,
    mask: &BinaryMask,
    weights: &LossWeights,
) -> Result<f64> {
    if weights.alpha > 0.0 {
        let state = photometric_state(depth, triplet, weights.alpha)?;
        return objective_from_state(&state, depth, triplet, mask, weights.gamma);
    }
    ensure_same_shape("objective depth", depth.shape(), triplet.shape())?;
    ensure_same_shape("objective mask", depth.shape(), mask.shape())?;
    let mut value = l1_reprojection_mean(depth, triplet, mask);
    if weights.gamma > 0.0 {
        value += weights.gamma * smoothness_with_gradient(depth, &triplet.center, false)?.0;
    }
    Ok(value)
}

/// Masked mean of the minimum L1 reprojection error, computed pixel by pixel
/// without materializing the warped images.
fn l1_reprojection_mean(depth: &DepthMap, triplet: &FrameTriplet, mask: &BinaryMask) -> f64 {
    let (h, w) = depth.shape();
    let sources = triplet.sources();
    let mut sample = vec![0.0; triplet.center.channels()];
    let (mut sum, mut support) = (0.0, 0usize);
    for row in 0..h {
        for col in 0..w {
            let mut best: Option<f64> = None;
            for (src, pose) in sources {
                let Some(p) = project_pixel(row, col, depth.get(row, col), pose, &triplet.camera) else {
                    continue;
                };
                if !sample_bilinear(src, p.col, p.row, &mut sample) {
                    continue;
                }
                let target = triplet.center.pixel(row, col);
                let l1 = target.iter().zip(&sample).map(|(x, y)| (x - y).abs()).sum::<f64>() / sample.len() as f64;
                if best.is_none_or(|b| l1 < b) {
                    best = Some(l1);
                }
            }
            if let Some(v) = best {
                support += 1;
                if mask.is_set(row * w + col) {
                    sum += v;
                }
            }
        }
    }
    if support == 0 {
        0.0
    } else {
        sum / support as f64
    }
}

fn objective_from_state(
    state: &PhotometricState,
    depth: &DepthMap,
    triplet: &FrameTriplet,
    mask: &BinaryMask,
    gamma: f64,
) -> Result<f64> {
    ensure_same_shape("objective mask", depth.shape(), mask.shape())?;
    let mut value = masked_photometric_mean(&state.reprojection, mask);
    if gamma > 0.0 {
        value += gamma * smoothness_with_gradient(depth, &triplet.center, false)?.0;
    }
    Ok(value)
}

fn smoothness_gradient(depth: &DepthMap, img: &ImageGrid, gamma: f64, out: &mut [f64]) -> Result<()> {
    if gamma > 0.0 {
        let (_, g) = smoothness_with_gradient(depth, img, true)?;
        for (o, gi) in out.iter_mut().zip(g) {
            *o += gamma * gi;
        }
    }
    Ok(())
}

/// Analytic gradient of the L1 objective with respect to every depth value.
///
/// The source channel chosen by the per-pixel minimum is held fixed, and
/// the mask is treated as a constant.
pub fn photometric_gradient(depth: &DepthMap, triplet: &FrameTriplet, mask: &BinaryMask, gamma: f64) -> Result<Field> {
    let state = photometric_state(depth, triplet, 0.0)?;
    let (h, w) = depth.shape();
    let g = analytic_gradient(&state, depth, triplet, mask, gamma)?;
    Field::new(h, w, g)
}

fn analytic_gradient(
    state: &PhotometricState,
    depth: &DepthMap,
    triplet: &FrameTriplet,
    mask: &BinaryMask,
    gamma: f64,
) -> Result<Vec<f64>> {
    ensure_same_shape("gradient mask", depth.shape(), mask.shape())?;
    let (h, w) = depth.shape();
    let channels = triplet.center.channels();
    let support = state.reprojection.support_count();
    let mut grad = vec![0.0; h * w];
    if support > 0 {
        let sources = triplet.sources();
        let mut value = vec![0.0; channels];
        let mut d_col = vec![0.0; channels];
        let mut d_row = vec![0.0; channels];
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                let s = state.reprojection.argmin[i];
                if !mask.is_set(i) || s == usize::MAX {
                    continue;
                }
                let (src, pose) = sources[s];
                let d = depth.get(row, col);
                let (Some(p), Some(jac)) = (
                    project_pixel(row, col, d, pose, &triplet.camera),
                    projection_depth_derivative(row, col, d, pose, &triplet.camera),
                ) else {
                    continue;
                };
                if !sample_bilinear_with_gradient(src, p.col, p.row, &mut value, &mut d_col, &mut d_row) {
                    continue;
                }
                let target = triplet.center.pixel(row, col);
                let mut g = 0.0;
                for ch in 0..channels {
                    let residual = target[ch] - value[ch];
                    g -= sign(residual) * (d_col[ch] * jac[0] + d_row[ch] * jac[1]);
                }
                grad[i] = g / (channels as f64 * support as f64);
            }
        }
    }
    smoothness_gradient(depth, &triplet.center, gamma, &mut grad)?;
    Ok(grad)
}

/// Central differences of the scalar objective, one depth value at a time.
///
/// Each perturbed objective is evaluated exactly but incrementally: moving
/// one depth value changes one warped sample per source, which only enters
/// the photometric errors of the surrounding 3×3 window (just the pixel
/// itself for pure L1), and can only change the support through that
/// pixel. The smoothness term is re-evaluated in full.
pub fn finite_difference_gradient(
    depth: &DepthMap,
    triplet: &FrameTriplet,
    mask: &BinaryMask,
    weights: &LossWeights,
    h: f64,
) -> Result<Field> {
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be > 0"));
    }
    ensure_same_shape("finite differences", depth.shape(), triplet.shape())?;
    ensure_same_shape("finite-difference mask", depth.shape(), mask.shape())?;
    let state = photometric_state(depth, triplet, weights.alpha)?;
    let mut grad = numeric_photometric_gradient(&state, depth, triplet, mask, weights.alpha, h);
    if weights.gamma > 0.0 {
        let (rows, cols) = depth.shape();
        let mut values = depth.data().to_vec();
        for (i, g) in grad.iter_mut().enumerate() {
            let d = values[i];
            values[i] = d + h;
            let plus = smoothness_with_gradient(&DepthMap::new(rows, cols, values.clone())?, &triplet.center, false)?.0;
            values[i] = d - h;
            let minus = smoothness_with_gradient(&DepthMap::new(rows, cols, values.clone())?, &triplet.center, false)?.0;
            values[i] = d;
            *g += weights.gamma * (plus - minus) / (2.0 * h);
        }
    }
    Field::new(depth.height(), depth.width(), grad)
}

/// Numeric photometric gradient plus the analytic smoothness gradient.
fn local_numeric_gradient(
    state: &PhotometricState,
    depth: &DepthMap,
    triplet: &FrameTriplet,
    mask: &BinaryMask,
    weights: &LossWeights,
    h: f64,
) -> Result<Vec<f64>> {
    let mut grad = numeric_photometric_gradient(state, depth, triplet, mask, weights.alpha, h);
    smoothness_gradient(depth, &triplet.center, weights.gamma, &mut grad)?;
    Ok(grad)
}

/// Central differences of `mean_support(L_ph · M)` evaluated incrementally
/// from `state`. A negative `h` gives the same result as `|h|`.
fn numeric_photometric_gradient(
    state: &PhotometricState,
    depth: &DepthMap,
    triplet: &FrameTriplet,
    mask: &BinaryMask,
    alpha: f64,
    h: f64,
) -> Vec<f64> {
    let h = h.abs();
    let (rows, cols) = depth.shape();
    let channels = triplet.center.channels();
    let radius = usize::from(alpha > 0.0);
    let base_support = state.reprojection.support_count() as f64;
    let base_sum: f64 = state
        .reprojection
        .loss
        .data()
        .iter()
        .enumerate()
        .filter(|&(i, _)| mask.is_set(i))
        .map(|(_, l)| l)
        .sum();
    let sources = triplet.sources();
    let mut warped = state.warped.clone();
    let mut validity: [Vec<u8>; 2] = [state.validity[0].data().to_vec(), state.validity[1].data().to_vec()];
    let mut sample = vec![0.0; channels];
    let mut grad = vec![0.0; rows * cols];

    // masked window sum and whether the centre pixel has support
    let window_loss = |warped: &[ImageGrid; 2], validity: &[Vec<u8>; 2], row: usize, col: usize| {
        let mut sum = 0.0;
        for r in row.saturating_sub(radius)..=(row + radius).min(rows - 1) {
            for c in col.saturating_sub(radius)..=(col + radius).min(cols - 1) {
                let i = r * cols + c;
                if !mask.is_set(i) {
                    continue;
                }
                let mut best = f64::INFINITY;
                for s in 0..2 {
                    if validity[s][i] == 1 {
                        best = best.min(pe_pixel(&triplet.center, &warped[s], r, c, alpha));
                    }
                }
                if best.is_finite() {
                    sum += best;
                }
            }
        }
        let j = row * cols + col;
        (sum, validity[0][j] == 1 || validity[1][j] == 1)
    };

    for row in 0..rows {
        for col in 0..cols {
            let j = row * cols + col;
            let originals: [(u8, Vec<f64>); 2] =
                std::array::from_fn(|s| (validity[s][j], warped[s].pixel(row, col).to_vec()));
            let (old_sum, old_valid) = window_loss(&warped, &validity, row, col);
            let mut values = [0.0; 2];
            for (k, delta) in [h, -h].into_iter().enumerate() {
                let d = depth.get(row, col) + delta;
                for (s, (src, pose)) in sources.iter().enumerate() {
                    let ok = project_pixel(row, col, d, pose, &triplet.camera)
                        .is_some_and(|p| sample_bilinear(src, p.col, p.row, &mut sample));
                    if !ok {
                        sample.iter_mut().for_each(|v| *v = 0.0);
                    }
                    warped[s].pixel_mut(row, col).copy_from_slice(&sample);
                    validity[s][j] = u8::from(ok);
                }
                let (new_sum, new_valid) = window_loss(&warped, &validity, row, col);
                let support = base_support - f64::from(u8::from(old_valid)) + f64::from(u8::from(new_valid));
                values[k] = if support > 0.0 {
                    (base_sum - old_sum + new_sum) / support
                } else {
                    0.0
                };
            }
            for (s, (v, px)) in originals.into_iter().enumerate() {
                validity[s][j] = v;
                warped[s].pixel_mut(row, col).copy_from_slice(&px);
            }
            grad[j] = (values[0] - values[1]) / (2.0 * h);
        }
    }
    grad
}

/// Box sum over a `(2r+1)²` window restricted to `keep`, scaled by the
/// window area; pixels outside `keep` pass through unchanged.
pub fn masked_box_filter(x: &[f64], keep: &BinaryMask, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return x.to_vec();
    }
    let (h, w) = keep.shape();
    // summed-area table of the kept values
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            let i = r * w + c;
            if keep.is_set(i) {
                row_sum += x[i];
            }
            sat[(r + 1) * (w + 1) + c + 1] = sat[r * (w + 1) + c + 1] + row_sum;
        }
    }
    let area = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = x.to_vec();
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
        for c in 0..w {
            let i = r * w + c;
            if !keep.is_set(i) {
                continue;
            }
            let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
            let sum = sat[r1 * (w + 1) + c1] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0] + sat[r0 * (w + 1) + c0];
            out[i] = sum / area;
        }
    }
    out
}

/// Multi-frame depth and its uncertainty, blended into the objective.
#[derive(Debug, Clone)]
pub struct FusionTarget {
    pub d_multi: DepthMap,
    pub uncertainty: UncertaintyField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineStatus {
    /// Ran every iteration.
    Completed,
    /// No step decreased the loss after all halvings.
    Stalled,
    /// Loss exceeded 1000× its initial value.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct RefineReport {
    /// Objective at the start of each iteration, then after the last step.
    pub loss_trace: Vec<f64>,
    pub depth: DepthMap,
    pub metrics: RegionMetrics,
    pub status: RefineStatus,
    pub iterations_run: usize,
    /// Keep mask of the direct-depth term at the last iteration.
    pub final_mask: BinaryMask,
}

struct Term {
    state: PhotometricState,
    mask: BinaryMask,
}

/// Decay of the running mean of squared smoothed gradients.
const RMS_DECAY: f64 = 0.9;
/// Per-pixel normalization floor, relative to the mean RMS.
const RMS_FLOOR: f64 = 1e-2;

struct Refiner<'a> {
    triplet: &'a FrameTriplet,
    cfg: &'a RefineConfig,
    weights: LossWeights,
    fusion: Option<&'a FusionTarget>,
}

impl Refiner<'_> {
    fn fused(&self, d: &DepthMap) -> Result<Option<DepthMap>> {
        self.fusion
            .map(|f| fuse_depth(&f.d_multi, d, &f.uncertainty))
            .transpose()
    }

    fn terms(&self, d: &DepthMap, dm: bool) -> Result<(Term, Option<(DepthMap, Term)>)> {
        let make = |depth: &DepthMap| -> Result<Term> {
            let state = photometric_state(depth, self.triplet, self.weights.alpha)?;
            let mask = keep_mask(&state, dm, self.cfg.beta)?;
            Ok(Term { state, mask })
        };
        let direct = make(d)?;
        let fused = match self.fused(d)? {
            Some(f) => {
                let t = make(&f)?;
                Some((f, t))
            }
            None => None,
        };
        Ok((direct, fused))
    }

    fn value(&self, d: &DepthMap, direct_mask: &BinaryMask, fused_mask: Option<&BinaryMask>) -> Result<f64> {
        let mut v = objective(d, self.triplet, direct_mask, &self.weights)?;
        if let (Some(f), Some(m)) = (self.fused(d)?, fused_mask) {
            v += objective(&f, self.triplet, m, &self.weights)?;
        }
        Ok(v)
    }

    fn gradient(&self, d: &DepthMap, term: &Term) -> Result<Vec<f64>> {
        match self.cfg.alpha_mode {
            AlphaMode::L1Only => analytic_gradient(&term.state, d, self.triplet, &term.mask, self.weights.gamma),
            AlphaMode::FullPeNumeric => {
                local_numeric_gradient(&term.state, d, self.triplet, &term.mask, &self.weights, self.cfg.fd_step)
            }
        }
    }

    fn run(&self, initial: &DepthMap) -> Result<RefineReport> {
        let (h, w) = initial.shape();
        let n = (h * w) as f64;
        let clamp = |v: f64| v.clamp(self.cfg.depth_min, self.cfg.depth_cap);
        let mut d = DepthMap::new(h, w, initial.data().iter().map(|&v| clamp(v)).collect())?;
        let mut trace = Vec::with_capacity(self.cfg.iterations + 1);
        let mut status = RefineStatus::Completed;
        let mut iterations_run = 0;
        let mut last_mask = BinaryMask::ones(h, w);
        let mut initial_loss = None;
        let mut second = vec![0.0; h * w];
        for it in 0..self.cfg.iterations {
            let dm = self.cfg.dm_active(it);
            let (direct, fused) = self.terms(&d, dm)?;
            let fused_mask = fused.as_ref().map(|(_, t)| &t.mask);
            let current = self.value(&d, &direct.mask, fused_mask)?;
            let reference = *initial_loss.get_or_insert(current);
            trace.push(current);
            last_mask = direct.mask.clone();
            if !current.is_finite() || current > 1e3 * reference.max(f64::MIN_POSITIVE) {
                status = RefineStatus::Diverged;
                break;
            }

            let mut grad = self.gradient(&d, &direct)?;
            let mut keep = direct.mask.clone();
            if let (Some((f, term)), Some(fusion)) = (&fused, self.fusion) {
                let g_fused = self.gradient(f, term)?;
                for ((g, gf), u) in grad.iter_mut().zip(g_fused).zip(fusion.uncertainty.data()) {
                    *g += u * gf;
                }
                keep = keep.and(&term.mask)?;
            }
            let r = self.cfg.smoothing_radius;
            let mut dir = masked_box_filter(&grad, &keep, r);
            let corr = 1.0 - RMS_DECAY.powi(it as i32 + 1);
            for (v, g) in second.iter_mut().zip(&dir) {
                *v = RMS_DECAY * *v + (1.0 - RMS_DECAY) * g * g;
            }
            let mean_rms = second.iter().map(|v| (v / corr).sqrt()).sum::<f64>() / n;
            let eps = RMS_FLOOR * mean_rms + f64::MIN_POSITIVE;
            for (g, v) in dir.iter_mut().zip(&second) {
                *g /= (v / corr).sqrt() + eps;
            }
            let dir = masked_box_filter(&dir, &keep, r);

            let mut step = self.cfg.step;
            let mut accepted = false;
            for _ in 0..=self.cfg.max_halvings {
                let candidate = DepthMap::new(
                    h,
                    w,
                    d.data().iter().zip(&dir).map(|(&v, &g)| clamp(v - step * g)).collect(),
                )?;
                let value = self.value(&candidate, &direct.mask, fused_mask)?;
                if value <= current {
                    d = candidate;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations_run = it + 1;
            if !accepted {
                status = RefineStatus::Stalled;
                break;
            }
        }
        if status != RefineStatus::Diverged {
            let (direct, fused) = self.terms(&d, self.cfg.dm_active(iterations_run))?;
            trace.push(self.value(&d, &direct.mask, fused.as_ref().map(|(_, t)| &t.mask))?);
        }
        let metrics = region_split_evaluate(
            &d,
            &self.triplet.gt_depth,
            &self.triplet.dynamic_oracle,
            EvalOptions {
                cap: self.cfg.depth_cap,
                median_scale: false,
            },
        )?;
        Ok(RefineReport {
            loss_trace: trace,
            depth: d,
            metrics,
            status,
            iterations_run,
            final_mask: last_mask,
        })
    }
}

/// Gradient descent on the masked objective from `initial`.
pub fn refine_depth(initial: &DepthMap, triplet: &FrameTriplet, cfg: &RefineConfig) -> Result<RefineReport> {
    refine_depth_with_fusion(initial, triplet, cfg, None)
}

/// As [`refine_depth`], adding the fused-depth term when `fusion` is given.
pub fn refine_depth_with_fusion(
    initial: &DepthMap,
    triplet: &FrameTriplet,
    cfg: &RefineConfig,
    fusion: Option<&FusionTarget>,
) -> Result<RefineReport> {
    cfg.validate()?;
    ensure_same_shape("refine initial depth", initial.shape(), triplet.shape())?;
    if let Some(f) = fusion {
        ensure_same_shape("fusion depth", f.d_multi.shape(), triplet.shape())?;
    }
    Refiner {
        triplet,
        cfg,
        weights: cfg.weights(),
        fusion,
    }
    .run(initial)
}

/// One cell of the component grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components {
    pub dm: bool,
    pub cvam: bool,
    pub seu: bool,
}

impl Components {
    pub const BASELINE: Components = Components {
        dm: false,
        cvam: false,
        seu: false,
    };
    pub const FULL: Components = Components {
        dm: true,
        cvam: true,
        seu: true,
    };
}

/// All eight on/off combinations, baseline first.
pub fn full_grid() -> Vec<Components> {
    (0..8u8)
        .map(|bits| Components {
            dm: bits & 1 != 0,
            cvam: bits & 2 != 0,
            seu: bits & 4 != 0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub refine: RefineConfig,
    pub multi: MultiFrameConfig,
    pub seu: SeuParams,
    /// Refinement starts from [`initial_depth`] with these two values.
    pub init_scale: f64,
    pub init_jitter: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            refine: RefineConfig::default(),
            multi: MultiFrameConfig::default(),
            seu: SeuParams::default(),
            init_scale: 1.3,
            init_jitter: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub components: Components,
    pub status: RefineStatus,
    /// Refined per-pixel depth.
    pub refined: RegionMetrics,
    /// Plane-sweep depth.
    pub multi: RegionMetrics,
    /// Fused depth from the refined and plane-sweep depths.
    pub fused: RegionMetrics,
    /// Mean uncertainty over static and dynamic pixels.
    pub mean_u: [Option<f64>; 2],
}

/// Multi-frame depth plus uncertainty for the reference frame.
pub fn fusion_target(triplet: &FrameTriplet, multi: &MultiFrameConfig, seu: &SeuParams) -> Result<FusionTarget> {
    let out = multi_frame_depth(&triplet.center, &triplet.prev, &triplet.pose_to_prev, &triplet.camera, multi)?;
    let (h, w) = triplet.shape();
    let (_, u_coarse) = uncertainty_from_volume(&out.probability, seu)?;
    let factor = 1usize << multi.scale;
    let (_, cw) = u_coarse.shape();
    let u = UncertaintyField::new(
        h,
        w,
        (0..h * w)
            .map(|i| u_coarse.data()[(i / w / factor) * cw + (i % w) / factor])
            .collect(),
    )?;
    Ok(FusionTarget {
        d_multi: out.depth,
        uncertainty: u,
    })
}

fn region_means(values: &[f64], oracle: &BinaryMask) -> [Option<f64>; 2] {
    let mut acc = [(0.0, 0usize); 2];
    for (i, v) in values.iter().enumerate() {
        let k = usize::from(oracle.is_set(i));
        acc[k].0 += v;
        acc[k].1 += 1;
    }
    acc.map(|(s, n)| (n > 0).then(|| s / n as f64))
}

/// `scale × gt`, each pixel further scaled by a seeded factor in
/// `[1 - jitter, 1 + jitter]`.
pub fn initial_depth(seed: u64, gt: &DepthMap, scale: f64, jitter: f64) -> Result<DepthMap> {
    if !(scale > 0.0 && scale.is_finite() && (0.0..1.0).contains(&jitter)) {
        return Err(invalid(format!("bad initial depth: scale {scale}, jitter {jitter}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = gt.shape();
    let data = gt
        .data()
        .iter()
        .map(|&g| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            g * scale * (1.0 + jitter * u)
        })
        .collect();
    DepthMap::new(h, w, data)
}

/// Runs one scene under one component setting.
pub fn run_scene(seed: u64, spec: &SceneSpec, components: Components, cfg: &AblationConfig) -> Result<AblationRow> {
    let triplet = generate_triplet(spec)?;
    run_triplet(seed, &triplet, components, cfg)
}

pub fn run_triplet(seed: u64, triplet: &FrameTriplet, components: Components, cfg: &AblationConfig) -> Result<AblationRow> {
    let multi = MultiFrameConfig {
        cvam: components.cvam,
        ..cfg.multi
    };
    let target = fusion_target(triplet, &multi, &cfg.seu)?;
    let refine = RefineConfig {
        dm_enabled: components.dm,
        ..cfg.refine
    };
    let initial = initial_depth(seed, &triplet.gt_depth, cfg.init_scale, cfg.init_jitter)?;
    let report = refine_depth_with_fusion(&initial, triplet, &refine, components.seu.then_some(&target))?;
    let opts = EvalOptions {
        cap: refine.depth_cap,
        median_scale: false,
    };
    let oracle = &triplet.dynamic_oracle;
    let fused = fuse_depth(&target.d_multi, &report.depth, &target.uncertainty)?;
    Ok(AblationRow {
        seed,
        components,
        status: report.status,
        refined: report.metrics,
        multi: region_split_evaluate(&target.d_multi, &triplet.gt_depth, oracle, opts)?,
        fused: region_split_evaluate(&fused, &triplet.gt_depth, oracle, opts)?,
        mean_u: region_means(target.uncertainty.data(), oracle),
    })
}

/// Every scene under every grid cell, scene-major.
pub fn run_ablation(scenes: &[(u64, SceneSpec)], grid: &[Components], cfg: &AblationConfig) -> Result<Vec<AblationRow>> {
    if scenes.is_empty() {
        return Err(invalid("ablation needs at least one scene"));
    }
    let mut rows = Vec::with_capacity(scenes.len() * grid.len());
    for (seed, spec) in scenes {
        let triplet = generate_triplet(spec)?;
        for &c in grid {
            rows.push(run_triplet(*seed, &triplet, c, cfg)?);
        }
    }
    Ok(rows)
}

pub const ABLATION_HEADER: &str = "seed,dm,cvam,seu,status,\
static_abs_rel,static_sq_rel,static_rmse,static_rmse_log,static_delta1,\
dynamic_abs_rel,dynamic_rmse,dynamic_delta1,\
multi_static_abs_rel,multi_dynamic_abs_rel,fused_static_abs_rel,fused_dynamic_abs_rel,\
mean_u_static,mean_u_dynamic";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl AblationRow {
    pub fn to_csv_row(&self) -> String {
        let s = self.refined.static_region;
        let d = self.refined.dynamic_region;
        let pick = |m: Option<DepthMetrics>, f: fn(&DepthMetrics) -> f64| cell(m.as_ref().map(f));
        let status = match self.status {
            RefineStatus::Completed => "completed",
            RefineStatus::Stalled => "stalled",
            RefineStatus::Diverged => "diverged",
        };
        [
            self.seed.to_string(),
            u8::from(self.components.dm).to_string(),
            u8::from(self.components.cvam).to_string(),
            u8::from(self.components.seu).to_string(),
            status.to_string(),
            pick(s, |m| m.abs_rel),
            pick(s, |m| m.sq_rel),
            pick(s, |m| m.rmse),
            pick(s, |m| m.rmse_log),
            pick(s, |m| m.delta1),
            pick(d, |m| m.abs_rel),
            pick(d, |m| m.rmse),
            pick(d, |m| m.delta1),
            pick(self.multi.static_region, |m| m.abs_rel),
            pick(self.multi.dynamic_region, |m| m.abs_rel),
            pick(self.fused.static_region, |m| m.abs_rel),
            pick(self.fused.dynamic_region, |m| m.abs_rel),
            cell(self.mean_u[0]),
            cell(self.mean_u[1]),
        ]
        .join(",")
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{preset, ScenePreset};

    fn small_triplet(kind: ScenePreset, seed: u64) -> FrameTriplet {
        generate_triplet(&preset(kind, seed)).unwrap()
    }

    #[test]
    fn identity_poses_give_zero_gradient() {
        let mut spec = preset(ScenePreset::Static, 0);
        spec.trajectory = vec![crate::synth::CameraPose::at(0.0, 0.0, 0.0); 3];
        let t = generate_triplet(&spec).unwrap();
        let d = t.gt_depth.scaled(1.2).unwrap();
        let (h, w) = t.shape();
        let g = photometric_gradient(&d, &t, &BinaryMask::ones(h, w), 0.0).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_pixels_have_zero_gradient_and_do_not_move() {
        let t = small_triplet(ScenePreset::Dynamic, 1);
        let (h, w) = t.shape();
        let d = t.gt_depth.scaled(1.3).unwrap();
        let mask = BinaryMask::from_fn(h, w, |r, c| (r / 8 + c / 8) % 2 == 0);
        let g = photometric_gradient(&d, &t, &mask, 0.0).unwrap();
        for i in 0..h * w {
            if !mask.is_set(i) {
                assert_eq!(g.data()[i], 0.0);
            }
        }
        let dir = masked_box_filter(&masked_box_filter(g.data(), &mask, 2), &mask, 2);
        for i in 0..h * w {
            if !mask.is_set(i) {
                assert_eq!(dir[i], 0.0);
            }
        }

        let cfg = RefineConfig {
            iterations: 1,
            gamma: 0.0,
            ..RefineConfig::default()
        };
        let report = refine_depth(&d, &t, &cfg).unwrap();
        assert_eq!(report.iterations_run, 1);
        assert!(report.final_mask.zero_fraction() > 0.0);
        let mut moved = 0;
        for i in 0..h * w {
            if report.final_mask.is_set(i) {
                moved += usize::from(report.depth.data()[i] != d.data()[i]);
            } else {
                assert_eq!(report.depth.data()[i], d.data()[i]);
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn direct_l1_objective_matches_the_warped_images() {
        let t = small_triplet(ScenePreset::Dynamic, 6);
        let (h, w) = t.shape();
        let d = t.gt_depth.scaled(1.15).unwrap();
        let mask = BinaryMask::from_fn(h, w, |r, c| (r + 2 * c) % 5 != 0);
        let state = photometric_state(&d, &t, 0.0).unwrap();
        let via_state = objective_from_state(&state, &d, &t, &mask, 0.0).unwrap();
        let direct = l1_reprojection_mean(&d, &t, &mask);
        assert_eq!(via_state, direct);
    }

    #[test]
    fn box_filter_is_symmetric() {
        let keep = BinaryMask::from_fn(5, 6, |r, c| (r * 7 + c * 3) % 4 != 0);
        let basis = |k: usize| (0..30).map(|i| f64::from(u8::from(i == k))).collect::<Vec<_>>();
        for a in 0..30 {
            let fa = masked_box_filter(&basis(a), &keep, 1);
            for b in 0..30 {
                let fb = masked_box_filter(&basis(b), &keep, 1);
                assert_eq!(fa[b], fb[a]);
            }
        }
    }

    #[test]
    fn finite_differences_are_symmetric_in_the_step() {
        let t = small_triplet(ScenePreset::Plane, 2);
        let (h, w) = t.shape();
        let d = t.gt_depth.scaled(1.1).unwrap();
        let mask = BinaryMask::ones(h, w);
        let state = photometric_state(&d, &t, 0.0).unwrap();
        let a = numeric_photometric_gradient(&state, &d, &t, &mask, 0.0, 1e-4);
        let b = numeric_photometric_gradient(&state, &d, &t, &mask, 0.0, -1e-4);
        assert_eq!(a, b);
        assert!(finite_difference_gradient(&d, &t, &mask, &LossWeights::default(), 0.0).is_err());
    }

    /// Central differences re-evaluating the whole objective per step.
    fn brute_force_gradient(d: &DepthMap, t: &FrameTriplet, mask: &BinaryMask, weights: &LossWeights, h: f64) -> Vec<f64> {
        let (rows, cols) = d.shape();
        let mut values = d.data().to_vec();
        (0..values.len())
            .map(|i| {
                let x = values[i];
                values[i] = x + h;
                let plus = objective(&DepthMap::new(rows, cols, values.clone()).unwrap(), t, mask, weights).unwrap();
                values[i] = x - h;
                let minus = objective(&DepthMap::new(rows, cols, values.clone()).unwrap(), t, mask, weights).unwrap();
                values[i] = x;
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn incremental_finite_differences_match_full_reevaluation() {
        let t = small_triplet(ScenePreset::Dynamic, 3);
        let (h, w) = t.shape();
        let d = t.gt_depth.scaled(1.2).unwrap();
        let mask = BinaryMask::from_fn(h, w, |r, c| (r * 3 + c) % 7 != 0);
        for weights in [
            LossWeights::default(),
            LossWeights {
                alpha: 0.0,
                gamma: 0.1,
                ..LossWeights::default()
            },
        ] {
            let fast = finite_difference_gradient(&d, &t, &mask, &weights, 1e-4).unwrap();
            let slow = brute_force_gradient(&d, &t, &mask, &weights, 1e-4);
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-6), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn numeric_refinement_gradient_matches_the_oracle() {
        let t = small_triplet(ScenePreset::Static, 4);
        let (h, w) = t.shape();
        let d = t.gt_depth.scaled(0.9).unwrap();
        let mask = BinaryMask::ones(h, w);
        let weights = LossWeights::default();
        let state = photometric_state(&d, &t, weights.alpha).unwrap();
        let local = local_numeric_gradient(&state, &d, &t, &mask, &weights, 1e-4).unwrap();
        let oracle = finite_difference_gradient(&d, &t, &mask, &weights, 1e-4).unwrap();
        let close = local
            .iter()
            .zip(oracle.data())
            .filter(|(a, b)| (*a - *b).abs() <= 1e-3 * a.abs().max(b.abs()).max(1e-9))
            .count();
        assert!(close as f64 >= 0.99 * (h * w) as f64, "{close} of {}", h * w);
    }

    #[test]
    fn refinement_from_ground_truth_is_monotone() {
        let t = small_triplet(ScenePreset::Static, 4);
        let cfg = RefineConfig {
            iterations: 20,
            dm_enabled: false,
            ..RefineConfig::default()
        };
        let report = refine_depth(&t.gt_depth, &t, &cfg).unwrap();
        assert!(report.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.metrics.static_region.unwrap().abs_rel < 0.01);
    }

    #[test]
    fn refinement_recovers_scaled_static_depth() {
        let t = small_triplet(ScenePreset::Static, 5);
        let initial = t.gt_depth.scaled(1.3).unwrap();
        let cfg = RefineConfig {
            dm_enabled: false,
            ..RefineConfig::default()
        };
        let report = refine_depth(&initial, &t, &cfg).unwrap();
        let after = report.metrics.static_region.unwrap().abs_rel;
        assert!(after < 0.5 * 0.3, "abs_rel {after}");
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let grid = full_grid();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0], Components::BASELINE);
        assert_eq!(grid[7], Components::FULL);
        let unique: std::collections::HashSet<_> = grid.iter().collect();
        assert_eq!(unique.len(), 8);
    }

    #[test]
    fn ablation_rows_and_determinism() {
        let scenes: Vec<_> = (0..2).map(|s| (s, preset(ScenePreset::Dynamic, s))).collect();
        let grid = [
            Components::BASELINE,
            Components {
                dm: true,
                ..Components::BASELINE
            },
        ];
        let cfg = AblationConfig {
            refine: RefineConfig {
                iterations: 5,
                ..RefineConfig::default()
            },
            ..AblationConfig::default()
        };
        let rows = run_ablation(&scenes, &grid, &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        let again = run_ablation(&scenes, &grid, &cfg).unwrap();
        assert_eq!(ablation_csv(&rows), ablation_csv(&again));
        let csv = ablation_csv(&rows);
        let columns = ABLATION_HEADER.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == columns));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            RefineConfig {
                step: 0.0,
                ..RefineConfig::default()
            },
            RefineConfig {
                iterations: 0,
                ..RefineConfig::default()
            },
            RefineConfig {
                beta: 0.0,
                ..RefineConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
