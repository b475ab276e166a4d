//! Browser bindings: dynamic-mask overlay, spectral entropy of a single
//! depth distribution, and the plane-sweep uncertainty map.

use dyndepth::costvolume::{multi_frame_depth, MultiFrameConfig, ProbabilityVolume};
use dyndepth::dynmask::dynamic_mask;
use dyndepth::optimizer::photometric_state;
use dyndepth::seu::{fft_depth_axis, magnitude_probability, uncertainty_from_volume, SeuParams};
use dyndepth::synth::{generate_triplet, preset, FrameTriplet, ScenePreset};
use dyndepth::{BinaryMask, LossMap};
use wasm_bindgen::prelude::*;

fn js_err(e: dyndepth::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn gray_rgba(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Dark blue through orange to pale yellow.
fn heat(t: f64) -> [u8; 4] {
    const STOPS: [[f64; 3]; 3] = [[20.0, 24.0, 82.0], [222.0, 92.0, 40.0], [250.0, 240.0, 170.0]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let k = (t as usize).min(1);
    let f = t - k as f64;
    let c = |i: usize| (STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i])).round() as u8;
    [c(0), c(1), c(2), 255]
}

fn share_masked(mask: &BinaryMask, region: impl Fn(usize) -> bool) -> f64 {
    let (mut n, mut hit) = (0usize, 0usize);
    for i in 0..mask.data().len() {
        if region(i) {
            n += 1;
            hit += usize::from(!mask.is_set(i));
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// One seeded dynamic scene with the losses at its true depth.
#[wasm_bindgen]
pub struct Scene {
    triplet: FrameTriplet,
    losses: LossMap,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Result<Scene, JsError> {
        let triplet = generate_triplet(&preset(ScenePreset::Dynamic, u64::from(seed))).map_err(js_err)?;
        let losses = photometric_state(&triplet.gt_depth, &triplet, 0.0).map_err(js_err)?.losses;
        Ok(Scene { triplet, losses })
    }

    pub fn width(&self) -> usize {
        self.triplet.center.width()
    }

    pub fn height(&self) -> usize {
        self.triplet.center.height()
    }

    /// Reference frame as RGBA bytes.
    pub fn frame(&self) -> Vec<u8> {
        gray_rgba(self.triplet.center.data())
    }

    /// Reference frame with masked pixels tinted red and moving-sprite
    /// pixels the dynamic mask missed tinted blue.
    pub fn mask_overlay(&self, beta: f64) -> Result<MaskView, JsError> {
        let mask = dynamic_mask(&self.losses, beta).map_err(js_err)?;
        let oracle = &self.triplet.dynamic_oracle;
        let rgba = self
            .triplet
            .center
            .data()
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| {
                let g = v.clamp(0.0, 1.0) * 255.0;
                let dim = (0.55 * g).round() as u8;
                if !mask.is_set(i) {
                    [255, dim, dim, 255]
                } else if oracle.is_set(i) {
                    [dim, dim, 255, 255]
                } else {
                    let g = g.round() as u8;
                    [g, g, g, 255]
                }
            })
            .collect();
        Ok(MaskView {
            rgba,
            masked_fraction: mask.zero_fraction(),
            recall: share_masked(&mask, |i| oracle.is_set(i)),
            false_rate: share_masked(&mask, |i| !oracle.is_set(i)),
        })
    }

    /// Plane-sweep uncertainty against the previous frame.
    pub fn uncertainty(&self, temperature: f64, cvam: bool) -> Result<UncertaintyView, JsError> {
        let cfg = MultiFrameConfig {
            temperature,
            cvam,
            ..MultiFrameConfig::default()
        };
        let t = &self.triplet;
        let out = multi_frame_depth(&t.center, &t.prev, &t.pose_to_prev, &t.camera, &cfg).map_err(js_err)?;
        let (_, u) = uncertainty_from_volume(&out.probability, &SeuParams::default()).map_err(js_err)?;
        let (lo, hi) = out.hypotheses.range();
        let (inv_lo, inv_hi) = (1.0 / hi, 1.0 / lo);
        let depth_rgba = out
            .depth
            .data()
            .iter()
            .flat_map(|&d| heat((1.0 / d - inv_lo) / (inv_hi - inv_lo)))
            .collect();
        let (mut sums, mut counts) = ([0.0; 2], [0usize; 2]);
        for (i, &v) in u.data().iter().enumerate() {
            let k = usize::from(t.dynamic_oracle.is_set(i));
            sums[k] += v;
            counts[k] += 1;
        }
        let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
        Ok(UncertaintyView {
            u_rgba: u.data().iter().flat_map(|&v| heat(v)).collect(),
            depth_rgba,
            mean_static: mean(0),
            mean_dynamic: mean(1),
        })
    }
}

#[wasm_bindgen]
pub struct MaskView {
    rgba: Vec<u8>,
    masked_fraction: f64,
    recall: f64,
    false_rate: f64,
}

#[wasm_bindgen]
impl MaskView {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_fraction
    }

    /// Share of moving-sprite pixels masked.
    pub fn recall(&self) -> f64 {
        self.recall
    }

    /// Share of static pixels masked.
    pub fn false_rate(&self) -> f64 {
        self.false_rate
    }
}

#[wasm_bindgen]
pub struct UncertaintyView {
    u_rgba: Vec<u8>,
    depth_rgba: Vec<u8>,
    mean_static: f64,
    mean_dynamic: f64,
}

#[wasm_bindgen]
impl UncertaintyView {
    pub fn u_rgba(&self) -> Vec<u8> {
        self.u_rgba.clone()
    }

    /// Soft-argmin depth, colored by inverse depth.
    pub fn depth_rgba(&self) -> Vec<u8> {
        self.depth_rgba.clone()
    }

    pub fn mean_static(&self) -> f64 {
        self.mean_static
    }

    pub fn mean_dynamic(&self) -> f64 {
        self.mean_dynamic
    }
}

#[wasm_bindgen]
pub struct EntropyView {
    distribution: Vec<f64>,
    spectrum: Vec<f64>,
    entropy: f64,
    normalized: f64,
    uncertainty: f64,
}

#[wasm_bindgen]
impl EntropyView {
    pub fn distribution(&self) -> Vec<f64> {
        self.distribution.clone()
    }

    /// Normalized magnitude spectrum.
    pub fn spectrum(&self) -> Vec<f64> {
        self.spectrum.clone()
    }

    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    pub fn normalized(&self) -> f64 {
        self.normalized
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }
}

/// Spectral entropy and uncertainty of a Gaussian bump of width `sigma`
/// bins centered at `center` over `bins` depth hypotheses.
#[wasm_bindgen]
pub fn entropy_of_bump(bins: usize, center: f64, sigma: f64) -> Result<EntropyView, JsError> {
    if bins < 2 || !(sigma > 0.0) {
        return Err(JsError::new("need at least 2 bins and sigma > 0"));
    }
    let weights: Vec<f64> = (0..bins)
        .map(|i| (-0.5 * ((i as f64 - center) / sigma).powi(2)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let distribution: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        let nearest = center.round().clamp(0.0, (bins - 1) as f64) as usize;
        (0..bins).map(|i| f64::from(u8::from(i == nearest))).collect()
    };
    let pv = ProbabilityVolume::new(bins, 1, 1, distribution.clone()).map_err(js_err)?;
    let params = SeuParams::default();
    let (h, u) = uncertainty_from_volume(&pv, &params).map_err(js_err)?;
    let spectrum = magnitude_probability(&fft_depth_axis(&pv).map_err(js_err)?).column(0);
    Ok(EntropyView {
        distribution,
        spectrum,
        entropy: h.data()[0],
        normalized: h.normalized()[0],
        uncertainty: u.data()[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_endpoints() {
        assert_eq!(heat(0.0), [20, 24, 82, 255]);
        assert_eq!(heat(1.0), [250, 240, 170, 255]);
        assert_eq!(heat(-3.0), heat(0.0));
    }

    #[test]
    fn overlay_tracks_beta() {
        let scene = Scene::new(2).unwrap();
        let n = scene.width() * scene.height();
        assert_eq!(scene.frame().len(), 4 * n);
        let none = scene.mask_overlay(1.0).unwrap();
        assert_eq!(none.masked_fraction(), 0.0);
        let some = scene.mask_overlay(0.8).unwrap();
        assert_eq!(some.rgba().len(), 4 * n);
        assert!(some.masked_fraction() > 0.0 && some.masked_fraction() <= 0.2 + 1.0 / n as f64);
        assert!(some.recall() > some.false_rate());
        let red = some.rgba().chunks(4).filter(|p| p[0] == 255 && p[1] < 255).count();
        assert_eq!(red as f64 / n as f64, some.masked_fraction());
    }

    #[test]
    fn narrow_bumps_are_confident() {
        let narrow = entropy_of_bump(32, 10.0, 1e-3).unwrap();
        let wide = entropy_of_bump(32, 10.0, 1e6).unwrap();
        assert!((narrow.normalized() - 1.0).abs() < 1e-6);
        assert!(wide.entropy() < 1e-3);
        assert!(narrow.uncertainty() < wide.uncertainty());
        assert!((narrow.distribution().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(narrow.spectrum().len(), 32);
        let far = entropy_of_bump(8, 1e6, 0.01).unwrap();
        assert_eq!(far.distribution()[7], 1.0);
    }

    #[test]
    fn sprites_are_less_certain() {
        let view = Scene::new(0).unwrap().uncertainty(0.005, true).unwrap();
        assert!(view.mean_dynamic() > view.mean_static());
        assert_eq!(view.u_rgba().len(), view.depth_rgba().len());
    }
}
