//! Spectral entropy of the per-pixel depth distribution, the uncertainty
//! map derived from it, and uncertainty-weighted depth fusion.
//!
//! The entropy is taken over the normalized *magnitude spectrum* of the
//! depth-bin distribution, which flips the usual intuition: a peaked
//! distribution has a flat spectrum and therefore maximal entropy, while a
//! flat distribution concentrates all energy in the DC term (entropy 0).
//! Uncertainty is consequently a decreasing function of entropy.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::costvolume::ProbabilityVolume;
use crate::error::{ensure_same_shape, invalid, Error, Result};
use crate::grid::DepthMap;

/// Complex spectrum along the depth axis, bin-major (N×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<Complex<f64>>,
}

impl Spectrum {
    pub fn new(bins: usize, height: usize, width: usize, data: Vec<Complex<f64>>) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("spectrum needs at least two bins"));
        }
        if data.len() != bins * height * width {
            return Err(Error::Shape("spectrum size mismatch".into()));
        }
        if data.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("spectrum must be finite"));
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

    pub fn data(&self) -> &[Complex<f64>] {
        &self.data
    }

    pub fn column(&self, pixel: usize) -> Vec<Complex<f64>> {
        let n = self.height * self.width;
        (0..self.bins).map(|k| self.data[k * n + pixel]).collect()
    }
}

/// Forward DFT of one real sequence (unnormalized, `e^{-2πi kn/N}`).
pub fn dft_sequence(values: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// DFT along the depth-bin axis, independently per pixel.
pub fn fft_depth_axis(pv: &ProbabilityVolume) -> Result<Spectrum> {
    let bins = pv.bins();
    let (h, w) = pv.shape();
    let n = h * w;
    let fft = FftPlanner::new().plan_fft_forward(bins);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut column = vec![0.0; bins];
    let mut buf = vec![Complex::default(); bins];
    let mut data = vec![Complex::default(); bins * n];
    for i in 0..n {
        pv.column_into(i, &mut column);
        for (z, &p) in buf.iter_mut().zip(&column) {
            *z = Complex::new(p, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, z) in buf.iter().enumerate() {
            data[k * n + i] = *z;
        }
    }
    Spectrum::new(bins, h, w, data)
}

/// `P = |Ĉ| / Σ|Ĉ|` for one pixel; an all-zero spectrum maps to uniform.
pub fn normalize_magnitudes(magnitudes: &[f64]) -> Vec<f64> {
    let total: f64 = magnitudes.iter().sum();
    if total > 0.0 {
        magnitudes.iter().map(|m| m / total).collect()
    } else {
        vec![1.0 / magnitudes.len() as f64; magnitudes.len()]
    }
}

/// Per-pixel distribution over frequency components, bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDistribution {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SpectralDistribution {
    pub fn column(&self, pixel: usize) -> Vec<f64> {
        let n = self.height * self.width;
        (0..self.bins).map(|k| self.data[k * n + pixel]).collect()
    }
}

pub fn magnitude_probability(spec: &Spectrum) -> SpectralDistribution {
    let (h, w) = spec.shape();
    let n = h * w;
    let mut data = vec![0.0; spec.bins * n];
    for i in 0..n {
        let mags: Vec<f64> = spec.column(i).iter().map(|z| z.norm()).collect();
        for (k, p) in normalize_magnitudes(&mags).into_iter().enumerate() {
            data[k * n + i] = p;
        }
    }
    SpectralDistribution {
        bins: spec.bins,
        height: h,
        width: w,
        data,
    }
}

/// `H = -Σ P ln(P + ε)`, clamped at zero: with `P` one-hot the raw sum is
/// `-ln(1 + ε) ≈ -ε`.
pub fn entropy_of(p: &[f64], epsilon: f64) -> f64 {
    (-p.iter().map(|&x| x * (x + epsilon).ln()).sum::<f64>()).max(0.0)
}

/// Spectral entropy per pixel, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    height: usize,
    width: usize,
    bins: usize,
    data: Vec<f64>,
}

impl EntropyField {
    /// Checks `0 <= H <= ln(bins) + 1e-6` everywhere.
    pub fn new(height: usize, width: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape("entropy field size mismatch".into()));
        }
        if bins < 2 {
            return Err(invalid("entropy field needs at least two bins"));
        }
        let upper = (bins as f64).ln() + 1e-6;
        if let Some(h) = data.iter().find(|h| !(**h >= 0.0 && **h <= upper)) {
            return Err(invalid(format!("entropy {h} outside [0, ln {bins}]")));
        }
        Ok(Self {
            height,
            width,
            bins,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Entropy as a fraction of its maximum `ln(bins)`.
    pub fn normalized(&self) -> Vec<f64> {
        let max = (self.bins as f64).ln();
        self.data.iter().map(|h| (h / max).min(1.0)).collect()
    }
}

pub fn spectral_entropy(p: &SpectralDistribution, epsilon: f64) -> Result<EntropyField> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be > 0"));
    }
    let n = p.height * p.width;
    let data = (0..n).map(|i| entropy_of(&p.column(i), epsilon)).collect();
    EntropyField::new(p.height, p.width, p.bins, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl UncertaintyField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape("uncertainty field size mismatch".into()));
        }
        if data.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(invalid("uncertainty must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, u: f64) -> Result<Self> {
        Self::new(height, width, vec![u; height * width])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Parameters of the entropy-to-uncertainty map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeuParams {
    pub epsilon: f64,
    pub gain: f64,
    pub bias: f64,
}

impl Default for SeuParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            gain: 6.0,
            bias: -3.0,
        }
    }
}

impl SeuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon must be > 0"));
        }
        if !(self.gain.is_finite() && self.bias.is_finite()) {
            return Err(invalid("gain and bias must be finite"));
        }
        Ok(())
    }

    /// `sigmoid(gain·(1 - h) + bias)` for normalized entropy `h`.
    pub fn uncertainty(&self, normalized_entropy: f64) -> f64 {
        sigmoid(self.gain * (1.0 - normalized_entropy) + self.bias)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn uncertainty_from_entropy(h: &EntropyField, params: &SeuParams) -> Result<UncertaintyField> {
    params.validate()?;
    let data = h.normalized().into_iter().map(|x| params.uncertainty(x)).collect();
    UncertaintyField::new(h.height, h.width, data)
}

/// Full chain from a probability volume to the uncertainty map.
pub fn uncertainty_from_volume(pv: &ProbabilityVolume, params: &SeuParams) -> Result<(EntropyField, UncertaintyField)> {
    params.validate()?;
    let spectrum = fft_depth_axis(pv)?;
    let entropy = spectral_entropy(&magnitude_probability(&spectrum), params.epsilon)?;
    let u = uncertainty_from_entropy(&entropy, params)?;
    Ok((entropy, u))
}

/// `D_fuse = (1 - U)·D_multi + U·D_mono`, per pixel.
pub fn fuse_depth(d_multi: &DepthMap, d_mono: &DepthMap, u: &UncertaintyField) -> Result<DepthMap> {
    ensure_same_shape("fuse depth", d_multi.shape(), d_mono.shape())?;
    ensure_same_shape("fuse depth", d_multi.shape(), u.shape())?;
    let data = d_multi
        .data()
        .iter()
        .zip(d_mono.data())
        .zip(&u.data)
        .map(|((&m, &s), &w)| {
            let lo = m.min(s);
            let hi = m.max(s);
            // the blend can round a ulp past either endpoint
            ((1.0 - w) * m + w * s).clamp(lo, hi)
        })
        .collect();
    let (h, w) = d_multi.shape();
    DepthMap::new(h, w, data)
}
