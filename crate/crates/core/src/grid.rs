//! Grid containers shared by every stage of the pipeline.
//!
//! All containers validate their invariants on construction and are
//! immutable afterwards; operations return new values.

use crate::error::{ensure_same_shape, invalid, Error, Result};

/// H×W×C image with values in `[0, 1]`, stored row-major with interleaved
/// channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("image must have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite image value at index {i}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
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

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Callers must keep values inside `[0, 1]`.
    #[inline]
    pub(crate) fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Single-channel image holding the mean over channels.
    pub fn channel_mean(&self) -> ImageGrid {
        if self.channels == 1 {
            return self.clone();
        }
        let c = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect();
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

/// Per-pixel positive depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "depth data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid(format!(
                "depth must be positive and finite, got {} at index {i}",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, depth: f64) -> Result<Self> {
        Self::new(height, width, vec![depth; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Multiplies every depth by `factor` (must be positive).
    pub fn scaled(&self, factor: f64) -> Result<DepthMap> {
        DepthMap::new(
            self.height,
            self.width,
            self.data.iter().map(|d| d * factor).collect(),
        )
    }
}

/// {0,1} mask. By convention 1 keeps a pixel and 0 drops it, except where
/// a mask is documented as flagging (e.g. an oracle region).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| *v > 1) {
            return Err(invalid(format!("mask value {} at index {i} is not 0 or 1", data[i])));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(u8::from(f(row, col)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_bools(height: usize, width: usize, flags: &[bool]) -> Result<Self> {
        Self::new(height, width, flags.iter().map(|&b| u8::from(b)).collect())
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    #[inline]
    pub fn is_set(&self, index: usize) -> bool {
        self.data[index] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of pixels equal to 0.
    pub fn zero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.len() - self.count_ones()) as f64 / self.data.len() as f64
    }

    /// `1 - m`.
    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        ensure_same_shape("mask and", self.shape(), other.shape())?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect(),
        })
    }

    /// The mask as a single-channel image (0.0 / 1.0), for PGM export.
    pub fn to_image(&self) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Nonnegative per-pixel losses with one plane per channel (C×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LossMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("loss map needs at least one channel"));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "loss data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!(
                "loss must be finite and nonnegative, got {} at index {i}",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Stacks single-channel maps into one multi-channel map.
    pub fn stack(planes: &[&LossMap]) -> Result<LossMap> {
        let first = planes.first().ok_or_else(|| invalid("nothing to stack"))?;
        let mut data = Vec::with_capacity(first.data.len() * planes.len());
        let mut channels = 0;
        for p in planes {
            ensure_same_shape("loss stack", first.shape(), p.shape())?;
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(LossMap {
            height: first.height,
            width: first.width,
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

    /// The row-major plane of channel `ch` (0-based).
    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Unconstrained finite scalar field (similarity maps, gradients, slices).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "field data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite field value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Min,
}

/// `c[i] = op(a[i], b[i])`, clamped back into `[0, 1]`.
pub fn elementwise(op: ElementwiseOp, a: &ImageGrid, b: &ImageGrid) -> Result<ImageGrid> {
    if a.shape() != b.shape() || a.channels != b.channels {
        return Err(Error::Shape(format!(
            "elementwise: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    let f = match op {
        ElementwiseOp::Add => |x: f64, y: f64| x + y,
        ElementwiseOp::Sub => |x: f64, y: f64| x - y,
        ElementwiseOp::Mul => |x: f64, y: f64| x * y,
        ElementwiseOp::Min => |x: f64, y: f64| x.min(y),
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    ImageGrid::new(a.height, a.width, a.channels, data)
}

/// Max-pools a mask over `factor`×`factor` blocks. Partial blocks at the
/// right/bottom edge are padded with zeros, so the output is
/// `ceil(H/s)`×`ceil(W/s)`.
pub fn block_max_pool(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 {
        return Err(invalid("pooling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let out_h = mask.height.div_ceil(factor);
    let out_w = mask.width.div_ceil(factor);
    let mut data = vec![0u8; out_h * out_w];
    for row in 0..mask.height {
        for col in 0..mask.width {
            if mask.get(row, col) {
                data[(row / factor) * out_w + col / factor] = 1;
            }
        }
    }
    BinaryMask::new(out_h, out_w, data)
}
