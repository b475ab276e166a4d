//! Pinhole camera, rigid poses and inverse warping.
//!
//! `project` maps every target pixel with its depth into continuous source
//! coordinates; `bilinear_sample` reads the source there. Samples outside
//! `[0, W-1] x [0, H-1]` or behind the source camera are zero-filled and
//! flagged invalid.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_shape, invalid, Error, Result};
use crate::grid::{BinaryMask, DepthMap, ImageGrid};

/// Coordinates assigned to pixels that land behind the source camera.
pub const BEHIND_CAMERA: [f64; 2] = [-1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(invalid(format!(
                "camera needs positive focal lengths, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    /// Intrinsics for an image downsampled by `factor` (pixel centers at
    /// integer coordinates in both resolutions).
    pub fn downscaled(&self, factor: usize) -> CameraModel {
        let s = factor as f64;
        CameraModel {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
        }
    }

    /// Normalized ray `((u - cx)/fx, (v - cy)/fy, 1)` through a pixel.
    #[inline]
    pub fn ray(&self, col: f64, row: f64) -> Vector3<f64> {
        Vector3::new((col - self.cx) / self.fx, (row - self.cy) / self.fy, 1.0)
    }
}

/// Rigid transform `p' = R p + t` with `R` in SO(3). Serialized as a
/// row-major rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidPose> for PoseRecord {
    fn from(p: RigidPose) -> Self {
        let r = &p.rotation;
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: p.translation.into(),
        }
    }
}

impl TryFrom<PoseRecord> for RigidPose {
    type Error = Error;

    fn try_from(rec: PoseRecord) -> Result<Self> {
        let rows = rec.rotation;
        RigidPose::new(Matrix3::from_fn(|i, j| rows[i][j]), Vector3::from(rec.translation))
    }
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(orth <= 1e-6 && (det - 1.0).abs() <= 1e-6) {
            return Err(invalid(format!(
                "rotation is not in SO(3): |R^T R - I| = {orth:.3e}, det = {det}"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(invalid("translation must be finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation given as an axis-angle vector (radians), then translation.
    pub fn from_axis_angle(axis_angle: [f64; 3], translation: [f64; 3]) -> Result<Self> {
        let rotation = Rotation3::new(Vector3::from(axis_angle)).into_inner();
        Self::new(rotation, Vector3::from(translation))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Result of projecting one pixel with a given depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub col: f64,
    pub row: f64,
    /// Depth of the point in the source camera.
    pub depth: f64,
}

/// Projects target pixel `(row, col)` at `depth` into the source view.
///
/// Returns `None` when the transformed point is not in front of the source
/// camera. The coordinates are formed as an offset from the pixel itself so
/// that the identity pose reproduces the grid exactly.
#[inline]
pub fn project_pixel(
    row: usize,
    col: usize,
    depth: f64,
    pose: &RigidPose,
    cam: &CameraModel,
) -> Option<Projection> {
    let ray = cam.ray(col as f64, row as f64);
    // q = (R * ray * d + t) / d
    let q = pose.rotation * ray + pose.translation / depth;
    let z = depth * q.z;
    if !(z > 0.0) {
        return None;
    }
    let x = q.x / q.z;
    let y = q.y / q.z;
    Some(Projection {
        col: col as f64 + cam.fx * (x - ray.x),
        row: row as f64 + cam.fy * (y - ray.y),
        depth: z,
    })
}

/// Derivative of the projected `(col, row)` with respect to the pixel's
/// depth, or `None` where the projection is invalid.
#[inline]
pub fn projection_depth_derivative(
    row: usize,
    col: usize,
    depth: f64,
    pose: &RigidPose,
    cam: &CameraModel,
) -> Option<[f64; 2]> {
    let ray = cam.ray(col as f64, row as f64);
    let q = pose.rotation * ray + pose.translation / depth;
    if !(depth * q.z > 0.0) {
        return None;
    }
    let dq = -pose.translation / (depth * depth);
    let qz2 = q.z * q.z;
    let dx = (dq.x * q.z - q.x * dq.z) / qz2;
    let dy = (dq.y * q.z - q.y * dq.z) / qz2;
    Some([cam.fx * dx, cam.fy * dy])
}

/// Continuous sample coordinates for every target pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateField {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
    depth: Vec<f64>,
}

impl CoordinateField {
    /// Builds a field from explicit `(col, row)` pairs; projected depths are
    /// set to 1.
    pub fn from_coords(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.len() != height * width {
            return Err(Error::Shape(format!(
                "{} coordinates for a {height}x{width} field",
                coords.len()
            )));
        }
        let n = coords.len();
        Ok(Self {
            height,
            width,
            coords,
            depth: vec![1.0; n],
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

    /// `(col, row)` per pixel; `BEHIND_CAMERA` where the point has z' ≤ 0.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Source-camera depth z' per pixel (≤ 0 marks an invalid projection).
    pub fn projected_depth(&self) -> &[f64] {
        &self.depth
    }
}

pub fn project(depth: &DepthMap, pose: &RigidPose, cam: &CameraModel) -> CoordinateField {
    let (h, w) = depth.shape();
    let mut coords = Vec::with_capacity(h * w);
    let mut zs = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            match project_pixel(row, col, depth.get(row, col), pose, cam) {
                Some(p) => {
                    coords.push([p.col, p.row]);
                    zs.push(p.depth);
                }
                None => {
                    coords.push(BEHIND_CAMERA);
                    zs.push(0.0);
                }
            }
        }
    }
    CoordinateField {
        height: h,
        width: w,
        coords,
        depth: zs,
    }
}

/// Synthesized image plus a mask of pixels whose sample was usable.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: ImageGrid,
    pub validity: BinaryMask,
}

/// Bilinear cell lookup: top-left corner and fractional offsets. At the last
/// row/column the cell is shifted inward with a fraction of 1 so the sample
/// is still exact.
#[inline]
fn cell(col: f64, row: f64, width: usize, height: usize) -> Option<(usize, usize, f64, f64)> {
    let max_c = (width - 1) as f64;
    let max_r = (height - 1) as f64;
    if !(col >= 0.0 && col <= max_c && row >= 0.0 && row <= max_r) {
        return None;
    }
    let (mut c0, mut a) = (col.floor() as usize, col - col.floor());
    let (mut r0, mut b) = (row.floor() as usize, row - row.floor());
    if width > 1 && c0 == width - 1 {
        c0 -= 1;
        a = 1.0;
    }
    if height > 1 && r0 == height - 1 {
        r0 -= 1;
        b = 1.0;
    }
    Some((r0, c0, a, b))
}

/// Samples all channels of `src` at `(col, row)` into `out`. Returns false
/// (leaving `out` untouched) when the point is out of bounds.
#[inline]
pub fn sample_bilinear(src: &ImageGrid, col: f64, row: f64, out: &mut [f64]) -> bool {
    let (h, w) = src.shape();
    let Some((r0, c0, a, b)) = cell(col, row, w, h) else {
        return false;
    };
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    for (ch, o) in out.iter_mut().enumerate().take(src.channels()) {
        let v00 = src.get(r0, c0, ch);
        let v01 = src.get(r0, c1, ch);
        let v10 = src.get(r1, c0, ch);
        let v11 = src.get(r1, c1, ch);
        *o = (1.0 - b) * ((1.0 - a) * v00 + a * v01) + b * ((1.0 - a) * v10 + a * v11);
    }
    true
}

/// Like [`sample_bilinear`] but also returns the derivative of the bilinear
/// interpolant along columns (`d_col`) and rows (`d_row`), per channel.
#[inline]
pub fn sample_bilinear_with_gradient(
    src: &ImageGrid,
    col: f64,
    row: f64,
    value: &mut [f64],
    d_col: &mut [f64],
    d_row: &mut [f64],
) -> bool {
    let (h, w) = src.shape();
    let Some((r0, c0, a, b)) = cell(col, row, w, h) else {
        return false;
    };
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    for ch in 0..src.channels() {
        let v00 = src.get(r0, c0, ch);
        let v01 = src.get(r0, c1, ch);
        let v10 = src.get(r1, c0, ch);
        let v11 = src.get(r1, c1, ch);
        value[ch] = (1.0 - b) * ((1.0 - a) * v00 + a * v01) + b * ((1.0 - a) * v10 + a * v11);
        d_col[ch] = (1.0 - b) * (v01 - v00) + b * (v11 - v10);
        d_row[ch] = (1.0 - a) * (v10 - v00) + a * (v11 - v01);
    }
    true
}

/// Bilinear lookup in a single row-major plane of size `height`×`width`.
#[inline]
pub fn sample_plane(plane: &[f64], height: usize, width: usize, col: f64, row: f64) -> Option<f64> {
    let (r0, c0, a, b) = cell(col, row, width, height)?;
    let r1 = (r0 + 1).min(height - 1);
    let c1 = (c0 + 1).min(width - 1);
    let v00 = plane[r0 * width + c0];
    let v01 = plane[r0 * width + c1];
    let v10 = plane[r1 * width + c0];
    let v11 = plane[r1 * width + c1];
    Some((1.0 - b) * ((1.0 - a) * v00 + a * v01) + b * ((1.0 - a) * v10 + a * v11))
}

pub fn bilinear_sample(src: &ImageGrid, coords: &CoordinateField) -> WarpResult {
    let (h, w) = coords.shape();
    let channels = src.channels();
    let mut data = vec![0.0; h * w * channels];
    let mut valid = vec![0u8; h * w];
    for (i, (c, z)) in coords.coords.iter().zip(&coords.depth).enumerate() {
        if *z > 0.0 {
            let out = &mut data[i * channels..(i + 1) * channels];
            if sample_bilinear(src, c[0], c[1], out) {
                valid[i] = 1;
            }
        }
    }
    WarpResult {
        image: ImageGrid::new(h, w, channels, data).expect("bilinear weights keep samples in range"),
        validity: BinaryMask::new(h, w, valid).expect("validity is binary"),
    }
}

/// Synthesizes the target view from `src` given target depth and the
/// target-to-source pose.
pub fn inverse_warp(
    src: &ImageGrid,
    depth: &DepthMap,
    pose: &RigidPose,
    cam: &CameraModel,
) -> Result<WarpResult> {
    ensure_same_shape("inverse_warp source vs depth", src.shape(), depth.shape())?;
    Ok(bilinear_sample(src, &project(depth, pose, cam)))
}

/// Per-pixel `(d col / d depth, d row / d depth)`; zero where the
/// projection is invalid.
pub fn warp_jacobian_depth(depth: &DepthMap, pose: &RigidPose, cam: &CameraModel) -> Vec<[f64; 2]> {
    let (h, w) = depth.shape();
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            out.push(projection_depth_derivative(row, col, depth.get(row, col), pose, cam).unwrap_or([0.0, 0.0]));
        }
    }
    out
}
