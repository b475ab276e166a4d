//! Scene bundles: three frames, ground truth and a manifest in one directory.

use std::path::Path;

use dyndepth::geometry::{CameraModel, RigidPose};
use dyndepth::synth::{FrameTriplet, SceneSpec};
use dyndepth::{io, BinaryMask, Error};
use serde::{Deserialize, Serialize};

use crate::config::{self, write_json};
use crate::{CliError, CliResult};

pub const FORMAT: &str = "dyndepth-bundle";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

/// File names inside the bundle directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFiles {
    pub frame_prev: String,
    pub frame_center: String,
    pub frame_next: String,
    pub gt_depth: String,
    pub oracle_mask: String,
    pub scene: String,
}

impl Default for BundleFiles {
    fn default() -> Self {
        Self {
            frame_prev: "frame_prev.pgm".into(),
            frame_center: "frame_center.pgm".into(),
            frame_next: "frame_next.pgm".into(),
            gt_depth: "gt_depth.pfm".into(),
            oracle_mask: "oracle_mask.pgm".into(),
            scene: "scene.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Preset seed; absent for an explicit scene.
    pub seed: Option<u64>,
    pub width: usize,
    pub height: usize,
    pub camera: CameraModel,
    /// Maps center-camera points into the previous camera.
    pub pose_to_prev: RigidPose,
    pub pose_to_next: RigidPose,
    /// Nearest and farthest surface depth.
    pub depth_range: [f64; 2],
    pub moving_sprites: usize,
    pub files: BundleFiles,
}

/// Renders `spec` and writes the bundle into `dir`.
pub fn write_bundle(dir: &Path, spec: &SceneSpec, triplet: &FrameTriplet, seed: Option<u64>) -> CliResult<Manifest> {
    config::ensure_dir(dir)?;
    let files = BundleFiles::default();
    io::save_pgm(&triplet.prev, &dir.join(&files.frame_prev))?;
    io::save_pgm(&triplet.center, &dir.join(&files.frame_center))?;
    io::save_pgm(&triplet.next, &dir.join(&files.frame_next))?;
    io::save_pfm(&triplet.gt_depth, &dir.join(&files.gt_depth))?;
    io::save_pgm(&triplet.dynamic_oracle.to_image(), &dir.join(&files.oracle_mask))?;
    write_json(&dir.join(&files.scene), spec)?;
    let (near, far) = spec.depth_range();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        seed,
        width: spec.width,
        height: spec.height,
        camera: triplet.camera,
        pose_to_prev: triplet.pose_to_prev,
        pose_to_next: triplet.pose_to_next,
        depth_range: [near, far],
        moving_sprites: spec.sprites.iter().filter(|s| s.is_moving()).count(),
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Nonzero PGM levels are set.
pub fn load_mask(path: &Path) -> CliResult<BinaryMask> {
    let img = io::load_pgm(path)?;
    let flags: Vec<bool> = img.data().iter().map(|&v| v > 0.0).collect();
    Ok(BinaryMask::from_bools(img.height(), img.width(), &flags)?)
}

pub fn load_bundle(dir: &Path) -> CliResult<(Manifest, FrameTriplet)> {
    let manifest: Manifest = config::load(&dir.join(MANIFEST))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(CliError::Usage(format!(
            "{}: unsupported bundle {} v{}",
            dir.display(),
            manifest.format,
            manifest.version
        )));
    }
    manifest.camera.validate()?;
    let f = &manifest.files;
    let triplet = FrameTriplet {
        prev: io::load_pgm(&dir.join(&f.frame_prev))?,
        center: io::load_pgm(&dir.join(&f.frame_center))?,
        next: io::load_pgm(&dir.join(&f.frame_next))?,
        gt_depth: io::load_pfm(&dir.join(&f.gt_depth))?,
        pose_to_prev: manifest.pose_to_prev,
        pose_to_next: manifest.pose_to_next,
        dynamic_oracle: load_mask(&dir.join(&f.oracle_mask))?,
        camera: manifest.camera,
    };
    let expected = (manifest.height, manifest.width);
    let shapes = [
        triplet.prev.shape(),
        triplet.center.shape(),
        triplet.next.shape(),
        triplet.gt_depth.shape(),
        triplet.dynamic_oracle.shape(),
    ];
    if let Some(s) = shapes.iter().find(|&&s| s != expected) {
        return Err(Error::Shape(format!(
            "bundle {}: raster {}x{} does not match the manifest's {}x{}",
            dir.display(),
            s.0,
            s.1,
            expected.0,
            expected.1
        ))
        .into());
    }
    Ok((manifest, triplet))
}
