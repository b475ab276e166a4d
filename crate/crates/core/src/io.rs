//! PFM (little-endian float) and 16-bit PGM readers and writers.
//!
//! PFM rows are stored bottom-to-top as the format prescribes. Depth maps
//! round-trip bit-exactly for values representable as `f32`.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::grid::{DepthMap, ImageGrid};

/// A single-channel float raster as stored in a PFM file.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmRaster {
    pub height: usize,
    pub width: usize,
    /// Row-major, top row first.
    pub data: Vec<f32>,
}

pub fn encode_pfm(height: usize, width: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != height * width {
        return Err(Error::Shape(format!(
            "raster length {} does not match {height}x{width}",
            data.len()
        )));
    }
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for row in (0..height).rev() {
        for v in &data[row * width..(row + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PFM",
        offset,
        reason: reason.into(),
    }
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, fmt: &'static str) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format {
            format: fmt,
            offset: start,
            reason: "unexpected end of header".into(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format {
        format: fmt,
        offset: start,
        reason: "header is not ASCII".into(),
    })
}

fn parse_dim(token: &str, offset: usize, fmt: &'static str) -> Result<usize> {
    token
        .parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::Format {
            format: fmt,
            offset,
            reason: format!("bad dimension {token:?}"),
        })
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmRaster> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos, "PFM")?;
    if magic != "Pf" {
        return Err(format_err(0, format!("expected single-channel magic \"Pf\", found {magic:?}")));
    }
    let at = pos;
    let width = parse_dim(header_token(bytes, &mut pos, "PFM")?, at, "PFM")?;
    let at = pos;
    let height = parse_dim(header_token(bytes, &mut pos, "PFM")?, at, "PFM")?;
    let at = pos;
    let scale_tok = header_token(bytes, &mut pos, "PFM")?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| format_err(at, format!("bad scale {scale_tok:?}")))?;
    if scale >= 0.0 {
        return Err(format_err(at, "big-endian PFM is not supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(pos, "missing newline after header"));
    }
    pos += 1;
    let expected = height * width * 4;
    let available = bytes.len() - pos;
    if available != expected {
        return Err(format_err(
            pos + available.min(expected),
            format!("expected {expected} raster bytes, found {available}"),
        ));
    }
    let mut data = vec![0f32; height * width];
    for (i, chunk) in bytes[pos..].chunks_exact(4).enumerate() {
        let file_row = i / width;
        let col = i % width;
        let row = height - 1 - file_row;
        data[row * width + col] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
    Ok(PfmRaster {
        height,
        width,
        data,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn save_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pfm(depth.height(), depth.width(), depth.data())?)
}

/// Saves an arbitrary finite raster (loss planes, volume slices).
pub fn save_pfm_raster(height: usize, width: usize, data: &[f64], path: &Path) -> Result<()> {
    write_atomic(path, &encode_pfm(height, width, data)?)
}

pub fn load_pfm_raster(path: &Path) -> Result<PfmRaster> {
    decode_pfm(&read(path)?)
}

pub fn load_pfm(path: &Path) -> Result<DepthMap> {
    let raster = load_pfm_raster(path)?;
    DepthMap::new(
        raster.height,
        raster.width,
        raster.data.iter().map(|&v| f64::from(v)).collect(),
    )
}

/// 16-bit binary PGM; a value `v` is stored as `round(v * 65535)`.
pub fn encode_pgm(img: &ImageGrid) -> Result<Vec<u8>> {
    if img.channels() != 1 {
        return Err(invalid(format!(
            "PGM export needs a single-channel image, got {} channels",
            img.channels()
        )));
    }
    let header = format!("P5\n{} {}\n65535\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.data().len() * 2);
    out.extend_from_slice(header.as_bytes());
    for v in img.data() {
        out.extend_from_slice(&pgm_level(*v).to_be_bytes());
    }
    Ok(out)
}

pub fn pgm_level(v: f64) -> u16 {
    (v * 65535.0).round() as u16
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let fmt_err = |offset, reason: String| Error::Format {
        format: "PGM",
        offset,
        reason,
    };
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos, "PGM")?;
    if magic != "P5" {
        return Err(fmt_err(0, format!("expected magic \"P5\", found {magic:?}")));
    }
    let at = pos;
    let width = parse_dim(header_token(bytes, &mut pos, "PGM")?, at, "PGM")?;
    let at = pos;
    let height = parse_dim(header_token(bytes, &mut pos, "PGM")?, at, "PGM")?;
    let at = pos;
    let maxval_tok = header_token(bytes, &mut pos, "PGM")?;
    let maxval: u32 = maxval_tok
        .parse()
        .ok()
        .filter(|v| (1..=65535).contains(v))
        .ok_or_else(|| fmt_err(at, format!("bad maxval {maxval_tok:?}")))?;
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fmt_err(pos, "missing newline after header".into()));
    }
    pos += 1;
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let expected = height * width * sample_bytes;
    let available = bytes.len() - pos;
    if available != expected {
        return Err(fmt_err(
            pos + available.min(expected),
            format!("expected {expected} raster bytes, found {available}"),
        ));
    }
    let scale = f64::from(maxval);
    let data = bytes[pos..]
        .chunks_exact(sample_bytes)
        .map(|c| {
            let level = if sample_bytes == 2 {
                u16::from_be_bytes([c[0], c[1]])
            } else {
                u16::from(c[0])
            };
            f64::from(level) / scale
        })
        .collect();
    ImageGrid::new(height, width, 1, data)
}

pub fn save_pgm(img: &ImageGrid, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(img)?)
}

pub fn load_pgm(path: &Path) -> Result<ImageGrid> {
    decode_pgm(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pfm_single_value_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let d = DepthMap::constant(1, 1, 80.0).unwrap();
        save_pfm(&d, &path).unwrap();
        assert_eq!(load_pfm(&path).unwrap().data(), &[80.0]);
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        let bytes = encode_pfm(2, 1, &[1.0, 2.0]).unwrap();
        let header = b"Pf\n1 2\n-1.0\n".len();
        assert_eq!(&bytes[header..header + 4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_pfm_reports_offset() {
        let mut bytes = encode_pfm(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        bytes.truncate(bytes.len() - 3);
        match decode_pfm(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_pfm_headers() {
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm(b"Pf\n1 x\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm(b"Pf\n1 1\n1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm(b"Pf\n1").is_err());
    }

    #[test]
    fn loading_missing_file_is_io_error() {
        let err = load_pfm(Path::new("/nonexistent/depth.pfm")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn pgm_levels() {
        assert_eq!(pgm_level(1.0), 65535);
        assert_eq!(pgm_level(0.0), 0);
        assert_eq!(pgm_level(0.5), 32768);
    }

    #[test]
    fn pgm_rejects_color() {
        let img = ImageGrid::filled(1, 1, 3, 0.5).unwrap();
        assert!(encode_pgm(&img).is_err());
    }

    #[test]
    fn pgm_round_trip_quantizes() {
        let img = ImageGrid::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let back = decode_pgm(&encode_pgm(&img).unwrap()).unwrap();
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[1], 32768.0 / 65535.0);
        assert_eq!(back.data()[2], 1.0);
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(
            h in 1usize..6,
            w in 1usize..6,
            seed in proptest::collection::vec(1e-3f32..1e4, 36),
        ) {
            let data: Vec<f64> = seed[..h * w].iter().map(|&v| f64::from(v)).collect();
            let d = DepthMap::new(h, w, data).unwrap();
            let back = decode_pfm(&encode_pfm(h, w, d.data()).unwrap()).unwrap();
            prop_assert_eq!((back.height, back.width), (h, w));
            for (a, b) in back.data.iter().zip(d.data()) {
                prop_assert_eq!(f64::from(*a).to_bits(), b.to_bits());
            }
        }
    }
}
