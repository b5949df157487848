//! 16-bit portable graymap/pixmap export of sub-images with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::SubImage;

pub const MAX_CODE: u16 = u16::MAX;

/// Acquisition metadata stored next to an exported sub-image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub channel_index: usize,
    pub gain: f64,
    pub exposure_s: f64,
    pub sigma: f64,
    pub full_well: f64,
    pub seed: u64,
    /// Pixel value represented by one code step.
    pub scale: f64,
}

impl Sidecar {
    pub fn of(sub: &SubImage) -> Self {
        Self {
            channel_index: sub.channel_index,
            gain: sub.gain,
            exposure_s: sub.exposure_s,
            sigma: sub.sigma,
            full_well: sub.full_well,
            seed: sub.seed,
            scale: sub.full_well / f64::from(MAX_CODE),
        }
    }
}

/// `image.pgm` -> `image.json`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

/// Encodes one (P5) or three (P6) planes `(plane, row, col)` as 16-bit big-endian PNM.
pub fn encode_pnm(planes: &Array3<f64>, scale: f64) -> Result<Vec<u8>> {
    let (n, rows, cols) = planes.dim();
    let magic = match n {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::WrongChannelCount(n)),
    };
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig("image scale must be positive".into()));
    }
    let mut out = format!("{magic}\n{cols} {rows}\n{MAX_CODE}\n").into_bytes();
    out.reserve(2 * planes.len());
    for r in 0..rows {
        for c in 0..cols {
            for p in 0..n {
                let code = (planes[[p, r, c]] / scale)
                    .round()
                    .clamp(0.0, f64::from(MAX_CODE)) as u16;
                out.extend_from_slice(&code.to_be_bytes());
            }
        }
    }
    Ok(out)
}

fn header_tokens(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::TruncatedFile {
                expected: i + 1,
                found: bytes.len(),
            });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((tokens, i + 1))
}

/// Decodes a binary PGM/PPM into `(plane, row, col)` codes multiplied by `scale`.
pub fn decode_pnm(bytes: &[u8], scale: f64) -> Result<Array3<f64>> {
    let (tokens, offset) = header_tokens(bytes)?;
    let planes = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => {
            return Err(Error::BadMagic {
                expected: "P5 or P6",
            })
        }
    };
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|e| Error::Parse(format!("PNM header {t:?}: {e}")))
    };
    let (cols, rows, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > usize::from(MAX_CODE) {
        return Err(Error::Parse(format!("PNM maxval {maxval} out of range")));
    }
    let width = if maxval > 255 { 2 } else { 1 };
    let expected = offset + width * planes * rows * cols;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::SizeMismatch(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }
    let raster = &bytes[offset..];
    let mut out = Array3::zeros((planes, rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            for p in 0..planes {
                let i = ((r * cols + c) * planes + p) * width;
                let code = if width == 2 {
                    u16::from_be_bytes([raster[i], raster[i + 1]])
                } else {
                    u16::from(raster[i])
                };
                out[[p, r, c]] = f64::from(code) * scale;
            }
        }
    }
    Ok(out)
}

/// Writes `path` and its sidecar; pixels are quantized to `full_well / 65535`.
pub fn write_subimage(sub: &SubImage, path: &Path) -> Result<()> {
    let sidecar = Sidecar::of(sub);
    fs::write(path, encode_pnm(&sub.pixels, sidecar.scale)?)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads an image and its sidecar; without a sidecar codes map to `[0, 1]`.
pub fn read_subimage(path: &Path) -> Result<SubImage> {
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        serde_json::from_str(&fs::read_to_string(&side)?)?
    } else {
        Sidecar {
            channel_index: 0,
            gain: 1.0,
            exposure_s: 1.0,
            sigma: 0.0,
            full_well: 1.0,
            seed: 0,
            scale: 1.0 / f64::from(MAX_CODE),
        }
    };
    let pixels = decode_pnm(&fs::read(path)?, sidecar.scale)?;
    let (_, rows, cols) = pixels.dim();
    let saturated = pixels.mapv(|v| v >= sidecar.full_well);
    Ok(SubImage {
        pixels,
        channel_index: sidecar.channel_index,
        gain: sidecar.gain,
        exposure_s: sidecar.exposure_s,
        sigma: sidecar.sigma,
        full_well: sidecar.full_well,
        seed: sidecar.seed,
        saturated,
        valid: Array2::from_elem((rows, cols), true),
    })
}

/// First plane of an image file in sidecar units.
pub fn read_gray(path: &Path) -> Result<(Array2<f64>, f64)> {
    let sub = read_subimage(path)?;
    Ok((
        sub.pixels.index_axis(ndarray::Axis(0), 0).to_owned(),
        sub.full_well,
    ))
}
