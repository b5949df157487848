//! Little-endian float32 containers for cubes (`HSC1`) and PSF stacks (`PSF1`).

use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4, ArrayView3};

use crate::domain::{HyperspectralCube, SpectralGrid};
use crate::error::{Error, Result};
use crate::propagation::PsfStack;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const PSF_MAGIC: &[u8; 4] = b"PSF1";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, expected_total: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile {
                expected: expected_total.max(self.pos + n),
                found: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, 0)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4, 0)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, expected_total: usize) -> Result<Vec<f32>> {
        let b = self.take(4 * n, expected_total)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn u32s(&mut self, n: usize, expected_total: usize) -> Result<Vec<u32>> {
        let b = self.take(4 * n, expected_total)?;
        Ok(b.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::SizeMismatch(format!(
                "{} trailing bytes after the declared payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader<'_>, magic: &'static [u8; 4]) -> Result<()> {
    let got = r.take(4, 4)?;
    if got != magic {
        return Err(Error::BadMagic {
            expected: std::str::from_utf8(magic).expect("ascii magic"),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported format version {version}"
        )));
    }
    Ok(())
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::SizeMismatch(format!("{what} {v} does not fit the header")))
}

/// Cube payload as stored, without spectral-grid validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCube {
    /// `(row, col, band)`.
    pub data: Array3<f64>,
    pub wavelengths_nm: Vec<f64>,
    pub pitch_um: f64,
}

pub fn encode_hsc1(
    data: ArrayView3<'_, f64>,
    wavelengths_nm: &[f64],
    pitch_um: f64,
) -> Result<Vec<u8>> {
    let (rows, cols, bands) = data.dim();
    if wavelengths_nm.len() != bands {
        return Err(Error::BandMismatch {
            cube_bands: bands,
            grid_bands: wavelengths_nm.len(),
        });
    }
    let mut out = Vec::with_capacity(24 + 4 * bands + 4 * data.len());
    out.extend_from_slice(CUBE_MAGIC);
    for v in [
        FORMAT_VERSION,
        dim(rows, "rows")?,
        dim(cols, "cols")?,
        dim(bands, "bands")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(pitch_um as f32).to_le_bytes());
    for &w in wavelengths_nm {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    // standard layout iterates (row, col, band) with band fastest
    for &v in data.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_hsc1(bytes: &[u8]) -> Result<RawCube> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, CUBE_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let bands = r.u32()? as usize;
    let pitch_um = r.f32()? as f64;
    let total = 24 + 4 * bands + 4 * rows * cols * bands;
    let wavelengths_nm = r.f32s(bands, total)?.into_iter().map(f64::from).collect();
    let samples = r.f32s(rows * cols * bands, total)?;
    r.finish()?;
    let data = Array3::from_shape_vec(
        (rows, cols, bands),
        samples.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::SizeMismatch(e.to_string()))?;
    Ok(RawCube {
        data,
        wavelengths_nm,
        pitch_um,
    })
}

pub fn write_hsc1(
    path: &Path,
    data: ArrayView3<'_, f64>,
    wavelengths_nm: &[f64],
    pitch_um: f64,
) -> Result<()> {
    fs::write(path, encode_hsc1(data, wavelengths_nm, pitch_um)?)?;
    Ok(())
}

pub fn read_hsc1(path: &Path) -> Result<RawCube> {
    decode_hsc1(&fs::read(path)?)
}

pub fn write_cube(cube: &HyperspectralCube, path: &Path) -> Result<()> {
    write_hsc1(
        path,
        cube.data.view(),
        cube.grid.wavelengths(),
        cube.pitch_um,
    )
}

/// Reads and validates a cube; the grid band is its first and last sample.
pub fn read_cube(path: &Path) -> Result<HyperspectralCube> {
    let raw = read_hsc1(path)?;
    let grid = SpectralGrid::from_wavelengths(raw.wavelengths_nm)?;
    HyperspectralCube::new(raw.data, grid, raw.pitch_um)
}

/// PSF planes with the metadata needed to place them on the sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfFile {
    /// `(channel, band, row, col)`.
    pub psfs: Array4<f64>,
    pub wavelengths_nm: Vec<f64>,
    pub pitch_um: f64,
    pub channel_indices: Vec<usize>,
    pub anchors_mm: Vec<[f64; 2]>,
}

pub fn encode_psf1(stack: &PsfStack) -> Result<Vec<u8>> {
    let (channels, bands, size, _) = stack.psfs.dim();
    let mut out = Vec::with_capacity(28 + 4 * bands + 12 * channels + 4 * stack.psfs.len());
    out.extend_from_slice(PSF_MAGIC);
    let size = dim(size, "size")?;
    for v in [
        FORMAT_VERSION,
        dim(channels, "channels")?,
        dim(bands, "bands")?,
        size,
        size,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(stack.pitch_um as f32).to_le_bytes());
    for &w in stack.grid.wavelengths() {
        out.extend_from_slice(&(w as f32).to_le_bytes());
    }
    for &i in &stack.channel_indices {
        out.extend_from_slice(&dim(i, "channel index")?.to_le_bytes());
    }
    for a in &stack.anchors_mm {
        out.extend_from_slice(&(a[0] as f32).to_le_bytes());
        out.extend_from_slice(&(a[1] as f32).to_le_bytes());
    }
    for &v in stack.psfs.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_psf1(bytes: &[u8]) -> Result<PsfFile> {
    let mut r = Reader::new(bytes);
    check_magic(&mut r, PSF_MAGIC)?;
    let channels = r.u32()? as usize;
    let bands = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows != cols {
        return Err(Error::SizeMismatch(format!(
            "PSF planes must be square, got {rows}x{cols}"
        )));
    }
    let size = rows;
    let pitch_um = r.f32()? as f64;
    let total = 28 + 4 * bands + 12 * channels + 4 * channels * bands * size * size;
    let wavelengths_nm = r.f32s(bands, total)?.into_iter().map(f64::from).collect();
    let channel_indices = r
        .u32s(channels, total)?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    let flat = r.f32s(2 * channels, total)?;
    let anchors_mm = flat
        .chunks_exact(2)
        .map(|c| [c[0] as f64, c[1] as f64])
        .collect();
    let samples = r.f32s(channels * bands * size * size, total)?;
    r.finish()?;
    let psfs = Array4::from_shape_vec(
        (channels, bands, size, size),
        samples.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::SizeMismatch(e.to_string()))?;
    Ok(PsfFile {
        psfs,
        wavelengths_nm,
        pitch_um,
        channel_indices,
        anchors_mm,
    })
}

pub fn write_psf_stack(stack: &PsfStack, path: &Path) -> Result<()> {
    fs::write(path, encode_psf1(stack)?)?;
    Ok(())
}

pub fn read_psf_file(path: &Path) -> Result<PsfFile> {
    decode_psf1(&fs::read(path)?)
}

// rounds before formatting so values near zero never print as "-0.0000"
fn rounded(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (v * scale).round() / scale + 0.0
}

/// `channel,wavelength_nm,offset_x_px,offset_y_px,x_mm,y_mm` rows for every PSF plane.
///
/// Offsets are relative to the plane center; positions add the channel anchor.
pub fn centroid_csv(stack: &PsfStack) -> Result<String> {
    let mut out = String::from("channel,wavelength_nm,offset_x_px,offset_y_px,x_mm,y_mm\n");
    for (k, &index) in stack.channel_indices.iter().enumerate() {
        for (b, &w) in stack.grid.wavelengths().iter().enumerate() {
            let off = stack.centroid_offset_mm(k, b)?;
            let px = [off[0] * 1e3 / stack.pitch_um, off[1] * 1e3 / stack.pitch_um];
            let anchor = stack.anchors_mm[k];
            out.push_str(&format!(
                "{index},{w},{:.4},{:.4},{:.6},{:.6}\n",
                rounded(px[0], 4),
                rounded(px[1], 4),
                rounded(anchor[0] + off[0], 6),
                rounded(anchor[1] + off[1], 6)
            ));
        }
    }
    Ok(out)
}
