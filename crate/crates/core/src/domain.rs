//! Core value types shared across the toolkit.
//!
//! All radiance and image values are normalized relative units in `[0, 1]`.
//! Lengths carry their unit in the field name (`_nm`, `_um`, `_mm`).

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wavelength comparisons are done at this resolution (nm).
pub const WAVELENGTH_EPS_NM: f64 = 1e-6;

/// Ordered wavelength samples spanning an operating band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    wavelengths_nm: Vec<f64>,
    band: (f64, f64),
}

impl SpectralGrid {
    pub fn new(wavelengths_nm: Vec<f64>, band: (f64, f64)) -> Result<Self> {
        let grid = Self {
            wavelengths_nm,
            band,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid whose band is exactly its first and last sample.
    pub fn from_wavelengths(wavelengths_nm: Vec<f64>) -> Result<Self> {
        let band = match (wavelengths_nm.first(), wavelengths_nm.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::InvalidGrid("at least 2 samples required".into())),
        };
        Self::new(wavelengths_nm, band)
    }

    /// Evenly spaced samples from `min_nm` to `max_nm` inclusive.
    pub fn uniform(min_nm: f64, max_nm: f64, bands: usize) -> Result<Self> {
        if bands < 2 {
            return Err(Error::InvalidGrid("at least 2 samples required".into()));
        }
        let step = (max_nm - min_nm) / (bands - 1) as f64;
        let wl = (0..bands)
            .map(|k| {
                if k + 1 == bands {
                    max_nm
                } else {
                    min_nm + step * k as f64
                }
            })
            .collect();
        Self::new(wl, (min_nm, max_nm))
    }

    /// 26 bands from 450 to 700 nm in 10 nm steps.
    pub fn visible() -> Self {
        Self::uniform(450.0, 700.0, 26).expect("static grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let wl = &self.wavelengths_nm;
        if wl.len() < 2 {
            return Err(Error::InvalidGrid("at least 2 samples required".into()));
        }
        let (lo, hi) = self.band;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidGrid(format!(
                "band ({lo}, {hi}) is not an interval"
            )));
        }
        for w in wl.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidGrid(
                    "wavelengths must be strictly increasing".into(),
                ));
            }
        }
        if wl
            .iter()
            .any(|&w| !w.is_finite() || w < lo - WAVELENGTH_EPS_NM || w > hi + WAVELENGTH_EPS_NM)
        {
            return Err(Error::InvalidGrid(format!(
                "sample outside band [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn len(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelengths_nm.is_empty()
    }

    pub fn index_of(&self, lambda_nm: f64) -> Option<usize> {
        self.wavelengths_nm
            .iter()
            .position(|&w| (w - lambda_nm).abs() <= WAVELENGTH_EPS_NM)
    }

    /// Trapezoidal quadrature weights (nm) over the samples.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let wl = &self.wavelengths_nm;
        let n = wl.len();
        (0..n)
            .map(|k| {
                let left = if k > 0 { wl[k] - wl[k - 1] } else { 0.0 };
                let right = if k + 1 < n { wl[k + 1] - wl[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Total span of the samples in nm (integral of 1 under the trapezoid rule).
    pub fn span_nm(&self) -> f64 {
        self.wavelengths_nm[self.len() - 1] - self.wavelengths_nm[0]
    }
}

impl Default for SpectralGrid {
    fn default() -> Self {
        Self::visible()
    }
}

/// Hyperspectral radiance `H(row, col, band)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralCube {
    pub data: Array3<f64>,
    pub grid: SpectralGrid,
    pub pitch_um: f64,
}

impl HyperspectralCube {
    /// Builds and validates a cube.
    pub fn new(data: Array3<f64>, grid: SpectralGrid, pitch_um: f64) -> Result<Self> {
        let cube = Self {
            data,
            grid,
            pitch_um,
        };
        validate_cube(&cube)?;
        Ok(cube)
    }

    pub fn zeros(rows: usize, cols: usize, grid: SpectralGrid, pitch_um: f64) -> Self {
        let bands = grid.len();
        Self {
            data: Array3::zeros((rows, cols, bands)),
            grid,
            pitch_um,
        }
    }

    pub fn rows(&self) -> usize {
        self.data.dim().0
    }

    pub fn cols(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        self.data.slice(ndarray::s![row, col, ..]).to_vec()
    }
}

/// Checks every stated cube invariant; the error names the first violation.
pub fn validate_cube(cube: &HyperspectralCube) -> Result<()> {
    let (_, _, bands) = cube.data.dim();
    if bands != cube.grid.len() {
        return Err(Error::BandMismatch {
            cube_bands: bands,
            grid_bands: cube.grid.len(),
        });
    }
    for ((row, col, band), &v) in cube.data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col, band });
        }
        if v < 0.0 {
            return Err(Error::NegativeRadiance {
                row,
                col,
                band,
                value: v,
            });
        }
    }
    if !(cube.pitch_um > 0.0 && cube.pitch_um.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "cube pitch {} um",
            cube.pitch_um
        )));
    }
    Ok(())
}

/// Linear interpolation of every pixel spectrum onto `target`.
pub fn resample_cube(cube: &HyperspectralCube, target: &SpectralGrid) -> Result<HyperspectralCube> {
    let src = cube.grid.wavelengths();
    let (lo, hi) = (src[0], src[src.len() - 1]);
    // (lower index, fraction toward the next sample)
    let mut taps = Vec::with_capacity(target.len());
    for &w in target.wavelengths() {
        if w < lo - WAVELENGTH_EPS_NM || w > hi + WAVELENGTH_EPS_NM {
            return Err(Error::OutOfBand {
                wavelength_nm: w,
                min_nm: lo,
                max_nm: hi,
            });
        }
        let k = match src.iter().position(|&s| (s - w).abs() <= WAVELENGTH_EPS_NM) {
            Some(k) => (k, 0.0),
            None => {
                let upper = src.partition_point(|&s| s < w).clamp(1, src.len() - 1);
                let frac = (w - src[upper - 1]) / (src[upper] - src[upper - 1]);
                (upper - 1, frac)
            }
        };
        taps.push(k);
    }
    let (rows, cols, _) = cube.data.dim();
    let data = Array3::from_shape_fn((rows, cols, target.len()), |(r, c, b)| {
        let (k, frac) = taps[b];
        let v0 = cube.data[[r, c, k]];
        if frac == 0.0 {
            v0
        } else {
            v0 + frac * (cube.data[[r, c, k + 1]] - v0)
        }
    });
    Ok(HyperspectralCube {
        data,
        grid: target.clone(),
        pitch_um: cube.pitch_um,
    })
}

/// Sampled complex wavefront.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Array2<Complex64>,
    pub pitch_um: f64,
    pub wavelength_nm: f64,
}

impl ComplexField {
    pub fn new(values: Array2<Complex64>, pitch_um: f64, wavelength_nm: f64) -> Result<Self> {
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(Error::InvalidConfig(format!("field pitch {pitch_um} um")));
        }
        if !(wavelength_nm > 0.0 && wavelength_nm.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "wavelength {wavelength_nm} nm"
            )));
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::InvalidConfig(
                "field contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            values,
            pitch_um,
            wavelength_nm,
        })
    }

    /// Unit-amplitude plane wave at normal incidence.
    pub fn plane_wave(rows: usize, cols: usize, pitch_um: f64, wavelength_nm: f64) -> Self {
        Self {
            values: Array2::from_elem((rows, cols), Complex64::new(1.0, 0.0)),
            pitch_um,
            wavelength_nm,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    /// Physical coordinates (um) of sample `(row, col)`, origin at the grid center.
    pub fn coords_um(&self, row: usize, col: usize) -> (f64, f64) {
        let (r, c) = self.dim();
        (
            (col as f64 - (c / 2) as f64) * self.pitch_um,
            (row as f64 - (r / 2) as f64) * self.pitch_um,
        )
    }
}

/// Phase map in radians, wrapped to `[0, 2*pi)`, designed at `design_wavelength_nm`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub phase_rad: Array2<f64>,
    pub pitch_um: f64,
    pub design_wavelength_nm: f64,
}

impl PhaseProfile {
    pub fn new(phase_rad: Array2<f64>, pitch_um: f64, design_wavelength_nm: f64) -> Result<Self> {
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(Error::InvalidConfig(format!("profile pitch {pitch_um} um")));
        }
        Ok(Self {
            phase_rad: phase_rad.mapv(wrap_phase),
            pitch_um,
            design_wavelength_nm,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.phase_rad.dim()
    }
}

/// Wraps a phase into `[0, 2*pi)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = phase.rem_euclid(tau);
    // rem_euclid can round up to exactly tau for tiny negative inputs
    if w >= tau {
        0.0
    } else {
        w
    }
}

/// Camera model for the image-formation equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    /// Spectral response per color plane, each sampled on the system grid.
    pub eta: Vec<Vec<f64>>,
    pub gain: f64,
    pub exposure_s: f64,
    /// Read-noise standard deviation in normalized units.
    pub sigma: f64,
    pub pitch_um: f64,
    #[serde(default = "default_full_well")]
    pub full_well_normalized: f64,
    /// Photon counts per unit of normalized signal.
    #[serde(default = "default_photons_per_unit")]
    pub photons_per_unit: f64,
}

fn default_full_well() -> f64 {
    1.0
}

fn default_photons_per_unit() -> f64 {
    1e4
}

/// Peak wavelengths of the synthetic RGB response lobes.
pub const RGB_PEAKS_NM: [f64; 3] = [610.0, 540.0, 470.0];
const RGB_LOBE_HALF_WIDTH_NM: f64 = 120.0;

impl SensorModel {
    /// Monochrome sensor with flat unit response.
    pub fn mono(grid: &SpectralGrid) -> Self {
        Self {
            eta: vec![vec![1.0; grid.len()]],
            gain: 1.0,
            exposure_s: 1.0,
            sigma: 0.0,
            pitch_um: 2.0,
            full_well_normalized: 1.0,
            photons_per_unit: 1e4,
        }
    }

    /// Synthetic RGB sensor: raised-cosine lobes (R, G, B order).
    pub fn rgb(grid: &SpectralGrid) -> Self {
        let eta = RGB_PEAKS_NM
            .iter()
            .map(|&peak| {
                grid.wavelengths()
                    .iter()
                    .map(|&w| {
                        let u = (w - peak) / RGB_LOBE_HALF_WIDTH_NM;
                        if u.abs() >= 1.0 {
                            0.0
                        } else {
                            (0.5 * std::f64::consts::PI * u).cos().powi(2)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            eta,
            ..Self::mono(grid)
        }
    }

    pub fn planes(&self) -> usize {
        self.eta.len()
    }

    /// Plane-averaged response, used where a single scalar response is needed.
    pub fn mean_response(&self) -> Vec<f64> {
        let bands = self.eta.first().map_or(0, Vec::len);
        (0..bands)
            .map(|b| self.eta.iter().map(|p| p[b]).sum::<f64>() / self.eta.len() as f64)
            .collect()
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<()> {
        if self.eta.is_empty() {
            return Err(Error::InvalidConfig(
                "sensor needs at least one color plane".into(),
            ));
        }
        for plane in &self.eta {
            if plane.len() != grid.len() {
                return Err(Error::InvalidConfig(format!(
                    "sensor response has {} samples, grid has {}",
                    plane.len(),
                    grid.len()
                )));
            }
            if plane.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
                return Err(Error::InvalidConfig(
                    "sensor response must lie in [0, 1]".into(),
                ));
            }
        }
        let positive = [
            ("gain", self.gain),
            ("exposure", self.exposure_s),
            ("pitch", self.pitch_um),
            ("full well", self.full_well_normalized),
            ("photons per unit", self.photons_per_unit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "sensor {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sensor sigma {}", self.sigma)));
        }
        Ok(())
    }
}

/// Polarization state of the light reaching a filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    Unpolarized,
    Linear { angle_deg: f64 },
}

/// Optical filter in front of a sub-image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    #[default]
    None,
    NeutralDensity {
        od: f64,
    },
    LinearPolarizer {
        angle_deg: f64,
    },
}

impl FilterSpec {
    /// Power transmittance `|F|^2` for the given input polarization.
    pub fn power_transmittance(&self, input: Polarization) -> f64 {
        match *self {
            FilterSpec::None => 1.0,
            FilterSpec::NeutralDensity { od } => 10f64.powf(-od),
            FilterSpec::LinearPolarizer { angle_deg } => match input {
                Polarization::Unpolarized => 0.5,
                Polarization::Linear {
                    angle_deg: input_deg,
                } => (input_deg - angle_deg).to_radians().cos().powi(2),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterSpec::NeutralDensity { od } if !(od >= 0.0 && od.is_finite()) => Err(
                Error::InvalidConfig(format!("optical density {od} must be >= 0")),
            ),
            FilterSpec::LinearPolarizer { angle_deg } if !angle_deg.is_finite() => Err(
                Error::InvalidConfig("polarizer angle must be finite".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// One optical channel: beamsplitter deflection, dispersion-control deflection,
/// eyepiece and filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub index: usize,
    /// Direction sines `(x, y)` of the beamsplitting deflection at the design wavelength.
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub design_wavelength_nm: f64,
    pub lens_focal_mm: f64,
    pub lens_center_mm: [f64; 2],
    pub lens_radius_mm: f64,
    #[serde(default)]
    pub filter: FilterSpec,
    /// Amplitude transmission of the dispersion-control layer per band; empty means all ones.
    #[serde(default)]
    pub b_efficiency: Vec<f64>,
}

impl ChannelConfig {
    pub fn residual(&self) -> [f64; 2] {
        [self.alpha[0] + self.beta[0], self.alpha[1] + self.beta[1]]
    }

    pub fn b_at(&self, band: usize) -> f64 {
        self.b_efficiency.get(band).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<()> {
        if !(self.lens_focal_mm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "channel {}: focal length must be positive",
                self.index
            )));
        }
        if !(self.lens_radius_mm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "channel {}: lens radius must be positive",
                self.index
            )));
        }
        if !(self.design_wavelength_nm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "channel {}: design wavelength must be positive",
                self.index
            )));
        }
        if self.alpha[0].hypot(self.alpha[1]) >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "channel {}: |alpha| must be below 1",
                self.index
            )));
        }
        if !self.b_efficiency.is_empty() && self.b_efficiency.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "channel {}: b_efficiency has {} samples, grid has {}",
                self.index,
                self.b_efficiency.len(),
                grid.len()
            )));
        }
        self.filter.validate()
    }
}

/// Design wavelengths of the four prototype channels (nm).
pub const PROTOTYPE_DESIGN_WAVELENGTHS_NM: [f64; 4] = [450.0, 550.0, 600.0, 750.0];
pub const PROTOTYPE_FOCAL_MM: f64 = 12.0;
pub const PROTOTYPE_LENS_SPACING_MM: f64 = 5.0;

/// The full set of channels plus the shared sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub channels: Vec<ChannelConfig>,
    pub sensor: SensorModel,
    #[serde(default = "default_pupil")]
    pub entrance_pupil_diameter_mm: f64,
    #[serde(default = "default_spacing")]
    pub layer_spacing_mm: f64,
    pub grid: SpectralGrid,
    /// Side length (sensor pixels) of each synthesized PSF plane.
    #[serde(default = "default_psf_size")]
    pub psf_size: usize,
    /// Polarization of the scene light reaching the filters.
    #[serde(default = "default_polarization")]
    pub scene_polarization: Polarization,
}

fn default_pupil() -> f64 {
    2.0
}

fn default_spacing() -> f64 {
    4.0
}

fn default_psf_size() -> usize {
    128
}

fn default_polarization() -> Polarization {
    Polarization::Unpolarized
}

impl SystemConfig {
    /// The four-channel prototype: two dispersive and two achromatic channels.
    pub fn prototype() -> Self {
        let grid = SpectralGrid::visible();
        let vectors = crate::metasurface::default_deflection_vectors(
            crate::metasurface::DEFAULT_ALPHA_MAGNITUDE,
            &PROTOTYPE_DESIGN_WAVELENGTHS_NM,
        );
        let channels = vectors
            .iter()
            .zip(PROTOTYPE_DESIGN_WAVELENGTHS_NM)
            .enumerate()
            .map(|(i, (&(alpha, beta), lambda_c))| ChannelConfig {
                index: i + 1,
                alpha,
                beta,
                design_wavelength_nm: lambda_c,
                lens_focal_mm: PROTOTYPE_FOCAL_MM,
                lens_center_mm: [
                    0.5 * PROTOTYPE_LENS_SPACING_MM * alpha[0].signum(),
                    0.5 * PROTOTYPE_LENS_SPACING_MM * alpha[1].signum(),
                ],
                lens_radius_mm: 2.0,
                filter: FilterSpec::None,
                b_efficiency: Vec::new(),
            })
            .collect();
        Self {
            channels,
            sensor: SensorModel::rgb(&grid),
            entrance_pupil_diameter_mm: default_pupil(),
            layer_spacing_mm: default_spacing(),
            grid,
            psf_size: default_psf_size(),
            scene_polarization: Polarization::Unpolarized,
        }
    }

    /// Prototype with ND filters forming an exposure bracket (OD 0.3 on 1-3, OD 0.9 on 4).
    pub fn prototype_hdr() -> Self {
        let mut sys = Self::prototype();
        for ch in &mut sys.channels {
            ch.filter = FilterSpec::NeutralDensity {
                od: if ch.index == 4 { 0.9 } else { 0.3 },
            };
        }
        sys
    }

    /// Prototype with 0 and 90 degree polarizers on the achromatic channels.
    pub fn prototype_polarization() -> Self {
        let mut sys = Self::prototype();
        sys.channels[2].filter = FilterSpec::LinearPolarizer { angle_deg: 0.0 };
        sys.channels[3].filter = FilterSpec::LinearPolarizer { angle_deg: 90.0 };
        sys
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Fraction of the incident energy routed to each channel by equal-split interleaving.
    pub fn channel_share(&self) -> f64 {
        1.0 / self.channels.len() as f64
    }

    pub fn channel(&self, index: usize) -> Result<&ChannelConfig> {
        self.channels
            .iter()
            .find(|c| c.index == index)
            .ok_or_else(|| Error::InvalidConfig(format!("no channel with index {index}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidConfig(
                "system needs at least one channel".into(),
            ));
        }
        self.grid.validate()?;
        self.sensor.validate(&self.grid)?;
        for ch in &self.channels {
            ch.validate(&self.grid)?;
        }
        let mut seen: Vec<usize> = self.channels.iter().map(|c| c.index).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.channels.len() {
            return Err(Error::InvalidConfig(
                "channel indices must be unique".into(),
            ));
        }
        if !(self.entrance_pupil_diameter_mm > 0.0) || !(self.layer_spacing_mm > 0.0) {
            return Err(Error::InvalidConfig(
                "pupil diameter and layer spacing must be positive".into(),
            ));
        }
        if self.psf_size < 8 {
            return Err(Error::InvalidConfig("psf_size must be at least 8".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid3() -> SpectralGrid {
        SpectralGrid::from_wavelengths(vec![450.0, 575.0, 700.0]).unwrap()
    }

    #[test]
    fn visible_grid_has_26_bands() {
        let g = SpectralGrid::visible();
        assert_eq!(g.len(), 26);
        assert_eq!(g.wavelengths()[25], 700.0);
        assert_relative_eq!(g.wavelengths()[13], 580.0, epsilon = 1e-9);
        assert_relative_eq!(
            g.trapezoid_weights().iter().sum::<f64>(),
            250.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(SpectralGrid::from_wavelengths(vec![500.0]).is_err());
        assert!(SpectralGrid::from_wavelengths(vec![500.0, 500.0]).is_err());
        assert!(SpectralGrid::new(vec![440.0, 500.0], (450.0, 700.0)).is_err());
    }

    #[test]
    fn zero_cube_is_valid() {
        let cube = HyperspectralCube::zeros(4, 4, grid3(), 2.0);
        assert!(validate_cube(&cube).is_ok());
    }

    #[test]
    fn nan_is_reported_as_non_finite() {
        let mut cube = HyperspectralCube::zeros(4, 4, grid3(), 2.0);
        cube.data[[1, 2, 0]] = f64::NAN;
        assert!(matches!(
            validate_cube(&cube),
            Err(Error::NonFinite {
                row: 1,
                col: 2,
                band: 0
            })
        ));
    }

    #[test]
    fn band_count_must_match_grid() {
        let cube = HyperspectralCube {
            data: Array3::zeros((4, 4, 5)),
            grid: grid3(),
            pitch_um: 2.0,
        };
        assert!(matches!(
            validate_cube(&cube),
            Err(Error::BandMismatch {
                cube_bands: 5,
                grid_bands: 3
            })
        ));
    }

    #[test]
    fn validate_accepts_exactly_the_valid_cubes() {
        // exhaustive over a 1x2x2 cube with values drawn from a small alphabet
        let alphabet = [0.0, 0.5, -0.1, f64::NAN, f64::INFINITY];
        let grid = SpectralGrid::from_wavelengths(vec![500.0, 600.0]).unwrap();
        for a in alphabet {
            for b in alphabet {
                for c in alphabet {
                    for d in alphabet {
                        let vals = [a, b, c, d];
                        let data = Array3::from_shape_vec((1, 2, 2), vals.to_vec()).unwrap();
                        let cube = HyperspectralCube {
                            data,
                            grid: grid.clone(),
                            pitch_um: 1.0,
                        };
                        let expect_ok = vals.iter().all(|v| v.is_finite() && *v >= 0.0);
                        assert_eq!(validate_cube(&cube).is_ok(), expect_ok, "{vals:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let g = SpectralGrid::visible();
        let data = Array3::from_shape_fn((3, 2, 26), |(r, c, b)| {
            ((r * 7 + c * 3 + b) as f64 * 0.37).sin().abs()
        });
        let cube = HyperspectralCube::new(data, g.clone(), 2.0).unwrap();
        let out = resample_cube(&cube, &g).unwrap();
        assert_eq!(out, cube);
    }

    #[test]
    fn resample_midpoint_and_constant() {
        let g = SpectralGrid::from_wavelengths(vec![450.0, 700.0]).unwrap();
        let mut data = Array3::zeros((1, 1, 2));
        data[[0, 0, 1]] = 1.0;
        let cube = HyperspectralCube::new(data, g, 1.0).unwrap();
        let target = SpectralGrid::from_wavelengths(vec![450.0, 575.0, 700.0]).unwrap();
        let out = resample_cube(&cube, &target).unwrap();
        assert_eq!(out.data[[0, 0, 1]], 0.5);

        let constant = HyperspectralCube::new(
            Array3::from_elem((2, 2, 26), 0.3),
            SpectralGrid::visible(),
            1.0,
        )
        .unwrap();
        let fine = SpectralGrid::uniform(455.0, 695.0, 17).unwrap();
        let out = resample_cube(&constant, &fine).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn resample_out_of_band() {
        let cube = HyperspectralCube::zeros(1, 1, SpectralGrid::visible(), 1.0);
        let target = SpectralGrid::from_wavelengths(vec![400.0, 500.0]).unwrap();
        assert!(matches!(
            resample_cube(&cube, &target),
            Err(Error::OutOfBand { .. })
        ));
    }

    #[test]
    fn filter_transmittance() {
        let lo =
            FilterSpec::NeutralDensity { od: 0.3 }.power_transmittance(Polarization::Unpolarized);
        let hi =
            FilterSpec::NeutralDensity { od: 0.9 }.power_transmittance(Polarization::Unpolarized);
        assert_relative_eq!(lo / hi, 10f64.powf(0.6), epsilon = 1e-12);
        let pol = FilterSpec::LinearPolarizer { angle_deg: 90.0 };
        assert!(pol.power_transmittance(Polarization::Linear { angle_deg: 0.0 }) < 1e-30);
        assert_eq!(pol.power_transmittance(Polarization::Unpolarized), 0.5);
    }

    #[test]
    fn prototype_is_valid() {
        let sys = SystemConfig::prototype();
        sys.validate().unwrap();
        assert_eq!(sys.num_channels(), 4);
        assert_eq!(sys.sensor.planes(), 3);
    }

    #[test]
    fn wrap_stays_in_range() {
        for p in [-1e-18, -std::f64::consts::TAU, 7.0, 0.0, 1e6] {
            let w = wrap_phase(p);
            assert!((0.0..std::f64::consts::TAU).contains(&w), "{p} -> {w}");
        }
    }
}
