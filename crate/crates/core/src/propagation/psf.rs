//! Closed-form PSF synthesis: the sensor-plane PSF of channel `i` is the
//! normalized squared magnitude of the entrance pupil's Fourier transform,
//! displaced by the dispersion shift.

use std::f64::consts::TAU;

use ndarray::{Array2, Array4, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use super::predicted_shift;
use crate::domain::{SpectralGrid, SystemConfig};
use crate::error::{Error, Result};
use crate::fft::{fftshift, ifftshift, Fft2};
use crate::metasurface::first_order_efficiency;

const SUPERSAMPLE: usize = 8;

/// Entrance-pupil amplitude on a square grid centered at `n / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PupilFunction {
    pub amplitude: Array2<f64>,
    pub pitch_um: f64,
    pub diameter_mm: f64,
}

impl PupilFunction {
    /// Uniform disc with area-weighted edge samples.
    pub fn disc(n: usize, pitch_um: f64, diameter_mm: f64) -> Self {
        let radius = diameter_mm * 500.0;
        let amplitude = coverage_map(n, pitch_um, |x, y| x * x + y * y < radius * radius);
        Self {
            amplitude,
            pitch_um,
            diameter_mm,
        }
    }
}

/// Fraction of each sample cell for which `inside(x_um, y_um)` holds.
pub(crate) fn coverage_map(
    n: usize,
    pitch_um: f64,
    inside: impl Fn(f64, f64) -> bool + Sync,
) -> Array2<f64> {
    let half = 0.5 * pitch_um;
    let center = (n / 2) as f64;
    let mut out = Array2::zeros((n, n));
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut row)| {
            let y = (r as f64 - center) * pitch_um;
            for (c, v) in row.iter_mut().enumerate() {
                let x = (c as f64 - center) * pitch_um;
                let probes = [
                    inside(x, y),
                    inside(x - half, y - half),
                    inside(x + half, y - half),
                    inside(x - half, y + half),
                    inside(x + half, y + half),
                ];
                *v = if probes.iter().all(|&p| p) {
                    1.0
                } else if probes.iter().all(|&p| !p) {
                    0.0
                } else {
                    let step = pitch_um / SUPERSAMPLE as f64;
                    let mut hits = 0usize;
                    for i in 0..SUPERSAMPLE {
                        for j in 0..SUPERSAMPLE {
                            let sx = x - half + (j as f64 + 0.5) * step;
                            let sy = y - half + (i as f64 + 0.5) * step;
                            hits += usize::from(inside(sx, sy));
                        }
                    }
                    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
                };
            }
        });
    out
}

/// One synthesized PSF plane plus its efficiency chain.
#[derive(Debug, Clone)]
pub struct PsfPlane {
    /// Sum-normalized intensity; the center sample `(n/2, n/2)` sits at the channel anchor.
    pub plane: Array2<f64>,
    /// `a_1(lambda) * b_i(lambda)`.
    pub chain: Complex64,
    /// Fraction of pupil energy passing the dispersion-control aperture.
    pub vignetting: f64,
}

/// Wavelength the PSF planes are registered at: the center of the band.
pub fn reference_wavelength(grid: &SpectralGrid) -> f64 {
    let (lo, hi) = grid.band();
    0.5 * (lo + hi)
}

/// Sensor position (mm) that the center of channel `index`'s PSF planes maps to.
pub fn channel_anchor_mm(system: &SystemConfig, index: usize) -> Result<[f64; 2]> {
    let ch = system.channel(index)?;
    let shift = predicted_shift(ch, reference_wavelength(&system.grid));
    Ok([
        ch.lens_center_mm[0] + shift[0],
        ch.lens_center_mm[1] + shift[1],
    ])
}

/// PSF of channel `channel_index` at `lambda_nm` for incidence direction sines `n_perp`.
pub fn synthesize_psf(
    system: &SystemConfig,
    channel_index: usize,
    lambda_nm: f64,
    n_perp: [f64; 2],
) -> Result<PsfPlane> {
    let ch = system.channel(channel_index)?;
    let n = system.psf_size;
    let p = system.sensor.pitch_um;
    let lambda_um = lambda_nm * 1e-3;
    let f_um = ch.lens_focal_mm * 1e3;
    let dp = lambda_um * f_um / (n as f64 * p);
    let pupil_radius = system.entrance_pupil_diameter_mm * 500.0;
    let half_extent = 0.5 * n as f64 * dp;
    if pupil_radius >= half_extent {
        return Err(Error::UndersampledField {
            band_limit: half_extent,
            required: pupil_radius,
        });
    }

    let lambda_ref = reference_wavelength(&system.grid);
    let shift = predicted_shift(ch, lambda_nm);
    let anchor = predicted_shift(ch, lambda_ref);
    let rel_um = [
        (shift[0] - anchor[0]) * 1e3 + f_um * n_perp[0],
        (shift[1] - anchor[1]) * 1e3 + f_um * n_perp[1],
    ];

    // beam walk-off on the dispersion-control layer relative to its aperture center
    let s_um = system.layer_spacing_mm * 1e3;
    let kappa = (lambda_nm - lambda_ref) / ch.design_wavelength_nm;
    let walk = [
        s_um * (ch.alpha[0] * kappa + n_perp[0]),
        s_um * (ch.alpha[1] * kappa + n_perp[1]),
    ];
    let stop = ch.lens_radius_mm * 1e3;
    let amplitude = coverage_map(n, dp, |x, y| {
        let (wx, wy) = (x + walk[0], y + walk[1]);
        x * x + y * y < pupil_radius * pupil_radius && wx * wx + wy * wy < stop * stop
    });
    let full = PupilFunction::disc(n, dp, system.entrance_pupil_diameter_mm);
    let full_power: f64 = full.amplitude.iter().map(|a| a * a).sum();
    let passed: f64 = amplitude.iter().map(|a| a * a).sum();

    let center = (n / 2) as f64;
    let field = Array2::from_shape_fn((n, n), |(r, c)| {
        let a = amplitude[[r, c]];
        if a == 0.0 {
            return Complex64::default();
        }
        let u = (c as f64 - center) * dp;
        let v = (r as f64 - center) * dp;
        Complex64::from_polar(
            a,
            TAU * (u * rel_um[0] + v * rel_um[1]) / (lambda_um * f_um),
        )
    });
    let mut spec = ifftshift(&field);
    Fft2::new(n, n).forward(&mut spec);
    let intensity = fftshift(&spec).mapv(|v| v.norm_sqr());
    let total: f64 = intensity.sum();
    if !(total > 0.0) {
        return Err(Error::EmptyPlane);
    }

    let b = system.grid.index_of(lambda_nm).map_or(1.0, |k| ch.b_at(k));
    Ok(PsfPlane {
        plane: intensity / total,
        chain: first_order_efficiency(ch.design_wavelength_nm, lambda_nm) * b,
        vignetting: passed / full_power,
    })
}

/// PSFs for every channel and band of a system.
#[derive(Debug, Clone)]
pub struct PsfStack {
    /// `(channel, band, row, col)`; each plane sums to 1.
    pub psfs: Array4<f64>,
    pub grid: SpectralGrid,
    pub pitch_um: f64,
    pub channel_indices: Vec<usize>,
    pub anchors_mm: Vec<[f64; 2]>,
    /// `a_1 * b_i` per `(channel, band)`.
    pub chains: Vec<Vec<Complex64>>,
    pub vignetting: Vec<Vec<f64>>,
}

impl PsfStack {
    pub fn plane(&self, channel: usize, band: usize) -> ArrayView2<'_, f64> {
        self.psfs.slice(ndarray::s![channel, band, .., ..])
    }

    pub fn num_channels(&self) -> usize {
        self.psfs.dim().0
    }

    pub fn size(&self) -> usize {
        self.psfs.dim().2
    }

    /// Position of channel `channel` / `band`'s PSF centroid relative to the plane center, in mm.
    pub fn centroid_offset_mm(&self, channel: usize, band: usize) -> Result<[f64; 2]> {
        let c = super::centroid(&self.plane(channel, band).to_owned())?;
        let center = (self.size() / 2) as f64;
        Ok([
            (c[0] - center) * self.pitch_um * 1e-3,
            (c[1] - center) * self.pitch_um * 1e-3,
        ])
    }
}

/// Closed-form PSFs for all channels and bands at normal incidence.
pub fn psf_stack(system: &SystemConfig) -> Result<PsfStack> {
    system.validate()?;
    let n = system.psf_size;
    let bands = system.grid.len();
    let v = system.num_channels();
    let jobs: Vec<(usize, usize)> = (0..v)
        .flat_map(|c| (0..bands).map(move |b| (c, b)))
        .collect();
    let planes: Vec<PsfPlane> = jobs
        .par_iter()
        .map(|&(c, b)| {
            synthesize_psf(
                system,
                system.channels[c].index,
                system.grid.wavelengths()[b],
                [0.0, 0.0],
            )
        })
        .collect::<Result<_>>()?;
    let mut psfs = Array4::zeros((v, bands, n, n));
    let mut chains = vec![vec![Complex64::default(); bands]; v];
    let mut vignetting = vec![vec![0.0; bands]; v];
    for (&(c, b), plane) in jobs.iter().zip(planes) {
        psfs.slice_mut(ndarray::s![c, b, .., ..])
            .assign(&plane.plane);
        chains[c][b] = plane.chain;
        vignetting[c][b] = plane.vignetting;
    }
    let anchors_mm = system
        .channels
        .iter()
        .map(|ch| channel_anchor_mm(system, ch.index))
        .collect::<Result<_>>()?;
    Ok(PsfStack {
        psfs,
        grid: system.grid.clone(),
        pitch_um: system.sensor.pitch_um,
        channel_indices: system.channels.iter().map(|c| c.index).collect(),
        anchors_mm,
        chains,
        vignetting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SensorModel;
    use crate::propagation::centroid;
    use approx::assert_abs_diff_eq;

    fn small_system() -> SystemConfig {
        let mut sys = SystemConfig::prototype();
        sys.psf_size = 128;
        sys.sensor = SensorModel::mono(&sys.grid);
        sys
    }

    #[test]
    fn disc_pupil_area() {
        let p = PupilFunction::disc(256, 10.0, 2.0);
        let area = p.amplitude.sum() * 100.0;
        let exact = std::f64::consts::PI * 1000.0 * 1000.0;
        assert!((area / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn on_axis_plane_is_symmetric_and_centered() {
        let sys = small_system();
        let psf = synthesize_psf(&sys, 3, 550.0, [0.0, 0.0]).unwrap();
        let plane = &psf.plane;
        assert_abs_diff_eq!(plane.sum(), 1.0, epsilon = 1e-12);
        let (peak, _) = plane
            .indexed_iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(peak, (64, 64));
        for d in 1..10 {
            assert_abs_diff_eq!(plane[[64, 64 + d]], plane[[64 + d, 64]], epsilon = 1e-12);
            assert_abs_diff_eq!(plane[[64, 64 + d]], plane[[64, 64 - d]], epsilon = 1e-12);
        }
        assert!(psf.vignetting > 0.999);
    }

    #[test]
    fn achromatic_channel_does_not_move() {
        let sys = small_system();
        for lambda in [450.0, 575.0, 700.0] {
            let psf = synthesize_psf(&sys, 4, lambda, [0.0, 0.0]).unwrap();
            let c = centroid(&psf.plane).unwrap();
            assert_abs_diff_eq!(c[0], 64.0, epsilon = 0.01);
            assert_abs_diff_eq!(c[1], 64.0, epsilon = 0.01);
        }
    }

    #[test]
    fn oblique_incidence_shifts_by_f_n() {
        let sys = small_system();
        // f * n = 12 mm * 1e-3 = 12 um = 6 pixels
        let psf = synthesize_psf(&sys, 3, 575.0, [1e-3, 0.0]).unwrap();
        let c = centroid(&psf.plane).unwrap();
        assert!((c[0] - 70.0).abs() < 0.1, "{c:?}");
    }

    #[test]
    fn strongly_oblique_light_is_vignetted() {
        let sys = small_system();
        let psf = synthesize_psf(&sys, 3, 575.0, [0.5, 0.0]).unwrap();
        assert!(psf.vignetting < 0.9);
    }

    #[test]
    fn coarse_sensor_is_undersampled() {
        let mut sys = small_system();
        sys.sensor.pitch_um = 5.0;
        assert!(matches!(
            synthesize_psf(&sys, 1, 450.0, [0.0, 0.0]),
            Err(Error::UndersampledField { .. })
        ));
    }
}
