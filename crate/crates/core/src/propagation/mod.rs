//! Scalar wave propagation and PSF synthesis.
//!
//! Two fidelities are provided: [`psf`] computes PSFs in closed form from the
//! pupil transform plus the analytic dispersion shift, and [`oracle`] pushes a
//! sampled field through the actual two-layer stack with the angular spectrum
//! method. The second exists to check the first.

pub mod oracle;
pub mod psf;

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use num_complex::Complex64;

use crate::domain::{ChannelConfig, ComplexField, PhaseProfile};
use crate::error::{Error, Result};
use crate::fft::{signed_index, Fft2};

pub use psf::{psf_stack, synthesize_psf, PsfPlane, PsfStack, PupilFunction};

/// Options for [`angular_spectrum_propagate_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PropagationOptions {
    /// Largest per-axis direction sine the caller needs represented on the grid.
    pub max_direction_sine: f64,
}

/// Exact angular-spectrum propagation over `distance_mm`; evanescent components are dropped.
pub fn angular_spectrum_propagate(
    field: &ComplexField,
    distance_mm: f64,
    lambda_nm: f64,
) -> Result<ComplexField> {
    angular_spectrum_propagate_with(field, distance_mm, lambda_nm, PropagationOptions::default())
}

pub fn angular_spectrum_propagate_with(
    field: &ComplexField,
    distance_mm: f64,
    lambda_nm: f64,
    options: PropagationOptions,
) -> Result<ComplexField> {
    let lambda_um = lambda_nm * 1e-3;
    let band_limit = lambda_um / (2.0 * field.pitch_um);
    if band_limit <= options.max_direction_sine {
        return Err(Error::UndersampledField {
            band_limit,
            required: options.max_direction_sine,
        });
    }
    if distance_mm == 0.0 {
        return Ok(ComplexField {
            values: field.values.clone(),
            pitch_um: field.pitch_um,
            wavelength_nm: lambda_nm,
        });
    }
    let (rows, cols) = field.dim();
    let fft = Fft2::new(rows, cols);
    let mut spec = field.values.clone();
    fft.forward(&mut spec);
    let z_um = distance_mm * 1e3;
    let fy: Vec<f64> = (0..rows)
        .map(|k| lambda_um * signed_index(k, rows) as f64 / (rows as f64 * field.pitch_um))
        .collect();
    let fx: Vec<f64> = (0..cols)
        .map(|k| lambda_um * signed_index(k, cols) as f64 / (cols as f64 * field.pitch_um))
        .collect();
    for ((r, c), v) in spec.indexed_iter_mut() {
        let arg = 1.0 - fx[c] * fx[c] - fy[r] * fy[r];
        *v = if arg < 0.0 {
            Complex64::default()
        } else {
            *v * Complex64::from_polar(1.0, TAU * z_um / lambda_um * arg.sqrt())
        };
    }
    fft.inverse(&mut spec);
    Ok(ComplexField {
        values: spec,
        pitch_um: field.pitch_um,
        wavelength_nm: lambda_nm,
    })
}

/// Pointwise multiplication by `exp(j * phase * lambda_c / lambda)`.
pub fn apply_metasurface(
    field: &ComplexField,
    profile: &PhaseProfile,
    lambda_nm: f64,
) -> Result<ComplexField> {
    if field.dim() != profile.dim() {
        return Err(Error::ShapeMismatch(format!(
            "field {:?} vs profile {:?}",
            field.dim(),
            profile.dim()
        )));
    }
    if (field.pitch_um - profile.pitch_um).abs() > 1e-12 {
        return Err(Error::ShapeMismatch(
            "field and profile pitches differ".into(),
        ));
    }
    let kappa = profile.design_wavelength_nm / lambda_nm;
    let mut values = field.values.clone();
    values
        .iter_mut()
        .zip(profile.phase_rad.iter())
        .for_each(|(v, &p)| *v *= Complex64::from_polar(1.0, p * kappa));
    Ok(ComplexField {
        values,
        pitch_um: field.pitch_um,
        wavelength_nm: lambda_nm,
    })
}

/// Grid geometry for sampled multipliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
}

/// Ideal thin lens: unit amplitude inside `radius_mm` of `center_mm`, phase
/// `-pi |x - x_i|^2 / (lambda f)`. Coordinates follow [`ComplexField::coords_um`].
pub fn thin_lens_phase(
    grid: GridSpec,
    focal_mm: f64,
    center_mm: [f64; 2],
    radius_mm: f64,
    lambda_nm: f64,
) -> ComplexField {
    let lambda_um = lambda_nm * 1e-3;
    let f_um = focal_mm * 1e3;
    let (cx, cy) = (center_mm[0] * 1e3, center_mm[1] * 1e3);
    let r_um = radius_mm * 1e3;
    let values = Array2::from_shape_fn((grid.rows, grid.cols), |(r, c)| {
        let x = (c as f64 - (grid.cols / 2) as f64) * grid.pitch_um - cx;
        let y = (r as f64 - (grid.rows / 2) as f64) * grid.pitch_um - cy;
        let rho2 = x * x + y * y;
        if rho2.sqrt() < r_um {
            Complex64::from_polar(1.0, -PI * rho2 / (lambda_um * f_um))
        } else {
            Complex64::default()
        }
    });
    ComplexField {
        values,
        pitch_um: grid.pitch_um,
        wavelength_nm: lambda_nm,
    }
}

/// Wavelength-dependent focal-spot shift `(lambda f / lambda_c) (alpha + beta)` in mm.
pub fn predicted_shift(channel: &ChannelConfig, lambda_nm: f64) -> [f64; 2] {
    let scale = lambda_nm * channel.lens_focal_mm / channel.design_wavelength_nm;
    let r = channel.residual();
    [scale * r[0], scale * r[1]]
}

/// Intensity-weighted mean position `(x, y) = (col, row)` in samples.
pub fn centroid(plane: &Array2<f64>) -> Result<[f64; 2]> {
    let mut total = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for ((r, c), &v) in plane.indexed_iter() {
        total += v;
        sx += v * c as f64;
        sy += v * r as f64;
    }
    if !(total > 0.0) {
        return Err(Error::EmptyPlane);
    }
    Ok([sx / total, sy / total])
}
