//! Brute-force two-plane simulation used to check the closed-form PSF model.
//!
//! A tapered beam passes the beamsplitting layer, propagates to the
//! dispersion-control layer, passes that channel's aperture and deflector,
//! and is sent to the far field. Lateral focal-plane positions follow from the
//! far-field direction sines as `x = f * u`.

use std::f64::consts::TAU;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use super::angular_spectrum_propagate;
use crate::domain::{ComplexField, SystemConfig};
use crate::error::{Error, Result};
use crate::fft::{signed_index, Fft2};
use crate::metasurface::{
    blazed_orders, default_deflection_vectors, random_assignment, regular_slot,
    DEFAULT_ALPHA_MAGNITUDE,
};

/// How the beamsplitting layer is populated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Only the channel under test, over the whole aperture.
    Single,
    /// Per-sample i.i.d. channel choice.
    Random { seed: u64 },
    /// 2x2 mosaic (requires four channels).
    Regular,
}

/// Sampling and geometry of the brute-force simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub size: usize,
    pub pitch_um: f64,
    /// Distance between the two layers.
    pub spacing_um: f64,
    /// Gaussian beam waist (1/e amplitude radius).
    pub waist_um: f64,
    /// Hard truncation radius of the beam.
    pub truncation_um: f64,
    /// Aperture half-width around the chief-ray track on the second layer.
    pub stop_clearance_um: f64,
    /// Direction-sine radius searched for the focal spot around the axis.
    pub search_radius: f64,
    /// Direction-sine radius of the centroid window.
    pub window_radius: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            size: 512,
            pitch_um: 0.45,
            spacing_um: 100.0,
            waist_um: 6.0,
            truncation_um: 18.0,
            stop_clearance_um: 30.0,
            search_radius: 0.1,
            window_radius: 0.12,
        }
    }
}

/// Focal-spot measurement for one channel and wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSample {
    pub wavelength_nm: f64,
    /// Spot position relative to the channel's lens center, `(x, y)` in mm.
    pub shift_mm: [f64; 2],
    /// Fraction of the incident power inside the centroid window.
    pub throughput: f64,
}

fn gaussian_beam(cfg: &OracleConfig, lambda_nm: f64) -> ComplexField {
    let n = cfg.size;
    let c = (n / 2) as f64;
    let values = Array2::from_shape_fn((n, n), |(r, col)| {
        let x = (col as f64 - c) * cfg.pitch_um;
        let y = (r as f64 - c) * cfg.pitch_um;
        let rho2 = x * x + y * y;
        if rho2 < cfg.truncation_um * cfg.truncation_um {
            Complex64::new((-rho2 / (cfg.waist_um * cfg.waist_um)).exp(), 0.0)
        } else {
            Complex64::default()
        }
    });
    ComplexField {
        values,
        pitch_um: cfg.pitch_um,
        wavelength_nm: lambda_nm,
    }
}

/// Blazed deflector of direction sine `v`, restricted to a subset of its orders.
///
/// A sampled sawtooth folds every evanescent order back into the propagating
/// band; summing only the orders that propagate and are representable on the
/// grid avoids that artifact.
struct Deflector {
    k: [f64; 2],
    orders: Vec<(f64, Complex64)>,
}

impl Deflector {
    /// Keeps order `n` when `keep(n * v * lambda / lambda_c)` holds.
    fn new(v: [f64; 2], lambda_c_nm: f64, lambda_nm: f64, keep: impl Fn([f64; 2]) -> bool) -> Self {
        let scale = lambda_nm / lambda_c_nm;
        let u = v[0].hypot(v[1]) * scale;
        let max_order = if u > 0.0 {
            ((2.0 / u).ceil() as i32).min(64)
        } else {
            0
        };
        let spectrum = blazed_orders(lambda_c_nm, lambda_nm, max_order);
        let orders = spectrum
            .orders
            .iter()
            .filter(|(&n, _)| keep([n as f64 * v[0] * scale, n as f64 * v[1] * scale]))
            .map(|(&n, &a)| (n as f64, a))
            .collect();
        let k = TAU / (lambda_c_nm * 1e-3);
        Self {
            k: [k * v[0], k * v[1]],
            orders,
        }
    }

    fn at(&self, x: f64, y: f64) -> Complex64 {
        let theta = self.k[0] * x + self.k[1] * y;
        self.orders
            .iter()
            .map(|&(n, a)| a * Complex64::from_polar(1.0, n * theta))
            .sum()
    }
}

/// Whether direction sines `u` propagate and are resolved by the grid.
fn representable(u: [f64; 2], lambda_nm: f64, cfg: &OracleConfig, max_sine: f64) -> bool {
    let nyquist = lambda_nm * 1e-3 / (2.0 * cfg.pitch_um);
    u[0].hypot(u[1]) < max_sine.min(1.0) && u[0].abs() < nyquist && u[1].abs() < nyquist
}

/// Steepest direction sine whose walk-off stays inside the simulated window.
fn max_contained_sine(cfg: &OracleConfig) -> f64 {
    let reach = 0.5 * cfg.size as f64 * cfg.pitch_um - cfg.truncation_um;
    if reach <= 0.0 {
        return 0.0;
    }
    let t = reach / cfg.spacing_um;
    t / (1.0 + t * t).sqrt()
}

/// Lateral beam walk-off after `spacing_um` for direction sines `u`.
fn walk_off(u: [f64; 2], spacing_um: f64) -> [f64; 2] {
    let cos = (1.0 - u[0] * u[0] - u[1] * u[1]).max(1e-12).sqrt();
    [spacing_um * u[0] / cos, spacing_um * u[1] / cos]
}

/// Chief-ray track of channel `k`'s beam on the second layer across the band.
///
/// The channel aperture is the set of points within `stop_clearance_um` of this segment.
fn channel_track(system: &SystemConfig, k: usize, cfg: &OracleConfig) -> ([f64; 2], [f64; 2]) {
    let ch = &system.channels[k];
    let (lo, hi) = system.grid.band();
    let d = |lambda: f64| {
        let s = lambda / ch.design_wavelength_nm;
        walk_off([ch.alpha[0] * s, ch.alpha[1] * s], cfg.spacing_um)
    };
    (d(lo), d(hi))
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

fn first_layer(
    system: &SystemConfig,
    k: usize,
    layout: Layout,
    cfg: &OracleConfig,
    lambda_nm: f64,
) -> Result<Array2<Complex64>> {
    let n = cfg.size;
    let v = system.num_channels();
    let assign: Option<Array2<usize>> = match layout {
        Layout::Single => None,
        Layout::Random { seed } => Some(random_assignment((n, n), v, seed)),
        Layout::Regular => {
            if v != 4 {
                return Err(Error::WrongChannelCount(v));
            }
            Some(Array2::from_shape_fn((n, n), |(r, c)| regular_slot(r, c)))
        }
    };
    let deflectors: Vec<Deflector> = system
        .channels
        .iter()
        .map(|ch| {
            Deflector::new(ch.alpha, ch.design_wavelength_nm, lambda_nm, |u| {
                representable(u, lambda_nm, cfg, max_contained_sine(cfg))
            })
        })
        .collect();
    let c0 = (n / 2) as f64;
    Ok(Array2::from_shape_fn((n, n), |(r, c)| {
        let j = assign.as_ref().map_or(k, |a| a[[r, c]]);
        let x = (c as f64 - c0) * cfg.pitch_um;
        let y = (r as f64 - c0) * cfg.pitch_um;
        deflectors[j].at(x, y)
    }))
}

/// Far-field intensity indexed by FFT bin, normalized by `N^2` so it sums to the field power.
fn far_field(values: &Array2<Complex64>) -> Array2<f64> {
    let (rows, cols) = values.dim();
    let mut spec = values.clone();
    Fft2::new(rows, cols).forward(&mut spec);
    let norm = (rows * cols) as f64;
    spec.mapv(|v| v.norm_sqr() / norm)
}

/// Iterative windowed centroid in signed bin units, started at the brightest
/// bin within `search` bins of the axis.
fn windowed_centroid(ff: &Array2<f64>, search: f64, window: f64) -> Result<([f64; 2], f64)> {
    let (rows, cols) = ff.dim();
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for ((r, c), &v) in ff.indexed_iter() {
        let ky = signed_index(r, rows) as f64;
        let kx = signed_index(c, cols) as f64;
        if kx.hypot(ky) <= search && v > best.0 {
            best = (v, [kx, ky]);
        }
    }
    if !(best.0 > 0.0) {
        return Err(Error::EmptyPlane);
    }
    let mut center = best.1;
    let mut power = 0.0;
    for _ in 0..50 {
        let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
        let reach = window.ceil() as i64 + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let kx = center[0].round() + dx as f64;
                let ky = center[1].round() + dy as f64;
                if (kx - center[0]).hypot(ky - center[1]) > window {
                    continue;
                }
                let r = (ky as i64).rem_euclid(rows as i64) as usize;
                let c = (kx as i64).rem_euclid(cols as i64) as usize;
                let v = ff[[r, c]];
                sx += v * kx;
                sy += v * ky;
                total += v;
            }
        }
        if !(total > 0.0) {
            return Err(Error::EmptyPlane);
        }
        let next = [sx / total, sy / total];
        let moved = (next[0] - center[0]).hypot(next[1] - center[1]);
        center = next;
        power = total;
        if moved < 1e-12 {
            break;
        }
    }
    Ok((center, power))
}

/// Brute-force focal-spot position of channel `channel_index` at `lambda_nm`.
pub fn brute_force_sample(
    system: &SystemConfig,
    channel_index: usize,
    lambda_nm: f64,
    layout: Layout,
    cfg: &OracleConfig,
) -> Result<OracleSample> {
    let k = system
        .channels
        .iter()
        .position(|c| c.index == channel_index)
        .ok_or_else(|| Error::InvalidConfig(format!("no channel {channel_index}")))?;
    let ch = &system.channels[k];
    let n = cfg.size;
    let beam = gaussian_beam(cfg, lambda_nm);
    let input_power = beam.power();
    let m0 = first_layer(system, k, layout, cfg, lambda_nm)?;
    let after_m0 = ComplexField {
        values: &beam.values * &m0,
        ..beam
    };
    let at_m1 = angular_spectrum_propagate(&after_m0, cfg.spacing_um * 1e-3, lambda_nm)?;

    let (track_a, track_b) = channel_track(system, k, cfg);
    let scale = lambda_nm / ch.design_wavelength_nm;
    let incoming = [ch.alpha[0] * scale, ch.alpha[1] * scale];
    let second = Deflector::new(ch.beta, ch.design_wavelength_nm, lambda_nm, |u| {
        representable(
            [incoming[0] + u[0], incoming[1] + u[1]],
            lambda_nm,
            cfg,
            1.0,
        )
    });
    let c0 = (n / 2) as f64;
    let mut out = at_m1.values;
    out.indexed_iter_mut().for_each(|((r, c), v)| {
        let x = (c as f64 - c0) * cfg.pitch_um;
        let y = (r as f64 - c0) * cfg.pitch_um;
        if distance_to_segment([x, y], track_a, track_b) < cfg.stop_clearance_um {
            *v *= second.at(x, y);
        } else {
            *v = Complex64::default();
        }
    });

    let ff = far_field(&out);
    let bin = lambda_nm * 1e-3 / (n as f64 * cfg.pitch_um);
    let (kc, power) = windowed_centroid(&ff, cfg.search_radius / bin, cfg.window_radius / bin)?;
    let f = ch.lens_focal_mm;
    Ok(OracleSample {
        wavelength_nm: lambda_nm,
        shift_mm: [f * kc[0] * bin, f * kc[1] * bin],
        throughput: power / input_power,
    })
}

/// [`brute_force_sample`] across every band of the system grid.
pub fn brute_force_sweep(
    system: &SystemConfig,
    channel_index: usize,
    layout: Layout,
    cfg: &OracleConfig,
) -> Result<Vec<OracleSample>> {
    system
        .grid
        .wavelengths()
        .par_iter()
        .map(|&l| brute_force_sample(system, channel_index, l, layout, cfg))
        .collect()
}

/// Far-field test of interleaving artifacts with four deflectors at one design wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterleaveConfig {
    pub size: usize,
    pub pitch_um: f64,
    pub wavelength_nm: f64,
    pub alpha_magnitude: f64,
    pub waist_um: f64,
    /// Bins excluded around each design order and the axis.
    pub exclusion_bins: f64,
    pub seed: u64,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        Self {
            size: 512,
            pitch_um: 0.3,
            wavelength_nm: 550.0,
            alpha_magnitude: DEFAULT_ALPHA_MAGNITUDE,
            waist_um: 25.0,
            exclusion_bins: 6.0,
            seed: 7,
        }
    }
}

/// Largest off-design far-field peaks for both interleaving schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterleaveReport {
    /// Largest spurious peak, relative to the incident power.
    pub regular_peak: f64,
    pub random_peak: f64,
    /// `regular_peak / random_peak`.
    pub ratio: f64,
    /// Mean design-order peak under random interleaving, for scale.
    pub design_peak: f64,
}

/// Normalized far-field intensity (sums to at most 1) of the interleaved beamsplitter.
pub fn interleave_far_field(layout: Layout, cfg: &InterleaveConfig) -> Result<Array2<f64>> {
    let n = cfg.size;
    let alphas: Vec<[f64; 2]> =
        default_deflection_vectors(cfg.alpha_magnitude, &[cfg.wavelength_nm; 4])
            .into_iter()
            .map(|(a, _)| a)
            .collect();
    let assign = match layout {
        Layout::Single => Array2::zeros((n, n)),
        Layout::Random { seed } => random_assignment((n, n), 4, seed),
        Layout::Regular => Array2::from_shape_fn((n, n), |(r, c)| regular_slot(r, c)),
    };
    let deflectors: Vec<Deflector> = alphas
        .iter()
        .map(|&a| {
            Deflector::new(a, cfg.wavelength_nm, cfg.wavelength_nm, |u| {
                u[0].hypot(u[1]) < 1.0
            })
        })
        .collect();
    let c0 = (n / 2) as f64;
    let w2 = cfg.waist_um * cfg.waist_um;
    let field = Array2::from_shape_fn((n, n), |(r, c)| {
        let x = (c as f64 - c0) * cfg.pitch_um;
        let y = (r as f64 - c0) * cfg.pitch_um;
        let a = (-(x * x + y * y) / w2).exp();
        a * deflectors[assign[[r, c]]].at(x, y)
    });
    let power: f64 = field.iter().map(|v| v.norm_sqr()).sum();
    Ok(far_field(&field) / power)
}

/// Design-order bin positions `(kx, ky)` for the four deflectors.
fn design_bins(cfg: &InterleaveConfig) -> Vec<[f64; 2]> {
    let scale = cfg.size as f64 * cfg.pitch_um / (cfg.wavelength_nm * 1e-3);
    default_deflection_vectors(cfg.alpha_magnitude, &[cfg.wavelength_nm; 4])
        .into_iter()
        .map(|(a, _)| [a[0] * scale, a[1] * scale])
        .collect()
}

/// Largest propagating far-field sample outside the exclusion discs.
pub fn max_spurious_peak(ff: &Array2<f64>, cfg: &InterleaveConfig) -> f64 {
    let (rows, cols) = ff.dim();
    let mut excluded = design_bins(cfg);
    excluded.push([0.0, 0.0]);
    let cutoff = cfg.size as f64 * cfg.pitch_um / (cfg.wavelength_nm * 1e-3);
    ff.indexed_iter()
        .filter(|((r, c), _)| {
            let kx = signed_index(*c, cols) as f64;
            let ky = signed_index(*r, rows) as f64;
            kx.hypot(ky) < cutoff
                && excluded
                    .iter()
                    .all(|e| (kx - e[0]).hypot(ky - e[1]) > cfg.exclusion_bins)
        })
        .map(|(_, &v)| v)
        .fold(0.0, f64::max)
}

/// Compares the worst spurious peak of regular and random interleaving.
pub fn interleave_analysis(cfg: &InterleaveConfig) -> Result<InterleaveReport> {
    let regular = interleave_far_field(Layout::Regular, cfg)?;
    let random = interleave_far_field(Layout::Random { seed: cfg.seed }, cfg)?;
    let regular_peak = max_spurious_peak(&regular, cfg);
    let random_peak = max_spurious_peak(&random, cfg);
    let (rows, cols) = random.dim();
    let design_peak = design_bins(cfg)
        .iter()
        .map(|b| {
            let r = (b[1].round() as i64).rem_euclid(rows as i64) as usize;
            let c = (b[0].round() as i64).rem_euclid(cols as i64) as usize;
            random[[r, c]]
        })
        .sum::<f64>()
        / 4.0;
    Ok(InterleaveReport {
        regular_peak,
        random_peak,
        ratio: regular_peak / random_peak,
        design_peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::predicted_shift;

    #[test]
    fn walk_off_geometry() {
        let d = walk_off([0.6, 0.0], 10.0);
        assert!((d[0] - 7.5).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn centroid_of_gaussian_bump_between_bins() {
        let n = 64;
        let ff = Array2::from_shape_fn((n, n), |(r, c)| {
            let kx = signed_index(c, n) as f64 - 2.3;
            let ky = signed_index(r, n) as f64 + 1.6;
            (-(kx * kx + ky * ky) / 8.0).exp()
        });
        let (c, _) = windowed_centroid(&ff, 5.0, 15.0).unwrap();
        assert!(
            (c[0] - 2.3).abs() < 1e-6 && (c[1] + 1.6).abs() < 1e-6,
            "{c:?}"
        );
    }

    #[test]
    fn apertures_clear_the_undeflected_beam() {
        let sys = SystemConfig::prototype();
        let cfg = OracleConfig::default();
        for k in 0..4 {
            let (a, b) = channel_track(&sys, k, &cfg);
            let gap = distance_to_segment([0.0, 0.0], a, b) - cfg.stop_clearance_um;
            assert!(gap > cfg.truncation_um, "channel {k}: {gap}");
        }
    }

    #[test]
    fn segment_distance() {
        assert_eq!(
            distance_to_segment([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]),
            1.0
        );
        assert_eq!(distance_to_segment([3.0, 4.0], [0.0, 0.0], [0.0, 0.0]), 5.0);
        assert!(
            (distance_to_segment([2.0, 1.0], [-1.0, 0.0], [1.0, 0.0]) - 2f64.sqrt()).abs() < 1e-15
        );
    }

    #[test]
    fn dispersive_channel_lands_near_prediction() {
        let sys = SystemConfig::prototype();
        let s =
            brute_force_sample(&sys, 1, 600.0, Layout::Single, &OracleConfig::default()).unwrap();
        let p = predicted_shift(&sys.channels[0], 600.0);
        for a in 0..2 {
            assert!(
                (s.shift_mm[a] - p[a]).abs() < 0.02 * p[a].abs(),
                "{:?} vs {:?}",
                s.shift_mm,
                p
            );
        }
    }

    #[test]
    fn regular_layout_needs_four_channels() {
        let mut sys = SystemConfig::prototype();
        sys.channels.truncate(3);
        assert!(matches!(
            brute_force_sample(&sys, 1, 550.0, Layout::Regular, &OracleConfig::default()),
            Err(Error::WrongChannelCount(3))
        ));
    }
}
