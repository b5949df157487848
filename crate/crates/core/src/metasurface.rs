//! Metasurface phase profiles: linear deflectors, interleaving, diffraction
//! orders under the chromatic phase model, and nanocell library lookup.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{wrap_phase, PhaseProfile, WAVELENGTH_EPS_NM};
use crate::error::{Error, Result};

/// Per-axis direction-sine magnitude of the 550 nm channel.
pub const DEFAULT_ALPHA_MAGNITUDE: f64 = 0.385;
/// Residual deflection left on the dispersive channels.
pub const RESIDUAL_DEFLECTION: f64 = 0.017;
pub const DEFAULT_MAX_ORDER: i32 = 5;
pub const DEFAULT_CELL_WIDTH_NM: f64 = 300.0;
pub const DEFAULT_PILLAR_HEIGHT_NM: f64 = 775.0;

/// Samples per period used when a first-order efficiency is needed without
/// an explicit profile.
const CANONICAL_SAMPLES_PER_PERIOD: usize = 1024;
const PERIOD_TOLERANCE: f64 = 1e-9;

/// Linear deflector `wrap(2*pi/lambda_c * alpha . x)` over a square aperture.
pub fn linear_phase_profile(
    alpha: [f64; 2],
    lambda_c_nm: f64,
    extent_mm: f64,
    pitch_um: f64,
) -> Result<PhaseProfile> {
    let n = (extent_mm * 1000.0 / pitch_um).round() as usize;
    if n == 0 {
        return Err(Error::InvalidConfig(format!(
            "extent {extent_mm} mm holds no samples at pitch {pitch_um} um"
        )));
    }
    linear_phase_profile_grid(alpha, lambda_c_nm, (n, n), pitch_um)
}

/// As [`linear_phase_profile`] but with an explicit `(rows, cols)` grid.
///
/// Sample `(row, col)` sits at `x = col * pitch`, `y = row * pitch`.
pub fn linear_phase_profile_grid(
    alpha: [f64; 2],
    lambda_c_nm: f64,
    shape: (usize, usize),
    pitch_um: f64,
) -> Result<PhaseProfile> {
    if alpha[0].hypot(alpha[1]) >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "|alpha| = {} is not a direction sine",
            alpha[0].hypot(alpha[1])
        )));
    }
    let lambda_um = lambda_c_nm * 1e-3;
    let k = TAU / lambda_um;
    let step = k * pitch_um * alpha[0].abs().max(alpha[1].abs());
    if step >= PI {
        return Err(Error::AliasedProfile { step_rad: step });
    }
    let phase = Array2::from_shape_fn(shape, |(r, c)| {
        wrap_phase(k * (alpha[0] * c as f64 * pitch_um + alpha[1] * r as f64 * pitch_um))
    });
    PhaseProfile::new(phase, pitch_um, lambda_c_nm)
}

/// Fourier coefficients `a_n(lambda)` of a periodic phase-only profile.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffractionSpectrum {
    pub wavelength_nm: f64,
    pub orders: BTreeMap<i32, Complex64>,
    /// Power summed over every order the sampled period resolves.
    pub total_power: f64,
    /// Samples in the analysed period window.
    pub period_samples: usize,
}

impl DiffractionSpectrum {
    pub fn order(&self, n: i32) -> Complex64 {
        self.orders.get(&n).copied().unwrap_or_default()
    }

    pub fn efficiency(&self, n: i32) -> f64 {
        self.order(n).norm_sqr()
    }

    /// Power carried by the listed orders.
    pub fn listed_power(&self) -> f64 {
        self.orders.values().map(|a| a.norm_sqr()).sum()
    }
}

/// Orders `-5..=5` of `profile` seen at `lambda_nm`.
pub fn diffraction_orders(profile: &PhaseProfile, lambda_nm: f64) -> Result<DiffractionSpectrum> {
    diffraction_orders_with(profile, lambda_nm, DEFAULT_MAX_ORDER)
}

/// Orders `-max_order..=max_order` under the chromatic model: the transmission at
/// `lambda` is `exp(j * phase * lambda_c / lambda)`.
///
/// The analysis runs along the first row (or first column when the row is
/// flat) over the shortest window after which the design-wavelength phasor
/// repeats.
pub fn diffraction_orders_with(
    profile: &PhaseProfile,
    lambda_nm: f64,
    max_order: i32,
) -> Result<DiffractionSpectrum> {
    let (rows, cols) = profile.dim();
    let row: Vec<f64> = profile.phase_rad.row(0).to_vec();
    let col: Vec<f64> = profile.phase_rad.column(0).to_vec();
    let flat = |v: &[f64]| {
        v.iter()
            .all(|&p| phasor_distance(p, v[0]) < PERIOD_TOLERANCE)
    };
    let line = if cols > 1 && !flat(&row) {
        row
    } else if rows > 1 && !flat(&col) {
        col
    } else {
        // constant phase: only the zeroth order exists
        let kappa = profile.design_wavelength_nm / lambda_nm;
        let mut orders = BTreeMap::new();
        for n in -max_order..=max_order {
            let a = if n == 0 {
                Complex64::from_polar(1.0, profile.phase_rad[[0, 0]] * kappa)
            } else {
                Complex64::default()
            };
            orders.insert(n, a);
        }
        return Ok(DiffractionSpectrum {
            wavelength_nm: lambda_nm,
            orders,
            total_power: 1.0,
            period_samples: 1,
        });
    };
    let period = find_period(&line).ok_or(Error::NonPeriodic)?;
    let window = &line[..period];

    // fundamental: the DFT bin holding the design-wavelength phasor
    let mut design: Vec<Complex64> = window
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p))
        .collect();
    rustfft::FftPlanner::new()
        .plan_fft_forward(period)
        .process(&mut design);
    let fundamental = (0..period)
        .max_by(|&a, &b| design[a].norm().total_cmp(&design[b].norm()))
        .unwrap_or(0);
    let fundamental = crate::fft::signed_index(fundamental, period);

    let kappa = profile.design_wavelength_nm / lambda_nm;
    let field: Vec<Complex64> = window
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p * kappa))
        .collect();
    let total_power = field.iter().map(|v| v.norm_sqr()).sum::<f64>() / period as f64;
    let mut orders = BTreeMap::new();
    for n in -max_order..=max_order {
        let a = if fundamental == 0 && n != 0 {
            Complex64::default()
        } else {
            dft_bin(&field, n as i64 * fundamental)
        };
        orders.insert(n, a);
    }
    Ok(DiffractionSpectrum {
        wavelength_nm: lambda_nm,
        orders,
        total_power,
        period_samples: period,
    })
}

/// Orders `a_n`, `|n| <= max_order`, of an ideal blazed deflector designed at `lambda_c_nm`.
pub fn blazed_orders(lambda_c_nm: f64, lambda_nm: f64, max_order: i32) -> DiffractionSpectrum {
    let n = CANONICAL_SAMPLES_PER_PERIOD;
    let phase = Array2::from_shape_fn((1, 2 * n), |(_, c)| wrap_phase(TAU * c as f64 / n as f64));
    let profile = PhaseProfile {
        phase_rad: phase,
        pitch_um: 1.0,
        design_wavelength_nm: lambda_c_nm,
    };
    diffraction_orders_with(&profile, lambda_nm, max_order).expect("canonical profile is periodic")
}

/// `a_1(lambda)` of an ideal blazed deflector designed at `lambda_c_nm`.
pub fn first_order_efficiency(lambda_c_nm: f64, lambda_nm: f64) -> Complex64 {
    blazed_orders(lambda_c_nm, lambda_nm, 1).order(1)
}

fn phasor_distance(a: f64, b: f64) -> f64 {
    (Complex64::from_polar(1.0, a) - Complex64::from_polar(1.0, b)).norm()
}

/// Normalized DFT coefficient `1/M sum f(c) exp(-j 2 pi k c / M)`.
fn dft_bin(f: &[Complex64], k: i64) -> Complex64 {
    let m = f.len() as f64;
    let k = k.rem_euclid(f.len() as i64) as f64;
    f.iter()
        .enumerate()
        .map(|(c, v)| v * Complex64::from_polar(1.0, -TAU * k * c as f64 / m))
        .sum::<Complex64>()
        / m
}

/// Smallest window length after which the phasor sequence repeats.
fn find_period(line: &[f64]) -> Option<usize> {
    let n = line.len();
    (1..=n / 2).find(|&m| {
        phasor_distance(line[m], line[0]) < PERIOD_TOLERANCE
            && (0..n - m).all(|c| phasor_distance(line[c + m], line[c]) < PERIOD_TOLERANCE)
    })
}

fn check_compatible(profiles: &[PhaseProfile]) -> Result<()> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no profiles to interleave".into()))?;
    for p in &profiles[1..] {
        if p.dim() != first.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                p.dim(),
                first.dim()
            )));
        }
        if (p.pitch_um - first.pitch_um).abs() > 1e-12 {
            return Err(Error::ShapeMismatch("profile pitches differ".into()));
        }
        if (p.design_wavelength_nm - first.design_wavelength_nm).abs() > WAVELENGTH_EPS_NM {
            return Err(Error::ShapeMismatch(
                "profile design wavelengths differ".into(),
            ));
        }
    }
    Ok(())
}

/// Per-pixel choice of the source profile index for random interleaving.
pub fn random_assignment(shape: (usize, usize), channels: usize, seed: u64) -> Array2<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn(shape, || rng.random_range(0..channels))
}

/// Each output pixel copies one input chosen i.i.d. uniformly (deterministic in `seed`).
pub fn interleave_random(profiles: &[PhaseProfile], seed: u64) -> Result<PhaseProfile> {
    check_compatible(profiles)?;
    let assign = random_assignment(profiles[0].dim(), profiles.len(), seed);
    Ok(PhaseProfile {
        phase_rad: Array2::from_shape_fn(profiles[0].dim(), |(r, c)| {
            profiles[assign[[r, c]]].phase_rad[[r, c]]
        }),
        pitch_um: profiles[0].pitch_um,
        design_wavelength_nm: profiles[0].design_wavelength_nm,
    })
}

/// Index (0-based) of the profile a 2x2 mosaic places at `(row, col)`.
///
/// Offsets `(x, y)`: profile 1 at `(0, 0)`, 2 at `(w, 0)`, 3 at `(w, w)`, 4 at `(0, w)`.
pub fn regular_slot(row: usize, col: usize) -> usize {
    match (col % 2, row % 2) {
        (0, 0) => 0,
        (1, 0) => 1,
        (1, 1) => 2,
        _ => 3,
    }
}

/// Regular 2x2 mosaic of exactly four profiles.
pub fn interleave_regular(profiles: &[PhaseProfile]) -> Result<PhaseProfile> {
    if profiles.len() != 4 {
        return Err(Error::WrongChannelCount(profiles.len()));
    }
    check_compatible(profiles)?;
    Ok(PhaseProfile {
        phase_rad: Array2::from_shape_fn(profiles[0].dim(), |(r, c)| {
            profiles[regular_slot(r, c)].phase_rad[[r, c]]
        }),
        pitch_um: profiles[0].pitch_um,
        design_wavelength_nm: profiles[0].design_wavelength_nm,
    })
}

/// Precomputed nanopillar responses `r_n -> M(r_n; lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NanocellLibrary {
    pub radii_nm: Vec<f64>,
    pub wavelengths_nm: Vec<f64>,
    /// `transmission[entry][wavelength]`
    pub transmission: Vec<Vec<Complex64>>,
    pub cell_width_nm: f64,
    pub pillar_height_nm: f64,
}

impl NanocellLibrary {
    pub fn new(
        radii_nm: Vec<f64>,
        wavelengths_nm: Vec<f64>,
        transmission: Vec<Vec<Complex64>>,
    ) -> Result<Self> {
        let lib = Self {
            radii_nm,
            wavelengths_nm,
            transmission,
            cell_width_nm: DEFAULT_CELL_WIDTH_NM,
            pillar_height_nm: DEFAULT_PILLAR_HEIGHT_NM,
        };
        lib.validate()?;
        Ok(lib)
    }

    /// Unit-magnitude library with the given phases at every wavelength.
    pub fn phase_only(
        radii_nm: Vec<f64>,
        phases_rad: &[f64],
        wavelengths_nm: Vec<f64>,
    ) -> Result<Self> {
        let transmission = phases_rad
            .iter()
            .map(|&p| vec![Complex64::from_polar(1.0, p); wavelengths_nm.len()])
            .collect();
        Self::new(radii_nm, wavelengths_nm, transmission)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig(
                "library radii must be strictly increasing".into(),
            ));
        }
        if self.transmission.len() != self.radii_nm.len()
            || self
                .transmission
                .iter()
                .any(|t| t.len() != self.wavelengths_nm.len())
        {
            return Err(Error::ShapeMismatch(
                "library transmission table does not match radii x wavelengths".into(),
            ));
        }
        if self
            .transmission
            .iter()
            .flatten()
            .any(|t| t.norm() > 1.0 + 1e-9)
        {
            return Err(Error::InvalidConfig(
                "library transmission magnitude exceeds 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.radii_nm.is_empty()
    }

    pub fn wavelength_index(&self, lambda_nm: f64) -> Option<usize> {
        self.wavelengths_nm
            .iter()
            .position(|&w| (w - lambda_nm).abs() <= WAVELENGTH_EPS_NM)
    }
}

/// Pillar radius per nanocell.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusMap {
    pub radii_nm: Array2<f64>,
    pub cell_width_nm: f64,
}

/// Per cell, the library radius whose response is closest to `exp(j * phase)`
/// at the profile's design wavelength. Ties go to the smaller radius.
pub fn nanocell_lookup(target: &PhaseProfile, library: &NanocellLibrary) -> Result<RadiusMap> {
    if library.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let w = library
        .wavelength_index(target.design_wavelength_nm)
        .ok_or(Error::DesignWavelengthMissing(target.design_wavelength_nm))?;
    let responses: Vec<Complex64> = library.transmission.iter().map(|t| t[w]).collect();
    let radii = target.phase_rad.mapv(|phase| {
        let want = Complex64::from_polar(1.0, phase);
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for (k, m) in responses.iter().enumerate() {
            let err = (want - m).norm();
            if err < best_err {
                best = k;
                best_err = err;
            }
        }
        library.radii_nm[best]
    });
    Ok(RadiusMap {
        radii_nm: radii,
        cell_width_nm: library.cell_width_nm,
    })
}

/// Deflection vectors `(alpha_i, beta_i)` for each design wavelength.
///
/// `alpha_i = (lambda_c_i / lambda_c_2) * (s1, s2) * magnitude` with
/// `s1 = (-1)^(floor(i/2)+1)`, `s2 = (-1)^(floor((i-1)/2)+1)`. Channels 1 and 2
/// keep a residual `(0.017, (-1)^(i-1) * 0.017)`; the others cancel exactly.
pub fn default_deflection_vectors(
    magnitude: f64,
    lambda_c_nm: &[f64],
) -> Vec<([f64; 2], [f64; 2])> {
    let reference = lambda_c_nm
        .get(1)
        .or(lambda_c_nm.first())
        .copied()
        .unwrap_or(1.0);
    let sign = |e: usize| if e.is_multiple_of(2) { 1.0 } else { -1.0 };
    lambda_c_nm
        .iter()
        .enumerate()
        .map(|(k, &lc)| {
            let i = k + 1;
            let s1 = sign(i / 2 + 1);
            let s2 = sign((i - 1) / 2 + 1);
            let scale = lc / reference * magnitude;
            let alpha = [s1 * scale, s2 * scale];
            let residual = if i <= 2 {
                [RESIDUAL_DEFLECTION, sign(i - 1) * RESIDUAL_DEFLECTION]
            } else {
                [0.0, 0.0]
            };
            let beta = [-alpha[0] + residual[0], -alpha[1] + residual[1]];
            (alpha, beta)
        })
        .collect()
}

/// Deflection angle in degrees for a direction-sine vector.
pub fn deflection_angle_deg(alpha: [f64; 2]) -> f64 {
    alpha[0].hypot(alpha[1]).asin().to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sinc(u: f64) -> f64 {
        if u.abs() < 1e-15 {
            1.0
        } else {
            (PI * u).sin() / (PI * u)
        }
    }

    #[test]
    fn zero_alpha_gives_zero_phase() {
        let p = linear_phase_profile([0.0, 0.0], 550.0, 0.01, 0.3).unwrap();
        assert!(p.phase_rad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prototype_angle_is_33_degrees() {
        let a = deflection_angle_deg([0.385, -0.385]);
        assert_abs_diff_eq!(a, 32.99, epsilon = 0.01);
    }

    #[test]
    fn period_matches_lambda_over_alpha() {
        // alpha_x = 0.1 at 550 nm: period 5.5 um, i.e. 10 samples at 0.55 um
        let p = linear_phase_profile([0.1, 0.0], 550.0, 0.0275, 0.55).unwrap();
        assert_eq!(p.dim(), (50, 50));
        let row = p.phase_rad.row(3);
        let wraps = row.windows(2).into_iter().filter(|w| w[1] < w[0]).count();
        assert_eq!(wraps, 4);
        for c in 0..40 {
            assert_abs_diff_eq!(phasor_distance(row[c], row[c + 10]), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn aliased_profile_is_rejected() {
        // step = 2 pi * 0.5 * 0.6 / 0.55 > pi
        assert!(matches!(
            linear_phase_profile([0.5, 0.0], 550.0, 0.01, 0.6),
            Err(Error::AliasedProfile { .. })
        ));
    }

    #[test]
    fn perfect_blaze_at_design_wavelength() {
        let p = linear_phase_profile_grid([0.25, 0.0], 550.0, (2, 64), 0.55 / 0.25 / 16.0).unwrap();
        let s = diffraction_orders(&p, 550.0).unwrap();
        assert_abs_diff_eq!(s.order(1).norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.order(0).norm(), 0.0, epsilon = 1e-12);
        for n in [-5, -1, 2, 3, 5] {
            assert_abs_diff_eq!(s.order(n).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn off_design_orders_follow_sinc() {
        // 1024 samples per period
        let p =
            linear_phase_profile_grid([0.2, 0.0], 600.0, (1, 2048), 0.6 / 0.2 / 1024.0).unwrap();
        for lambda in [450.0, 520.0, 700.0] {
            let s = diffraction_orders(&p, lambda).unwrap();
            assert_eq!(s.period_samples, 1024);
            for n in -5..=5 {
                let oracle = sinc(n as f64 - 600.0 / lambda).abs();
                assert_abs_diff_eq!(s.order(n).norm(), oracle, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn negative_alpha_flips_order_sign() {
        let p = linear_phase_profile_grid([-0.2, 0.0], 600.0, (1, 64), 0.6 / 0.2 / 32.0).unwrap();
        let s = diffraction_orders(&p, 600.0).unwrap();
        assert_abs_diff_eq!(s.order(1).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn column_direction_is_used_for_vertical_deflectors() {
        let p = linear_phase_profile_grid([0.0, 0.2], 600.0, (64, 2), 0.6 / 0.2 / 32.0).unwrap();
        let s = diffraction_orders(&p, 600.0).unwrap();
        assert_abs_diff_eq!(s.order(1).norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn parseval_over_all_orders() {
        let p = linear_phase_profile_grid([0.3, 0.0], 500.0, (1, 128), 0.5 / 0.3 / 64.0).unwrap();
        let s = diffraction_orders_with(&p, 630.0, 32).unwrap();
        assert_abs_diff_eq!(s.total_power, 1.0, epsilon = 1e-12);
        // 64-sample period: orders -32..=32 list every bin once, bin 32 twice
        let listed: f64 = (-31..=32).map(|n| s.efficiency(n)).sum();
        assert_abs_diff_eq!(listed, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn non_periodic_profile_is_rejected() {
        let phase = Array2::from_shape_fn((1, 16), |(_, c)| wrap_phase((c * c) as f64 * 0.37));
        let p = PhaseProfile::new(phase, 1.0, 550.0).unwrap();
        assert!(matches!(
            diffraction_orders(&p, 550.0),
            Err(Error::NonPeriodic)
        ));
    }

    #[test]
    fn first_order_efficiency_peaks_at_design() {
        let at = first_order_efficiency(550.0, 550.0).norm();
        assert_abs_diff_eq!(at, 1.0, epsilon = 1e-12);
        let mut prev = at;
        for lambda in [560.0, 600.0, 650.0, 700.0] {
            let e = first_order_efficiency(550.0, lambda).norm();
            assert!(e < prev);
            prev = e;
        }
    }

    fn constant(value: f64) -> PhaseProfile {
        PhaseProfile::new(Array2::from_elem((6, 6), value), 0.3, 550.0).unwrap()
    }

    #[test]
    fn single_profile_random_interleave_is_identity() {
        let p = linear_phase_profile([0.2, 0.1], 550.0, 0.003, 0.3).unwrap();
        assert_eq!(interleave_random(std::slice::from_ref(&p), 7).unwrap(), p);
    }

    #[test]
    fn random_interleave_is_deterministic_and_pixel_exact() {
        let ps: Vec<_> = (0..4).map(|k| constant(k as f64)).collect();
        let a = interleave_random(&ps, 11).unwrap();
        let b = interleave_random(&ps, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.phase_rad.iter().all(|v| [0.0, 1.0, 2.0, 3.0].contains(v)));
    }

    #[test]
    fn random_interleave_fractions_are_binomial() {
        let ps: Vec<_> = (0..4)
            .map(|k| {
                PhaseProfile::new(Array2::from_elem((512, 512), k as f64), 0.3, 550.0).unwrap()
            })
            .collect();
        let out = interleave_random(&ps, 2024).unwrap();
        let n = (512 * 512) as f64;
        let bound = 3.0 * (0.25 * 0.75 / n).sqrt();
        for k in 0..4 {
            let frac = out.phase_rad.iter().filter(|&&v| v == k as f64).count() as f64 / n;
            assert!((frac - 0.25).abs() <= bound, "profile {k}: {frac}");
        }
    }

    #[test]
    fn regular_interleave_tiles() {
        let quarter = PI / 2.0;
        let ps: Vec<_> = (0..4).map(|k| constant(k as f64 * quarter)).collect();
        let out = interleave_regular(&ps).unwrap();
        assert_eq!(out.phase_rad[[0, 0]], 0.0);
        assert_eq!(out.phase_rad[[0, 1]], quarter);
        assert_eq!(out.phase_rad[[1, 1]], 2.0 * quarter);
        assert_eq!(out.phase_rad[[1, 0]], 3.0 * quarter);
        assert_eq!(out.phase_rad[[4, 3]], quarter);

        let same = vec![ps[1].clone(); 4];
        assert_eq!(interleave_regular(&same).unwrap(), ps[1]);
        assert!(matches!(
            interleave_regular(&ps[..3]),
            Err(Error::WrongChannelCount(3))
        ));
    }

    #[test]
    fn interleave_rejects_mismatched_shapes() {
        let a = constant(0.0);
        let b = PhaseProfile::new(Array2::zeros((5, 6)), 0.3, 550.0).unwrap();
        assert!(matches!(
            interleave_random(&[a, b], 1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn lookup_single_entry_and_hand_example() {
        let target = constant(0.0);
        let one = NanocellLibrary::phase_only(vec![80.0], &[1.0], vec![550.0]).unwrap();
        assert!(nanocell_lookup(&target, &one)
            .unwrap()
            .radii_nm
            .iter()
            .all(|&r| r == 80.0));

        let two = NanocellLibrary::phase_only(vec![60.0, 90.0], &[0.1, 3.0], vec![550.0]).unwrap();
        assert!(nanocell_lookup(&target, &two)
            .unwrap()
            .radii_nm
            .iter()
            .all(|&r| r == 60.0));
    }

    #[test]
    fn lookup_reproduces_quantized_profile() {
        let levels: Vec<f64> = (0..8).map(|k| k as f64 * TAU / 8.0).collect();
        let radii: Vec<f64> = (0..8).map(|k| 50.0 + 10.0 * k as f64).collect();
        let lib = NanocellLibrary::phase_only(radii.clone(), &levels, vec![450.0, 550.0]).unwrap();
        let phase = Array2::from_shape_fn((8, 8), |(r, c)| levels[(r * 3 + c) % 8]);
        let target = PhaseProfile::new(phase, 0.3, 550.0).unwrap();
        let map = nanocell_lookup(&target, &lib).unwrap();
        for ((r, c), &rad) in map.radii_nm.indexed_iter() {
            assert_eq!(rad, radii[(r * 3 + c) % 8]);
        }
    }

    #[test]
    fn lookup_ties_prefer_smaller_radius() {
        // target 0 is equidistant from +1 and -1 rad
        let lib = NanocellLibrary::phase_only(vec![40.0, 70.0], &[1.0, -1.0], vec![550.0]).unwrap();
        let map = nanocell_lookup(&constant(0.0), &lib).unwrap();
        assert!(map.radii_nm.iter().all(|&r| r == 40.0));
    }

    #[test]
    fn lookup_errors() {
        let empty = NanocellLibrary::phase_only(vec![], &[], vec![550.0]).unwrap();
        assert!(matches!(
            nanocell_lookup(&constant(0.0), &empty),
            Err(Error::EmptyLibrary)
        ));
        let other = NanocellLibrary::phase_only(vec![50.0], &[0.0], vec![600.0]).unwrap();
        assert!(matches!(
            nanocell_lookup(&constant(0.0), &other),
            Err(Error::DesignWavelengthMissing(_))
        ));
    }

    #[test]
    fn deflection_vectors_match_design() {
        let v = default_deflection_vectors(DEFAULT_ALPHA_MAGNITUDE, &[450.0, 550.0, 600.0, 750.0]);
        let (a2, _) = v[1];
        assert_abs_diff_eq!(a2[0], 0.385, epsilon = 1e-15);
        assert_abs_diff_eq!(a2[1], -0.385, epsilon = 1e-15);
        let sum = |k: usize| [v[k].0[0] + v[k].1[0], v[k].0[1] + v[k].1[1]];
        assert_eq!(sum(2), [0.0, 0.0]);
        assert_eq!(sum(3), [0.0, 0.0]);
        let r1 = sum(0);
        let r2 = sum(1);
        assert_abs_diff_eq!(r1[0], 0.017, epsilon = 1e-15);
        assert_abs_diff_eq!(r1[1], 0.017, epsilon = 1e-15);
        assert_abs_diff_eq!(r2[0], 0.017, epsilon = 1e-15);
        assert_abs_diff_eq!(r2[1], -0.017, epsilon = 1e-15);
        assert_abs_diff_eq!(r1[0] * r2[0] + r1[1] * r2[1], 0.0, epsilon = 1e-15);
        // all four channels point into distinct quadrants
        let quadrants: Vec<_> = v.iter().map(|(a, _)| (a[0] > 0.0, a[1] > 0.0)).collect();
        assert_eq!(
            quadrants,
            vec![(false, false), (true, false), (true, true), (false, true)]
        );
    }
}
