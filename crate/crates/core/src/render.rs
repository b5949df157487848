//! Image formation: spectral integration, per-channel convolution, filters,
//! exposure and Poisson-Gaussian noise.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::domain::{ChannelConfig, HyperspectralCube, Polarization, SystemConfig};
use crate::error::{Error, Result};
use crate::fft::RealFft2;
use crate::metasurface::first_order_efficiency;
use crate::propagation::PsfStack;

/// PSF samples below this fraction of a channel's peak are outside its support.
const SUPPORT_THRESHOLD: f64 = 1e-3;
/// Bands accumulated per parallel task.
const BAND_CHUNK: usize = 8;

/// One rendered sub-image, planes ordered as the sensor's color planes.
#[derive(Debug, Clone, PartialEq)]
pub struct SubImage {
    /// `(plane, row, col)`, clipped to `[0, full_well]`.
    pub pixels: Array3<f64>,
    pub channel_index: usize,
    pub gain: f64,
    pub exposure_s: f64,
    pub sigma: f64,
    pub full_well: f64,
    pub seed: u64,
    /// Pixels at or above the full well.
    pub saturated: Array3<bool>,
    /// Pixels whose PSF footprint lies entirely inside the scene.
    pub valid: Array2<bool>,
}

impl SubImage {
    pub fn planes(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn plane(&self, p: usize) -> ArrayView2<'_, f64> {
        self.pixels.index_axis(Axis(0), p)
    }
}

/// All sub-images of one exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sub_images: Vec<SubImage>,
    pub seed: u64,
}

impl Snapshot {
    pub fn channel(&self, index: usize) -> Option<&SubImage> {
        self.sub_images.iter().find(|s| s.channel_index == index)
    }
}

/// `|a_1(lambda) b_i(lambda) F_i(lambda, p)|^2` for band `band` of the system grid.
pub fn channel_efficiency(
    channel: &ChannelConfig,
    lambda_nm: f64,
    band: usize,
    polarization: Polarization,
) -> f64 {
    let a1 = first_order_efficiency(channel.design_wavelength_nm, lambda_nm).norm_sqr();
    let b = channel.b_at(band);
    a1 * b * b * channel.filter.power_transmittance(polarization)
}

/// Per-plane, per-band weights `t * w_b * eta_j(b) * share * c_i(b)` (gain excluded).
pub fn spectral_weights(system: &SystemConfig, channel: &ChannelConfig) -> Vec<Vec<f64>> {
    let trap = system.grid.trapezoid_weights();
    let share = system.channel_share();
    let t = system.sensor.exposure_s;
    system
        .sensor
        .eta
        .iter()
        .map(|eta| {
            system
                .grid
                .wavelengths()
                .iter()
                .enumerate()
                .map(|(b, &l)| {
                    t * trap[b]
                        * eta[b]
                        * share
                        * channel_efficiency(channel, l, b, system.scene_polarization)
                })
                .collect()
        })
        .collect()
}

/// Smallest size `>= n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Linear ("same") convolution of scene bands with per-band PSFs through a padded FFT.
///
/// The PSF center sample `(n/2, n/2)` maps a scene pixel onto itself.
#[derive(Debug, Clone)]
pub struct Convolver {
    rows: usize,
    cols: usize,
    psf_size: usize,
    pad: (usize, usize),
    fft: RealFft2,
}

impl Convolver {
    pub fn new(rows: usize, cols: usize, psf_size: usize) -> Self {
        let pad = (fast_len(rows + psf_size), fast_len(cols + psf_size));
        Self {
            rows,
            cols,
            psf_size,
            pad,
            fft: RealFft2::new(pad.0, pad.1),
        }
    }

    /// Shape of the spectra this convolver produces and consumes.
    pub fn spectrum_shape(&self) -> (usize, usize) {
        self.fft.spectrum_shape()
    }

    pub fn scene_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Spectrum of a scene band placed at the top-left of the padded grid.
    pub fn scene_spectrum(&self, band: ArrayView2<'_, f64>) -> Array2<Complex64> {
        let mut buf = Array2::zeros(self.pad);
        buf.slice_mut(s![..self.rows, ..self.cols]).assign(&band);
        self.fft.forward(buf.view())
    }

    /// Spectrum of a PSF plane placed at the top-left of the padded grid.
    pub fn psf_spectrum(&self, psf: ArrayView2<'_, f64>) -> Array2<Complex64> {
        let n = self.psf_size;
        let mut buf = Array2::zeros(self.pad);
        buf.slice_mut(s![..n, ..n]).assign(&psf);
        self.fft.forward(buf.view())
    }

    /// Inverse transform of an accumulated product spectrum, cropped to the scene.
    pub fn finish(&self, spectrum: Array2<Complex64>) -> Array2<f64> {
        let h = self.psf_size / 2;
        self.fft
            .inverse(spectrum)
            .slice(s![h..h + self.rows, h..h + self.cols])
            .to_owned()
    }

    /// Adjoint of [`Convolver::finish`], returned in the spectral domain.
    pub fn finish_adjoint(&self, image: ArrayView2<'_, f64>) -> Array2<Complex64> {
        let h = self.psf_size / 2;
        let inv = 1.0 / (self.pad.0 * self.pad.1) as f64;
        let mut buf = Array2::zeros(self.pad);
        buf.slice_mut(s![h..h + self.rows, h..h + self.cols])
            .zip_mut_with(&image, |d, &v| *d = v * inv);
        self.fft.forward(buf.view())
    }

    /// Adjoint of [`Convolver::scene_spectrum`]: inverse transform scaled to the
    /// unnormalized adjoint, cropped to the scene.
    pub fn scene_adjoint(&self, spectrum: Array2<Complex64>) -> Array2<f64> {
        let scale = (self.pad.0 * self.pad.1) as f64;
        self.fft
            .inverse(spectrum)
            .slice(s![..self.rows, ..self.cols])
            .mapv(|v| v * scale)
    }
}

fn check_inputs(cube: &HyperspectralCube, stack: &PsfStack, system: &SystemConfig) -> Result<()> {
    if cube.grid != system.grid || stack.grid != system.grid {
        return Err(Error::GridMismatch);
    }
    if (stack.pitch_um - system.sensor.pitch_um).abs() > 1e-9 {
        return Err(Error::GridMismatch);
    }
    if stack.num_channels() != system.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "PSF stack has {} channels, system has {}",
            stack.num_channels(),
            system.num_channels()
        )));
    }
    Ok(())
}

fn channel_position(system: &SystemConfig, index: usize) -> Result<usize> {
    system
        .channels
        .iter()
        .position(|c| c.index == index)
        .ok_or_else(|| Error::InvalidConfig(format!("no channel with index {index}")))
}

/// Scene band spectra shared by all channels of one render; all-zero bands are `None`.
pub fn cube_spectra(cube: &HyperspectralCube, conv: &Convolver) -> Vec<Option<Array2<Complex64>>> {
    (0..cube.bands())
        .into_par_iter()
        .map(|b| {
            let band = cube.data.index_axis(Axis(2), b);
            band.iter()
                .any(|&v| v != 0.0)
                .then(|| conv.scene_spectrum(band))
        })
        .collect()
}

fn clean_from_spectra(
    spectra: &[Option<Array2<Complex64>>],
    conv: &Convolver,
    stack: &PsfStack,
    system: &SystemConfig,
    k: usize,
) -> Array3<f64> {
    let ch = &system.channels[k];
    let weights = spectral_weights(system, ch);
    let planes = weights.len();
    let pad = conv.spectrum_shape();
    let zero = || vec![Array2::<Complex64>::zeros(pad); planes];
    let active: Vec<usize> = (0..spectra.len())
        .filter(|&b| spectra[b].is_some() && weights.iter().any(|w| w[b] != 0.0))
        .collect();
    // fixed chunks summed in order keep the result independent of thread scheduling
    let partials: Vec<Vec<Array2<Complex64>>> = active
        .par_chunks(BAND_CHUNK)
        .map(|chunk| {
            let mut acc = zero();
            for &b in chunk {
                let h = conv.psf_spectrum(stack.plane(k, b));
                let prod = h * spectra[b].as_ref().expect("filtered");
                for (j, a) in acc.iter_mut().enumerate() {
                    let w = weights[j][b];
                    if w != 0.0 {
                        a.zip_mut_with(&prod, |x, &y| *x += y * w);
                    }
                }
            }
            acc
        })
        .collect();
    let acc = partials
        .into_iter()
        .reduce(|mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += &y;
            }
            a
        })
        .unwrap_or_else(zero);
    let gain = system.sensor.gain;
    let mut out = Array3::zeros((planes, conv.rows, conv.cols));
    for (j, spec) in acc.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), j)
            .assign(&(conv.finish(spec) * gain));
    }
    out
}

/// Mean sensor signal `G * S_j` of one channel before noise and clipping.
pub fn render_clean(
    cube: &HyperspectralCube,
    stack: &PsfStack,
    system: &SystemConfig,
    channel_index: usize,
) -> Result<Array3<f64>> {
    check_inputs(cube, stack, system)?;
    let k = channel_position(system, channel_index)?;
    let conv = Convolver::new(cube.rows(), cube.cols(), stack.size());
    let spectra = cube_spectra(cube, &conv);
    Ok(clean_from_spectra(&spectra, &conv, stack, system, k))
}

/// Pixels whose PSF footprint (samples above a fraction of the channel peak) stays inside the scene.
pub fn valid_mask(stack: &PsfStack, k: usize, rows: usize, cols: usize) -> Array2<bool> {
    let n = stack.size();
    let peak = (0..stack.grid.len())
        .map(|b| stack.plane(k, b).fold(0.0f64, |m, &v| m.max(v)))
        .fold(0.0, f64::max);
    let (mut r0, mut r1, mut c0, mut c1) = (n, 0, n, 0);
    for b in 0..stack.grid.len() {
        for ((r, c), &v) in stack.plane(k, b).indexed_iter() {
            if v >= SUPPORT_THRESHOLD * peak {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    let h = (n / 2) as i64;
    // output(x) gathers scene(x - (i - h)) for PSF index i in [lo, hi]
    let (dr_lo, dr_hi) = (r0 as i64 - h, r1 as i64 - h);
    let (dc_lo, dc_hi) = (c0 as i64 - h, c1 as i64 - h);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r, c) = (r as i64, c as i64);
        r - dr_hi >= 0 && r - dr_lo < rows as i64 && c - dc_hi >= 0 && c - dc_lo < cols as i64
    })
}

/// Per-channel random stream derived from the snapshot seed.
pub fn channel_rng(seed: u64, channel_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel_index as u64);
    rng
}

/// `clip(G * Poisson(P * S) / P + N(0, sigma^2), 0, full_well)` applied to a mean image `G * S`.
pub fn apply_noise(
    clean: &Array3<f64>,
    system: &SystemConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array3<f64>> {
    let sensor = &system.sensor;
    let p = sensor.photons_per_unit;
    let g = sensor.gain;
    let normal = if sensor.sigma > 0.0 {
        Some(Normal::new(0.0, sensor.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut out = clean.clone();
    for v in out.iter_mut() {
        let mean_counts = (*v / g).max(0.0) * p;
        let counts = if mean_counts > 0.0 {
            Poisson::new(mean_counts)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        let read = normal.map_or(0.0, |n| n.sample(rng));
        *v = (g * counts / p + read).clamp(0.0, sensor.full_well_normalized);
    }
    Ok(out)
}

fn package(
    pixels: Array3<f64>,
    valid: Array2<bool>,
    system: &SystemConfig,
    channel_index: usize,
    seed: u64,
) -> SubImage {
    let fw = system.sensor.full_well_normalized;
    SubImage {
        saturated: pixels.mapv(|v| v >= fw),
        pixels,
        channel_index,
        gain: system.sensor.gain,
        exposure_s: system.sensor.exposure_s,
        sigma: system.sensor.sigma,
        full_well: fw,
        seed,
        valid,
    }
}

/// Renders one channel's sub-image; `noiseless` skips both noise terms but keeps the clip.
pub fn render_subimage(
    cube: &HyperspectralCube,
    stack: &PsfStack,
    system: &SystemConfig,
    channel_index: usize,
    noiseless: bool,
    seed: u64,
) -> Result<SubImage> {
    let clean = render_clean(cube, stack, system, channel_index)?;
    let k = channel_position(system, channel_index)?;
    let pixels = if noiseless {
        clean.mapv(|v| v.clamp(0.0, system.sensor.full_well_normalized))
    } else {
        apply_noise(&clean, system, &mut channel_rng(seed, channel_index))?
    };
    let valid = valid_mask(stack, k, cube.rows(), cube.cols());
    Ok(package(pixels, valid, system, channel_index, seed))
}

/// Renders every channel from one scene with independent per-channel noise streams.
pub fn render_snapshot_with(
    cube: &HyperspectralCube,
    stack: &PsfStack,
    system: &SystemConfig,
    noiseless: bool,
    seed: u64,
) -> Result<Snapshot> {
    check_inputs(cube, stack, system)?;
    let conv = Convolver::new(cube.rows(), cube.cols(), stack.size());
    let spectra = cube_spectra(cube, &conv);
    let sub_images = system
        .channels
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            let clean = clean_from_spectra(&spectra, &conv, stack, system, k);
            let pixels = if noiseless {
                clean.mapv(|v| v.clamp(0.0, system.sensor.full_well_normalized))
            } else {
                apply_noise(&clean, system, &mut channel_rng(seed, ch.index))?
            };
            let valid = valid_mask(stack, k, cube.rows(), cube.cols());
            Ok(package(pixels, valid, system, ch.index, seed))
        })
        .collect::<Result<_>>()?;
    Ok(Snapshot { sub_images, seed })
}

/// Noisy snapshot with PSFs synthesized from `system`.
pub fn render_snapshot(
    cube: &HyperspectralCube,
    system: &SystemConfig,
    seed: u64,
) -> Result<Snapshot> {
    let stack = crate::propagation::psf_stack(system)?;
    render_snapshot_with(cube, &stack, system, false, seed)
}

/// Read-noise level drawn uniformly from `[0.001, 0.01]`.
pub fn sample_noise_sigma<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.001..=0.01)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FilterSpec, SensorModel, SpectralGrid};
    use crate::propagation::psf_stack;
    use approx::assert_relative_eq;

    fn mono_system(channels: usize, psf_size: usize) -> SystemConfig {
        let mut sys = SystemConfig::prototype();
        sys.channels.truncate(channels);
        sys.sensor = SensorModel::mono(&sys.grid);
        sys.sensor.full_well_normalized = 1e9;
        sys.psf_size = psf_size;
        sys
    }

    #[test]
    fn efficiency_filters() {
        let sys = SystemConfig::prototype_hdr();
        let c3 = channel_efficiency(&sys.channels[2], 600.0, 6, Polarization::Unpolarized);
        assert_relative_eq!(c3, 10f64.powf(-0.3), max_relative = 1e-9);
        let mut ch = sys.channels[0].clone();
        ch.filter = FilterSpec::None;
        assert_relative_eq!(
            channel_efficiency(&ch, 450.0, 0, Polarization::Unpolarized),
            1.0,
            epsilon = 1e-9
        );
        ch.filter = FilterSpec::LinearPolarizer { angle_deg: 90.0 };
        assert!(channel_efficiency(&ch, 450.0, 0, Polarization::Linear { angle_deg: 0.0 }) < 1e-30);
    }

    #[test]
    fn fast_len_values() {
        assert_eq!(fast_len(1), 1);
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(97), 100);
        assert_eq!(fast_len(121), 125);
    }

    #[test]
    fn convolver_matches_direct_sum() {
        let conv = Convolver::new(6, 5, 4);
        let scene = Array2::from_shape_fn((6, 5), |(r, c)| (r * 5 + c) as f64 * 0.1);
        let psf = Array2::from_shape_fn((4, 4), |(r, c)| ((r + 2 * c) % 3) as f64);
        let out = conv.finish(&conv.scene_spectrum(scene.view()) * &conv.psf_spectrum(psf.view()));
        for r in 0..6i64 {
            for c in 0..5i64 {
                let mut want = 0.0;
                for i in 0..4i64 {
                    for j in 0..4i64 {
                        let (sr, sc) = (r - (i - 2), c - (j - 2));
                        if (0..6).contains(&sr) && (0..5).contains(&sc) {
                            want +=
                                psf[[i as usize, j as usize]] * scene[[sr as usize, sc as usize]];
                        }
                    }
                }
                assert!((out[[r as usize, c as usize]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let conv = Convolver::new(7, 6, 4);
        let x = Array2::from_shape_fn((7, 6), |(r, c)| ((r * 3 + c * 7) % 5) as f64 - 2.0);
        let y = Array2::from_shape_fn((7, 6), |(r, c)| ((r + c * 2) % 4) as f64 * 0.5);
        let psf = Array2::from_shape_fn((4, 4), |(r, c)| (r as f64 - c as f64).abs());
        let h = conv.psf_spectrum(psf.view());
        let ax = conv.finish(&conv.scene_spectrum(x.view()) * &h);
        let aty = conv.scene_adjoint(&conv.finish_adjoint(y.view()) * &h.mapv(|v| v.conj()));
        let lhs: f64 = (&ax * &y).sum();
        let rhs: f64 = (&x * &aty).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }

    #[test]
    fn delta_scene_reproduces_weighted_psf() {
        let sys = mono_system(1, 32);
        let stack = psf_stack(&sys).unwrap();
        let mut cube = HyperspectralCube::zeros(32, 32, sys.grid.clone(), 2.0);
        cube.data.slice_mut(s![16, 16, ..]).fill(1.0);
        let img = render_clean(&cube, &stack, &sys, 1).unwrap();
        let w = spectral_weights(&sys, &sys.channels[0]);
        let mut want = Array2::<f64>::zeros((32, 32));
        for (b, &wb) in w[0].iter().enumerate() {
            want.scaled_add(wb, &stack.plane(0, b));
        }
        for ((r, c), &v) in want.indexed_iter() {
            assert!((img[[0, r, c]] - v).abs() < 1e-12, "{r},{c}");
        }
    }

    #[test]
    fn constant_scene_gives_band_integral() {
        let mut sys = mono_system(1, 16);
        sys.channels[0].design_wavelength_nm = 575.0;
        sys.grid = SpectralGrid::uniform(570.0, 580.0, 3).unwrap();
        sys.sensor = SensorModel::mono(&sys.grid);
        sys.sensor.full_well_normalized = 1e9;
        sys.sensor.gain = 2.0;
        sys.sensor.exposure_s = 0.5;
        let stack = psf_stack(&sys).unwrap();
        let cube =
            HyperspectralCube::new(Array3::from_elem((40, 40, 3), 0.3), sys.grid.clone(), 2.0)
                .unwrap();
        let img = render_clean(&cube, &stack, &sys, 1).unwrap();
        let c: Vec<f64> = sys
            .grid
            .wavelengths()
            .iter()
            .map(|&l| first_order_efficiency(575.0, l).norm_sqr())
            .collect();
        let want = 2.0 * 0.5 * 0.3 * 2.5 * (c[0] + 2.0 * c[1] + c[2]);
        let valid = valid_mask(&stack, 0, 40, 40);
        assert!(valid.iter().any(|&v| v));
        for ((r, cc), &ok) in valid.indexed_iter() {
            if ok {
                assert_relative_eq!(img[[0, r, cc]], want, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_limit_matches_clean() {
        let mut sys = mono_system(1, 16);
        sys.sensor.photons_per_unit = 1e15;
        let clean = Array3::from_shape_fn((1, 8, 8), |(_, r, c)| 0.01 * (r + c) as f64);
        let noisy = apply_noise(&clean, &sys, &mut channel_rng(1, 1)).unwrap();
        for (a, b) in noisy.iter().zip(clean.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_clips_to_full_well() {
        let mut sys = mono_system(1, 16);
        sys.sensor.full_well_normalized = 1.0;
        sys.sensor.sigma = 0.01;
        let clean = Array3::from_elem((1, 16, 16), 5.0);
        let noisy = apply_noise(&clean, &sys, &mut channel_rng(3, 1)).unwrap();
        assert!(noisy.iter().all(|&v| v == 1.0));
        let dark = apply_noise(&Array3::zeros((1, 16, 16)), &sys, &mut channel_rng(3, 1)).unwrap();
        assert!(dark.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sigma_samples_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let s = sample_noise_sigma(&mut rng);
            assert!((0.001..=0.01).contains(&s));
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let sys = mono_system(1, 16);
        let stack = psf_stack(&sys).unwrap();
        let other = SpectralGrid::uniform(450.0, 700.0, 11).unwrap();
        let cube = HyperspectralCube::zeros(8, 8, other, 2.0);
        assert!(matches!(
            render_clean(&cube, &stack, &sys, 1),
            Err(Error::GridMismatch)
        ));
    }
}
