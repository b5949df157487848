//! Geometric alignment of sub-images and spectral-response characterization.

use nalgebra::{DMatrix, Matrix3, Vector3};
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{HyperspectralCube, SystemConfig};
use crate::error::{Error, Result};
use crate::propagation::PsfStack;
use crate::render::{render_clean, SubImage};

/// Consensus rounds in robust mode.
pub const RANSAC_ITERATIONS: usize = 1000;
/// Reprojection error (px) below which a pair counts as an inlier.
pub const RANSAC_THRESHOLD_PX: f64 = 1.0;
const RANSAC_SEED: u64 = 0x4d53_4341_4c31;
const MIN_DET: f64 = 1e-12;
/// Relative singular-value gap below which the DLT system is rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Index of the channel every other sub-image is aligned to.
pub const DEFAULT_REFERENCE_CHANNEL: usize = 3;

/// Point pair `(source, destination)`, coordinates `[x, y]` = `[col, row]`.
pub type Correspondence = ([f64; 2], [f64; 2]);

/// Projective map of the image plane, normalized so `h[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            matrix: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let h22 = m[(2, 2)];
        if !h22.is_finite() || h22.abs() < MIN_DET || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHomography);
        }
        let matrix = m / h22;
        if matrix.determinant().abs() <= MIN_DET {
            return Err(Error::SingularHomography);
        }
        Ok(Self { matrix })
    }

    pub fn from_row_major(values: [f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(&values))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        std::array::from_fn(|k| m[(k / 3, k % 3)])
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.matrix.try_inverse().ok_or(Error::SingularHomography)?;
        Self::from_matrix(inv)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.matrix * Vector3::new(p[0], p[1], 1.0);
        [v.x / v.z, v.y / v.z]
    }

    pub fn reprojection_error(&self, pair: &Correspondence) -> f64 {
        let q = self.apply(pair.0);
        (q[0] - pair.1[0]).hypot(q[1] - pair.1[1])
    }
}

impl Serialize for Homography {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let values = <[f64; 9]>::deserialize(deserializer)?;
        Self::from_row_major(values).map_err(serde::de::Error::custom)
    }
}

/// Similarity that moves the centroid to the origin and the mean distance to sqrt(2).
fn hartley(points: impl Iterator<Item = [f64; 2]> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::DegenerateConfiguration);
    }
    let k = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(
        k,
        0.0,
        -k * cx,
        0.0,
        k,
        -k * cy,
        0.0,
        0.0,
        1.0,
    ))
}

fn lift(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Normalized direct linear transform over all given pairs.
fn dlt(pairs: &[Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::TooFewPoints(pairs.len()));
    }
    let ts = hartley(pairs.iter().map(|p| p.0))?;
    let td = hartley(pairs.iter().map(|p| p.1))?;
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, pair) in pairs.iter().enumerate() {
        let [x, y] = lift(&ts, pair.0);
        let [u, v] = lift(&td, pair.1);
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    // a second (near-)null direction means the points do not pin down a unique map
    if svd.singular_values[order[1]] <= RANK_TOLERANCE * largest {
        return Err(Error::DegenerateConfiguration);
    }
    let h: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let hn = Matrix3::from_row_slice(&h);
    let td_inv = td.try_inverse().ok_or(Error::DegenerateConfiguration)?;
    Homography::from_matrix(td_inv * hn * ts).map_err(|_| Error::DegenerateConfiguration)
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = ((b[0] - a[0]).hypot(b[1] - a[1]) * (c[0] - a[0]).hypot(c[1] - a[1]))
        .max(f64::MIN_POSITIVE);
    cross.abs() <= 1e-9 * scale
}

fn sample_is_degenerate(pairs: &[Correspondence], idx: &[usize]) -> bool {
    for side in 0..2 {
        let pts: Vec<[f64; 2]> = idx
            .iter()
            .map(|&i| if side == 0 { pairs[i].0 } else { pairs[i].1 })
            .collect();
        for a in 0..4 {
            for b in a + 1..4 {
                for c in b + 1..4 {
                    if collinear(pts[a], pts[b], pts[c]) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Fits a homography mapping each pair's source onto its destination.
///
/// `robust` runs a fixed-seed consensus search over minimal samples and refits on the inliers.
pub fn estimate_homography(pairs: &[Correspondence], robust: bool) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::TooFewPoints(pairs.len()));
    }
    if !robust {
        return dlt(pairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(RANSAC_SEED);
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for _ in 0..RANSAC_ITERATIONS {
        let idx = sample(&mut rng, pairs.len(), 4).into_vec();
        if sample_is_degenerate(pairs, &idx) {
            continue;
        }
        let minimal: Vec<Correspondence> = idx.iter().map(|&i| pairs[i]).collect();
        let Ok(h) = dlt(&minimal) else { continue };
        let mut inliers = Vec::new();
        let mut err = 0.0;
        for (i, p) in pairs.iter().enumerate() {
            let e = h.reprojection_error(p);
            if e < RANSAC_THRESHOLD_PX {
                inliers.push(i);
                err += e;
            }
        }
        let better = match &best {
            None => true,
            Some((n, e, _)) => inliers.len() > *n || (inliers.len() == *n && err < *e),
        };
        if better {
            best = Some((inliers.len(), err, inliers));
        }
    }
    let (_, _, inliers) = best.ok_or(Error::DegenerateConfiguration)?;
    if inliers.len() < 4 {
        return Err(Error::DegenerateConfiguration);
    }
    let chosen: Vec<Correspondence> = inliers.iter().map(|&i| pairs[i]).collect();
    dlt(&chosen)
}

/// A warped image plane and the pixels that sampled inside the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: Array2<f64>,
    pub valid: Array2<bool>,
}

/// Inverse warp: output pixel `p` samples the source at `H^-1 p` bilinearly.
pub fn warp_image(image: ArrayView2<'_, f64>, h: &Homography) -> Result<Warped> {
    let inv = h.inverse()?;
    let (rows, cols) = image.dim();
    let mut out = Array2::zeros((rows, cols));
    let mut valid = Array2::from_elem((rows, cols), false);
    let tol = 1e-9;
    for r in 0..rows {
        for c in 0..cols {
            let [x, y] = inv.apply([c as f64, r as f64]);
            if !(x > -tol && y > -tol && x < cols as f64 - 1.0 + tol && y < rows as f64 - 1.0 + tol)
            {
                continue;
            }
            let (x, y) = (
                x.clamp(0.0, cols as f64 - 1.0),
                y.clamp(0.0, rows as f64 - 1.0),
            );
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(cols - 1), (y0 + 1).min(rows - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let top = image[[y0, x0]] * (1.0 - fx) + image[[y0, x1]] * fx;
            let bottom = image[[y1, x0]] * (1.0 - fx) + image[[y1, x1]] * fx;
            out[[r, c]] = top * (1.0 - fy) + bottom * fy;
            valid[[r, c]] = true;
        }
    }
    Ok(Warped { image: out, valid })
}

/// Applies `h` to every plane of a sub-image; the validity mask is warped along.
pub fn warp_subimage(sub: &SubImage, h: &Homography) -> Result<SubImage> {
    let (planes, rows, cols) = sub.pixels.dim();
    let mut pixels = Array3::zeros((planes, rows, cols));
    let mut inside = Array2::from_elem((rows, cols), true);
    for p in 0..planes {
        let w = warp_image(sub.plane(p), h)?;
        pixels.index_axis_mut(Axis(0), p).assign(&w.image);
        inside.zip_mut_with(&w.valid, |a, &b| *a &= b);
    }
    let prior = sub.valid.mapv(|v| if v { 1.0 } else { 0.0 });
    let carried = warp_image(prior.view(), h)?;
    let valid = Array2::from_shape_fn((rows, cols), |(r, c)| {
        inside[[r, c]] && carried.image[[r, c]] > 1.0 - 1e-9
    });
    Ok(SubImage {
        saturated: pixels.mapv(|v| v >= sub.full_well),
        pixels,
        valid,
        ..sub.clone()
    })
}

/// Per-channel efficiency `alpha_i(lambda)` measured against the bare sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResponse {
    pub wavelengths_nm: Vec<f64>,
    pub channel_indices: Vec<usize>,
    /// `alpha[channel][band]`.
    pub alpha: Vec<Vec<f64>>,
}

impl SpectralResponse {
    /// Wavelength at which channel `k` (position, not index) responds most strongly.
    pub fn peak_wavelength(&self, k: usize) -> f64 {
        let (b, _) =
            self.alpha[k]
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (b, &v)| if v > acc.1 { (b, v) } else { acc },
                );
        self.wavelengths_nm[b]
    }
}

/// `alpha_i = eta * E_i / E` per band.
pub fn spectral_response(
    wavelengths_nm: &[f64],
    channel_indices: &[usize],
    channel_energies: &[Vec<f64>],
    reference_energy: &[f64],
    eta: &[f64],
) -> Result<SpectralResponse> {
    let bands = wavelengths_nm.len();
    if reference_energy.len() != bands
        || eta.len() != bands
        || channel_energies.len() != channel_indices.len()
    {
        return Err(Error::ShapeMismatch(
            "calibration inputs disagree in length".into(),
        ));
    }
    if let Some(b) = reference_energy.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::ZeroReference(wavelengths_nm[b]));
    }
    let alpha = channel_energies
        .iter()
        .map(|ei| {
            if ei.len() != bands {
                return Err(Error::ShapeMismatch("channel energy length".into()));
            }
            Ok((0..bands)
                .map(|b| eta[b] * ei[b] / reference_energy[b])
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(SpectralResponse {
        wavelengths_nm: wavelengths_nm.to_vec(),
        channel_indices: channel_indices.to_vec(),
        alpha,
    })
}

/// Pixel-sum energies of one monochromatic point-source capture.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCapture {
    pub wavelength_nm: f64,
    /// Per channel, in system order.
    pub channel_energies: Vec<f64>,
    /// Bare-sensor energy without the optical assembly.
    pub reference_energy: f64,
}

/// Noiseless point-source capture at `lambda_nm` with and without the optics.
pub fn simulate_calibration_capture(
    system: &SystemConfig,
    stack: &PsfStack,
    lambda_nm: f64,
) -> Result<CalibrationCapture> {
    let band = system.grid.index_of(lambda_nm).ok_or(Error::OutOfBand {
        wavelength_nm: lambda_nm,
        min_nm: system.grid.band().0,
        max_nm: system.grid.band().1,
    })?;
    let n = stack.size();
    let mut cube = HyperspectralCube::zeros(n, n, system.grid.clone(), system.sensor.pitch_um);
    cube.data[[n / 2, n / 2, band]] = 1.0;
    let channel_energies = system
        .channels
        .iter()
        .map(|ch| render_clean(&cube, stack, system, ch.index).map(|img| img.sum()))
        .collect::<Result<_>>()?;
    // the bare sensor integrates the same source over every color plane
    let w = system.grid.trapezoid_weights()[band];
    let sensor = &system.sensor;
    let reference_energy =
        sensor.gain * sensor.exposure_s * w * sensor.eta.iter().map(|e| e[band]).sum::<f64>();
    Ok(CalibrationCapture {
        wavelength_nm: lambda_nm,
        channel_energies,
        reference_energy,
    })
}

/// Spectral response of every channel from simulated captures across the grid.
pub fn calibrate(system: &SystemConfig, stack: &PsfStack) -> Result<SpectralResponse> {
    let captures: Vec<CalibrationCapture> = system
        .grid
        .wavelengths()
        .iter()
        .map(|&l| simulate_calibration_capture(system, stack, l))
        .collect::<Result<_>>()?;
    let v = system.num_channels();
    let energies: Vec<Vec<f64>> = (0..v)
        .map(|k| captures.iter().map(|c| c.channel_energies[k]).collect())
        .collect();
    let reference: Vec<f64> = captures.iter().map(|c| c.reference_energy).collect();
    let indices: Vec<usize> = system.channels.iter().map(|c| c.index).collect();
    spectral_response(
        system.grid.wavelengths(),
        &indices,
        &energies,
        &reference,
        &system.sensor.mean_response(),
    )
}

/// Dot-grid calibration target: unit-radiance pixels every `spacing` pixels, offset by `spacing / 2`.
pub fn dot_grid_target(
    system: &SystemConfig,
    rows: usize,
    cols: usize,
    spacing: usize,
) -> (HyperspectralCube, Vec<[f64; 2]>) {
    let mut cube =
        HyperspectralCube::zeros(rows, cols, system.grid.clone(), system.sensor.pitch_um);
    let mut dots = Vec::new();
    let half = spacing / 2;
    for r in (half..rows).step_by(spacing) {
        for c in (half..cols).step_by(spacing) {
            cube.data.slice_mut(s![r, c, ..]).fill(1.0);
            dots.push([c as f64, r as f64]);
        }
    }
    (cube, dots)
}

/// Intensity centroid `[x, y]` of the window of half-width `radius` around `guess`.
pub fn local_centroid(
    image: ArrayView2<'_, f64>,
    guess: [f64; 2],
    radius: usize,
) -> Option<[f64; 2]> {
    let (rows, cols) = image.dim();
    let cx = guess[0].round() as i64;
    let cy = guess[1].round() as i64;
    let r = radius as i64;
    let (mut sum, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for y in (cy - r).max(0)..=(cy + r).min(rows as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(cols as i64 - 1) {
            let v = image[[y as usize, x as usize]];
            sum += v;
            sx += v * x as f64;
            sy += v * y as f64;
        }
    }
    (sum > 0.0).then(|| [sx / sum, sy / sum])
}

/// Correspondences from `target` dot positions onto the reference sub-image.
///
/// Dots are located by windowed centroids around their nominal positions in
/// both images; dots missing from either image are skipped.
pub fn dot_correspondences(
    reference: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    dots: &[[f64; 2]],
    radius: usize,
) -> Vec<Correspondence> {
    dots.iter()
        .filter_map(|&d| {
            let from = local_centroid(target, d, radius)?;
            let to = local_centroid(reference, d, radius)?;
            Some((from, to))
        })
        .collect()
}

/// Homographies aligning every channel onto `reference_channel` from a rendered dot grid.
pub fn align_channels(
    system: &SystemConfig,
    stack: &PsfStack,
    reference_channel: usize,
    rows: usize,
    cols: usize,
    spacing: usize,
) -> Result<Vec<(usize, Homography)>> {
    let (cube, dots) = dot_grid_target(system, rows, cols, spacing);
    let luminance = |index: usize| -> Result<Array2<f64>> {
        Ok(render_clean(&cube, stack, system, index)?.sum_axis(Axis(0)))
    };
    let reference = luminance(reference_channel)?;
    let radius = spacing / 2;
    system
        .channels
        .iter()
        .map(|ch| {
            if ch.index == reference_channel {
                return Ok((ch.index, Homography::identity()));
            }
            let img = luminance(ch.index)?;
            let pairs = dot_correspondences(reference.view(), img.view(), &dots, radius);
            Ok((ch.index, estimate_homography(&pairs, true)?))
        })
        .collect()
}
