//! Datacube recovery from a snapshot, HDR fusion and polarization contrast.

pub mod diffusion;
pub mod hdr;
pub mod wiener;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::domain::SystemConfig;
use crate::error::{Error, Result};
use crate::propagation::PsfStack;
use crate::render::{spectral_weights, Convolver, Snapshot};

pub use diffusion::{
    denoise_to_estimate, guidance_step, guidance_update, reconstruct_guided, Denoiser,
    DiffusionSchedule, EstimateMode, GuidanceOutcome, GuidedOptions, OracleDenoiser,
    Reconstruction, SmootherDenoiser, StepDiagnostics,
};
pub use hdr::{dolp_hv, fit_gamma, hdr_fuse, CameraResponse, HdrFusion};
pub use wiener::{estimate_nsr, wiener_deconvolve};

/// Default side length of reconstruction patches.
pub const DEFAULT_PATCH_SIZE: usize = 128;

/// Pixel rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl PatchRect {
    pub fn rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn cols(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }
}

/// Non-overlapping tiling of an image; border patches shrink to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPartition {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    pub patches: Vec<PatchRect>,
}

impl PatchPartition {
    pub fn new(rows: usize, cols: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(
                "patch size and image must be non-empty".into(),
            ));
        }
        let mut patches = Vec::new();
        for row0 in (0..rows).step_by(patch_size) {
            for col0 in (0..cols).step_by(patch_size) {
                patches.push(PatchRect {
                    row0,
                    row1: (row0 + patch_size).min(rows),
                    col0,
                    col1: (col0 + patch_size).min(cols),
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            patch_size,
            patches,
        })
    }

    /// Index of the patch containing pixel `(row, col)`.
    pub fn patch_of(&self, row: usize, col: usize) -> Option<usize> {
        self.patches
            .iter()
            .position(|p| (p.row0..p.row1).contains(&row) && (p.col0..p.col1).contains(&col))
    }
}

/// Linear map from a cube patch to the clean sub-images it produces.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    conv: Convolver,
    /// `[channel][band]`.
    psf_spectra: Vec<Vec<Array2<Complex64>>>,
    /// `[channel][plane][band]`, gain included.
    weights: Vec<Vec<Vec<f64>>>,
    bands: usize,
}

impl ForwardModel {
    pub fn new(system: &SystemConfig, stack: &PsfStack, rows: usize, cols: usize) -> Result<Self> {
        if stack.grid != system.grid || stack.num_channels() != system.num_channels() {
            return Err(Error::GridMismatch);
        }
        let conv = Convolver::new(rows, cols, stack.size());
        let bands = system.grid.len();
        let jobs: Vec<(usize, usize)> = (0..system.num_channels())
            .flat_map(|k| (0..bands).map(move |b| (k, b)))
            .collect();
        let flat: Vec<Array2<Complex64>> = jobs
            .par_iter()
            .map(|&(k, b)| conv.psf_spectrum(stack.plane(k, b)))
            .collect();
        let mut it = flat.into_iter();
        let psf_spectra = (0..system.num_channels())
            .map(|_| it.by_ref().take(bands).collect())
            .collect();
        let gain = system.sensor.gain;
        let weights = system
            .channels
            .iter()
            .map(|ch| {
                spectral_weights(system, ch)
                    .into_iter()
                    .map(|w| w.into_iter().map(|v| v * gain).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            conv,
            psf_spectra,
            weights,
            bands,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.conv.scene_shape()
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    /// Clean sub-images `(plane, row, col)` per channel for a `(row, col, band)` cube.
    pub fn apply(&self, cube: ArrayView3<'_, f64>) -> Vec<Array3<f64>> {
        let spectra: Vec<Option<Array2<Complex64>>> = (0..self.bands)
            .into_par_iter()
            .map(|b| {
                let band = cube.index_axis(Axis(2), b);
                band.iter()
                    .any(|&v| v != 0.0)
                    .then(|| self.conv.scene_spectrum(band))
            })
            .collect();
        let (rows, cols) = self.shape();
        let jobs: Vec<(usize, usize)> = (0..self.channels())
            .flat_map(|k| (0..self.weights[k].len()).map(move |j| (k, j)))
            .collect();
        let images: Vec<Array2<f64>> = jobs
            .par_iter()
            .map(|&(k, j)| {
                let mut acc = Array2::<Complex64>::zeros(self.conv.spectrum_shape());
                for (b, spec) in spectra.iter().enumerate() {
                    let w = self.weights[k][j][b];
                    if let (Some(x), true) = (spec, w != 0.0) {
                        let h = &self.psf_spectra[k][b];
                        ndarray::Zip::from(&mut acc)
                            .and(h)
                            .and(x)
                            .for_each(|a, &h, &x| *a += h * x * w);
                    }
                }
                self.conv.finish(acc)
            })
            .collect();
        let mut it = jobs.iter().zip(images);
        (0..self.channels())
            .map(|k| {
                let planes = self.weights[k].len();
                let mut out = Array3::zeros((planes, rows, cols));
                for _ in 0..planes {
                    let (&(_, j), img) = it.next().expect("one image per plane");
                    out.index_axis_mut(Axis(0), j).assign(&img);
                }
                out
            })
            .collect()
    }

    /// Adjoint of [`ForwardModel::apply`].
    pub fn adjoint(&self, images: &[Array3<f64>]) -> Array3<f64> {
        let (rows, cols) = self.shape();
        let jobs: Vec<(usize, usize)> = (0..self.channels())
            .flat_map(|k| (0..self.weights[k].len()).map(move |j| (k, j)))
            .collect();
        let spectra: Vec<Array2<Complex64>> = jobs
            .par_iter()
            .map(|&(k, j)| self.conv.finish_adjoint(images[k].index_axis(Axis(0), j)))
            .collect();
        let bands: Vec<Array2<f64>> = (0..self.bands)
            .into_par_iter()
            .map(|b| {
                let mut acc = Array2::<Complex64>::zeros(self.conv.spectrum_shape());
                for (&(k, j), y) in jobs.iter().zip(&spectra) {
                    let w = self.weights[k][j][b];
                    if w != 0.0 {
                        let h = &self.psf_spectra[k][b];
                        ndarray::Zip::from(&mut acc)
                            .and(h)
                            .and(y)
                            .for_each(|a, &h, &y| *a += h.conj() * y * w);
                    }
                }
                self.conv.scene_adjoint(acc)
            })
            .collect();
        let mut out = Array3::zeros((rows, cols, self.bands));
        for (b, img) in bands.into_iter().enumerate() {
            out.index_axis_mut(Axis(2), b).assign(&img);
        }
        out
    }
}

/// Inner product over a list of equally shaped image stacks.
pub fn stack_dot(a: &[Array3<f64>], b: &[Array3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y).sum()).sum()
}

/// Per-patch affine correction `a * H + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleOffset {
    pub a: f64,
    pub b: f64,
}

impl Default for ScaleOffset {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

/// Least-squares `(a, b)` minimizing `|a X + b Y - I|^2` for rendered `X = I(H)`, `Y = I(1)`.
///
/// Falls back to `(1, 0)` when the normal matrix is singular.
pub fn fit_scale_offset_rendered(
    rendered: &[Array3<f64>],
    ones: &[Array3<f64>],
    measured: &[Array3<f64>],
) -> ScaleOffset {
    let xx = stack_dot(rendered, rendered);
    let xy = stack_dot(rendered, ones);
    let yy = stack_dot(ones, ones);
    let xi = stack_dot(rendered, measured);
    let yi = stack_dot(ones, measured);
    let det = xx * yy - xy * xy;
    if !(det > 1e-12 * xx * yy) || !det.is_finite() {
        return ScaleOffset::default();
    }
    ScaleOffset {
        a: (yy * xi - xy * yi) / det,
        b: (xx * yi - xy * xi) / det,
    }
}

/// [`fit_scale_offset_rendered`] for a predicted cube patch.
pub fn fit_scale_offset(
    model: &ForwardModel,
    h_pred: ArrayView3<'_, f64>,
    measured: &[Array3<f64>],
) -> ScaleOffset {
    let (rows, cols) = model.shape();
    let ones = model.apply(Array3::ones((rows, cols, model.bands())).view());
    fit_scale_offset_rendered(&model.apply(h_pred), &ones, measured)
}

/// `|a X + b Y - I|^2`.
pub fn measurement_loss(
    rendered: &[Array3<f64>],
    ones: &[Array3<f64>],
    measured: &[Array3<f64>],
    fit: ScaleOffset,
) -> f64 {
    rendered
        .iter()
        .zip(ones)
        .zip(measured)
        .map(|((x, y), i)| {
            ndarray::Zip::from(x)
                .and(y)
                .and(i)
                .fold(0.0, |acc, &x, &y, &i| {
                    acc + (fit.a * x + fit.b * y - i).powi(2)
                })
        })
        .sum()
}

/// Sub-image pixels of `rect`, one `(plane, row, col)` stack per channel.
pub fn measured_patch(
    snapshot: &Snapshot,
    system: &SystemConfig,
    rect: &PatchRect,
) -> Result<Vec<Array3<f64>>> {
    system
        .channels
        .iter()
        .map(|ch| {
            let sub = snapshot.channel(ch.index).ok_or_else(|| {
                Error::ShapeMismatch(format!("snapshot lacks channel {}", ch.index))
            })?;
            let (_, rows, cols) = sub.pixels.dim();
            if rect.row1 > rows || rect.col1 > cols {
                return Err(Error::ShapeMismatch("patch outside the sub-image".into()));
            }
            Ok(sub
                .pixels
                .slice(s![.., rect.row0..rect.row1, rect.col0..rect.col1])
                .to_owned())
        })
        .collect()
}

/// `|I(H) - I|` over all channels of a snapshot, rendering the whole cube at once.
pub fn measurement_residual(
    system: &SystemConfig,
    stack: &PsfStack,
    snapshot: &Snapshot,
    cube: ArrayView3<'_, f64>,
) -> Result<f64> {
    let (rows, cols, _) = cube.dim();
    let model = ForwardModel::new(system, stack, rows, cols)?;
    let rect = PatchRect {
        row0: 0,
        row1: rows,
        col0: 0,
        col1: cols,
    };
    let measured = measured_patch(snapshot, system, &rect)?;
    let rendered = model.apply(cube);
    Ok(rendered
        .iter()
        .zip(&measured)
        .map(|(x, i)| (x - i).mapv(|v| v * v).sum())
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{HyperspectralCube, SensorModel};
    use crate::propagation::psf_stack;
    use crate::render::{render_clean, render_snapshot_with};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_system(psf_size: usize) -> SystemConfig {
        let mut sys = SystemConfig::prototype();
        sys.sensor = SensorModel::mono(&sys.grid);
        sys.sensor.exposure_s = 0.01;
        sys.psf_size = psf_size;
        sys
    }

    fn random_cube(rows: usize, cols: usize, bands: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((rows, cols, bands), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn partition_tiles_once() {
        let p = PatchPartition::new(70, 45, 32).unwrap();
        assert_eq!(p.patches.len(), 3 * 2);
        let mut hits = Array2::<u32>::zeros((70, 45));
        for r in &p.patches {
            hits.slice_mut(s![r.row0..r.row1, r.col0..r.col1])
                .mapv_inplace(|v| v + 1);
        }
        assert!(hits.iter().all(|&h| h == 1));
        assert_eq!(p.patches.last().unwrap().shape(), (6, 13));
        assert_eq!(p.patch_of(69, 44), Some(5));
    }

    #[test]
    fn forward_matches_renderer() {
        let sys = toy_system(16);
        let stack = psf_stack(&sys).unwrap();
        let data = random_cube(12, 10, sys.grid.len(), 1);
        let cube = HyperspectralCube::new(data.clone(), sys.grid.clone(), 2.0).unwrap();
        let model = ForwardModel::new(&sys, &stack, 12, 10).unwrap();
        let out = model.apply(data.view());
        for (k, ch) in sys.channels.iter().enumerate() {
            let want = render_clean(&cube, &stack, &sys, ch.index).unwrap();
            for (a, b) in out[k].iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn adjoint_is_exact() {
        let sys = toy_system(16);
        let stack = psf_stack(&sys).unwrap();
        let model = ForwardModel::new(&sys, &stack, 9, 11).unwrap();
        let x = random_cube(9, 11, sys.grid.len(), 2);
        let y: Vec<Array3<f64>> = (0..4).map(|k| random_cube(1, 9, 11, 10 + k)).collect();
        let lhs = stack_dot(&model.apply(x.view()), &y);
        let rhs = (&x * &model.adjoint(&y)).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn scale_offset_recovery() {
        let sys = toy_system(16);
        let stack = psf_stack(&sys).unwrap();
        let truth = random_cube(16, 16, sys.grid.len(), 3);
        let cube = HyperspectralCube::new(truth.clone(), sys.grid.clone(), 2.0).unwrap();
        let mut clean = sys.clone();
        clean.sensor.full_well_normalized = 1e9;
        let snap = render_snapshot_with(&cube, &stack, &clean, true, 0).unwrap();
        let rect = PatchRect {
            row0: 0,
            row1: 16,
            col0: 0,
            col1: 16,
        };
        let measured = measured_patch(&snap, &clean, &rect).unwrap();
        let model = ForwardModel::new(&clean, &stack, 16, 16).unwrap();

        let exact = fit_scale_offset(&model, truth.view(), &measured);
        assert!(
            (exact.a - 1.0).abs() < 1e-8 && exact.b.abs() < 1e-8,
            "{exact:?}"
        );
        let half = fit_scale_offset(&model, (&truth * 0.5).view(), &measured);
        assert!(
            (half.a - 2.0).abs() < 1e-6 && half.b.abs() < 1e-6,
            "{half:?}"
        );
        let shifted = fit_scale_offset(&model, (&truth + 0.3).view(), &measured);
        assert!(
            (shifted.a - 1.0).abs() < 1e-6 && (shifted.b + 0.3).abs() < 1e-6,
            "{shifted:?}"
        );
    }

    #[test]
    fn singular_fit_falls_back() {
        let zero = vec![Array3::<f64>::zeros((1, 4, 4))];
        let ones = vec![Array3::<f64>::ones((1, 4, 4))];
        assert_eq!(
            fit_scale_offset_rendered(&zero, &ones, &ones),
            ScaleOffset::default()
        );
    }
}
