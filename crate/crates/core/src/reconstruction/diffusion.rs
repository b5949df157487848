//! Diffusion-style sampling steered by the measured sub-images.

use std::collections::HashMap;

use ndarray::{s, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_scale_offset_rendered, measured_patch, measurement_loss, ForwardModel, PatchPartition,
    PatchRect, ScaleOffset, DEFAULT_PATCH_SIZE,
};
use crate::domain::{HyperspectralCube, SystemConfig};
use crate::error::{Error, Result};
use crate::propagation::PsfStack;
use crate::render::Snapshot;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_GUIDANCE_ITERS: usize = 20;
/// Losses below this fraction of the measured energy are rounding noise.
const ZERO_LOSS: f64 = 1e-20;

/// Linear beta schedule and the cumulative retention `upsilon_t = prod_{k <= t} (1 - beta_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    /// `upsilon[0] = 1`, `upsilon[t]` for `t = 1..=T`.
    pub upsilon: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 || !(0.0..1.0).contains(&beta_start) || !(0.0..1.0).contains(&beta_end) {
            return Err(Error::InvalidConfig(
                "schedule needs T >= 1 and betas in [0, 1)".into(),
            ));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|k| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * k as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let mut upsilon = Vec::with_capacity(timesteps + 1);
        upsilon.push(1.0);
        for b in &betas {
            let last = *upsilon.last().expect("seeded");
            upsilon.push(last * (1.0 - b));
        }
        Ok(Self { betas, upsilon })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn upsilon(&self, t: usize) -> f64 {
        self.upsilon[t.min(self.timesteps())]
    }

    /// `steps` evenly spaced timesteps from `T` down to `T / steps`.
    pub fn subsample(&self, steps: usize) -> Vec<usize> {
        let big_t = self.timesteps();
        let steps = steps.clamp(1, big_t);
        (0..steps)
            .rev()
            .map(|k| ((k + 1) * big_t).div_ceil(steps))
            .collect()
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, 1e-4, 2e-2).expect("valid default schedule")
    }
}

/// Which clean-cube estimator [`denoise_to_estimate`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    /// `(s - sqrt(1 - u) eps) / sqrt(u)`.
    #[default]
    Standard,
    /// `(s - sqrt(1 - u) eps) / sqrt(1 - u)`.
    Literal,
}

impl EstimateMode {
    /// Derivative of the estimate with respect to the state, noise held fixed.
    fn state_gain(self, upsilon: f64) -> f64 {
        match self {
            Self::Standard => 1.0 / upsilon.sqrt(),
            Self::Literal if upsilon < 1.0 => 1.0 / (1.0 - upsilon).sqrt(),
            Self::Literal => 1.0,
        }
    }
}

/// Clean-cube estimate from a noisy state and its predicted noise.
pub fn denoise_to_estimate(
    state: ArrayView3<'_, f64>,
    eps: ArrayView3<'_, f64>,
    schedule: &DiffusionSchedule,
    t: usize,
    mode: EstimateMode,
) -> Result<Array3<f64>> {
    if state.dim() != eps.dim() {
        return Err(Error::ShapeMismatch(format!(
            "state {:?} vs noise {:?}",
            state.dim(),
            eps.dim()
        )));
    }
    let u = schedule.upsilon(t);
    let k = (1.0 - u).sqrt();
    let gain = mode.state_gain(u);
    let mut out = state.to_owned();
    out.zip_mut_with(&eps, |s, &e| *s = (*s - k * e) * gain);
    Ok(out)
}

/// Noise predictor plugged into the sampling loop.
///
/// `state` is one `(row, col, band)` patch of the diffusion state; `measured`
/// holds that patch of every sub-image. A trained network implements this
/// trait to drive [`reconstruct_guided`].
pub trait Denoiser: Sync {
    fn predict_noise(
        &self,
        state: ArrayView3<'_, f64>,
        patch: &PatchRect,
        measured: &[Array3<f64>],
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Array3<f64>;

    /// Whether patches may be denoised concurrently.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Returns the exact noise that separates the state from a known cube.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub truth: Array3<f64>,
}

impl Denoiser for OracleDenoiser {
    fn predict_noise(
        &self,
        state: ArrayView3<'_, f64>,
        patch: &PatchRect,
        _measured: &[Array3<f64>],
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Array3<f64> {
        let u = schedule.upsilon(t);
        if u >= 1.0 {
            return Array3::zeros(state.dim());
        }
        let truth = self
            .truth
            .slice(s![patch.row0..patch.row1, patch.col0..patch.col1, ..]);
        let mut eps = state.to_owned();
        let (a, k) = (u.sqrt(), (1.0 - u).sqrt());
        eps.zip_mut_with(&truth, |e, &h| *e = (*e - a * h) / k);
        eps
    }
}

/// Treats everything a separable Gaussian removes as noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherDenoiser {
    pub sigma_spatial: f64,
    pub sigma_spectral: f64,
}

impl Default for SmootherDenoiser {
    fn default() -> Self {
        Self {
            sigma_spatial: 1.0,
            sigma_spectral: 1.0,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn smooth_axis(data: &Array3<f64>, axis: usize, kernel: &[f64]) -> Array3<f64> {
    if kernel.len() == 1 {
        return data.clone();
    }
    let r = (kernel.len() / 2) as i64;
    let mut out = Array3::zeros(data.dim());
    for (src, mut dst) in data
        .lanes(Axis(axis))
        .into_iter()
        .zip(out.lanes_mut(Axis(axis)))
    {
        let n = src.len() as i64;
        for i in 0..n {
            dst[i as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * src[(i + k as i64 - r).clamp(0, n - 1) as usize])
                .sum();
        }
    }
    out
}

/// Separable Gaussian smoothing of a `(row, col, band)` array with clamped borders.
pub fn gaussian_smooth(data: &Array3<f64>, sigma_spatial: f64, sigma_spectral: f64) -> Array3<f64> {
    let ks = gaussian_kernel(sigma_spatial);
    let kb = gaussian_kernel(sigma_spectral);
    let a = smooth_axis(data, 0, &ks);
    let b = smooth_axis(&a, 1, &ks);
    smooth_axis(&b, 2, &kb)
}

impl Denoiser for SmootherDenoiser {
    fn predict_noise(
        &self,
        state: ArrayView3<'_, f64>,
        _patch: &PatchRect,
        _measured: &[Array3<f64>],
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Array3<f64> {
        let u = schedule.upsilon(t);
        if u >= 1.0 {
            return Array3::zeros(state.dim());
        }
        let s = state.to_owned();
        let smooth = gaussian_smooth(&s, self.sigma_spatial, self.sigma_spectral);
        (s - smooth) / (1.0 - u).sqrt()
    }
}

/// Forward model and measurements of one patch.
#[derive(Debug, Clone)]
pub struct PatchProblem<'a> {
    pub rect: PatchRect,
    pub model: &'a ForwardModel,
    pub measured: Vec<Array3<f64>>,
    /// Rendering of an all-ones patch, the offset's column of the affine fit.
    pub ones: Vec<Array3<f64>>,
}

impl<'a> PatchProblem<'a> {
    pub fn new(rect: PatchRect, model: &'a ForwardModel, measured: Vec<Array3<f64>>) -> Self {
        let (rows, cols) = model.shape();
        let ones = model.apply(Array3::ones((rows, cols, model.bands())).view());
        Self {
            rect,
            model,
            measured,
            ones,
        }
    }

    /// Noise, clean estimate and its affine fit at `state`.
    pub fn evaluate(
        &self,
        state: ArrayView3<'_, f64>,
        denoiser: &dyn Denoiser,
        schedule: &DiffusionSchedule,
        t: usize,
        mode: EstimateMode,
    ) -> Result<PatchEstimate> {
        let eps = denoiser.predict_noise(state, &self.rect, &self.measured, t, schedule);
        let h = denoise_to_estimate(state, eps.view(), schedule, t, mode)?;
        let rendered = self.model.apply(h.view());
        let fit = fit_scale_offset_rendered(&rendered, &self.ones, &self.measured);
        let loss = measurement_loss(&rendered, &self.ones, &self.measured, fit);
        Ok(PatchEstimate {
            eps,
            estimate: h,
            rendered,
            fit,
            loss,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PatchEstimate {
    pub eps: Array3<f64>,
    /// Unscaled estimate `H`.
    pub estimate: Array3<f64>,
    pub rendered: Vec<Array3<f64>>,
    pub fit: ScaleOffset,
    pub loss: f64,
}

impl PatchEstimate {
    pub fn corrected(&self) -> Array3<f64> {
        self.estimate.mapv(|v| self.fit.a * v + self.fit.b)
    }
}

#[derive(Debug, Clone)]
pub struct GuidanceOutcome {
    pub state: Array3<f64>,
    /// Loss at the incoming state under its fitted `(a, b)`.
    pub loss: f64,
    pub fit: ScaleOffset,
    /// Norm of the applied update: `gamma`, or 0 for a no-op step.
    pub step_norm: f64,
}

/// One normalized gradient step on the measurement loss with the denoiser held fixed.
pub fn guidance_step(
    state: ArrayView3<'_, f64>,
    denoiser: &dyn Denoiser,
    problem: &PatchProblem<'_>,
    schedule: &DiffusionSchedule,
    t: usize,
    gamma: f64,
    mode: EstimateMode,
) -> Result<GuidanceOutcome> {
    let est = problem.evaluate(state, denoiser, schedule, t, mode)?;
    Ok(guidance_update(
        state, &est, problem, schedule, t, gamma, mode,
    ))
}

/// [`guidance_step`] from an already evaluated `state`.
pub fn guidance_update(
    state: ArrayView3<'_, f64>,
    est: &PatchEstimate,
    problem: &PatchProblem<'_>,
    schedule: &DiffusionSchedule,
    t: usize,
    gamma: f64,
    mode: EstimateMode,
) -> GuidanceOutcome {
    let unchanged = |est: &PatchEstimate| GuidanceOutcome {
        state: state.to_owned(),
        loss: est.loss,
        fit: est.fit,
        step_norm: 0.0,
    };
    let energy = super::stack_dot(&problem.measured, &problem.measured);
    if gamma == 0.0 || est.loss <= ZERO_LOSS * energy {
        return unchanged(est);
    }
    let residual: Vec<Array3<f64>> = est
        .rendered
        .iter()
        .zip(&problem.ones)
        .zip(&problem.measured)
        .map(|((x, y), i)| {
            let mut r = x * est.fit.a;
            r.scaled_add(est.fit.b, y);
            r - i
        })
        .collect();
    let scale = 2.0 * est.fit.a * mode.state_gain(schedule.upsilon(t));
    let grad = problem.model.adjoint(&residual) * scale;
    let norm = grad.mapv(|g| g * g).sum().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return unchanged(est);
    }
    let mut next = state.to_owned();
    next.scaled_add(-gamma / norm, &grad);
    GuidanceOutcome {
        state: next,
        loss: est.loss,
        fit: est.fit,
        step_norm: gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidedOptions {
    pub steps: usize,
    pub guidance_iters: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub mode: EstimateMode,
}

impl Default for GuidedOptions {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance_iters: DEFAULT_GUIDANCE_ITERS,
            patch_size: DEFAULT_PATCH_SIZE,
            seed: 0,
            mode: EstimateMode::Standard,
        }
    }
}

/// Per-timestep summary of the sampling loop.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub t: usize,
    pub gamma: f64,
    /// Summed patch losses after guidance.
    pub loss: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Guidance iterations (across patches) whose loss did not increase.
    pub non_increasing: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub cube: HyperspectralCube,
    /// Stitched, fitted estimate at the first timestep before any guidance.
    pub initial: HyperspectralCube,
    pub diagnostics: Vec<StepDiagnostics>,
}

struct PatchStep {
    state: Array3<f64>,
    output: Array3<f64>,
    initial: Array3<f64>,
    loss: f64,
    fit: ScaleOffset,
    non_increasing: usize,
    iterations: usize,
}

/// Samples a cube consistent with `snapshot`; output clipped to be nonnegative.
pub fn reconstruct_guided(
    snapshot: &Snapshot,
    system: &SystemConfig,
    stack: &PsfStack,
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    options: &GuidedOptions,
) -> Result<Reconstruction> {
    let first = snapshot
        .sub_images
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty snapshot".into()))?;
    let (_, rows, cols) = first.pixels.dim();
    let bands = system.grid.len();
    let partition = PatchPartition::new(rows, cols, options.patch_size)?;

    let mut models: HashMap<(usize, usize), ForwardModel> = HashMap::new();
    for rect in &partition.patches {
        if let std::collections::hash_map::Entry::Vacant(slot) = models.entry(rect.shape()) {
            slot.insert(ForwardModel::new(system, stack, rect.rows(), rect.cols())?);
        }
    }
    let problems: Vec<PatchProblem<'_>> = partition
        .patches
        .iter()
        .map(|rect| {
            Ok(PatchProblem::new(
                *rect,
                &models[&rect.shape()],
                measured_patch(snapshot, system, rect)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut state =
        Array3::from_shape_simple_fn((rows, cols, bands), || StandardNormal.sample(&mut rng));
    let mut output = Array3::zeros((rows, cols, bands));
    let mut initial = Array3::zeros((rows, cols, bands));
    let timesteps = schedule.subsample(options.steps);
    let big_t = schedule.timesteps() as f64;
    let mut diagnostics = Vec::with_capacity(timesteps.len());

    for (i, &t) in timesteps.iter().enumerate() {
        let gamma = (t as f64 / big_t).sqrt();
        let t_next = timesteps.get(i + 1).copied().unwrap_or(0);
        let u_next = schedule.upsilon(t_next);
        let run = |problem: &PatchProblem<'_>| -> Result<PatchStep> {
            let r = problem.rect;
            let mut st = state
                .slice(s![r.row0..r.row1, r.col0..r.col1, ..])
                .to_owned();
            let mut est = problem.evaluate(st.view(), denoiser, schedule, t, options.mode)?;
            let init = est.corrected();
            let mut last = est.loss;
            let mut non_increasing = 0;
            for _ in 0..options.guidance_iters {
                let out =
                    guidance_update(st.view(), &est, problem, schedule, t, gamma, options.mode);
                if out.loss <= last {
                    non_increasing += 1;
                }
                last = out.loss;
                if out.step_norm > 0.0 {
                    st = out.state;
                    est = problem.evaluate(st.view(), denoiser, schedule, t, options.mode)?;
                }
            }
            let fin = est;
            let corrected = fin.corrected();
            let mut next = corrected.mapv(|v| v * u_next.sqrt());
            next.scaled_add((1.0 - u_next).sqrt(), &fin.eps);
            Ok(PatchStep {
                state: next,
                output: corrected,
                initial: init,
                loss: fin.loss,
                fit: fin.fit,
                non_increasing,
                iterations: options.guidance_iters,
            })
        };
        let results: Vec<PatchStep> = if denoiser.concurrent() {
            problems.par_iter().map(run).collect::<Result<_>>()?
        } else {
            problems.iter().map(run).collect::<Result<_>>()?
        };
        let mut diag = StepDiagnostics {
            t,
            gamma,
            loss: 0.0,
            mean_a: 0.0,
            mean_b: 0.0,
            non_increasing: 0,
            iterations: 0,
        };
        for (problem, res) in problems.iter().zip(results) {
            let r = problem.rect;
            let region = s![r.row0..r.row1, r.col0..r.col1, ..];
            state.slice_mut(region).assign(&res.state);
            output.slice_mut(region).assign(&res.output);
            if i == 0 {
                initial.slice_mut(region).assign(&res.initial);
            }
            diag.loss += res.loss;
            diag.mean_a += res.fit.a;
            diag.mean_b += res.fit.b;
            diag.non_increasing += res.non_increasing;
            diag.iterations += res.iterations;
        }
        let n = problems.len() as f64;
        diag.mean_a /= n;
        diag.mean_b /= n;
        diagnostics.push(diag);
    }

    let clip = |a: Array3<f64>| {
        HyperspectralCube::new(
            a.mapv(|v| v.max(0.0)),
            system.grid.clone(),
            system.sensor.pitch_um,
        )
    };
    Ok(Reconstruction {
        cube: clip(output)?,
        initial: clip(initial)?,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::super::measurement_residual;
    use super::super::tests::toy_system;
    use super::*;
    use crate::propagation::psf_stack;
    use crate::render::render_snapshot_with;
    use rand::Rng;

    #[test]
    fn schedule_is_monotone() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.upsilon(0), 1.0);
        assert!((s.upsilon(1) - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.upsilon.windows(2).all(|w| w[1] < w[0]));
        let ts = s.subsample(50);
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 1000);
        assert_eq!(*ts.last().unwrap(), 20);
    }

    fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn estimate_inverts_forward_noising() {
        let s = DiffusionSchedule::default();
        let h = random((4, 5, 3), 1);
        let e = random((4, 5, 3), 2);
        for t in [1, 250, 999] {
            let u = s.upsilon(t);
            let state = &h * u.sqrt() + &e * (1.0 - u).sqrt();
            let got =
                denoise_to_estimate(state.view(), e.view(), &s, t, EstimateMode::Standard).unwrap();
            assert!(got.iter().zip(h.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        let zero = Array3::zeros((4, 5, 3));
        let got =
            denoise_to_estimate(h.view(), zero.view(), &s, 500, EstimateMode::Standard).unwrap();
        let want = &h / s.upsilon(500).sqrt();
        assert!(got
            .iter()
            .zip(want.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        let t0 = denoise_to_estimate(h.view(), e.view(), &s, 0, EstimateMode::Standard).unwrap();
        assert_eq!(t0, h);
        let lit =
            denoise_to_estimate(h.view(), zero.view(), &s, 500, EstimateMode::Literal).unwrap();
        let want = &h / (1.0 - s.upsilon(500)).sqrt();
        assert!(lit
            .iter()
            .zip(want.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(denoise_to_estimate(
            h.view(),
            random((4, 5, 2), 3).view(),
            &s,
            1,
            EstimateMode::Standard
        )
        .is_err());
    }

    #[test]
    fn smoother_keeps_constants() {
        let c = Array3::from_elem((6, 7, 5), 0.4);
        let sm = gaussian_smooth(&c, 1.5, 1.0);
        assert!(sm.iter().all(|v| (v - 0.4).abs() < 1e-12));
    }

    fn toy_problem() -> (SystemConfig, PsfStack, HyperspectralCube, Snapshot) {
        let sys = toy_system(16);
        let stack = psf_stack(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data =
            Array3::from_shape_simple_fn((12, 12, sys.grid.len()), || rng.random_range(0.0..1.0));
        let cube = HyperspectralCube::new(data, sys.grid.clone(), 2.0).unwrap();
        let snap = render_snapshot_with(&cube, &stack, &sys, true, 0).unwrap();
        (sys, stack, cube, snap)
    }

    #[test]
    fn guidance_step_norm_and_no_ops() {
        let (sys, stack, cube, snap) = toy_problem();
        let model = ForwardModel::new(&sys, &stack, 12, 12).unwrap();
        let rect = PatchRect {
            row0: 0,
            row1: 12,
            col0: 0,
            col1: 12,
        };
        let problem = PatchProblem::new(rect, &model, measured_patch(&snap, &sys, &rect).unwrap());
        let sched = DiffusionSchedule::default();
        let state = random((12, 12, sys.grid.len()), 5);
        let smoother = SmootherDenoiser::default();
        let out = guidance_step(
            state.view(),
            &smoother,
            &problem,
            &sched,
            400,
            0.7,
            EstimateMode::Standard,
        )
        .unwrap();
        let moved = (&out.state - &state).mapv(|v| v * v).sum().sqrt();
        assert!((moved - 0.7).abs() < 1e-9, "{moved}");
        let still = guidance_step(
            state.view(),
            &smoother,
            &problem,
            &sched,
            400,
            0.0,
            EstimateMode::Standard,
        )
        .unwrap();
        assert_eq!(still.state, state);
        let oracle = OracleDenoiser {
            truth: cube.data.clone(),
        };
        let exact = guidance_step(
            state.view(),
            &oracle,
            &problem,
            &sched,
            400,
            0.7,
            EstimateMode::Standard,
        )
        .unwrap();
        assert!(exact.loss < 1e-20);
        assert_eq!(exact.state, state);
    }

    #[test]
    fn oracle_reconstruction_is_exact() {
        let (sys, stack, cube, snap) = toy_problem();
        let oracle = OracleDenoiser {
            truth: cube.data.clone(),
        };
        let opts = GuidedOptions {
            steps: 5,
            guidance_iters: 2,
            ..GuidedOptions::default()
        };
        let rec = reconstruct_guided(
            &snap,
            &sys,
            &stack,
            &oracle,
            &DiffusionSchedule::default(),
            &opts,
        )
        .unwrap();
        let err = (&rec.cube.data - &cube.data)
            .mapv(f64::abs)
            .fold(0.0f64, |m, &v| m.max(v));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn zero_scene_gives_zero_cube() {
        let (sys, stack, cube, _) = toy_problem();
        let dark = HyperspectralCube::zeros(12, 12, sys.grid.clone(), 2.0);
        let snap = render_snapshot_with(&dark, &stack, &sys, true, 0).unwrap();
        let opts = GuidedOptions {
            steps: 4,
            guidance_iters: 2,
            ..GuidedOptions::default()
        };
        let rec = reconstruct_guided(
            &snap,
            &sys,
            &stack,
            &SmootherDenoiser::default(),
            &DiffusionSchedule::default(),
            &opts,
        )
        .unwrap();
        assert!(rec.cube.data.iter().all(|&v| v == 0.0));
        assert_eq!(rec.cube.data.dim(), cube.data.dim());
    }

    #[test]
    fn smoother_guidance_reduces_residual() {
        let (sys, stack, _, snap) = toy_problem();
        let opts = GuidedOptions::default();
        let rec = reconstruct_guided(
            &snap,
            &sys,
            &stack,
            &SmootherDenoiser::default(),
            &DiffusionSchedule::default(),
            &opts,
        )
        .unwrap();
        let before = measurement_residual(&sys, &stack, &snap, rec.initial.data.view()).unwrap();
        let after = measurement_residual(&sys, &stack, &snap, rec.cube.data.view()).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
    }
}
