//! Image and spectral quality metrics plus a dataset benchmark harness.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView, ArrayView2, ArrayView3, Axis, Dimension};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::domain::{resample_cube, HyperspectralCube, SystemConfig};
use crate::error::{Error, Result};
use crate::propagation::{psf_stack, PsfStack};
use crate::reconstruction::{
    reconstruct_guided, DiffusionSchedule, GuidedOptions, OracleDenoiser, SmootherDenoiser,
};
use crate::render::render_snapshot_with;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes<D: Dimension>(a: &ArrayView<'_, f64, D>, b: &ArrayView<'_, f64, D>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)`; identical inputs give `+inf`.
pub fn psnr<D: Dimension>(
    reference: ArrayView<'_, f64, D>,
    estimate: ArrayView<'_, f64, D>,
    peak: f64,
) -> Result<f64> {
    check_shapes(&reference, &estimate)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let n = reference.len().max(1) as f64;
    let mse = reference
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

fn ssim_window() -> Vec<f64> {
    let h = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - h).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(img: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let n = w.len();
    let tmp = Array2::from_shape_fn((rows, cols - n + 1), |(r, c)| {
        (0..n).map(|k| w[k] * img[[r, c + k]]).sum::<f64>()
    });
    Array2::from_shape_fn((rows - n + 1, cols - n + 1), |(r, c)| {
        (0..n).map(|k| w[k] * tmp[[r + k, c]]).sum()
    })
}

/// Mean Gaussian-windowed SSIM of two planes with dynamic range 1.
pub fn ssim_2d(reference: ArrayView2<'_, f64>, estimate: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(&reference, &estimate)?;
    let (rows, cols) = reference.dim();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { rows, cols });
    }
    let w = ssim_window();
    let x = reference.to_owned();
    let y = estimate.to_owned();
    let mx = filter_valid(&x, &w);
    let my = filter_valid(&y, &w);
    let sxx = filter_valid(&(&x * &x), &w) - &mx * &mx;
    let syy = filter_valid(&(&y * &y), &w) - &my * &my;
    let sxy = filter_valid(&(&x * &y), &w) - &mx * &my;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    ndarray::Zip::from(&mx)
        .and(&my)
        .and(&sxx)
        .and(&syy)
        .and(&sxy)
        .for_each(|&mx, &my, &sxx, &syy, &sxy| {
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sxx + syy + c2));
        });
    Ok(total / mx.len() as f64)
}

/// SSIM averaged over the bands of two `(row, col, band)` cubes.
pub fn ssim(reference: ArrayView3<'_, f64>, estimate: ArrayView3<'_, f64>) -> Result<f64> {
    check_shapes(&reference, &estimate)?;
    let bands = reference.dim().2;
    let per_band: Vec<f64> = (0..bands)
        .into_par_iter()
        .map(|b| {
            ssim_2d(
                reference.index_axis(Axis(2), b),
                estimate.index_axis(Axis(2), b),
            )
        })
        .collect::<Result<_>>()?;
    Ok(per_band.iter().sum::<f64>() / bands.max(1) as f64)
}

/// Mean spectral angle (radians) over pixels where both spectra are nonzero.
pub fn sam(reference: ArrayView3<'_, f64>, estimate: ArrayView3<'_, f64>) -> Result<f64> {
    check_shapes(&reference, &estimate)?;
    let (mut total, mut count) = (0.0, 0usize);
    for (r, e) in reference
        .lanes(Axis(2))
        .into_iter()
        .zip(estimate.lanes(Axis(2)))
    {
        let nr = r.dot(&r).sqrt();
        let ne = e.dot(&e).sqrt();
        if nr > 0.0 && ne > 0.0 {
            // half-angle form of arccos(<r, e> / (|r| |e|)), exact near 0 and pi
            let (mut diff, mut sum) = (0.0, 0.0);
            for (&x, &y) in r.iter().zip(e.iter()) {
                let (u, v) = (x / nr, y / ne);
                diff += (u - v) * (u - v);
                sum += (u + v) * (u + v);
            }
            total += 2.0 * diff.sqrt().atan2(sum.sqrt());
            count += 1;
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

fn finite_or_inf<S: Serializer>(v: &f64, serializer: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        serializer.serialize_f64(*v)
    } else if *v > 0.0 {
        serializer.serialize_str("inf")
    } else if *v < 0.0 {
        serializer.serialize_str("-inf")
    } else {
        serializer.serialize_str("nan")
    }
}

fn float_or_keyword<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(deserializer)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
        },
    }
}

/// Scores of one reconstructed scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub name: String,
    #[serde(
        serialize_with = "finite_or_inf",
        deserialize_with = "float_or_keyword"
    )]
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_rad: f64,
}

/// Per-scene and mean scores with run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenes: Vec<SceneMetrics>,
    #[serde(
        serialize_with = "finite_or_inf",
        deserialize_with = "float_or_keyword"
    )]
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub mean_sam_rad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range_db: Option<f64>,
    pub reconstructor: String,
    pub config_hash: String,
    pub seed: u64,
    /// How cube metrics are aggregated over bands.
    pub averaging: String,
}

impl MetricReport {
    pub fn from_scenes(
        scenes: Vec<SceneMetrics>,
        reconstructor: &str,
        config_hash: &str,
        seed: u64,
    ) -> Self {
        let n = scenes.len().max(1) as f64;
        Self {
            mean_psnr_db: scenes.iter().map(|s| s.psnr_db).sum::<f64>() / n,
            mean_ssim: scenes.iter().map(|s| s.ssim).sum::<f64>() / n,
            mean_sam_rad: scenes.iter().map(|s| s.sam_rad).sum::<f64>() / n,
            scenes,
            dynamic_range_db: None,
            reconstructor: reconstructor.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            averaging: "per-band".to_string(),
        }
    }

    /// `name,psnr_db,ssim,sam_rad` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let fmt = |v: f64| {
            if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v}")
            }
        };
        let mut out = String::from("name,psnr_db,ssim,sam_rad\n");
        for s in &self.scenes {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.name,
                fmt(s.psnr_db),
                s.ssim,
                s.sam_rad
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{}\n",
            fmt(self.mean_psnr_db),
            self.mean_ssim,
            self.mean_sam_rad
        ));
        out
    }
}

/// Scores an estimate against its reference cube.
pub fn score(
    name: &str,
    reference: &HyperspectralCube,
    estimate: &HyperspectralCube,
) -> Result<SceneMetrics> {
    Ok(SceneMetrics {
        name: name.to_string(),
        psnr_db: psnr(reference.data.view(), estimate.data.view(), 1.0)?,
        ssim: ssim(reference.data.view(), estimate.data.view())?,
        sam_rad: sam(reference.data.view(), estimate.data.view())?,
    })
}

/// Reconstruction strategy of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconstructor {
    /// Returns the ground truth unchanged.
    Identity,
    /// Guided sampling with the exact-noise denoiser.
    Oracle,
    /// Guided sampling with the smoothing denoiser.
    Smoother,
}

impl Reconstructor {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "identity" => Ok(Self::Identity),
            "oracle" => Ok(Self::Oracle),
            "smoother" => Ok(Self::Smoother),
            other => Err(Error::InvalidConfig(format!(
                "unknown reconstructor {other:?}"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Oracle => "oracle",
            Self::Smoother => "smoother",
        }
    }
}

/// Options of [`benchmark_run`] beyond the system itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenchmarkOptions {
    pub guided: GuidedOptions,
    pub noiseless: bool,
}

/// Renders, reconstructs and scores one cube.
pub fn benchmark_cube(
    name: &str,
    cube: &HyperspectralCube,
    system: &SystemConfig,
    stack: &PsfStack,
    reconstructor: Reconstructor,
    seed: u64,
    options: &BenchmarkOptions,
) -> Result<SceneMetrics> {
    let truth = resample_cube(cube, &system.grid)?;
    let estimate = match reconstructor {
        Reconstructor::Identity => truth.clone(),
        Reconstructor::Oracle | Reconstructor::Smoother => {
            let snapshot = render_snapshot_with(&truth, stack, system, options.noiseless, seed)?;
            let guided = GuidedOptions {
                seed,
                ..options.guided
            };
            let schedule = DiffusionSchedule::default();
            let rec = if reconstructor == Reconstructor::Oracle {
                let d = OracleDenoiser {
                    truth: truth.data.clone(),
                };
                reconstruct_guided(&snapshot, system, stack, &d, &schedule, &guided)?
            } else {
                reconstruct_guided(
                    &snapshot,
                    system,
                    stack,
                    &SmootherDenoiser::default(),
                    &schedule,
                    &guided,
                )?
            };
            rec.cube
        }
    };
    score(name, &truth, &estimate)
}

/// Sorted `*.hsc` files of a dataset directory.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "hsc"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    Ok(files)
}

/// Scores every cube of `dataset_dir`; scenes are processed in file-name order.
pub fn benchmark_run(
    dataset_dir: &Path,
    system: &SystemConfig,
    reconstructor: Reconstructor,
    seed: u64,
    options: &BenchmarkOptions,
) -> Result<MetricReport> {
    let files = dataset_files(dataset_dir)?;
    let stack = psf_stack(system)?;
    let scenes = files
        .iter()
        .map(|path| {
            let cube = crate::io::read_cube(path).map_err(|e| Error::UnreadableCube {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let name = path
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            benchmark_cube(&name, &cube, system, &stack, reconstructor, seed, options)
        })
        .collect::<Result<Vec<_>>>()?;
    let hash = crate::io::config_hash(system)?;
    Ok(MetricReport::from_scenes(
        scenes,
        reconstructor.id(),
        &hash,
        seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn ramp(rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            (r + c) as f64 / (rows + cols - 2) as f64
        })
    }

    #[test]
    fn psnr_values() {
        let a = Array2::from_elem((8, 8), 0.5);
        assert_eq!(psnr(a.view(), a.view(), 1.0).unwrap(), f64::INFINITY);
        let b = &a + 16.0 / 255.0;
        let p = psnr(a.view(), b.view(), 1.0).unwrap();
        assert!((p - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-9);
        assert!((p - 24.05).abs() < 0.01);
        let c = &a + 32.0 / 255.0;
        let q = psnr(a.view(), c.view(), 1.0).unwrap();
        assert!((p - q - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!(psnr(a.view(), Array2::zeros((4, 4)).view(), 1.0).is_err());
    }

    #[test]
    fn ssim_values() {
        let a = ramp(16, 16);
        assert!((ssim_2d(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-12);
        let neg = a.mapv(|v| 1.0 - v);
        assert!(ssim_2d(a.view(), neg.view()).unwrap() < 0.0);
        let flat = Array2::from_elem((12, 12), 0.4);
        let close = &flat + 1e-9;
        assert!((ssim_2d(flat.view(), close.view()).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(
            ssim_2d(
                Array2::zeros((10, 20)).view(),
                Array2::zeros((10, 20)).view()
            ),
            Err(Error::ImageTooSmall { rows: 10, cols: 20 })
        ));
    }

    #[test]
    fn sam_values() {
        let a = Array3::from_shape_fn((3, 3, 4), |(r, c, b)| {
            0.1 + (r + 2 * c + 3 * b) as f64 * 0.05
        });
        assert_eq!(sam(a.view(), a.view()).unwrap(), 0.0);
        let scaled = &a * 3.7;
        assert!(sam(a.view(), scaled.view()).unwrap().abs() < 1e-12);
        let x = Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap();
        let y = Array3::from_shape_vec((1, 1, 2), vec![0.0, 1.0]).unwrap();
        assert!((sam(x.view(), y.view()).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn report_json_keeps_infinity() {
        let scenes = vec![SceneMetrics {
            name: "a".into(),
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            sam_rad: 0.0,
        }];
        let r = MetricReport::from_scenes(scenes, "identity", "abc", 1);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(r.to_csv().contains("mean,inf,1,0"));
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Array3::from_shape_simple_fn((12, 12, 3), || rng.random_range(0.0..1.0));
            let b = Array3::from_shape_simple_fn((12, 12, 3), || rng.random_range(0.0..1.0));
            prop_assert_eq!(psnr(a.view(), b.view(), 1.0).unwrap(), psnr(b.view(), a.view(), 1.0).unwrap());
            prop_assert!((ssim(a.view(), b.view()).unwrap() - ssim(b.view(), a.view()).unwrap()).abs() < 1e-12);
            prop_assert!((sam(a.view(), b.view()).unwrap() - sam(b.view(), a.view()).unwrap()).abs() < 1e-12);
            let s = ssim(a.view(), b.view()).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn sam_ignores_per_pixel_scale(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Array3::from_shape_simple_fn((4, 4, 5), || rng.random_range(0.01..1.0));
            let b = Array3::from_shape_simple_fn((4, 4, 5), || rng.random_range(0.01..1.0));
            let mut scaled = b.clone();
            for mut lane in scaled.lanes_mut(Axis(2)) {
                let k = rng.random_range(0.1..10.0);
                lane.mapv_inplace(|v| v * k);
            }
            let d = (sam(a.view(), b.view()).unwrap() - sam(a.view(), scaled.view()).unwrap()).abs();
            prop_assert!(d < 1e-12);
        }

        #[test]
        fn psnr_decreases_with_error(k in 1.01f64..10.0) {
            let a = ramp(8, 8);
            let e = Array2::from_shape_fn((8, 8), |(r, c)| 0.001 * (1 + r + c) as f64);
            let small = &a + &e;
            let large = &a + &(&e * k);
            prop_assert!(psnr(a.view(), large.view(), 1.0).unwrap() < psnr(a.view(), small.view(), 1.0).unwrap());
        }
    }
}
