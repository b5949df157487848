//! `metaspectra` command-line front end.

// `!(x >= t)` is used on purpose so that NaN scores fail thresholds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::{Array3, Axis};

use metaspectra::calibration::{align_channels, calibrate, DEFAULT_REFERENCE_CHANNEL};
use metaspectra::io::{
    centroid_csv, config_hash, diagnostics_csv, read_cube, read_gray, read_subimage, response_csv,
    write_cube, write_hsc1, write_psf_stack, write_subimage, ChannelHomography, HomographySet,
    RunConfig,
};
use metaspectra::metasurface::deflection_angle_deg;
use metaspectra::metrics::{benchmark_run, BenchmarkOptions, Reconstructor};
use metaspectra::propagation::oracle::{interleave_analysis, InterleaveConfig};
use metaspectra::propagation::psf_stack;
use metaspectra::reconstruction::{
    dolp_hv, fit_gamma, hdr_fuse, reconstruct_guided, CameraResponse, DiffusionSchedule,
    OracleDenoiser, SmootherDenoiser,
};
use metaspectra::render::{render_snapshot_with, Snapshot};
use metaspectra::{resample_cube, SystemConfig};

const THREADS_ENV: &str = "METASPECTRA_THREADS";

#[derive(Parser)]
#[command(
    name = "metaspectra",
    version,
    about = "Snapshot hyperspectral imaging toolkit",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Default,
    Hdr,
    Polarization,
}

#[derive(Subcommand)]
enum Command {
    /// Write a run configuration for one of the prototype systems.
    Design {
        #[arg(long, value_enum, default_value = "default")]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        psf_size: Option<usize>,
    },
    /// Synthesize the PSF stack of a configuration.
    Psf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        centroids: Option<PathBuf>,
    },
    /// Render every channel's sub-image from a cube.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the configuration's render seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noiseless: bool,
    },
    /// Simulate the calibration captures: spectral response and channel alignment.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        homographies: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_REFERENCE_CHANNEL)]
        reference: usize,
        /// Side length of the rendered dot-grid target.
        #[arg(long, default_value_t = 160)]
        target_size: usize,
        #[arg(long, default_value_t = 20)]
        dot_spacing: usize,
    },
    /// Recover a cube from rendered sub-images.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding `sub_<channel>.pgm|ppm` files with sidecars.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[arg(long, default_value = "smoother")]
        reconstructor: String,
        /// Ground-truth cube, required by the oracle reconstructor.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        guidance_iters: Option<usize>,
    },
    /// Fuse a dim and a bright exposure.
    Hdr {
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        high: PathBuf,
        /// Exposure ratio bright / dim.
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        out: PathBuf,
        /// Response gamma; fitted from the bracket when given as 0.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        pitch_um: f64,
    },
    /// Degree of linear polarization from 0 and 90 degree images.
    Dolp {
        #[arg(long)]
        i3: PathBuf,
        #[arg(long)]
        i4: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        pitch_um: f64,
    },
    /// Render, reconstruct and score every cube of a dataset.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "identity")]
        reconstructor: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        noiseless: bool,
        #[arg(long)]
        min_psnr: Option<f64>,
        #[arg(long)]
        min_ssim: Option<f64>,
        #[arg(long)]
        max_sam: Option<f64>,
    },
    /// Compare far-field artifacts of regular and random interleaving.
    InterleaveAnalyze {
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn image_path(dir: &Path, system: &SystemConfig, channel: usize) -> PathBuf {
    let ext = if system.sensor.planes() == 1 {
        "pgm"
    } else {
        "ppm"
    };
    dir.join(format!("sub_{channel}.{ext}"))
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Design {
            variant,
            out,
            psf_size,
        } => {
            let mut system = match variant {
                Variant::Default => SystemConfig::prototype(),
                Variant::Hdr => SystemConfig::prototype_hdr(),
                Variant::Polarization => SystemConfig::prototype_polarization(),
            };
            if let Some(n) = psf_size {
                system.psf_size = n;
            }
            system.validate()?;
            for ch in &system.channels {
                let r = ch.residual();
                println!(
                    "channel {}: lambda_c {} nm, deflection {:.2} deg, residual ({:.3}, {:.3})",
                    ch.index,
                    ch.design_wavelength_nm,
                    deflection_angle_deg(ch.alpha),
                    r[0],
                    r[1]
                );
            }
            let cfg = RunConfig::new(system);
            write_text(&out, &cfg.to_json()?)?;
            Ok(format!(
                "wrote {} (config {})",
                out.display(),
                &config_hash(&cfg)?[..12]
            ))
        }
        Command::Psf {
            config,
            out,
            centroids,
        } => {
            let cfg = load(&config)?;
            let stack = psf_stack(&cfg.system)?;
            write_psf_stack(&stack, &out)?;
            if let Some(path) = centroids {
                write_text(&path, &centroid_csv(&stack)?)?;
            }
            Ok(format!(
                "wrote {} channels x {} bands of {}x{} PSFs to {}",
                stack.num_channels(),
                stack.grid.len(),
                stack.size(),
                stack.size(),
                out.display()
            ))
        }
        Command::Render {
            config,
            cube,
            out_dir,
            seed,
            noiseless,
        } => {
            let cfg = load(&config)?;
            let system = &cfg.system;
            let scene = resample_cube(&read_cube(&cube)?, &system.grid)?;
            let stack = psf_stack(system)?;
            let seed = seed.unwrap_or(cfg.render.seed);
            let snapshot = render_snapshot_with(
                &scene,
                &stack,
                system,
                noiseless || cfg.render.noiseless,
                seed,
            )?;
            fs::create_dir_all(&out_dir)?;
            for sub in &snapshot.sub_images {
                write_subimage(sub, &image_path(&out_dir, system, sub.channel_index))?;
            }
            let saturated: usize = snapshot
                .sub_images
                .iter()
                .map(|s| s.saturated.iter().filter(|&&v| v).count())
                .sum();
            Ok(format!(
                "rendered {} sub-images of {}x{} into {} (seed {seed}, {saturated} saturated samples)",
                snapshot.sub_images.len(),
                scene.rows(),
                scene.cols(),
                out_dir.display()
            ))
        }
        Command::Calibrate {
            config,
            response,
            homographies,
            reference,
            target_size,
            dot_spacing,
        } => {
            let cfg = load(&config)?;
            let system = &cfg.system;
            let stack = psf_stack(system)?;
            let resp = calibrate(system, &stack)?;
            write_text(&response, &response_csv(&resp))?;
            let mut summary = format!(
                "wrote spectral response of {} channels",
                resp.channel_indices.len()
            );
            if let Some(path) = homographies {
                system.channel(reference)?;
                let hs = align_channels(
                    system,
                    &stack,
                    reference,
                    target_size,
                    target_size,
                    dot_spacing,
                )?;
                let set = HomographySet {
                    reference_channel: reference,
                    homographies: hs
                        .into_iter()
                        .map(|(channel, matrix)| ChannelHomography { channel, matrix })
                        .collect(),
                };
                write_text(&path, &serde_json::to_string_pretty(&set)?)?;
                summary.push_str(&format!(" and {} homographies", set.homographies.len()));
            }
            Ok(summary)
        }
        Command::Reconstruct {
            config,
            images,
            out,
            diagnostics,
            reconstructor,
            truth,
            steps,
            guidance_iters,
        } => {
            let cfg = load(&config)?;
            let system = &cfg.system;
            let stack = psf_stack(system)?;
            let sub_images = system
                .channels
                .iter()
                .map(|ch| {
                    let path = image_path(&images, system, ch.index);
                    read_subimage(&path).with_context(|| format!("reading {}", path.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let snapshot = Snapshot {
                seed: sub_images[0].seed,
                sub_images,
            };
            let mut options = cfg.reconstruction;
            if let Some(s) = steps {
                options.steps = s;
            }
            if let Some(g) = guidance_iters {
                options.guidance_iters = g;
            }
            let schedule = DiffusionSchedule::default();
            let rec = match Reconstructor::parse(&reconstructor)? {
                Reconstructor::Smoother => reconstruct_guided(
                    &snapshot,
                    system,
                    &stack,
                    &SmootherDenoiser::default(),
                    &schedule,
                    &options,
                )?,
                Reconstructor::Oracle => {
                    let path = truth.context("the oracle reconstructor needs --truth")?;
                    let t = resample_cube(&read_cube(&path)?, &system.grid)?;
                    reconstruct_guided(
                        &snapshot,
                        system,
                        &stack,
                        &OracleDenoiser { truth: t.data },
                        &schedule,
                        &options,
                    )?
                }
                Reconstructor::Identity => {
                    bail!("the identity reconstructor is only meaningful for bench")
                }
            };
            write_cube(&rec.cube, &out)?;
            if let Some(path) = diagnostics {
                write_text(&path, &diagnostics_csv(&rec.diagnostics))?;
            }
            let last = rec.diagnostics.last().map_or(f64::NAN, |d| d.loss);
            Ok(format!(
                "reconstructed {}x{}x{} cube to {} (final loss {last:.3e})",
                rec.cube.rows(),
                rec.cube.cols(),
                rec.cube.bands(),
                out.display()
            ))
        }
        Command::Hdr {
            low,
            high,
            ratio,
            out,
            gamma,
            pitch_um,
        } => {
            let (lo, fw_lo) = read_gray(&low)?;
            let (hi, fw_hi) = read_gray(&high)?;
            if fw_lo != fw_hi {
                bail!("frames disagree on full well ({fw_lo} vs {fw_hi})");
            }
            let response = match gamma {
                None => CameraResponse::Linear,
                Some(g) if g > 0.0 => CameraResponse::Gamma { gamma: g },
                Some(_) => CameraResponse::Gamma {
                    gamma: fit_gamma(lo.view(), hi.view(), ratio, fw_lo)
                        .context("no pixels well exposed in both frames")?,
                },
            };
            let fused = hdr_fuse(lo.view(), hi.view(), ratio, response, fw_lo)?;
            let data: Array3<f64> = fused.radiance.clone().insert_axis(Axis(2));
            write_hsc1(&out, data.view(), &[0.0], pitch_um)?;
            Ok(format!(
                "dynamic range {:.2} dB (single frame {:.2} dB), headroom {:+.2} dB from exposure ratio {ratio}",
                fused.dynamic_range_db,
                fused.single_frame_dynamic_range_db,
                20.0 * ratio.log10()
            ))
        }
        Command::Dolp {
            i3,
            i4,
            out,
            pitch_um,
        } => {
            let (a, _) = read_gray(&i3)?;
            let (b, _) = read_gray(&i4)?;
            let dolp = dolp_hv(a.view(), b.view())?;
            let mean = dolp.mean().unwrap_or(0.0);
            let data: Array3<f64> = dolp.insert_axis(Axis(2));
            write_hsc1(&out, data.view(), &[0.0], pitch_um)?;
            Ok(format!("mean DoLP {mean:.4} written to {}", out.display()))
        }
        Command::Bench {
            config,
            dataset,
            reconstructor,
            seed,
            json,
            csv,
            noiseless,
            min_psnr,
            min_ssim,
            max_sam,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.render.seed);
            let options = BenchmarkOptions {
                guided: cfg.reconstruction,
                noiseless: noiseless || cfg.render.noiseless,
            };
            let report = benchmark_run(
                &dataset,
                &cfg.system,
                Reconstructor::parse(&reconstructor)?,
                seed,
                &options,
            )?;
            if let Some(path) = json {
                write_text(&path, &serde_json::to_string_pretty(&report)?)?;
            }
            if let Some(path) = csv {
                write_text(&path, &report.to_csv())?;
            }
            let failing: Vec<&str> = report
                .scenes
                .iter()
                .filter(|s| {
                    min_psnr.is_some_and(|t| !(s.psnr_db >= t))
                        || min_ssim.is_some_and(|t| !(s.ssim >= t))
                        || max_sam.is_some_and(|t| !(s.sam_rad <= t))
                })
                .map(|s| s.name.as_str())
                .collect();
            if !failing.is_empty() {
                bail!("scenes below threshold: {}", failing.join(", "));
            }
            Ok(format!(
                "{} scenes: PSNR {:.2} dB, SSIM {:.4}, SAM {:.4} rad",
                report.scenes.len(),
                report.mean_psnr_db,
                report.mean_ssim,
                report.mean_sam_rad
            ))
        }
        Command::InterleaveAnalyze { size, seed, json } => {
            let cfg = InterleaveConfig {
                size,
                seed,
                ..InterleaveConfig::default()
            };
            let report = interleave_analysis(&cfg)?;
            if let Some(path) = json {
                let v = serde_json::json!({
                    "size": size,
                    "seed": seed,
                    "regular_peak": report.regular_peak,
                    "random_peak": report.random_peak,
                    "ratio": report.ratio,
                    "design_peak": report.design_peak,
                });
                write_text(&path, &serde_json::to_string_pretty(&v)?)?;
            }
            Ok(format!(
                "regular interleaving spurious peak {:.3e}, random {:.3e}, ratio {:.1}",
                report.regular_peak, report.random_peak, report.ratio
            ))
        }
    }
}
