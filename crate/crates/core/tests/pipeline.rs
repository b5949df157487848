use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metaspectra::calibration::{estimate_homography, warp_image, Homography};
use metaspectra::io::{
    read_cube, read_psf_file, read_subimage, write_cube, write_psf_stack, write_subimage,
};
use metaspectra::metrics::{benchmark_run, dataset_files, BenchmarkOptions, Reconstructor};
use metaspectra::propagation::psf_stack;
use metaspectra::reconstruction::{
    reconstruct_guided, DiffusionSchedule, GuidedOptions, OracleDenoiser,
};
use metaspectra::render::{render_snapshot_with, Snapshot};
use metaspectra::{Error, HyperspectralCube, SensorModel, SpectralGrid, SystemConfig};

fn small_system() -> SystemConfig {
    let mut sys = SystemConfig::prototype();
    sys.sensor = SensorModel::mono(&sys.grid);
    sys.sensor.exposure_s = 0.01;
    sys.psf_size = 32;
    sys
}

fn random_cube(grid: &SpectralGrid, rows: usize, cols: usize, seed: u64) -> HyperspectralCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data =
        Array3::from_shape_simple_fn((rows, cols, grid.len()), || rng.random_range(0.0..1.0));
    HyperspectralCube::new(data, grid.clone(), 2.0).unwrap()
}

#[test]
fn psf_file_preserves_planes_and_metadata() {
    let sys = small_system();
    let stack = psf_stack(&sys).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("psf.bin");
    write_psf_stack(&stack, &path).unwrap();
    let back = read_psf_file(&path).unwrap();
    assert_eq!(back.channel_indices, stack.channel_indices);
    assert_eq!(back.wavelengths_nm, stack.grid.wavelengths());
    assert_eq!(back.psfs.dim(), stack.psfs.dim());
    let err = back
        .psfs
        .iter()
        .zip(stack.psfs.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(err < 1e-7, "{err}");
}

#[test]
fn exported_images_drive_reconstruction() {
    let sys = small_system();
    let stack = psf_stack(&sys).unwrap();
    let truth = random_cube(&sys.grid, 12, 12, 4);
    let snap = render_snapshot_with(&truth, &stack, &sys, true, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sub_images = snap
        .sub_images
        .iter()
        .map(|sub| {
            let path = dir.path().join(format!("sub_{}.pgm", sub.channel_index));
            write_subimage(sub, &path).unwrap();
            read_subimage(&path).unwrap()
        })
        .collect();
    let loaded = Snapshot {
        sub_images,
        seed: 1,
    };
    let opts = GuidedOptions {
        steps: 5,
        guidance_iters: 2,
        ..GuidedOptions::default()
    };
    let oracle = OracleDenoiser {
        truth: truth.data.clone(),
    };
    let rec = reconstruct_guided(
        &loaded,
        &sys,
        &stack,
        &oracle,
        &DiffusionSchedule::default(),
        &opts,
    )
    .unwrap();
    let out = dir.path().join("rec.hsc");
    write_cube(&rec.cube, &out).unwrap();
    let back = read_cube(&out).unwrap();
    // 16-bit quantization of the exported images bounds the achievable error
    let err = (&back.data - &truth.data)
        .mapv(f64::abs)
        .fold(0.0f64, |m, &v| m.max(v));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn warping_undoes_a_known_shift() {
    let img = ndarray::Array2::from_shape_fn((40, 40), |(r, c)| {
        ((r as f64 * 0.3).sin() + (c as f64 * 0.2).cos()).abs()
    });
    let pairs: Vec<([f64; 2], [f64; 2])> = [
        [5.0, 5.0],
        [30.0, 6.0],
        [8.0, 31.0],
        [28.0, 29.0],
        [17.0, 13.0],
    ]
    .iter()
    .map(|&p| (p, [p[0] + 3.0, p[1] - 2.0]))
    .collect();
    let h = estimate_homography(&pairs, false).unwrap();
    let expected = Homography::translation(3.0, -2.0);
    for (a, b) in h.to_row_major().iter().zip(expected.to_row_major()) {
        assert!((a - b).abs() < 1e-9);
    }
    let warped = warp_image(img.view(), &h).unwrap();
    assert!((warped.image[[10, 10]] - img[[12, 7]]).abs() < 1e-12);
    assert!(!warped.valid[[39, 0]] && warped.valid[[0, 39]]);
}

#[test]
fn benchmark_is_deterministic_and_reads_every_cube() {
    let sys = small_system();
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["b.hsc", "a.hsc"].iter().enumerate() {
        write_cube(
            &random_cube(&SpectralGrid::visible(), 12, 12, i as u64),
            &dir.path().join(name),
        )
        .unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let files = dataset_files(dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    assert!(files[0].ends_with("a.hsc"));

    let identity = benchmark_run(
        dir.path(),
        &sys,
        Reconstructor::Identity,
        0,
        &BenchmarkOptions::default(),
    )
    .unwrap();
    assert!(identity.mean_psnr_db.is_infinite());
    assert_eq!(identity.mean_ssim, 1.0);
    assert_eq!(identity.mean_sam_rad, 0.0);

    let options = BenchmarkOptions {
        guided: GuidedOptions {
            steps: 4,
            guidance_iters: 2,
            ..GuidedOptions::default()
        },
        noiseless: false,
    };
    let first = benchmark_run(dir.path(), &sys, Reconstructor::Smoother, 3, &options).unwrap();
    let second = benchmark_run(dir.path(), &sys, Reconstructor::Smoother, 3, &options).unwrap();
    assert_eq!(
        serde_json::to_string(&first).unwrap(),
        serde_json::to_string(&second).unwrap()
    );
    assert_eq!(first.scenes[0].name, "a");
    assert!(first.mean_psnr_db.is_finite());

    let oracle = benchmark_run(
        dir.path(),
        &sys,
        Reconstructor::Oracle,
        3,
        &BenchmarkOptions {
            noiseless: true,
            ..options
        },
    )
    .unwrap();
    assert!(oracle.mean_psnr_db > 40.0, "{}", oracle.mean_psnr_db);
}

#[test]
fn dataset_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let sys = small_system();
    assert!(matches!(
        benchmark_run(
            dir.path(),
            &sys,
            Reconstructor::Identity,
            0,
            &BenchmarkOptions::default()
        ),
        Err(Error::EmptyDataset(_))
    ));
    std::fs::write(dir.path().join("broken.hsc"), b"HSC1").unwrap();
    assert!(matches!(
        benchmark_run(
            dir.path(),
            &sys,
            Reconstructor::Identity,
            0,
            &BenchmarkOptions::default()
        ),
        Err(Error::UnreadableCube { .. })
    ));
}
