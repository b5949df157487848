//! Frequency-domain Wiener deconvolution of single image planes.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::render::fast_len;

/// Deconvolves `image` by `psf` (center sample `(n/2, n/2)`) with filter `H* / (|H|^2 + nsr)`.
///
/// The image is edge-replicated by the PSF size before the circular transform.
pub fn wiener_deconvolve(
    image: ArrayView2<'_, f64>,
    psf: ArrayView2<'_, f64>,
    nsr: f64,
) -> Result<Array2<f64>> {
    if !(nsr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise-to-signal ratio must be positive, got {nsr}"
        )));
    }
    let total = psf.sum();
    if !(total.abs() > 0.0) || !total.is_finite() {
        return Err(Error::ZeroPsf);
    }
    let (rows, cols) = image.dim();
    let (pr, pc) = psf.dim();
    let (mr, mc) = (pr, pc);
    let shape = (fast_len(rows + 2 * mr), fast_len(cols + 2 * mc));
    let fft = Fft2::new(shape.0, shape.1);

    let mut buf = Array2::from_shape_fn(shape, |(r, c)| {
        let sr = (r as i64 - mr as i64).clamp(0, rows as i64 - 1) as usize;
        let sc = (c as i64 - mc as i64).clamp(0, cols as i64 - 1) as usize;
        Complex64::new(image[[sr, sc]], 0.0)
    });
    fft.forward(&mut buf);

    let mut h = Array2::<Complex64>::zeros(shape);
    for ((i, j), &v) in psf.indexed_iter() {
        let r = (i as i64 - (pr / 2) as i64).rem_euclid(shape.0 as i64) as usize;
        let c = (j as i64 - (pc / 2) as i64).rem_euclid(shape.1 as i64) as usize;
        h[[r, c]] += Complex64::new(v / total, 0.0);
    }
    fft.forward(&mut h);

    ndarray::Zip::from(&mut buf)
        .and(&h)
        .for_each(|x, &h| *x *= h.conj() / (h.norm_sqr() + nsr));
    fft.inverse(&mut buf);
    Ok(buf.slice(s![mr..mr + rows, mc..mc + cols]).mapv(|v| v.re))
}

/// `sigma^2 / var(image)`, floored to keep the filter well defined.
pub fn estimate_nsr(image: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    let n = image.len().max(1) as f64;
    let mean = image.sum() / n;
    let var = image.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        (sigma * sigma / var).max(1e-12)
    } else {
        1.0
    }
}
