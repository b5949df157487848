//! Two-dimensional FFT helpers over `ndarray` on top of `rustfft`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

/// Planned forward/inverse transforms for a fixed `(rows, cols)` shape.
///
/// The forward transform is unnormalized; the inverse divides by `rows * cols`
/// so that `inverse(forward(x)) == x`.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.run(data, false);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.run(data, true);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|v| v * scale);
    }

    fn run(&self, data: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); self.rows.max(self.cols)];
        for mut row in data.axis_iter_mut(Axis(0)) {
            match row.as_slice_mut() {
                Some(slice) => row_fft.process(slice),
                None => {
                    let tmp = &mut buf[..self.cols];
                    for (t, v) in tmp.iter_mut().zip(row.iter()) {
                        *t = *v;
                    }
                    row_fft.process(tmp);
                    for (v, t) in row.iter_mut().zip(tmp.iter()) {
                        *v = *t;
                    }
                }
            }
        }
        for mut col in data.axis_iter_mut(Axis(1)) {
            let tmp = &mut buf[..self.rows];
            for (t, v) in tmp.iter_mut().zip(col.iter()) {
                *t = *v;
            }
            col_fft.process(tmp);
            for (v, t) in col.iter_mut().zip(tmp.iter()) {
                *v = *t;
            }
        }
    }
}

/// Planned transforms of real `(rows, cols)` arrays.
///
/// Spectra keep the `cols / 2 + 1` non-redundant columns and are stored
/// transposed, shape `(cols / 2 + 1, rows)`. Normalization matches [`Fft2`].
#[derive(Clone)]
pub struct RealFft2 {
    rows: usize,
    cols: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl RealFft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::new();
        Self {
            rows,
            cols,
            r2c: real.plan_fft_forward(cols),
            c2r: real.plan_fft_inverse(cols),
            col_fwd: complex.plan_fft_forward(rows),
            col_inv: complex.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn spectrum_shape(&self) -> (usize, usize) {
        (self.cols / 2 + 1, self.rows)
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: ArrayView2<'_, f64>) -> Array2<Complex64> {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        let mut spec = Array2::zeros(self.spectrum_shape());
        let mut input = self.r2c.make_input_vec();
        let mut output = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (r, row) in data.axis_iter(Axis(0)).enumerate() {
            for (d, &v) in input.iter_mut().zip(row.iter()) {
                *d = v;
            }
            self.r2c
                .process_with_scratch(&mut input, &mut output, &mut scratch)
                .expect("buffer lengths come from the plan");
            for (k, &v) in output.iter().enumerate() {
                spec[[k, r]] = v;
            }
        }
        self.col_fwd
            .process(spec.as_slice_mut().expect("standard layout"));
        spec
    }

    /// Inverse transform divided by `rows * cols`.
    pub fn inverse(&self, spectrum: Array2<Complex64>) -> Array2<f64> {
        assert_eq!(spectrum.dim(), self.spectrum_shape(), "fft shape mismatch");
        let mut spec = spectrum.as_standard_layout().into_owned();
        self.col_inv
            .process(spec.as_slice_mut().expect("standard layout"));
        let scale = 1.0 / (self.rows * self.cols) as f64;
        let nyquist = self.cols.is_multiple_of(2).then_some(self.cols / 2);
        let mut out = Array2::zeros((self.rows, self.cols));
        let mut input = self.c2r.make_input_vec();
        let mut output = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (k, d) in input.iter_mut().enumerate() {
                *d = spec[[k, r]];
            }
            // Rounding leaves tiny imaginary parts on the self-conjugate bins.
            input[0].im = 0.0;
            if let Some(k) = nyquist {
                input[k].im = 0.0;
            }
            self.c2r
                .process_with_scratch(&mut input, &mut output, &mut scratch)
                .expect("self-conjugate bins are real");
            for (d, &v) in row.iter_mut().zip(output.iter()) {
                *d = v * scale;
            }
        }
        out
    }
}

pub fn fft2(data: &Array2<f64>) -> Array2<Complex64> {
    let (r, c) = data.dim();
    let mut out = data.mapv(|v| Complex64::new(v, 0.0));
    Fft2::new(r, c).forward(&mut out);
    out
}

/// Signed DFT frequency index for bin `k` of an `n`-point transform.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k <= (n - 1) / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Moves the zero-frequency bin to the array center (`n / 2`).
pub fn fftshift<T: Clone>(data: &Array2<T>) -> Array2<T> {
    let (r, c) = data.dim();
    let (sr, sc) = (r / 2, c / 2);
    Array2::from_shape_fn((r, c), |(i, j)| {
        data[[(i + r - sr) % r, (j + c - sc) % c]].clone()
    })
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(data: &Array2<T>) -> Array2<T> {
    let (r, c) = data.dim();
    let (sr, sc) = (r / 2, c / 2);
    Array2::from_shape_fn((r, c), |(i, j)| data[[(i + sr) % r, (j + sc) % c]].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let data = Array2::from_shape_fn((6, 10), |(i, j)| {
            Complex64::new((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64).sin())
        });
        let fft = Fft2::new(6, 10);
        let mut work = data.clone();
        fft.forward(&mut work);
        fft.inverse(&mut work);
        for (a, b) in work.iter().zip(data.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn real_transform_matches_complex() {
        for (rows, cols) in [(6, 10), (5, 7), (1, 4)] {
            let data = Array2::from_shape_fn((rows, cols), |(i, j)| ((i * 7 + j * 3) as f64).sin());
            let full = fft2(&data);
            let fft = RealFft2::new(rows, cols);
            let half = fft.forward(data.view());
            assert_eq!(half.dim(), (cols / 2 + 1, rows));
            for ((k, r), v) in half.indexed_iter() {
                assert!((v - full[[r, k]]).norm() < 1e-12, "{r},{k}");
            }
            let back = fft.inverse(half);
            for (a, b) in back.iter().zip(data.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut data = Array2::zeros((4, 4));
        data[[0, 0]] = 1.0;
        let spec = fft2(&data);
        assert!(spec
            .iter()
            .all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn shift_pair_inverts() {
        let data = Array2::from_shape_fn((5, 4), |(i, j)| i * 4 + j);
        assert_eq!(ifftshift(&fftshift(&data)), data);
        assert_eq!(fftshift(&data)[[2, 2]], 0);
        assert_eq!(signed_index(3, 5), -2);
        assert_eq!(signed_index(2, 5), 2);
        assert_eq!(signed_index(2, 4), -2);
    }
}
