//! Two-frame exposure fusion and horizontal/vertical polarization contrast.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Denominator floor of [`dolp_hv`].
pub const DOLP_FLOOR: f64 = 1e-6;

/// Log-inverse camera response `g(z) = ln(E t)` for normalized pixel values `z`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CameraResponse {
    #[default]
    Linear,
    /// `z = (E t)^(1 / gamma)`.
    Gamma { gamma: f64 },
}

impl CameraResponse {
    pub fn log_exposure(&self, z: f64) -> f64 {
        match *self {
            Self::Linear => z.ln(),
            Self::Gamma { gamma } => gamma * z.ln(),
        }
    }
}

fn hat(z: f64) -> f64 {
    z.min(1.0 - z).max(0.0)
}

/// Fused radiance and dynamic-range figures of a two-frame bracket.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrFusion {
    /// Radiance in units of the dim frame's normalized signal per unit exposure.
    pub radiance: Array2<f64>,
    /// False where both frames are saturated or both carry no signal.
    pub valid: Array2<bool>,
    pub dynamic_range_db: f64,
    /// Dynamic range of the bright frame alone.
    pub single_frame_dynamic_range_db: f64,
    pub additional_dynamic_range_db: f64,
}

/// `20 log10(max / min)` over positive values.
pub fn dynamic_range_db(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values
        .filter(|v| *v > 0.0 && v.is_finite())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if hi > 0.0 {
        20.0 * (hi / lo).log10()
    } else {
        0.0
    }
}

/// Fuses a dim frame (exposure 1) and a bright frame (exposure `exposure_ratio`).
///
/// Pixel values are normalized by `full_well` and weighted by `min(z, 1 - z)`.
pub fn hdr_fuse(
    low: ArrayView2<'_, f64>,
    high: ArrayView2<'_, f64>,
    exposure_ratio: f64,
    response: CameraResponse,
    full_well: f64,
) -> Result<HdrFusion> {
    if !(exposure_ratio > 0.0) || !(full_well > 0.0) {
        return Err(Error::InvalidConfig(
            "exposure ratio and full well must be positive".into(),
        ));
    }
    if low.dim() != high.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            low.dim(),
            high.dim()
        )));
    }
    let ln_t = [0.0, exposure_ratio.ln()];
    let mut radiance = Array2::zeros(low.dim());
    let mut valid = Array2::from_elem(low.dim(), false);
    Zip::from(&mut radiance)
        .and(&mut valid)
        .and(&low)
        .and(&high)
        .for_each(|e, ok, &zl, &zh| {
            let (mut num, mut den) = (0.0, 0.0);
            for (z, lt) in [(zl / full_well, ln_t[0]), (zh / full_well, ln_t[1])] {
                let w = hat(z);
                if w > 0.0 {
                    num += w * (response.log_exposure(z) - lt);
                    den += w;
                }
            }
            if den > 0.0 {
                *e = (num / den).exp();
                *ok = true;
            }
        });
    if !valid.iter().any(|&v| v) {
        return Err(Error::AllSaturated);
    }
    let fused_dr = dynamic_range_db(
        radiance
            .iter()
            .zip(valid.iter())
            .filter(|(_, &ok)| ok)
            .map(|(&e, _)| e),
    );
    let single_dr = dynamic_range_db(
        high.iter()
            .map(|&z| z / full_well)
            .filter(|&z| hat(z) > 0.0)
            .map(|z| (response.log_exposure(z) - ln_t[1]).exp()),
    );
    Ok(HdrFusion {
        radiance,
        valid,
        dynamic_range_db: fused_dr,
        single_frame_dynamic_range_db: single_dr,
        additional_dynamic_range_db: fused_dr - single_dr,
    })
}

/// Gamma of a `z = (E t)^(1 / gamma)` response from a registered bracket.
///
/// Uses pixels well exposed in both frames; `None` when there are none.
pub fn fit_gamma(
    low: ArrayView2<'_, f64>,
    high: ArrayView2<'_, f64>,
    exposure_ratio: f64,
    full_well: f64,
) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (&zl, &zh) in low.iter().zip(high.iter()) {
        let (zl, zh) = (zl / full_well, zh / full_well);
        if (0.05..0.95).contains(&zl) && (0.05..0.95).contains(&zh) {
            sum += zh.ln() - zl.ln();
            n += 1;
        }
    }
    (n > 0 && sum > 0.0).then(|| exposure_ratio.ln() / (sum / n as f64))
}

/// `|I3 - I4| / max(I3 + I4, eps)`.
pub fn dolp_hv(i3: ArrayView2<'_, f64>, i4: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if i3.dim() != i4.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            i3.dim(),
            i4.dim()
        )));
    }
    Ok(Zip::from(&i3)
        .and(&i4)
        .map_collect(|&a, &b| ((a - b).abs() / (a + b).max(DOLP_FLOOR)).min(1.0)))
}
