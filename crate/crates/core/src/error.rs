use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative radiance {value} at (row {row}, col {col}, band {band})")]
    NegativeRadiance {
        row: usize,
        col: usize,
        band: usize,
        value: f64,
    },
    #[error("cube has {cube_bands} bands but its spectral grid has {grid_bands}")]
    BandMismatch {
        cube_bands: usize,
        grid_bands: usize,
    },
    #[error("non-finite value at (row {row}, col {col}, band {band})")]
    NonFinite { row: usize, col: usize, band: usize },
    #[error("target wavelength {wavelength_nm} nm lies outside the source coverage [{min_nm}, {max_nm}] nm")]
    OutOfBand {
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },
    #[error("invalid spectral grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("phase step of {step_rad:.3} rad per sample aliases (must stay below pi)")]
    AliasedProfile { step_rad: f64 },
    #[error("profile has no integer period along its deflection axis")]
    NonPeriodic,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("regular interleaving needs exactly 4 profiles, got {0}")]
    WrongChannelCount(usize),
    #[error("nanocell library is empty")]
    EmptyLibrary,
    #[error("design wavelength {0} nm is not sampled by the nanocell library")]
    DesignWavelengthMissing(f64),

    #[error("field undersampled: band limit {band_limit:.4} does not exceed required direction sine {required:.4}")]
    UndersampledField { band_limit: f64, required: f64 },
    #[error("plane has no positive energy")]
    EmptyPlane,

    #[error("spectral grid of the cube does not match the system grid")]
    GridMismatch,

    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("homography is singular")]
    SingularHomography,
    #[error("reference energy is zero at {0} nm")]
    ZeroReference(f64),

    #[error("point spread function has zero sum")]
    ZeroPsf,
    #[error("every pixel is saturated in every frame")]
    AllSaturated,

    #[error("image of {rows}x{cols} is smaller than the 11x11 SSIM window")]
    ImageTooSmall { rows: usize, cols: usize },
    #[error("dataset directory {0} contains no cubes")]
    EmptyDataset(PathBuf),
    #[error("cannot read cube {path}: {reason}")]
    UnreadableCube { path: PathBuf, reason: String },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
