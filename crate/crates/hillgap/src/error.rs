use thiserror::Error;

/// Errors produced by the spectral routines.
#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("coefficient p is non-positive at x = {x} (p = {value})")]
    NonPositiveP { x: f64, value: f64 },
    #[error("p(0) = {value}, expected 1 within 1e-12")]
    PNotNormalized { value: f64 },
    #[error("adaptive step fell below 1e-14 at x = {x}")]
    StepUnderflow { x: f64 },
    #[error("monodromy determinant drifted from 1 by {residual:e}")]
    WronskianDrift { residual: f64 },
    #[error("function grid is not contained in the evaluation grid")]
    GridMismatch,
    #[error("band-edge scan inconsistent with edge interleaving; refine the scan step")]
    ScanTooCoarse,
    #[error("operation requires a non-degenerate band edge")]
    DegenerateEdge,
    #[error("k = 0 requested; use the edge Green operator instead")]
    KZero,
    #[error("|k| too large for the edge expansion")]
    KTooLarge,
    #[error("lambda lies on the spectrum or too close to a band edge")]
    OnSpectrum,
    #[error("lambda within 1e-6 of a degenerate-lacuna point; evaluation refused")]
    DegenerateLacunaPoint,
    #[error("collocation matrix singular within 1e-12; epsilon too large")]
    NotInvertible,
    #[error("fixed-point iteration for the k-equation failed to converge in {iters} iterations")]
    NoConvergence { iters: usize },
    #[error("Re k <= 0: eigenfunction tail would not decay")]
    NonDecaying,
    #[error("input function lacks the required derivative channel")]
    MissingDerivativeChannel,
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("window touches the discretized essential-spectrum bands")]
    WindowTouchesBand,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, SpectralError>;
