//! Band structure of 1-periodic Sturm-Liouville operators on the line and
//! eigenvalues emerging from band edges under small localized perturbations.
//!
//! The library computes the Hill discriminant and band edges of
//! -(p u')' + q u with 1-periodic coefficients, builds the Floquet solutions
//! and Green operators near a non-degenerate band edge, and for a localized
//! (possibly non-symmetric) perturbation of strength epsilon decides whether
//! an eigenvalue bifurcates into the adjacent gap, with second-order
//! asymptotics and an eigenfunction profile. A finite-difference truncation
//! of the full-line problem serves as an independent cross-check.

pub mod band;
pub mod coeffs;
pub mod config;
pub mod error;
pub mod floquet;
pub mod func;
pub mod gap;
pub mod ode;
pub mod oracle;
pub mod perturbation;
pub mod quad;
pub mod report;

pub use coeffs::{OperatorCoefficients, PiecewisePeriodicFn, SegmentDescriptor};
pub use error::{Result, SpectralError};
