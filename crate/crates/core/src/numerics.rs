//! Numerical tolerances shared by every module.

/// Maximum entry of `A - A†` accepted for a Hermitian operator.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Maximum entry of `U†U - I` accepted for a propagator.
pub const UNITARY_TOL: f64 = 1e-10;

/// Maximum entry error of `V diag(λ) V†` against the decomposed operator.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;

/// Accepted `|Tr ρ - 1|`.
pub const TRACE_TOL: f64 = 1e-12;

/// Lowest eigenvalue accepted for a density matrix.
pub const PSD_TOL: f64 = -1e-10;

/// Largest imaginary part of an expectation value that is silently dropped.
pub const EXPECTATION_IMAG_TOL: f64 = 1e-10;

/// Slack when comparing sample times (seconds).
pub const TIME_TOL: f64 = 1e-9;
