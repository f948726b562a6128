//! Simulation and coupling estimation for a three-spin Ising chain probed
//! through its first spin.
//!
//! The chain evolves under site-dependent transverse fields and nearest
//! neighbour zz couplings, loses transverse coherence through a dephasing
//! channel, and sees an rf-field that is Gaussian-distributed over the
//! sample. The [`estimator`] recovers `(J12, J23)` by least-squares fitting
//! of the spin-1 magnetization over a coupling grid.

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod numerics;
pub mod quantum;
pub mod spin;
pub mod workbench;

pub use dynamics::{QuadratureSpec, Trajectory};
pub use error::{Error, Result};
pub use estimator::{CouplingPair, DistanceSurface, EstimateResult, FitWindow, GridSpec};
pub use quantum::{Axis, Operator, Spectrum};
pub use spin::{ChainConfig, DensityMatrix};
pub use workbench::{NoiseSpec, Scenario, ScenarioKind};
