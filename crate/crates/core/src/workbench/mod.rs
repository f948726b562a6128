//! Experiment presets, synthetic data and field calibration.

pub mod io;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{sample_times, Ensemble, QuadratureSpec, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{CouplingPair, FitProblem, FitWindow, SimOptions};
use crate::quantum::Axis;
use crate::spin::{apply_pulse_y90, thermal_state, ChainConfig, DensityMatrix};

/// Transverse field used in every experiment (Hz).
pub const RF_FIELD_HZ: f64 = 27.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Fields on all spins, thermal start.
    Case1,
    /// Field off on spin 1, which starts tipped onto x.
    Case2,
    /// Field on spin 1 only.
    Calibration,
    /// Case 1 without relaxation or inhomogeneity.
    Ideal,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Case1,
        ScenarioKind::Case2,
        ScenarioKind::Calibration,
        ScenarioKind::Ideal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Case1 => "case1",
            ScenarioKind::Case2 => "case2",
            ScenarioKind::Calibration => "calibration",
            ScenarioKind::Ideal => "ideal",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    Thermal,
    /// Thermal, then a y-axis π/2 pulse on spin 1.
    Spin1TippedToX,
}

/// An experiment preset. Everything follows from `kind`; fields may be
/// overridden afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub fields_hz: [f64; 3],
    pub initial: InitialState,
    pub dt: f64,
    pub t_end: f64,
}

/// A scenario applied to a chain: the chain with the scenario's fields and
/// the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub config: ChainConfig,
    pub rho0: DensityMatrix,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        let f = RF_FIELD_HZ;
        let (fields_hz, initial, dt) = match kind {
            ScenarioKind::Case1 | ScenarioKind::Ideal => ([f, f, f], InitialState::Thermal, 0.002),
            ScenarioKind::Case2 => ([0.0, f, f], InitialState::Spin1TippedToX, 0.002),
            ScenarioKind::Calibration => ([f, 0.0, 0.0], InitialState::Thermal, 0.004),
        };
        Scenario {
            kind,
            fields_hz,
            initial,
            dt,
            t_end: 0.6,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        sample_times(self.t_end, self.dt)
    }

    pub fn initial_state(&self, polarization: f64) -> Result<DensityMatrix> {
        let thermal = thermal_state(polarization)?;
        match self.initial {
            InitialState::Thermal => Ok(thermal),
            InitialState::Spin1TippedToX => apply_pulse_y90(&thermal, 1),
        }
    }

    /// Apply to a base chain. The ideal preset also switches off relaxation
    /// and inhomogeneity.
    pub fn prepare(&self, base: &ChainConfig) -> Result<Prepared> {
        base.validate()?;
        let mut config = base.clone().with_fields(self.fields_hz);
        if self.kind == ScenarioKind::Ideal {
            config = config.idealized();
        }
        Ok(Prepared {
            rho0: self.initial_state(config.polarization)?,
            config,
        })
    }
}

pub fn scenario_case1(config: &ChainConfig) -> Result<(DensityMatrix, [f64; 3])> {
    let s = Scenario::new(ScenarioKind::Case1);
    Ok((s.initial_state(config.polarization)?, s.fields_hz))
}

pub fn scenario_case2(config: &ChainConfig) -> Result<(DensityMatrix, [f64; 3])> {
    let s = Scenario::new(ScenarioKind::Case2);
    Ok((s.initial_state(config.polarization)?, s.fields_hz))
}

pub fn scenario_calibration(config: &ChainConfig) -> Result<(DensityMatrix, [f64; 3])> {
    let s = Scenario::new(ScenarioKind::Calibration);
    Ok((s.initial_state(config.polarization)?, s.fields_hz))
}

/// Additive white Gaussian noise on every sample of every component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(NoiseSpec { sigma, seed })
    }

    /// Adds noise in sample order, x then y then z per sample.
    pub fn apply(&self, traj: &mut Trajectory) -> Result<()> {
        if self.sigma == 0.0 {
            return Ok(());
        }
        let normal = Normal::new(0.0, self.sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for i in 0..traj.len() {
            traj.mx[i] += normal.sample(&mut rng);
            traj.my[i] += normal.sample(&mut rng);
            traj.mz[i] += normal.sample(&mut rng);
        }
        Ok(())
    }
}

/// Ensemble trajectory of `scenario` at `truth`, plus seeded noise.
pub fn synthesize_data(
    scenario: &Scenario,
    truth: CouplingPair,
    noise: NoiseSpec,
    base: &ChainConfig,
    quadrature: QuadratureSpec,
) -> Result<Trajectory> {
    let prepared = scenario.prepare(base)?;
    let mut traj = Ensemble::new(quadrature, prepared.config.sigma_rel)?.simulate(
        &prepared.config,
        truth,
        &prepared.rho0,
        &scenario.times()?,
    )?;
    noise.apply(&mut traj)?;
    Ok(traj)
}

/// Fitted inhomogeneity width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma_rel: f64,
    pub distance: f64,
}

/// Scan range and step of the calibration fit.
pub const CALIBRATION_SCAN: (f64, f64, f64) = (0.0, 0.15, 0.005);

/// Fit `sigma_rel` to calibration-scenario data: a scan over
/// [`CALIBRATION_SCAN`] then golden-section polish around the best point.
/// All three components over the whole record enter the distance; T2 and
/// couplings stay at their configured values.
pub fn calibrate(
    data: &Trajectory,
    base: &ChainConfig,
    quadrature: QuadratureSpec,
) -> Result<Calibration> {
    let prepared = Scenario::new(ScenarioKind::Calibration).prepare(base)?;
    let window = FitWindow::new(
        *data
            .times
            .last()
            .ok_or_else(|| Error::invalid("empty data"))?,
    )?;
    let options = SimOptions {
        quadrature,
        amplitude_fit: false,
        parallel: false,
    };
    let couplings = prepared.config.couplings;
    let objective = |sigma_rel: f64| -> Result<f64> {
        let cfg = ChainConfig {
            sigma_rel,
            ..prepared.config.clone()
        };
        FitProblem::new(data, &cfg, &prepared.rho0, &Axis::ALL, window, options)?
            .objective(couplings)
    };

    let (lo, hi, step) = CALIBRATION_SCAN;
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (lo, objective(lo)?);
    for i in 1..=n {
        let s = lo + i as f64 * step;
        let d = objective(s)?;
        if d < best.1 {
            best = (s, d);
        }
    }

    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (objective(c)?, objective(d)?);
    while b - a > 1e-5 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = objective(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let fm = objective(mid)?;
    Ok(if fm < best.1 {
        Calibration {
            sigma_rel: mid,
            distance: fm,
        }
    } else {
        Calibration {
            sigma_rel: best.0,
            distance: best.1,
        }
    })
}
