//! The three-spin chain: parameters, Hamiltonian, initial states and the
//! transverse-relaxation channel.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::SMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::CouplingPair;
use crate::numerics::{HERMITIAN_TOL, PSD_TOL, TRACE_TOL};
use crate::quantum::{
    eig_hermitian, embed_site, expectation, pauli, spin_operator, Axis, Operator,
};

pub const N_SITES: usize = 3;
pub const DIM: usize = 8;

/// Physical parameters of the chain. Frequencies are cyclic (Hz); the
/// conversion to rad/s happens only in [`build_hamiltonian`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile", into = "ConfigFile")]
pub struct ChainConfig {
    /// Transverse-field amplitudes `ω_1i / 2π`.
    pub omega1_hz: [f64; 3],
    pub couplings: CouplingPair,
    /// Transverse relaxation times per spin.
    pub t2_s: [f64; 3],
    /// Width of the field-amplitude distribution relative to its mean.
    pub sigma_rel: f64,
    /// Per-spin thermal polarization; `M_z = p/2` at equilibrium.
    pub polarization: f64,
}

/// On-disk layout of [`ChainConfig`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    omega1_hz: [f64; 3],
    j12_hz: f64,
    j23_hz: f64,
    t2_s: [f64; 3],
    sigma_rel: f64,
    polarization: f64,
}

impl TryFrom<ConfigFile> for ChainConfig {
    type Error = Error;

    fn try_from(f: ConfigFile) -> Result<Self> {
        let cfg = ChainConfig {
            omega1_hz: f.omega1_hz,
            couplings: CouplingPair::new(f.j12_hz, f.j23_hz),
            t2_s: f.t2_s,
            sigma_rel: f.sigma_rel,
            polarization: f.polarization,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ChainConfig> for ConfigFile {
    fn from(c: ChainConfig) -> Self {
        ConfigFile {
            omega1_hz: c.omega1_hz,
            j12_hz: c.couplings.j12,
            j23_hz: c.couplings.j23,
            t2_s: c.t2_s,
            sigma_rel: c.sigma_rel,
            polarization: c.polarization,
        }
    }
}

impl Default for ChainConfig {
    /// Carboxyl/alpha/methyl carbons of 13C-alanine.
    fn default() -> Self {
        ChainConfig {
            omega1_hz: [27.0, 27.0, 27.0],
            couplings: CouplingPair::new(53.8, 34.8),
            t2_s: [0.45, 0.23, 0.63],
            sigma_rel: 0.05,
            polarization: 1.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let hz = self
            .omega1_hz
            .iter()
            .chain([&self.couplings.j12, &self.couplings.j23]);
        if hz.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "field and coupling frequencies must be finite",
            ));
        }
        if self.t2_s.iter().any(|&t| !(t > 0.0) || t.is_nan()) {
            return Err(Error::invalid(format!(
                "T2 values must be > 0, got {:?}",
                self.t2_s
            )));
        }
        if !(self.sigma_rel >= 0.0) || !self.sigma_rel.is_finite() {
            return Err(Error::invalid(format!(
                "sigma_rel must be >= 0, got {}",
                self.sigma_rel
            )));
        }
        if !(0.0..=1.0).contains(&self.polarization) {
            return Err(Error::invalid(format!(
                "polarization must lie in [0, 1], got {}",
                self.polarization
            )));
        }
        Ok(())
    }

    pub fn with_fields(mut self, omega1_hz: [f64; 3]) -> Self {
        self.omega1_hz = omega1_hz;
        self
    }

    pub fn with_couplings(mut self, couplings: CouplingPair) -> Self {
        self.couplings = couplings;
        self
    }

    /// Relaxation and inhomogeneity switched off.
    pub fn idealized(mut self) -> Self {
        self.t2_s = [IDEAL_T2_S; 3];
        self.sigma_rel = 0.0;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    /// Reads JSON when the extension is `.json`, TOML otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if is_json(path) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = if is_json(path) {
            self.to_json_string()
        } else {
            self.to_toml_string()
        };
        crate::workbench::io::write_atomic(path, text.as_bytes())
    }
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// T2 that switches relaxation off: `e^{-t/T2}` is exactly 1.
pub const IDEAL_T2_S: f64 = f64::INFINITY;

/// Unit-trace Hermitian state of the three spins.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    /// Checks Hermiticity and trace; positivity is checked by
    /// [`DensityMatrix::validate`].
    pub fn new(op: Operator) -> Result<Self> {
        if op.dim() != DIM {
            return Err(Error::DimensionMismatch {
                expected: DIM,
                found: op.dim(),
            });
        }
        let herm = op.hermitian_residual();
        if herm >= HERMITIAN_TOL {
            return Err(Error::numerical(format!(
                "density matrix not Hermitian (residual {herm:e})"
            )));
        }
        let tr = op.trace();
        if (tr - C64::new(1.0, 0.0)).norm() >= TRACE_TOL {
            return Err(Error::numerical(format!("density matrix trace is {tr}")));
        }
        Ok(DensityMatrix(op))
    }

    pub(crate) fn new_unchecked(op: Operator) -> Self {
        DensityMatrix(op)
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Operator::identity(DIM).scale(1.0 / DIM as f64))
    }

    pub fn operator(&self) -> &Operator {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eig_hermitian(&self.0)?.eigenvalues[0])
    }

    /// Full check including positivity.
    pub fn validate(&self) -> Result<()> {
        DensityMatrix::new(self.0.clone())?;
        let min = self.min_eigenvalue()?;
        if min < PSD_TOL {
            return Err(Error::numerical(format!(
                "density matrix has negative eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    /// `⟨I_axis⟩` of `site`.
    pub fn spin_expectation(&self, axis: Axis, site: usize) -> Result<f64> {
        expectation(&self.0, &spin_operator(axis, site, N_SITES)?)
    }

    /// `U ρ U†`.
    pub fn conjugate(&self, u: &Operator) -> DensityMatrix {
        DensityMatrix(&(u * &self.0) * &u.dagger())
    }
}

struct HamiltonianTerms {
    ix: [Operator; 3],
    zz12: Operator,
    zz23: Operator,
}

fn terms() -> &'static HamiltonianTerms {
    static TERMS: OnceLock<HamiltonianTerms> = OnceLock::new();
    TERMS.get_or_init(|| {
        let ix = |s| spin_operator(Axis::X, s, N_SITES).expect("valid site");
        let iz = |s| spin_operator(Axis::Z, s, N_SITES).expect("valid site");
        HamiltonianTerms {
            ix: [ix(1), ix(2), ix(3)],
            zz12: &iz(1) * &iz(2),
            zz23: &iz(2) * &iz(3),
        }
    })
}

/// Rotating-frame Hamiltonian in rad/s:
/// `2π [ s (ν11 Ix¹ + ν12 Ix² + ν13 Ix³) + J12 Iz¹Iz² + J23 Iz²Iz³ ]`
/// with all `ν`, `J` taken in Hz and `s` the field scale.
pub fn build_hamiltonian(
    config: &ChainConfig,
    couplings: CouplingPair,
    field_scale: f64,
) -> Result<Operator> {
    // Wide distributions put far Gauss-Hermite nodes below zero; a negative
    // scale is still a point of the Gaussian over field amplitudes.
    if !field_scale.is_finite() {
        return Err(Error::invalid(format!(
            "field scale must be finite, got {field_scale}"
        )));
    }
    let t = terms();
    let mut h = Operator::zeros(DIM);
    for (ix, &nu) in t.ix.iter().zip(config.omega1_hz.iter()) {
        h = &h + &ix.scale(TAU * field_scale * nu);
    }
    h = &h + &t.zz12.scale(TAU * couplings.j12);
    h = &h + &t.zz23.scale(TAU * couplings.j23);
    let residual = h.hermitian_residual();
    if residual >= HERMITIAN_TOL {
        return Err(Error::numerical(format!(
            "assembled Hamiltonian is not Hermitian (residual {residual:e})"
        )));
    }
    Ok(h)
}

/// Half the Hilbert space: one eigenspace of the global flip `X⊗X⊗X`.
pub const BLOCK: usize = DIM / 2;

type R8 = SMatrix<f64, DIM, DIM>;
type R4 = SMatrix<f64, BLOCK, BLOCK>;

/// Orthogonal `Q` whose first four columns span the `+1` eigenspace of
/// `X⊗X⊗X` and last four the `-1` eigenspace. Every Hamiltonian term
/// commutes with the flip, so `Qᵀ H Q` is block diagonal.
///
/// Columns are Hadamard-transformed basis states: `H⊗3` maps the flip to
/// `Z⊗Z⊗Z`, whose sectors are the even and odd bit counts.
pub fn parity_basis() -> &'static R8 {
    static Q: OnceLock<R8> = OnceLock::new();
    Q.get_or_init(|| {
        let mut states: Vec<usize> = (0..DIM).collect();
        states.sort_by_key(|s| s.count_ones() % 2);
        R8::from_fn(|r, c| {
            let sign = if (r & states[c]).count_ones() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            sign / (DIM as f64).sqrt()
        })
    })
}

/// The two diagonal blocks of `Qᵀ H Q` (see [`parity_basis`]) for the
/// Hamiltonian of [`build_hamiltonian`].
pub fn hamiltonian_parity_blocks(
    config: &ChainConfig,
    couplings: CouplingPair,
    field_scale: f64,
) -> Result<[R4; 2]> {
    if !field_scale.is_finite() {
        return Err(Error::invalid(format!(
            "field scale must be finite, got {field_scale}"
        )));
    }
    // Per term: [even block, odd block].
    type Blocks = [[R4; 2]; 5];
    static TERMS: OnceLock<Blocks> = OnceLock::new();
    let terms = TERMS.get_or_init(|| {
        let q = parity_basis();
        let t = terms();
        let block = |op: &Operator| {
            let m = q.transpose() * R8::from_fn(|r, c| op.get(r, c).re) * q;
            [
                m.fixed_view::<BLOCK, BLOCK>(0, 0).into_owned(),
                m.fixed_view::<BLOCK, BLOCK>(BLOCK, BLOCK).into_owned(),
            ]
        };
        [
            block(&t.ix[0]),
            block(&t.ix[1]),
            block(&t.ix[2]),
            block(&t.zz12),
            block(&t.zz23),
        ]
    });
    let coeffs = [
        TAU * field_scale * config.omega1_hz[0],
        TAU * field_scale * config.omega1_hz[1],
        TAU * field_scale * config.omega1_hz[2],
        TAU * couplings.j12,
        TAU * couplings.j23,
    ];
    let mut out = [R4::zeros(); 2];
    for (term, &k) in terms.iter().zip(coeffs.iter()) {
        for (o, b) in out.iter_mut().zip(term.iter()) {
            *o += b * k;
        }
    }
    Ok(out)
}

/// Product state `⊗(I/2 + p Iz)`: the high-temperature Boltzmann state of
/// `-ω0 ΣIz` with `p = tanh(ω0 / 2kT)`.
pub fn thermal_state(polarization: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&polarization) {
        return Err(Error::invalid(format!(
            "polarization must lie in [0, 1], got {polarization}"
        )));
    }
    let up = 0.5 * (1.0 + polarization);
    let down = 0.5 * (1.0 - polarization);
    let diag: Vec<f64> = (0..DIM)
        .map(|idx| {
            (0..N_SITES)
                .map(|bit| if idx >> bit & 1 == 0 { up } else { down })
                .product()
        })
        .collect();
    Ok(DensityMatrix(Operator::from_real_diagonal(&diag)?))
}

/// `Y = exp(-i (π/2) I_y)` on `site`.
pub fn pulse_y90(site: usize) -> Result<Operator> {
    // exp(-i θ σy / 2) = cos(θ/2) I - i sin(θ/2) σy, θ = π/2
    let single = &Operator::identity(2).scale(FRAC_1_SQRT_2)
        + &pauli(Axis::Y).scale_complex(C64::new(0.0, -FRAC_1_SQRT_2));
    embed_site(&single, site, N_SITES)
}

/// Rotate `site` by +π/2 about y: `M_z → M_x`, `M_x → -M_z`.
pub fn apply_pulse_y90(rho: &DensityMatrix, site: usize) -> Result<DensityMatrix> {
    Ok(rho.conjugate(&pulse_y90(site)?))
}

/// Phase-damping factor `e^{-t/T2}` for each spin.
fn coherence_factors(t: f64, t2_s: &[f64; 3]) -> Result<[f64; 3]> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "relaxation time must be >= 0, got {t}"
        )));
    }
    if t2_s.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::invalid(format!(
            "T2 values must be > 0, got {t2_s:?}"
        )));
    }
    Ok(t2_s.map(|t2| (-t / t2).exp()))
}

/// Transverse relaxation over a total time `t`, as a product of single-spin
/// phase-damping channels `{√λ_i I, √(1-λ_i) 2Iz^i}`, `λ_i = (1+e^{-t/T2(i)})/2`.
///
/// Each spin's transverse components decay by exactly `e^{-t/T2(i)}`;
/// populations are untouched. Expanded to first order in `1 - λ_i` this is
/// the four-operator set of [`FourTermWeights`], and both maps act
/// identically on every single-spin observable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxationChannel {
    factors: [f64; 3],
}

impl RelaxationChannel {
    pub fn new(t: f64, t2_s: &[f64; 3]) -> Result<Self> {
        Ok(RelaxationChannel {
            factors: coherence_factors(t, t2_s)?,
        })
    }

    /// `e^{-t/T2(site)}` for 1-based `site`.
    pub fn coherence_factor(&self, site: usize) -> f64 {
        self.factors[site - 1]
    }

    /// `λ_i = (1 + e^{-t/T2(i)}) / 2`.
    pub fn lambdas(&self) -> [f64; 3] {
        self.factors.map(|e| 0.5 * (1.0 + e))
    }

    /// The eight diagonal Kraus operators, one per subset of dephased spins.
    pub fn kraus_operators(&self) -> Vec<Operator> {
        let lambdas = self.lambdas();
        let t = terms_z();
        (0u8..8)
            .map(|mask| {
                let mut op = Operator::identity(DIM);
                let mut weight = 1.0;
                for (i, &lambda) in lambdas.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        weight *= 1.0 - lambda;
                        op = &op * &t[i];
                    } else {
                        weight *= lambda;
                    }
                }
                op.scale(weight.sqrt())
            })
            .collect()
    }

    /// `Σ E ρ E†`.
    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        apply_kraus(&self.kraus_operators(), rho)
    }
}

/// `2 Iz^i` for each spin.
fn terms_z() -> &'static [Operator; 3] {
    static Z: OnceLock<[Operator; 3]> = OnceLock::new();
    Z.get_or_init(|| {
        [1, 2, 3].map(|s| embed_site(&pauli(Axis::Z), s, N_SITES).expect("valid site"))
    })
}

fn apply_kraus(ops: &[Operator], rho: &DensityMatrix) -> DensityMatrix {
    let mut out = Operator::zeros(DIM);
    for e in ops {
        out = &out + &(&(e * rho.operator()) * &e.dagger());
    }
    DensityMatrix::new_unchecked(out)
}

/// Weights of the four-operator dephasing set
/// `E_0 = √λ_0 I`, `E_i = √(1-λ_i) 2Iz^i` with
/// `λ_0 = (-1 + Σ e^{-t/T2(i)}) / 2`.
///
/// `λ_0` turns negative once `Σ e^{-t/T2(i)} < 1`; past that point the set
/// is no longer a valid Kraus decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourTermWeights {
    pub lambda0: f64,
    pub lambda: [f64; 3],
}

impl FourTermWeights {
    pub fn new(t: f64, t2_s: &[f64; 3]) -> Result<Self> {
        let e = coherence_factors(t, t2_s)?;
        Ok(FourTermWeights {
            lambda0: 0.5 * (-1.0 + e.iter().sum::<f64>()),
            lambda: e.map(|x| 0.5 * (1.0 + x)),
        })
    }

    /// `λ_0 + Σ(1 - λ_i)`, identically one.
    pub fn completeness(&self) -> f64 {
        self.lambda0 + self.lambda.iter().map(|l| 1.0 - l).sum::<f64>()
    }

    pub fn kraus_operators(&self) -> Result<Vec<Operator>> {
        if self.lambda0 < 0.0 {
            return Err(Error::numerical(format!(
                "four-term dephasing weight lambda_0 = {} is negative",
                self.lambda0
            )));
        }
        let z = terms_z();
        let mut ops = vec![Operator::identity(DIM).scale(self.lambda0.sqrt())];
        for (zi, &l) in z.iter().zip(self.lambda.iter()) {
            ops.push(zi.scale((1.0 - l).sqrt()));
        }
        Ok(ops)
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(apply_kraus(&self.kraus_operators()?, rho))
    }
}

/// Dephase `rho` for a total time `t`.
pub fn relaxation_channel(rho: &DensityMatrix, t: f64, t2_s: &[f64; 3]) -> Result<DensityMatrix> {
    Ok(RelaxationChannel::new(t, t2_s)?.apply(rho))
}
