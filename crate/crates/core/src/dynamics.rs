//! Spin-1 magnetization trajectories, at a fixed field and averaged over the
//! Gaussian rf-amplitude distribution.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::CouplingPair;
use crate::numerics::TIME_TOL;
use crate::quantum::{
    eig_hermitian, jacobi_symmetric, propagator_from_spectrum, spin_operator, Axis,
};
use crate::spin::{
    build_hamiltonian, hamiltonian_parity_blocks, parity_basis, ChainConfig, DensityMatrix,
    RelaxationChannel, BLOCK, DIM, N_SITES,
};

type R8 = SMatrix<f64, DIM, DIM>;

/// Sampled `M_x, M_y, M_z` of spin 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
    pub mz: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, mx: Vec<f64>, my: Vec<f64>, mz: Vec<f64>) -> Result<Self> {
        let n = times.len();
        for (name, v) in [("mx", &mx), ("my", &my), ("mz", &mz)] {
            if v.len() != n {
                return Err(Error::invalid(format!(
                    "{name} has {} samples, times has {n}",
                    v.len()
                )));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("sample times must be strictly increasing"));
        }
        Ok(Trajectory { times, mx, my, mz })
    }

    fn zeros(times: &[f64]) -> Self {
        let n = times.len();
        Trajectory {
            times: times.to_vec(),
            mx: vec![0.0; n],
            my: vec![0.0; n],
            mz: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn component(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::X => &self.mx,
            Axis::Y => &self.my,
            Axis::Z => &self.mz,
        }
    }

    pub fn component_mut(&mut self, axis: Axis) -> &mut [f64] {
        match axis {
            Axis::X => &mut self.mx,
            Axis::Y => &mut self.my,
            Axis::Z => &mut self.mz,
        }
    }

    /// Largest `|M_k|` over all samples and components.
    pub fn max_abs(&self) -> f64 {
        self.mx
            .iter()
            .chain(&self.my)
            .chain(&self.mz)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Trajectory {
        let s = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        Trajectory {
            times: self.times.clone(),
            mx: s(&self.mx),
            my: s(&self.my),
            mz: s(&self.mz),
        }
    }

    /// Samples with `t <= t_end` (inclusive, up to [`TIME_TOL`]).
    pub fn truncated(&self, t_end: f64) -> Trajectory {
        let n = self
            .times
            .iter()
            .take_while(|&&t| t <= t_end + TIME_TOL)
            .count();
        Trajectory {
            times: self.times[..n].to_vec(),
            mx: self.mx[..n].to_vec(),
            my: self.my[..n].to_vec(),
            mz: self.mz[..n].to_vec(),
        }
    }

    /// CSV with header `t,mx,my,mz`, 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mx", "my", "mz"])?;
        for i in 0..self.len() {
            w.write_record(
                [self.times[i], self.mx[i], self.my[i], self.mz[i]].map(|v| format!("{v:.16e}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "mx", "my", "mz"] {
            return Err(Error::invalid(format!(
                "trajectory header must be t,mx,my,mz, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut t, mut mx, mut my, mut mz) = (vec![], vec![], vec![], vec![]);
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let mut vals = [0.0; 4];
            for (k, field) in record.iter().enumerate().take(4) {
                vals[k] = field.parse().map_err(|_| {
                    Error::invalid(format!(
                        "row {}: cannot parse '{field}' as a number",
                        line + 2
                    ))
                })?;
            }
            if record.len() != 4 {
                return Err(Error::invalid(format!(
                    "row {}: expected 4 fields",
                    line + 2
                )));
            }
            t.push(vals[0]);
            mx.push(vals[1]);
            my.push(vals[2]);
            mz.push(vals[3]);
        }
        Trajectory::new(t, mx, my, mz)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::workbench::io::write_atomic(path.as_ref(), &buf)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// `{0, dt, 2dt, ...}` up to the last multiple not exceeding `t_end`.
pub fn sample_times(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || !(dt > 0.0) || !t_end.is_finite() || dt > t_end {
        return Err(Error::invalid(format!(
            "need t_end > 0 and 0 < dt <= t_end, got t_end={t_end}, dt={dt}"
        )));
    }
    let n = ((t_end + 1e-12) / dt).floor() as usize;
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}

/// Spin-1 observables of one Hamiltonian and initial state, evaluated in the
/// eigenbasis of the Hamiltonian so every sample time reuses one
/// diagonalization.
///
/// With `w_{mn} = ρ'_{mn} A'_{nm}` and `w_{nm} = conj(w_{mn})`,
/// `⟨A⟩(t) = Σ_m w_{mm} + 2 Σ_{m<n} Re(w_{mn} e^{-i(λ_m-λ_n)t})`.
struct EigenbasisEvolution {
    eigenvalues: [f64; DIM],
    diagonal: [f64; 3],
    /// `2 w_{mn}` for `m < n`, in [`PAIRS`] order.
    off_diagonal: [[C64; N_PAIRS]; 3],
}

const N_PAIRS: usize = DIM * (DIM - 1) / 2;

const PAIRS: [(usize, usize); N_PAIRS] = {
    let mut out = [(0, 0); N_PAIRS];
    let mut k = 0;
    let mut m = 0;
    while m < DIM {
        let mut n = m + 1;
        while n < DIM {
            out[k] = (m, n);
            k += 1;
            n += 1;
        }
        m += 1;
    }
    out
};

/// Real and imaginary parts of the spin-1 operators; `I_x`, `I_z` are real
/// and `I_y` is purely imaginary.
fn spin1_parts() -> &'static [(R8, R8); 3] {
    static OPS: std::sync::OnceLock<[(R8, R8); 3]> = std::sync::OnceLock::new();
    OPS.get_or_init(|| {
        Axis::ALL.map(|a| {
            let op = spin_operator(a, 1, N_SITES).expect("site 1");
            split(op.matrix())
        })
    })
}

fn split(m: &DMatrix<C64>) -> (R8, R8) {
    (
        R8::from_fn(|r, c| m[(r, c)].re),
        R8::from_fn(|r, c| m[(r, c)].im),
    )
}

/// `Vᵀ (X_re + i X_im) V` for real orthogonal `V`.
fn rotate(vt: &R8, v: &R8, (re, im): &(R8, R8)) -> (R8, R8) {
    let rot = |x: &R8| {
        if x.iter().all(|&e| e == 0.0) {
            R8::zeros()
        } else {
            vt * x * v
        }
    };
    (rot(re), rot(im))
}

impl EigenbasisEvolution {
    fn new(blocks: &[SMatrix<f64, BLOCK, BLOCK>; 2], rho0: &DensityMatrix) -> Result<Self> {
        let (even_values, even) = jacobi_symmetric(blocks[0])?;
        let (odd_values, odd) = jacobi_symmetric(blocks[1])?;
        let mut within = R8::zeros();
        within.fixed_view_mut::<BLOCK, BLOCK>(0, 0).copy_from(&even);
        within
            .fixed_view_mut::<BLOCK, BLOCK>(BLOCK, BLOCK)
            .copy_from(&odd);
        let v = parity_basis() * within;
        let eigenvalues: [f64; DIM] = std::array::from_fn(|k| {
            if k < BLOCK {
                even_values[k]
            } else {
                odd_values[k - BLOCK]
            }
        });
        let vt = v.transpose();
        let (rho_re, rho_im) = rotate(&vt, &v, &split(rho0.operator().matrix()));
        let mut diagonal = [0.0; 3];
        let mut off_diagonal = [[C64::new(0.0, 0.0); N_PAIRS]; 3];
        for (c, parts) in spin1_parts().iter().enumerate() {
            let (a_re, a_im) = rotate(&vt, &v, parts);
            let w = |m: usize, n: usize| {
                C64::new(rho_re[(m, n)], rho_im[(m, n)]) * C64::new(a_re[(n, m)], a_im[(n, m)])
            };
            diagonal[c] = (0..DIM).map(|m| w(m, m).re).sum();
            for (k, &(m, n)) in PAIRS.iter().enumerate() {
                off_diagonal[c][k] = 2.0 * w(m, n);
            }
        }
        Ok(EigenbasisEvolution {
            eigenvalues,
            diagonal,
            off_diagonal,
        })
    }

    /// Unitary-only `(⟨I_x¹⟩, ⟨I_y¹⟩, ⟨I_z¹⟩)` at time `t`.
    fn observables(&self, t: f64) -> [f64; 3] {
        let phase: [C64; DIM] = self.eigenvalues.map(|l| C64::from_polar(1.0, -l * t));
        let mut out = self.diagonal;
        for (k, &(m, n)) in PAIRS.iter().enumerate() {
            let z = phase[m] * phase[n].conj();
            for (acc, w) in out.iter_mut().zip(self.off_diagonal.iter()) {
                *acc += w[k].re * z.re - w[k].im * z.im;
            }
        }
        out
    }
}

/// Spin-1 trajectory at a single field scale.
///
/// For each sample `ρ(t) = ε_t(U(t) ρ0 U(t)†)`; the dephasing channel scales
/// spin-1's transverse components by `e^{-t/T2(1)}` and leaves `M_z` alone,
/// so it is applied to the observables directly.
pub fn simulate_fixed_field(
    config: &ChainConfig,
    couplings: CouplingPair,
    rho0: &DensityMatrix,
    times: &[f64],
    field_scale: f64,
) -> Result<Trajectory> {
    let mut out = Trajectory::zeros(times);
    accumulate_fixed_field(config, couplings, rho0, times, field_scale, 1.0, &mut out)?;
    Ok(out)
}

fn accumulate_fixed_field(
    config: &ChainConfig,
    couplings: CouplingPair,
    rho0: &DensityMatrix,
    times: &[f64],
    field_scale: f64,
    weight: f64,
    out: &mut Trajectory,
) -> Result<()> {
    let blocks = hamiltonian_parity_blocks(config, couplings, field_scale)?;
    let evolution = EigenbasisEvolution::new(&blocks, rho0)?;
    let t2 = config.t2_s[0];
    for (i, &t) in times.iter().enumerate() {
        let [x, y, z] = evolution.observables(t);
        let decay = (-t / t2).exp();
        out.mx[i] += weight * decay * x;
        out.my[i] += weight * decay * y;
        out.mz[i] += weight * z;
    }
    Ok(())
}

/// Full density matrices `ε_t(U(t) ρ0 U(t)†)` at each sample time.
pub fn evolve_states(
    config: &ChainConfig,
    couplings: CouplingPair,
    rho0: &DensityMatrix,
    times: &[f64],
    field_scale: f64,
) -> Result<Vec<DensityMatrix>> {
    let h = build_hamiltonian(config, couplings, field_scale)?;
    let spectrum = eig_hermitian(&h)?;
    times
        .iter()
        .map(|&t| {
            let u = propagator_from_spectrum(&spectrum, t)?;
            Ok(RelaxationChannel::new(t, &config.t2_s)?.apply(&rho0.conjugate(&u)))
        })
        .collect()
}

/// Ensemble average of [`evolve_states`] over the field-scale quadrature.
pub fn evolve_states_ensemble(
    config: &ChainConfig,
    couplings: CouplingPair,
    rho0: &DensityMatrix,
    times: &[f64],
    spec: QuadratureSpec,
) -> Result<Vec<DensityMatrix>> {
    let ensemble = Ensemble::new(spec, config.sigma_rel)?;
    let mut acc: Option<Vec<crate::quantum::Operator>> = None;
    for (&s, &w) in ensemble.scales.iter().zip(&ensemble.weights) {
        let states = evolve_states(config, couplings, rho0, times, s)?;
        let scaled: Vec<_> = states.iter().map(|r| r.operator().scale(w)).collect();
        acc = Some(match acc {
            None => scaled,
            Some(prev) => prev.iter().zip(&scaled).map(|(a, b)| a + b).collect(),
        });
    }
    acc.expect("at least one node")
        .into_iter()
        .map(DensityMatrix::new)
        .collect()
}

/// Gauss–Hermite rule over the relative field-amplitude distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub n_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { n_nodes: 21 }
    }
}

/// Field scales `s_j = 1 + √2 σ_rel x_j` and weights `w_j / √π`, where
/// `(x_j, w_j)` is the Gauss–Hermite rule for `e^{-x²}` (Golub–Welsch).
pub fn gauss_hermite_nodes(spec: QuadratureSpec, sigma_rel: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = spec.n_nodes;
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    if !(sigma_rel >= 0.0) || !sigma_rel.is_finite() {
        return Err(Error::invalid(format!(
            "sigma_rel must be >= 0, got {sigma_rel}"
        )));
    }
    let jacobi = DMatrix::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Enforce the rule's symmetry x_j = -x_{n-1-j} exactly.
    for j in 0..n / 2 {
        let k = n - 1 - j;
        let x = 0.5 * (pairs[k].0 - pairs[j].0);
        let w = 0.5 * (pairs[k].1 + pairs[j].1);
        pairs[j] = (-x, w);
        pairs[k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let scales = pairs
        .iter()
        .map(|&(x, _)| 1.0 + std::f64::consts::SQRT_2 * sigma_rel * x)
        .collect();
    let weights = pairs.iter().map(|&(_, w)| w / total).collect();
    Ok((scales, weights))
}

/// Precomputed field-scale quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Ensemble {
    /// A vanishing width collapses to the single node `s = 1`.
    pub fn new(spec: QuadratureSpec, sigma_rel: f64) -> Result<Self> {
        let (scales, weights) = if sigma_rel == 0.0 {
            if spec.n_nodes == 0 {
                return Err(Error::invalid("quadrature needs at least one node"));
            }
            (vec![1.0], vec![1.0])
        } else {
            gauss_hermite_nodes(spec, sigma_rel)?
        };
        Ok(Ensemble { scales, weights })
    }

    /// Weighted sum over nodes, in node order.
    pub fn simulate(
        &self,
        config: &ChainConfig,
        couplings: CouplingPair,
        rho0: &DensityMatrix,
        times: &[f64],
    ) -> Result<Trajectory> {
        let mut out = Trajectory::zeros(times);
        for (&s, &w) in self.scales.iter().zip(&self.weights) {
            accumulate_fixed_field(config, couplings, rho0, times, s, w, &mut out)?;
        }
        Ok(out)
    }
}

/// Spin-1 trajectory averaged over the Gaussian field distribution, one
/// common scale multiplying all three transverse fields.
pub fn simulate_ensemble(
    config: &ChainConfig,
    couplings: CouplingPair,
    rho0: &DensityMatrix,
    times: &[f64],
    spec: QuadratureSpec,
) -> Result<Trajectory> {
    Ensemble::new(spec, config.sigma_rel)?.simulate(config, couplings, rho0, times)
}
