//! Dense complex matrices on `2^n`-dimensional spin spaces.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use nalgebra::{DMatrix, SMatrix};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{EXPECTATION_IMAG_TOL, HERMITIAN_TOL, UNITARY_TOL};

/// Cartesian component of a spin-1/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!("unknown axis '{other}'"))),
        }
    }
}

/// Square complex matrix acting on `dim = 2^n` states.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    m: DMatrix<C64>,
}

impl Operator {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.nrows().is_power_of_two() {
            return Err(Error::invalid(format!(
                "operator dimension {} is not a power of two",
                m.nrows()
            )));
        }
        Ok(Operator { m })
    }

    /// Build from real row-major entries.
    pub fn from_real_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: rows.len(),
            });
        }
        Self::new(DMatrix::from_row_iterator(
            dim,
            dim,
            rows.iter().map(|&x| C64::new(x, 0.0)),
        ))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        Self::new(m)
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim.is_power_of_two(), "dimension must be a power of two");
        Operator {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim.is_power_of_two(), "dimension must be a power of two");
        Operator {
            m: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.m[(row, col)]
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            m: self.m.adjoint(),
        }
    }

    pub fn kron(&self, other: &Operator) -> Operator {
        Operator {
            m: self.m.kronecker(&other.m),
        }
    }

    pub fn scale(&self, factor: f64) -> Operator {
        Operator {
            m: self.m.map(|z| z * factor),
        }
    }

    pub fn scale_complex(&self, factor: C64) -> Operator {
        Operator {
            m: self.m.map(|z| z * factor),
        }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    /// `A B - B A`.
    pub fn commutator(&self, other: &Operator) -> Operator {
        Operator {
            m: &self.m * &other.m - &other.m * &self.m,
        }
    }

    /// Largest entry modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entry modulus of `A - A†`.
    pub fn hermitian_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.m[(i, j)] - self.m[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_residual() < HERMITIAN_TOL
    }

    /// Largest entry modulus of `U†U - I`.
    pub fn unitarity_residual(&self) -> f64 {
        let prod = Operator {
            m: self.m.adjoint() * &self.m,
        };
        prod.max_abs_diff(&Operator::identity(self.dim()))
    }

    fn same_dim(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            m: &self.m + &rhs.m,
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            m: &self.m - &rhs.m,
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            m: &self.m * &rhs.m,
        }
    }
}

/// The 2×2 Pauli matrix along `axis`.
pub fn pauli(axis: Axis) -> Operator {
    let (o, l, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    let m = match axis {
        Axis::X => DMatrix::from_row_slice(2, 2, &[o, l, l, o]),
        Axis::Y => DMatrix::from_row_slice(2, 2, &[o, -i, i, o]),
        Axis::Z => DMatrix::from_row_slice(2, 2, &[l, o, o, -l]),
    };
    Operator { m }
}

/// Embed a single-spin operator at `site` (1-based) of an `n_sites` chain,
/// with identities on every other site. Site 1 is the leftmost Kronecker
/// factor.
pub fn embed_site(op: &Operator, site: usize, n_sites: usize) -> Result<Operator> {
    if op.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: op.dim(),
        });
    }
    if site == 0 || site > n_sites {
        return Err(Error::invalid(format!(
            "site {site} out of range 1..={n_sites}"
        )));
    }
    let id = Operator::identity(2);
    let mut acc: Option<Operator> = None;
    for s in 1..=n_sites {
        let factor = if s == site { op } else { &id };
        acc = Some(match acc {
            None => factor.clone(),
            Some(a) => a.kron(factor),
        });
    }
    Ok(acc.expect("n_sites >= site >= 1"))
}

/// Spin-1/2 operator `I_axis` of `site`, i.e. `σ_axis / 2` embedded.
pub fn spin_operator(axis: Axis, site: usize, n_sites: usize) -> Result<Operator> {
    Ok(embed_site(&pauli(axis), site, n_sites)?.scale(0.5))
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are the eigenvectors.
    pub eigenvectors: DMatrix<C64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V f(λ) V†` for a complex-valued scalar function.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> Operator {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let fj = f(lambda);
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= fj);
        }
        Operator {
            m: scaled * v.adjoint(),
        }
    }

    pub fn reconstruct(&self) -> Operator {
        self.apply_fn(|l| C64::new(l, 0.0))
    }
}

/// Diagonalize a Hermitian operator.
///
/// Purely real input goes through the real symmetric solver, which is both
/// faster and yields real eigenvectors.
pub fn eig_hermitian(h: &Operator) -> Result<Spectrum> {
    let residual = h.hermitian_residual();
    if residual >= HERMITIAN_TOL {
        return Err(Error::numerical(format!(
            "operator is not Hermitian (residual {residual:e})"
        )));
    }
    let n = h.dim();
    let (values, vectors) = jacobi_hermitian(h.m.clone())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let eigenvalues = order.iter().map(|&k| values[k]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

const JACOBI_MAX_SWEEPS: usize = 64;

/// Off-diagonal mass below this fraction of the Frobenius norm ends the
/// sweeps.
const JACOBI_REL_TOL: f64 = 1e-15;

/// Cyclic Jacobi diagonalization of a Hermitian matrix; returns unsorted
/// eigenvalues and the unitary whose columns are the eigenvectors.
fn jacobi_hermitian(mut a: DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let n = a.nrows();
    let mut v = DMatrix::<C64>::identity(n, n);
    let scale = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_REL_TOL * scale {
            return Ok(((0..n).map(|k| a[(k, k)].re).collect(), v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                // Phase q so the pivot is real, then a real Jacobi rotation.
                let phase = (apq / r).conj();
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                let u = [
                    [C64::new(c, 0.0), C64::new(s, 0.0)],
                    [-phase * s, phase * c],
                ];
                rotate_columns(&mut a, p, q, &u);
                rotate_rows(&mut a, p, q, &u);
                rotate_columns(&mut v, p, q, &u);
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
            }
        }
    }
    Err(Error::numerical(
        "Jacobi eigendecomposition did not converge",
    ))
}

/// `M ← M U` on columns `p`, `q`.
fn rotate_columns(m: &mut DMatrix<C64>, p: usize, q: usize, u: &[[C64; 2]; 2]) {
    for r in 0..m.nrows() {
        let (mp, mq) = (m[(r, p)], m[(r, q)]);
        m[(r, p)] = mp * u[0][0] + mq * u[1][0];
        m[(r, q)] = mp * u[0][1] + mq * u[1][1];
    }
}

/// `M ← U† M` on rows `p`, `q`.
fn rotate_rows(m: &mut DMatrix<C64>, p: usize, q: usize, u: &[[C64; 2]; 2]) {
    for c in 0..m.ncols() {
        let (mp, mq) = (m[(p, c)], m[(q, c)]);
        m[(p, c)] = u[0][0].conj() * mp + u[1][0].conj() * mq;
        m[(q, c)] = u[0][1].conj() * mp + u[1][1].conj() * mq;
    }
}

/// Cyclic Jacobi for a real symmetric `N×N` matrix; unsorted eigenvalues
/// and the orthogonal eigenvector matrix.
pub fn jacobi_symmetric<const N: usize>(
    mut a: SMatrix<f64, N, N>,
) -> Result<([f64; N], SMatrix<f64, N, N>)> {
    let mut v = SMatrix::<f64, N, N>::identity();
    let scale = a.norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..N {
            for q in (p + 1)..N {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= JACOBI_REL_TOL * scale {
            return Ok((std::array::from_fn(|k| a[(k, k)]), v));
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for r in 0..N {
                    let (ap, aq) = (a[(r, p)], a[(r, q)]);
                    a[(r, p)] = c * ap - s * aq;
                    a[(r, q)] = s * ap + c * aq;
                }
                for k in 0..N {
                    let (ap, aq) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * ap - s * aq;
                    a[(q, k)] = s * ap + c * aq;
                }
                for r in 0..N {
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = c * vp - s * vq;
                    v[(r, q)] = s * vp + c * vq;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    Err(Error::numerical(
        "Jacobi eigendecomposition did not converge",
    ))
}

/// `exp(-i λ t)` lifted through a precomputed spectrum.
pub fn propagator_from_spectrum(spectrum: &Spectrum, t: f64) -> Result<Operator> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "propagation time must be >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(Operator::identity(spectrum.dim()));
    }
    let u = spectrum.apply_fn(|l| C64::from_polar(1.0, -l * t));
    let residual = u.unitarity_residual();
    if residual >= UNITARY_TOL {
        return Err(Error::numerical(format!(
            "propagator lost unitarity (residual {residual:e})"
        )));
    }
    Ok(u)
}

/// `U = exp(-i H t)`.
pub fn propagator(h: &Operator, t: f64) -> Result<Operator> {
    propagator_from_spectrum(&eig_hermitian(h)?, t)
}

/// `Tr[ρ A]` for Hermitian `A`; the imaginary part must vanish.
pub fn expectation(rho: &Operator, obs: &Operator) -> Result<f64> {
    rho.same_dim(obs)?;
    let n = rho.dim();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += rho.m[(i, k)] * obs.m[(k, i)];
        }
    }
    if acc.im.abs() >= EXPECTATION_IMAG_TOL {
        return Err(Error::numerical(format!(
            "expectation value has imaginary part {:e}",
            acc.im
        )));
    }
    Ok(acc.re)
}
