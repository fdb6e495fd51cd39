//! Dense complex operators on the system Hilbert space.
//!
//! Everything here is a value type. The basis convention for qubits is
//! `|e> = index 0`, `|g> = index 1`, so `sigma_z = diag(1, -1)` and the
//! lowering operator `sigma_minus` maps `|e>` to `|g>`.
//!
//! The system couples to the probe field through a single operator `L`
//! with no scattering term (the field's gauge process enters the
//! dynamics only through photon counting).

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported Hilbert space dimension.
pub const MAX_DIM: usize = 64;
/// Tolerance for accepting an operator as Hermitian / a state as valid.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Largest anti-Hermitian part `nearest_density` will still repair.
pub const REPAIR_TOL: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<Complex64>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(())
}

impl Operator {
    pub fn zeros(dim: usize) -> Operator {
        Operator {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Operator {
        let mut op = Operator::zeros(dim);
        for i in 0..dim {
            op.data[i * dim + i] = ONE;
        }
        op
    }

    /// Builds an operator from row-major entries, validating shape and finiteness.
    pub fn from_row_major(dim: usize, entries: Vec<Complex64>) -> Result<Operator> {
        check_dim(dim)?;
        if entries.len() != dim * dim {
            return Err(Error::EntryCount {
                dim,
                expected: dim * dim,
                found: entries.len(),
            });
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite("operator"));
        }
        Ok(Operator { dim, data: entries })
    }

    /// Convenience constructor from real row-major entries.
    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Operator> {
        Operator::from_row_major(
            dim,
            entries.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Operator {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Operator { dim, data }
    }

    pub fn diagonal(entries: &[f64]) -> Operator {
        let dim = entries.len();
        Operator::from_fn(dim, |i, j| {
            if i == j {
                Complex64::new(entries[i], 0.0)
            } else {
                ZERO
            }
        })
    }

    /// `|k><k|` in dimension `dim`.
    pub fn projector(dim: usize, k: usize) -> Operator {
        let mut op = Operator::zeros(dim);
        op.data[k * dim + k] = ONE;
        op
    }

    /// `|psi><psi|` (not normalized).
    pub fn outer(psi: &[Complex64]) -> Operator {
        Operator::from_fn(psi.len(), |i, j| psi[i] * psi[j].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn adjoint(&self) -> Operator {
        let n = self.dim;
        Operator::from_fn(n, |i, j| self.data[j * n + i].conj())
    }

    pub fn scale(&self, s: Complex64) -> Operator {
        Operator {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Operator {
        Operator {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Operator, s: Complex64) {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// `self += s * other` for real `s`.
    pub fn add_scaled_re(&mut self, other: &Operator, s: f64) {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Operator) -> Complex64 {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        let n = self.dim;
        let mut acc = ZERO;
        for i in 0..n {
            for k in 0..n {
                acc += self.data[i * n + k] * other.data[k * n + i];
            }
        }
        acc
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max |a - a^dagger|` entrywise.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    /// `(a + a^dagger) / 2`
    pub fn hermitian_part(&self) -> Operator {
        let n = self.dim;
        Operator::from_fn(n, |i, j| {
            (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    fn matmul(&self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        let n = self.dim;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Operator { dim: n, data: out }
    }
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Operator{}", self)
    }
}

/// Rounds to `digits` significant digits so that round-off such as
/// `-1.0000000000000002` prints as `-1`.
fn round_sig(x: f64, digits: Option<usize>) -> f64 {
    match digits {
        Some(d) if x != 0.0 && x.is_finite() => format!("{:.*e}", d.saturating_sub(1), x)
            .parse()
            .unwrap_or(x),
        _ if x == 0.0 => 0.0,
        _ => x,
    }
}

fn fmt_complex(z: Complex64, digits: Option<usize>) -> String {
    let z = Complex64::new(round_sig(z.re, digits), round_sig(z.im, digits));
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.re == 0.0 {
        format!("{}i", z.im)
    } else if z.im < 0.0 {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

/// `{:.N}` rounds entries to `N` significant digits.
impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.dim;
        write!(f, "[")?;
        for i in 0..n {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "[")?;
            for j in 0..n {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", fmt_complex(self.data[i * n + j], f.precision()))?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        self.matmul(rhs)
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        Operator {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        Operator {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator {
            dim: self.dim,
            data: self.data.iter().map(|z| -z).collect(),
        }
    }
}

impl AddAssign<&Operator> for Operator {
    fn add_assign(&mut self, rhs: &Operator) {
        assert_eq!(self.dim, rhs.dim, "operator dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

/// Standard qubit operators in the `|e>, |g>` basis.
pub mod qubit {
    use super::*;

    pub fn sigma_x() -> Operator {
        Operator::from_real(2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    pub fn sigma_y() -> Operator {
        Operator::from_row_major(2, vec![ZERO, -I, I, ZERO]).unwrap()
    }

    pub fn sigma_z() -> Operator {
        Operator::diagonal(&[1.0, -1.0])
    }

    /// `|g><e|`
    pub fn sigma_minus() -> Operator {
        Operator::from_real(2, &[0.0, 0.0, 1.0, 0.0]).unwrap()
    }

    /// `|e><g|`
    pub fn sigma_plus() -> Operator {
        Operator::from_real(2, &[0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    pub fn excited() -> DensityMatrix {
        DensityMatrix(Operator::projector(2, 0))
    }

    pub fn ground() -> DensityMatrix {
        DensityMatrix(Operator::projector(2, 1))
    }

    /// `|+> = (|e> + |g>)/sqrt(2)`
    pub fn plus() -> DensityMatrix {
        DensityMatrix(Operator::from_real(2, &[0.5, 0.5, 0.5, 0.5]).unwrap())
    }
}

/// Hermitian eigendecomposition: ascending eigenvalues and the unitary whose
/// columns are the matching eigenvectors.
pub fn hermitian_eigen(a: &Operator) -> (Vec<f64>, Operator) {
    let eig = SymmetricEigen::new(a.hermitian_part().to_nalgebra());
    let mut order: Vec<usize> = (0..a.dim()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Operator::from_fn(a.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of the Hermitian part of `a`, ascending.
pub fn hermitian_eigenvalues(a: &Operator) -> Vec<f64> {
    let h = a.hermitian_part();
    if h.dim() == 2 {
        let (lo, hi) = eigenvalues_2x2(&h);
        return vec![lo, hi];
    }
    let mut values: Vec<f64> = SymmetricEigen::new(h.to_nalgebra())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    values
}

fn eigenvalues_2x2(h: &Operator) -> (f64, f64) {
    let a = h.get(0, 0).re;
    let d = h.get(1, 1).re;
    let b = h.get(0, 1);
    let mean = 0.5 * (a + d);
    let half_gap = (0.5 * (a - d)).hypot(b.norm());
    (mean - half_gap, mean + half_gap)
}

fn min_eigenvalue(h: &Operator) -> f64 {
    match h.dim() {
        1 => h.get(0, 0).re,
        2 => eigenvalues_2x2(h).0,
        _ => hermitian_eigenvalues(h)[0],
    }
}

/// Hermitian, positive semidefinite, unit-trace operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    /// Validates `op` against the density-matrix invariants at [`HERMITIAN_TOL`].
    pub fn new(op: Operator) -> Result<DensityMatrix> {
        if !op.is_finite() {
            return Err(Error::NonFinite("density matrix"));
        }
        let dev = op.hermiticity_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian {
                what: "density matrix".into(),
                deviation: dev,
            });
        }
        let tr = op.trace();
        if (tr - ONE).norm() > HERMITIAN_TOL {
            return Err(Error::NotDensity(format!(
                "trace {} != 1",
                fmt_complex(tr, None)
            )));
        }
        let min = min_eigenvalue(&op.hermitian_part());
        if min < -HERMITIAN_TOL {
            return Err(Error::NotDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(DensityMatrix(op))
    }

    pub fn maximally_mixed(dim: usize) -> DensityMatrix {
        DensityMatrix(Operator::identity(dim).scale_re(1.0 / dim as f64))
    }

    /// Normalized pure state from an (unnormalized) vector.
    pub fn pure(psi: &[Complex64]) -> Result<DensityMatrix> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= 0.0 || !norm2.is_finite() {
            return Err(Error::NotDensity("zero state vector".into()));
        }
        check_dim(psi.len())?;
        Ok(DensityMatrix(Operator::outer(psi).scale_re(1.0 / norm2)))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_operator(&self) -> &Operator {
        &self.0
    }

    pub fn into_operator(self) -> Operator {
        self.0
    }

    pub fn purity(&self) -> f64 {
        self.0.trace_product(&self.0).re
    }
}

impl AsRef<Operator> for DensityMatrix {
    fn as_ref(&self) -> &Operator {
        &self.0
    }
}

/// Measurement performed on the output probe field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Detection {
    Homodyne,
    Counting,
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detection::Homodyne => "homodyne",
            Detection::Counting => "counting",
        })
    }
}

impl FromStr for Detection {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "homodyne" => Ok(Detection::Homodyne),
            "counting" => Ok(Detection::Counting),
            other => Err(format!(
                "unknown detection `{other}` (expected `homodyne` or `counting`)"
            )),
        }
    }
}

/// System coupled to a vacuum probe field through `L`.
#[derive(Clone, Debug)]
pub struct SystemModel {
    hamiltonian: Operator,
    coupling: Operator,
    initial_state: DensityMatrix,
    detection: Detection,
    coupling_dag: Operator,
    // L^dagger L
    decay: Operator,
}

impl SystemModel {
    pub fn new(
        hamiltonian: Operator,
        coupling: Operator,
        initial_state: DensityMatrix,
        detection: Detection,
    ) -> Result<SystemModel> {
        let dim = hamiltonian.dim();
        check_dim(dim)?;
        for found in [coupling.dim(), initial_state.dim()] {
            if found != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found,
                });
            }
        }
        let dev = hamiltonian.hermiticity_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian {
                what: "hamiltonian".into(),
                deviation: dev,
            });
        }
        let coupling_dag = coupling.adjoint();
        let decay = &coupling_dag * &coupling;
        Ok(SystemModel {
            hamiltonian,
            coupling,
            initial_state,
            detection,
            coupling_dag,
            decay,
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn coupling(&self) -> &Operator {
        &self.coupling
    }

    /// `L^dagger`
    pub fn coupling_adjoint(&self) -> &Operator {
        &self.coupling_dag
    }

    /// `L^dagger L`
    pub fn decay_operator(&self) -> &Operator {
        &self.decay
    }

    pub fn initial_state(&self) -> &DensityMatrix {
        &self.initial_state
    }

    pub fn detection(&self) -> Detection {
        self.detection
    }

    pub fn with_detection(mut self, detection: Detection) -> SystemModel {
        self.detection = detection;
        self
    }

    pub fn with_initial_state(self, state: DensityMatrix) -> Result<SystemModel> {
        SystemModel::new(self.hamiltonian, self.coupling, state, self.detection)
    }

    pub(crate) fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

fn same_dim(a: &Operator, b: &Operator) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

pub fn adjoint(a: &Operator) -> Operator {
    a.adjoint()
}

/// `[a, b] = ab - ba`
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    same_dim(a, b)?;
    Ok(&(a * b) - &(b * a))
}

/// `tr(rho x)`
pub fn expectation(rho: &DensityMatrix, x: &Operator) -> Result<Complex64> {
    same_dim(rho.as_operator(), x)?;
    Ok(rho.as_operator().trace_product(x))
}

/// Heisenberg-picture generator `i[H,X] + L^dag X L - (L^dag L X + X L^dag L)/2`.
pub fn lindblad_heisenberg(model: &SystemModel, x: &Operator) -> Result<Operator> {
    model.check_dim(x.dim())?;
    let h = model.hamiltonian();
    let mut out = (&(h * x) - &(x * h)).scale(I);
    out += &(&(model.coupling_adjoint() * x) * model.coupling());
    out.add_scaled_re(&(model.decay_operator() * x), -0.5);
    out.add_scaled_re(&(x * model.decay_operator()), -0.5);
    Ok(out)
}

/// Schrödinger-picture generator, the trace dual of [`lindblad_heisenberg`]:
/// `-i[H,rho] + L rho L^dag - (L^dag L rho + rho L^dag L)/2`.
pub fn lindblad_schrodinger(model: &SystemModel, rho: &Operator) -> Result<Operator> {
    model.check_dim(rho.dim())?;
    Ok(lindblad_schrodinger_unchecked(model, rho))
}

pub(crate) fn lindblad_schrodinger_unchecked(model: &SystemModel, rho: &Operator) -> Operator {
    let h = model.hamiltonian();
    let mut out = (&(h * rho) - &(rho * h)).scale(-I);
    out += &(&(model.coupling() * rho) * model.coupling_adjoint());
    out.add_scaled_re(&(model.decay_operator() * rho), -0.5);
    out.add_scaled_re(&(rho * model.decay_operator()), -0.5);
    out
}

/// Projects an approximately Hermitian operator onto the density matrices:
/// Hermitize, clamp negative eigenvalues to zero, renormalize the trace.
pub fn nearest_density(a: &Operator) -> Result<DensityMatrix> {
    if !a.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    let dev = a.hermiticity_deviation();
    if dev >= REPAIR_TOL {
        return Err(Error::NotHermitian {
            what: "state to repair".into(),
            deviation: dev,
        });
    }
    let h = a.hermitian_part();
    let psd = if min_eigenvalue(&h) >= 0.0 {
        h
    } else if h.dim() == 2 {
        // one negative eigenvalue: the result is the projector onto the top
        // eigenvector, (h - lo I) / (hi - lo)
        let (lo, hi) = eigenvalues_2x2(&h);
        if !(hi > 0.0) {
            return Err(Error::ZeroTrace);
        }
        let mut p = h;
        p.data[0] -= lo;
        p.data[3] -= lo;
        return Ok(DensityMatrix(p.scale_re(1.0 / (hi - lo))));
    } else {
        let (values, vectors) = hermitian_eigen(&h);
        let clamped: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
        let n = h.dim();
        // V diag(clamped) V^dagger, kept exactly Hermitian
        Operator::from_fn(n, |i, j| {
            (0..n)
                .map(|k| vectors.get(i, k) * vectors.get(j, k).conj() * clamped[k])
                .sum()
        })
        .hermitian_part()
    };
    let tr = psd.trace().re;
    if !(tr > 1e-300) {
        return Err(Error::ZeroTrace);
    }
    if tr == 1.0 {
        return Ok(DensityMatrix(psd));
    }
    Ok(DensityMatrix(psd.scale_re(1.0 / tr)))
}

/// `||a - b||_1 / 2` for Hermitian `a`, `b`.
pub fn trace_distance(a: &Operator, b: &Operator) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b))
        .iter()
        .map(|v| v.abs())
        .sum::<f64>()
}
