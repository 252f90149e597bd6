//! Dense operator algebra on the four-level (optionally five-level) space.
//!
//! Level ordering is fixed by [`BasisLayout`]: the lower (target) byte
//! occupies indices 0 and 1, the upper (control) byte indices 2 and 3, and
//! an optional sink level sits at index 4.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance for the unit-trace check on density matrices.
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-9;
/// Tolerance for the normalization of rotation amplitudes.
pub const NORMALIZATION_TOL: f64 = 1e-12;

const I: C64 = C64::new(0.0, 1.0);

/// Square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        Self(DMatrix::from_fn(dim, dim, |i, j| f(i, j)))
    }

    /// Builds a matrix from row-major entries; fails unless the rows form a
    /// square array of finite numbers.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { left: dim, right: row.len() });
            }
            if row.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidInput("non-finite matrix entry".into()));
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> =
            rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Matrix unit `|i><j|`.
    pub fn unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(dim);
        m.0[(i, j)] = C64::new(1.0, 0.0);
        m
    }

    /// `|u><v|` for two state vectors.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        assert_eq!(u.len(), v.len(), "outer product of vectors of different length");
        Self::from_fn(u.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.0[(i, j)] = value;
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        Self(self.0.map(|z| z * factor))
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 + &other.0 * &self.0)
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim());
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)] * v[j]).sum())
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self - other).max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `max |O^dagger O - I|`.
    pub fn unitarity_error(&self) -> f64 {
        (&self.adjoint() * self).max_abs_diff(&Self::identity(self.dim()))
    }

    /// Embeds this matrix in the upper-left corner of a larger zero matrix.
    pub fn embed(&self, dim: usize) -> Self {
        assert!(dim >= self.dim());
        let n = self.dim();
        Self::from_fn(dim, |i, j| if i < n && j < n { self.0[(i, j)] } else { C64::new(0.0, 0.0) })
    }

    /// Upper-left `n x n` block.
    pub fn leading_block(&self, n: usize) -> Self {
        assert!(n <= self.dim());
        Self::from_fn(n, |i, j| self.0[(i, j)])
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl From<DMatrix<C64>> for ComplexMatrix {
    fn from(m: DMatrix<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "ComplexMatrix must be square");
        Self(m)
    }
}

impl fmt::Display for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| {
                    let z = self.0[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Add for ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 + rhs.0)
    }
}

impl Sub for ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 - rhs.0)
    }
}

impl Mul for ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(self.0 * rhs.0)
    }
}

/// Hilbert-Schmidt inner product `Tr{A^dagger B}`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(a.0.iter().zip(b.0.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// Hilbert-Schmidt norm `sqrt(Tr{A^dagger A})`.
pub fn hs_norm(a: &ComplexMatrix) -> f64 {
    a.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Index map of the level scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct BasisLayout {
    pub sink: bool,
}

impl BasisLayout {
    pub const G1: usize = 0;
    pub const G2: usize = 1;
    pub const E1: usize = 2;
    pub const E2: usize = 3;
    pub const SINK: usize = 4;

    pub fn four_level() -> Self {
        Self { sink: false }
    }

    pub fn with_sink() -> Self {
        Self { sink: true }
    }

    pub fn dim(&self) -> usize {
        if self.sink {
            5
        } else {
            4
        }
    }

    pub fn basis_vector(&self, index: usize) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.dim()];
        v[index] = C64::new(1.0, 0.0);
        v
    }
}

/// Density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_finite() {
            return Err(Error::InvalidInput("density matrix has non-finite entries".into()));
        }
        let herm = m.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidInput(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidInput(format!("density matrix trace is {tr}")));
        }
        let min_ev = m.hermitian_eigenvalues()[0];
        if min_ev < -POSITIVITY_TOL {
            return Err(Error::InvalidInput(format!("density matrix has eigenvalue {min_ev:e}")));
        }
        Ok(Self(m))
    }

    /// `|psi><psi|` for a normalized state vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidInput(format!("state vector has norm^2 {norm}")));
        }
        Self::new(ComplexMatrix::outer(psi, psi))
    }

    /// Projector on a single level.
    pub fn level(dim: usize, index: usize) -> Self {
        Self(ComplexMatrix::unit(dim, index, index))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn population(&self, index: usize) -> f64 {
        self.0.get(index, index).re
    }
}

/// `Tr{rho^2}`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    hs_norm(rho.matrix()).powi(2)
}

/// Orthonormal Hermitian operators spanning the lower-byte operator space.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorBasis {
    pub ops: Vec<ComplexMatrix>,
}

impl OperatorBasis {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.ops.first().map_or(0, ComplexMatrix::dim)
    }

    /// Expansion `sum_j (G_j . A) G_j`, the projection of `A` on the span.
    pub fn project(&self, a: &ComplexMatrix) -> Result<ComplexMatrix> {
        let mut out = ComplexMatrix::zeros(a.dim());
        for g in &self.ops {
            out = &out + &g.scale(hs_inner(g, a)?);
        }
        Ok(out)
    }
}

/// The four Hermitian matrix-unit combinations on levels {0, 1}, embedded
/// in the layout's full space.
pub fn make_basis(layout: BasisLayout) -> OperatorBasis {
    let dim = layout.dim();
    let (g1, g2) = (BasisLayout::G1, BasisLayout::G2);
    let p1 = ComplexMatrix::unit(dim, g1, g1);
    let p2 = ComplexMatrix::unit(dim, g2, g2);
    let up = ComplexMatrix::unit(dim, g1, g2);
    let down = ComplexMatrix::unit(dim, g2, g1);
    let sym = (&up + &down).scale_real(FRAC_1_SQRT_2);
    let asym = (&up - &down).scale(I * FRAC_1_SQRT_2);
    OperatorBasis { ops: vec![p1, p2, sym, asym] }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateLabel {
    Swap,
    General { a: C64, b: C64 },
    Scrambled { a: C64, b: C64 },
    Custom(String),
}

impl fmt::Display for GateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let amp = |z: &C64| format!("{:.17e}{:+.17e}i", z.re, z.im);
        match self {
            GateLabel::Swap => write!(f, "swap"),
            GateLabel::General { a, b } => write!(f, "general(a={},b={})", amp(a), amp(b)),
            GateLabel::Scrambled { a, b } => write!(f, "scrambled(a={},b={})", amp(a), amp(b)),
            GateLabel::Custom(name) => write!(f, "custom({name})"),
        }
    }
}

/// Target transformation together with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct GateTarget {
    pub matrix: ComplexMatrix,
    pub label: GateLabel,
}

impl GateTarget {
    pub fn custom(name: impl Into<String>, matrix: ComplexMatrix) -> Self {
        Self { matrix, label: GateLabel::Custom(name.into()) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Same gate acting trivially on any extra levels beyond the four.
    pub fn extended(&self, dim: usize) -> Self {
        let n = self.matrix.dim();
        let matrix = ComplexMatrix::from_fn(dim, |i, j| {
            if i < n && j < n {
                self.matrix.get(i, j)
            } else if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self { matrix, label: self.label.clone() }
    }
}

/// Swap of `|2>_g` and `|1>_e`.
pub fn build_swap() -> GateTarget {
    let matrix = ComplexMatrix::from_real_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0, 1.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
    ])
    .expect("static matrix");
    GateTarget { matrix, label: GateLabel::Swap }
}

fn check_amplitudes(a: C64, b: C64) -> Result<()> {
    let norm = a.norm_sqr() + b.norm_sqr();
    if !norm.is_finite() || (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidInput(format!("|a|^2 + |b|^2 = {norm}, expected 1")));
    }
    Ok(())
}

/// Amplitudes `(a, b)` of the superposition `(|1> - i b_n |2>) / sqrt(1 + b_n^2)`.
pub fn superposition_amplitudes(b_n: f64) -> (C64, C64) {
    let norm = (1.0 + b_n * b_n).sqrt();
    (C64::new(1.0 / norm, 0.0), C64::new(0.0, -b_n / norm))
}

/// Block-diagonal rotation taking the level basis of each byte to the
/// `{|+>, |->}` basis with `|+> = a|1> + b|2>` and `|-> = -b*|1> + a*|2>`.
pub fn build_rotation(a: C64, b: C64) -> Result<ComplexMatrix> {
    check_amplitudes(a, b)?;
    let zero = C64::new(0.0, 0.0);
    let block = [[a, -b.conj()], [b, a.conj()]];
    Ok(ComplexMatrix::from_fn(4, |i, j| {
        if i / 2 == j / 2 {
            block[i % 2][j % 2]
        } else {
            zero
        }
    }))
}

/// Swap distiller expressed in the rotated basis: `U O_d U^dagger`.
pub fn build_general_distiller(a: C64, b: C64) -> Result<GateTarget> {
    let u = build_rotation(a, b)?;
    let matrix = conjugate_by_matrix(&u, &build_swap().matrix);
    Ok(GateTarget { matrix, label: GateLabel::General { a, b } })
}

/// Hadamard on the upper byte applied after the general distiller.
pub fn build_scrambled_distiller(a: C64, b: C64) -> Result<GateTarget> {
    let distiller = build_general_distiller(a, b)?;
    let h = FRAC_1_SQRT_2;
    let scramble = ComplexMatrix::from_real_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, h, h],
        &[0.0, 0.0, h, -h],
    ])
    .expect("static matrix");
    Ok(GateTarget { matrix: &scramble * &distiller.matrix, label: GateLabel::Scrambled { a, b } })
}

fn conjugate_by_matrix(o: &ComplexMatrix, g: &ComplexMatrix) -> ComplexMatrix {
    &(o * g) * &o.adjoint()
}

/// `O G O^dagger`.
pub fn conjugate_by_gate(gate: &GateTarget, g: &ComplexMatrix) -> Result<ComplexMatrix> {
    if gate.dim() != g.dim() {
        return Err(Error::DimensionMismatch { left: gate.dim(), right: g.dim() });
    }
    Ok(conjugate_by_matrix(&gate.matrix, g))
}

/// Computational-basis vectors of the rotated byte states
/// `(|+>_g, |->_g, |+>_e, |->_e)`.
pub fn rotated_states(a: C64, b: C64) -> Result<[Vec<C64>; 4]> {
    let u = build_rotation(a, b)?;
    let column = |k: usize| (0..4).map(|i| u.get(i, k)).collect::<Vec<_>>();
    Ok([column(0), column(1), column(2), column(3)])
}
