//! Real dense kernels for superoperators: matrix exponential by
//! scaling-and-squaring with Padé approximants, and the series expansion of
//! `exp((A + x B + y C) dt)` in the scalar parameters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Induced 1-norm (max column sum).
pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each Padé degree reaches double precision.
const THETA3: f64 = 1.495_585_217_958_292e-2;
const THETA5: f64 = 2.539_398_330_063_23e-1;
const THETA7: f64 = 9.504_178_996_162_932e-1;
const THETA9: f64 = 2.097_847_961_257_068;
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential of a real square matrix.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm of a non-square matrix");
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("expm argument has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = norm1(a);
    let id = DMatrix::<f64>::identity(n, n);

    let low_order = [(THETA3, &PADE3[..]), (THETA5, &PADE5[..]), (THETA7, &PADE7[..]), (THETA9, &PADE9[..])];
    for (theta, coeffs) in low_order {
        if norm <= theta {
            return pade_low(a, &id, coeffs);
        }
    }

    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scaled = a * 2f64.powi(-s);
    let mut result = pade13(&scaled, &id)?;
    for _ in 0..s {
        result = &result * &result;
    }
    Ok(result)
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular Padé denominator in expm".into()))
}

fn pade_low(a: &DMatrix<f64>, id: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    let a2 = a * a;
    let mut even = id * b[0];
    let mut odd = id * b[1];
    let mut power = id.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        even += &power * b[k];
        if k + 1 < b.len() {
            odd += &power * b[k + 1];
        }
        k += 2;
    }
    let u = a * odd;
    solve_pade(u, even)
}

fn pade13(a: &DMatrix<f64>, id: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &PADE13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + id * b[0];
    solve_pade(u, v)
}

/// Row-major dense real matrix with an allocation-free matrix-vector product.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOp {
    n: usize,
    data: Vec<f64>,
}

impl DenseOp {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(m[(i, j)]);
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `y += alpha * A x`.
    #[inline]
    pub fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for (row, yi) in self.data.chunks_exact(n).zip(y.iter_mut()) {
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yi += alpha * acc;
        }
    }

    /// `y += alpha * A^T x`.
    #[inline]
    pub fn mul_add_transpose(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for (row, xi) in self.data.chunks_exact(n).zip(x) {
            let s = alpha * xi;
            for (yj, a) in y.iter_mut().zip(row) {
                *yj += a * s;
            }
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseOp) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Sparse (CSR) real matrix used for the per-step propagator terms, whose
/// structure follows the block structure of the generator.
#[derive(Clone, Debug)]
pub struct SparseOp {
    n: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOp {
    /// Drops entries with magnitude at or below `drop_below`.
    pub fn from_matrix(m: &DMatrix<f64>, drop_below: f64) -> Self {
        let n = m.nrows();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v.abs() > drop_below {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_start.push(cols.len());
        }
        Self { n, row_start, cols, vals }
    }

    /// `y += alpha * A x`.
    #[inline]
    pub fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_start[i]..self.row_start[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] += alpha * acc;
        }
    }
}

const MAX_POLY_TERMS: usize = 16;

/// Sparse matrix polynomial `sum_b y^b M_b` on a shared pattern, one
/// coefficient run per stored entry.
#[derive(Clone, Debug)]
struct PolySparse {
    n: usize,
    terms: usize,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl PolySparse {
    fn new(blocks: &[DMatrix<f64>], drop_below: f64) -> Self {
        let n = blocks[0].nrows();
        let terms = blocks.len();
        let mut row_start = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if blocks.iter().any(|m| m[(i, j)].abs() > drop_below) {
                    cols.push(j);
                    vals.extend(blocks.iter().map(|m| m[(i, j)]));
                }
            }
            row_start.push(cols.len());
        }
        Self { n, terms, row_start, cols, vals }
    }

    /// `out = sum_{b <= order} y^b M_b v`.
    fn apply(&self, y: f64, order: usize, v: &[f64], out: &mut [f64]) {
        let mut powers = [0.0; MAX_POLY_TERMS];
        let mut p = 1.0;
        for w in powers.iter_mut().take(order + 1) {
            *w = p;
            p *= y;
        }
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let (lo, hi) = (self.row_start[i], self.row_start[i + 1]);
            let mut acc = 0.0;
            for (col, c) in self.cols[lo..hi].iter().zip(self.vals[lo * self.terms..hi * self.terms].chunks_exact(self.terms)) {
                let coeff: f64 = c.iter().zip(&powers).map(|(a, w)| a * w).sum();
                acc += coeff * v[*col];
            }
            *o = acc;
        }
    }
}

/// Remainder `sum_{k > order} x^k / k!` for `x >= 0`.
fn exp_tail(x: f64, order: usize) -> f64 {
    let mut term = 1.0;
    for k in 1..=order {
        term *= x / k as f64;
    }
    let mut tail = 0.0;
    let mut k = order + 1;
    loop {
        term *= x / k as f64;
        tail += term;
        if term <= tail * 1e-17 || k > order + 200 {
            break;
        }
        k += 1;
    }
    tail
}

fn exp_partial(x: f64, order: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=order {
        term *= x / k as f64;
        sum += term;
    }
    sum
}

/// Coefficients `E[a][b]` of `exp((A + x B + y C) dt) = sum x^a y^b E[a][b]`,
/// computed once from the exponential of a block-bidiagonal matrix.
///
/// Truncation is chosen per call from the a-priori bound
/// `||E[a][b]|| <= w (x_B)^a (y_C)^b / (a! b!)` with `w = exp(dt ||A||)`,
/// `x_B = dt ||B||`, `y_C = dt ||C||` (1-norms).
#[derive(Clone, Debug)]
pub struct SeriesPropagator {
    dim: usize,
    max_a: usize,
    max_b: usize,
    coeffs: Vec<Vec<SparseOp>>,
    dense: Vec<Vec<DenseOp>>,
    growth: f64,
    scale_b: f64,
    scale_c: f64,
    tol: f64,
    // Largest |x| (with y = 0) and |y| (with x = 0) each order can handle.
    limits_a: Vec<f64>,
    limits_b: Vec<f64>,
    // The x = 0 column of coefficients, merged for the common field-free step.
    field_free: PolySparse,
}

/// Largest `s >= 0` with `w * exp_tail(s * scale, order) <= bound`.
fn single_limit(w: f64, scale: f64, order: usize, bound: f64) -> f64 {
    if scale == 0.0 {
        return f64::INFINITY;
    }
    let ok = |u: f64| w * exp_tail(u, order) <= bound;
    let (mut lo, mut hi) = (0.0, 64.0);
    if ok(hi) {
        return hi / scale;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo / scale
}

impl SeriesPropagator {
    pub fn new(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        dt: f64,
        max_a: usize,
        max_b: usize,
        tol: f64,
    ) -> Result<Self> {
        if max_b >= MAX_POLY_TERMS {
            return Err(Error::InvalidInput(format!("series order in y must be below {MAX_POLY_TERMS}")));
        }
        let n = a.nrows();
        let nodes_a = max_a + 1;
        let nodes_b = max_b + 1;
        let size = n * nodes_a * nodes_b;
        let node = |ia: usize, ib: usize| (ia * nodes_b + ib) * n;
        let mut big = DMatrix::<f64>::zeros(size, size);
        for ia in 0..nodes_a {
            for ib in 0..nodes_b {
                let r = node(ia, ib);
                big.view_mut((r, r), (n, n)).copy_from(&(a * dt));
                if ia + 1 < nodes_a {
                    let col = node(ia + 1, ib);
                    big.view_mut((r, col), (n, n)).copy_from(&(b * dt));
                }
                if ib + 1 < nodes_b {
                    let col = node(ia, ib + 1);
                    big.view_mut((r, col), (n, n)).copy_from(&(c * dt));
                }
            }
        }
        let e = expm(&big)?;
        let scale = e.view((0, 0), (n, n)).iter().map(|x| x.abs()).fold(0.0, f64::max);
        let drop_below = scale * 1e-300;
        let mut coeffs = Vec::with_capacity(nodes_a);
        let mut dense = Vec::with_capacity(nodes_a);
        for ia in 0..nodes_a {
            let mut row = Vec::with_capacity(nodes_b);
            let mut drow = Vec::with_capacity(nodes_b);
            for ib in 0..nodes_b {
                let block: DMatrix<f64> = e.view((0, node(ia, ib)), (n, n)).into_owned();
                row.push(SparseOp::from_matrix(&block, drop_below));
                drow.push(DenseOp::from_matrix(&block));
            }
            coeffs.push(row);
            dense.push(drow);
        }
        let column: Vec<DMatrix<f64>> = (0..nodes_b).map(|ib| e.view((0, node(0, ib)), (n, n)).into_owned()).collect();
        let field_free = PolySparse::new(&column, drop_below);
        let growth = (dt * norm1(a)).exp();
        let (scale_b, scale_c) = (dt * norm1(b), dt * norm1(c));
        let limits_a = (0..=max_a).map(|k| single_limit(growth, scale_b, k, 0.5 * tol)).collect();
        let limits_b = (0..=max_b).map(|k| single_limit(growth, scale_c, k, 0.5 * tol)).collect();
        Ok(Self { dim: n, max_a, max_b, coeffs, dense, growth, scale_b, scale_c, tol, limits_a, limits_b, field_free })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest truncation orders meeting the tolerance, if any.
    pub fn orders(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x == 0.0 {
            let nb = self.limits_b.iter().position(|&l| y.abs() <= l)?;
            return Some((0, nb));
        }
        if y == 0.0 {
            let na = self.limits_a.iter().position(|&l| x.abs() <= l)?;
            return Some((na, 0));
        }
        let xb = x.abs() * self.scale_b;
        let yc = y.abs() * self.scale_c;
        // Neglected mass is bounded by tail_a(x) e^y + partial_a(x) tail_b(y).
        let na = if x == 0.0 {
            0
        } else {
            (0..=self.max_a).find(|&k| self.growth * exp_tail(xb, k) * yc.exp() <= 0.5 * self.tol)?
        };
        let nb = if y == 0.0 {
            0
        } else {
            (0..=self.max_b)
                .find(|&k| self.growth * exp_partial(xb, na) * exp_tail(yc, k) <= 0.5 * self.tol)?
        };
        Some((na, nb))
    }

    /// `out = exp((A + x B + y C) dt) v`; returns `false` (leaving `out`
    /// untouched) when the series cannot meet the tolerance.
    pub fn apply(&self, x: f64, y: f64, v: &[f64], out: &mut [f64], scratch: &mut [f64]) -> bool {
        let Some((na, nb)) = self.orders(x, y) else {
            return false;
        };
        if na == 0 {
            self.field_free.apply(y, nb, v, out);
            return true;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        // Horner in y over columns, inner Horner in x.
        for ib in (0..=nb).rev() {
            scratch.iter_mut().for_each(|s| *s = 0.0);
            let mut xp = 1.0;
            for ia in 0..=na {
                self.coeffs[ia][ib].mul_add(xp, v, scratch);
                xp *= x;
            }
            if ib == nb {
                out.copy_from_slice(scratch);
            } else {
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o = *o * y + s;
                }
            }
        }
        true
    }

    /// Dense propagator matrix `sum x^a y^b E[a][b]` if the series converges.
    pub fn matrix(&self, x: f64, y: f64) -> Option<DenseOp> {
        let (na, nb) = self.orders(x, y)?;
        let mut out = self.dense[0][0].clone();
        for ia in 0..=na {
            for ib in 0..=nb {
                if ia == 0 && ib == 0 {
                    continue;
                }
                out.axpy(x.powi(ia as i32) * y.powi(ib as i32), &self.dense[ia][ib]);
            }
        }
        Some(out)
    }

    /// Derivative of the propagator with respect to `x`, or `None` when the
    /// series cannot meet the tolerance one order beyond the value itself.
    pub fn derivative_x(&self, x: f64, y: f64) -> Option<DenseOp> {
        let (na, nb) = self.orders(x, y)?;
        let na = na + 1;
        if na > self.max_a {
            return None;
        }
        let mut out = DenseOp::from_matrix(&DMatrix::zeros(self.dim, self.dim));
        for ia in 1..=na {
            for ib in 0..=nb {
                let w = ia as f64 * x.powi(ia as i32 - 1) * y.powi(ib as i32);
                out.axpy(w, &self.dense[ia][ib]);
            }
        }
        Some(out)
    }
}
