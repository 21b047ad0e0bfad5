//! Dense complex linear algebra: Hermitian eigendecomposition, operator
//! norms, spectral propagators, conjugation and commutators.
//!
//! Matrices are stored as `faer::Mat<c64>`. Products are evaluated on the
//! real and imaginary parts separately so that operands which are purely
//! real (eigenvectors of real-symmetric Hamiltonians) or purely imaginary
//! (`σ^y`-type observables) only pay for the real GEMMs they need.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use thiserror::Error;

pub use faer::c64;

/// Absolute floor used wherever a tolerance is scaled by a norm.
pub const ABS_FLOOR: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("eigensolver did not converge on a {dim}x{dim} matrix")]
    NonConvergence { dim: usize },
    #[error("singular value decomposition did not converge on a {rows}x{cols} matrix")]
    SvdNonConvergence { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian: defect {defect:e} exceeds tolerance {tolerance:e}")]
    NotHermitian { defect: f64, tolerance: f64 },
    #[error("matrix is not anti-Hermitian: defect {defect:e} exceeds tolerance {tolerance:e}")]
    NotAntiHermitian { defect: f64, tolerance: f64 },
    #[error("columns are not orthonormal: Gram defect {defect:e}")]
    NotIsometry { defect: f64 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
}

pub type Result<T, E = LinalgError> = std::result::Result<T, E>;

fn par() -> Par {
    faer::get_global_parallelism()
}

/// Dense complex matrix. Operators are square; isometries and band bases
/// may be rectangular.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(Mat<c64>);

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix({}x{})", self.nrows(), self.ncols())?;
        if self.nrows() * self.ncols() <= 64 {
            f.debug_list()
                .entries((0..self.nrows()).map(|i| {
                    (0..self.ncols())
                        .map(|j| (self[(i, j)].re, self[(i, j)].im))
                        .collect::<Vec<_>>()
                }))
                .finish()?;
        }
        Ok(())
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Mat::zeros(rows, cols))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Mat::identity(dim, dim))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> c64) -> Self {
        Self(Mat::from_fn(rows, cols, f))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { c64::new(diag[i], 0.0) } else { c64::new(0.0, 0.0) })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<c64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged rows");
        Self::from_fn(n, m, |i, j| rows[i][j])
    }

    pub fn from_faer(mat: Mat<c64>) -> Self {
        Self(mat)
    }

    pub fn as_faer(&self) -> MatRef<'_, c64> {
        self.0.as_ref()
    }

    pub fn into_faer(self) -> Mat<c64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    /// Dimension of a square matrix.
    pub fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// True when every imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        self.entries().all(|z| z.im == 0.0)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.ncols()).all(|j| {
            (0..self.nrows()).all(|i| i == j || self[(i, j)] == c64::new(0.0, 0.0))
        })
    }

    fn entries(&self) -> impl Iterator<Item = c64> + '_ {
        (0..self.ncols()).flat_map(move |j| (0..self.nrows()).map(move |i| self[(i, j)]))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> c64 {
        (0..self.nrows().min(self.ncols())).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<c64> {
        (0..self.nrows().min(self.ncols())).map(|i| self[(i, i)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint().to_owned())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose().to_owned())
    }

    pub fn scale(&self, factor: c64) -> Self {
        Self::from_fn(self.nrows(), self.ncols(), |i, j| self[(i, j)] * factor)
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(c64::new(factor, 0.0))
    }

    /// `self * diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_columns(&self, d: &[c64]) -> Self {
        assert_eq!(d.len(), self.ncols());
        Self::from_fn(self.nrows(), self.ncols(), |i, j| self[(i, j)] * d[j])
    }

    /// `diag(d) * self`: scales row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[c64]) -> Self {
        assert_eq!(d.len(), self.nrows());
        Self::from_fn(self.nrows(), self.ncols(), |i, j| self[(i, j)] * d[i])
    }

    /// Copies the listed columns into a new matrix, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.nrows(), cols.len(), |i, j| self[(i, cols[j])])
    }

    /// `(M + M†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.nrows(), self.ncols(), |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    pub fn try_add(&self, rhs: &Self) -> Result<Self> {
        check_same_shape(self, rhs)?;
        Ok(Self(&self.0 + &rhs.0))
    }

    pub fn try_sub(&self, rhs: &Self) -> Result<Self> {
        check_same_shape(self, rhs)?;
        Ok(Self(&self.0 - &rhs.0))
    }

    /// Matrix product `self * rhs`.
    pub fn try_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.ncols() != rhs.nrows() {
            return Err(LinalgError::DimensionMismatch {
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        Ok(SplitMatrix::new(self).mul(&SplitMatrix::new(rhs)))
    }

    /// `self * rhs†`.
    pub fn matmul_adjoint(&self, rhs: &Self) -> Self {
        SplitMatrix::new(self).mul(SplitMatrix::new(rhs).adjoint())
    }

    /// `self† * rhs`.
    pub fn adjoint_matmul(&self, rhs: &Self) -> Self {
        SplitMatrix::new(self).adjoint().mul(SplitMatrix::new(rhs).view())
    }

    /// Kronecker product `self ⊗ rhs`; the left factor is the most
    /// significant index.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (r1, c1) = self.shape();
        let (r2, c2) = rhs.shape();
        Self::from_fn(r1 * r2, c1 * c2, |i, j| self[(i / r2, j / c2)] * rhs[(i % r2, j % c2)])
    }
}

fn check_same_shape(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = c64;
    fn index(&self, (i, j): (usize, usize)) -> &c64 {
        &self.0[(i, j)]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut c64 {
        &mut self.0[(i, j)]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        self.try_add(rhs).expect("shape mismatch in matrix sum")
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        self.try_sub(rhs).expect("shape mismatch in matrix difference")
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        self.try_matmul(rhs).expect("shape mismatch in matrix product")
    }
}

/// A complex matrix held as separate real and imaginary parts, with
/// identically-zero parts dropped. Useful when the same factor enters many
/// products.
#[derive(Clone, Debug)]
pub struct SplitMatrix {
    re: Option<Mat<f64>>,
    im: Option<Mat<f64>>,
    rows: usize,
    cols: usize,
}

/// Borrowed view of a [`SplitMatrix`], possibly adjointed.
#[derive(Clone, Copy)]
pub struct SplitRef<'a> {
    re: Option<MatRef<'a, f64>>,
    im: Option<MatRef<'a, f64>>,
    im_sign: f64,
    rows: usize,
    cols: usize,
}

impl SplitMatrix {
    pub fn new(m: &ComplexMatrix) -> Self {
        let (rows, cols) = m.shape();
        let has_re = m.entries().any(|z| z.re != 0.0);
        let has_im = m.entries().any(|z| z.im != 0.0);
        let re = has_re.then(|| Mat::from_fn(rows, cols, |i, j| m[(i, j)].re));
        let im = has_im.then(|| Mat::from_fn(rows, cols, |i, j| m[(i, j)].im));
        Self { re, im, rows, cols }
    }

    pub fn view(&self) -> SplitRef<'_> {
        SplitRef {
            re: self.re.as_ref().map(Mat::as_ref),
            im: self.im.as_ref().map(Mat::as_ref),
            im_sign: 1.0,
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn adjoint(&self) -> SplitRef<'_> {
        self.view().adjoint()
    }

    pub fn mul<'b>(&self, rhs: impl Into<SplitRef<'b>>) -> ComplexMatrix {
        self.view().mul(rhs.into())
    }

    pub fn is_real(&self) -> bool {
        self.im.is_none()
    }

    pub fn is_imaginary(&self) -> bool {
        self.re.is_none()
    }
}

impl<'a> From<&'a SplitMatrix> for SplitRef<'a> {
    fn from(m: &'a SplitMatrix) -> Self {
        m.view()
    }
}

impl<'a> SplitRef<'a> {
    pub fn adjoint(self) -> Self {
        Self {
            re: self.re.map(MatRef::transpose),
            im: self.im.map(MatRef::transpose),
            im_sign: -self.im_sign,
            rows: self.cols,
            cols: self.rows,
        }
    }

    /// Complex product from at most four real GEMMs.
    pub fn mul(self, rhs: SplitRef<'_>) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let (m, n) = (self.rows, rhs.cols);
        let mut re: Option<Mat<f64>> = None;
        let mut im: Option<Mat<f64>> = None;
        let acc = |dst: &mut Option<Mat<f64>>, l: MatRef<f64>, r: MatRef<f64>, alpha: f64| {
            let d = dst.get_or_insert_with(|| Mat::zeros(m, n));
            matmul(d.as_mut(), Accum::Add, l, r, alpha, par());
        };
        if let (Some(ar), Some(br)) = (self.re, rhs.re) {
            acc(&mut re, ar, br, 1.0);
        }
        if let (Some(ai), Some(bi)) = (self.im, rhs.im) {
            acc(&mut re, ai, bi, -self.im_sign * rhs.im_sign);
        }
        if let (Some(ar), Some(bi)) = (self.re, rhs.im) {
            acc(&mut im, ar, bi, rhs.im_sign);
        }
        if let (Some(ai), Some(br)) = (self.im, rhs.re) {
            acc(&mut im, ai, br, self.im_sign);
        }
        ComplexMatrix::from_fn(m, n, |i, j| {
            c64::new(
                re.as_ref().map_or(0.0, |r| r[(i, j)]),
                im.as_ref().map_or(0.0, |r| r[(i, j)]),
            )
        })
    }
}

/// `n × k` isometry with a handful of nonzeros per column, such as the
/// symmetrized basis of a symmetry sector.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseIsometry {
    rows: usize,
    columns: Vec<Vec<(usize, c64)>>,
}

impl SparseIsometry {
    /// Columns are `(row, value)` lists and must be orthonormal.
    pub fn new(rows: usize, columns: Vec<Vec<(usize, c64)>>) -> Result<Self> {
        let mut by_row: Vec<Vec<(usize, c64)>> = vec![Vec::new(); rows];
        for (j, column) in columns.iter().enumerate() {
            for &(i, v) in column {
                if i >= rows {
                    return Err(LinalgError::DimensionMismatch {
                        left: (rows, columns.len()),
                        right: (i + 1, j + 1),
                    });
                }
                by_row[i].push((j, v));
            }
        }
        let mut gram: BTreeMap<(usize, usize), c64> = BTreeMap::new();
        for entries in &by_row {
            for &(a, va) in entries {
                for &(b, vb) in entries {
                    *gram.entry((a, b)).or_default() += va.conj() * vb;
                }
            }
        }
        let mut defect: f64 = 0.0;
        for j in 0..columns.len() {
            let diag = gram.get(&(j, j)).copied().unwrap_or_default();
            defect = defect.max((diag - c64::new(1.0, 0.0)).norm());
        }
        for (&(a, b), v) in &gram {
            if a != b {
                defect = defect.max(v.norm());
            }
        }
        if defect > 1e-12 {
            return Err(LinalgError::NotIsometry { defect });
        }
        Ok(Self { rows, columns })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            rows: dim,
            columns: (0..dim).map(|i| vec![(i, c64::new(1.0, 0.0))]).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// `A†MB` with `A = self`.
    pub fn compress(&self, m: &ComplexMatrix, rhs: &SparseIsometry) -> ComplexMatrix {
        assert_eq!(m.shape(), (self.rows, rhs.rows), "operator does not match isometries");
        ComplexMatrix::from_fn(self.ncols(), rhs.ncols(), |a, b| {
            let mut acc = c64::new(0.0, 0.0);
            for &(i, va) in &self.columns[a] {
                for &(j, vb) in &rhs.columns[b] {
                    acc += va.conj() * m[(i, j)] * vb;
                }
            }
            acc
        })
    }

    /// `A†M`.
    pub fn adjoint_apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(m.nrows(), self.rows, "inner dimensions differ");
        ComplexMatrix::from_fn(self.ncols(), m.ncols(), |a, c| {
            self.columns[a].iter().map(|&(i, v)| v.conj() * m[(i, c)]).sum()
        })
    }

    /// `AM`.
    pub fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(m.nrows(), self.ncols(), "inner dimensions differ");
        let mut out = ComplexMatrix::zeros(self.rows, m.ncols());
        for (a, column) in self.columns.iter().enumerate() {
            for &(i, v) in column {
                for c in 0..m.ncols() {
                    out[(i, c)] += v * m[(a, c)];
                }
            }
        }
        out
    }
}

/// Square complex matrix certified Hermitian at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
    hermiticity_defect: f64,
}

impl HermitianOperator {
    /// Accepts `m` if `‖M − M†‖ ≤ 1e-12 · dim · ‖M‖` (with an absolute floor).
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(LinalgError::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if !matrix.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let skew = &matrix - &matrix.adjoint();
        if skew.max_abs() == 0.0 {
            return Ok(Self {
                matrix,
                hermiticity_defect: 0.0,
            });
        }
        let defect = operator_norm(&skew)?;
        let tolerance = 1e-12 * matrix.dim() as f64 * operator_norm(&matrix)?.max(ABS_FLOOR);
        if defect > tolerance {
            return Err(LinalgError::NotHermitian { defect, tolerance });
        }
        Ok(Self {
            matrix,
            hermiticity_defect: defect,
        })
    }

    /// Replaces `m` by its Hermitian part `(M + M†)/2`, recording the
    /// discarded anti-Hermitian norm as the defect. Used for operators that
    /// are Hermitian in exact arithmetic but assembled from products.
    pub fn from_hermitian_part(matrix: &ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(LinalgError::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if !matrix.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let skew = &matrix.adjoint() - matrix;
        let defect = if skew.max_abs() == 0.0 {
            0.0
        } else {
            operator_norm(&skew)?
        };
        Ok(Self {
            matrix: matrix.hermitian_part(),
            hermiticity_defect: defect,
        })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.hermiticity_defect
    }

    /// Operator norm as the largest absolute eigenvalue.
    pub fn norm(&self) -> Result<f64> {
        hermitian_norm(self)
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let m = &self.matrix;
        let n = m.dim();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut values = if m.is_diagonal() {
            m.diagonal().iter().map(|z| z.re).collect()
        } else if m.is_real() {
            Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)].re)
                .self_adjoint_eigenvalues(Side::Lower)
                .map_err(|_| LinalgError::NonConvergence { dim: n })?
        } else {
            m.as_faer()
                .self_adjoint_eigenvalues(Side::Lower)
                .map_err(|_| LinalgError::NonConvergence { dim: n })?
        };
        values.sort_by(f64::total_cmp);
        Ok(values)
    }
}

impl Add for &HermitianOperator {
    type Output = HermitianOperator;
    fn add(self, rhs: Self) -> HermitianOperator {
        HermitianOperator {
            matrix: &self.matrix + &rhs.matrix,
            hermiticity_defect: self.hermiticity_defect + rhs.hermiticity_defect,
        }
    }
}

/// Eigenvalues in ascending order with the matching orthonormal
/// eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: ComplexMatrix,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &ComplexMatrix {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U f(λ) U†` for a scalar function of the eigenvalues.
    pub fn apply(&self, f: impl Fn(f64) -> c64) -> ComplexMatrix {
        let d: Vec<c64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        self.eigenvectors
            .scale_columns(&d)
            .matmul_adjoint(&self.eigenvectors)
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.apply(|l| c64::new(l, 0.0))
    }

    /// `‖U†U − 1‖`.
    pub fn unitarity_defect(&self) -> f64 {
        let gram = self.eigenvectors.adjoint_matmul(&self.eigenvectors);
        operator_norm(&(&gram - &ComplexMatrix::identity(self.dim()))).unwrap_or(f64::INFINITY)
    }

    /// `‖U diag(λ) U† − M‖`.
    pub fn reconstruction_defect(&self, m: &HermitianOperator) -> f64 {
        operator_norm(&(&self.reconstruct() - m.matrix())).unwrap_or(f64::INFINITY)
    }
}

/// Eigendecomposition of a Hermitian operator. Diagonal input is sorted
/// directly (permutation eigenvectors, stable under degeneracy); real input
/// uses the real-symmetric solver.
pub fn eig_hermitian(m: &HermitianOperator) -> Result<SpectralDecomposition> {
    let mat = m.matrix();
    let n = mat.dim();
    if mat.is_diagonal() {
        let diag: Vec<f64> = mat.diagonal().iter().map(|z| z.re).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
        let eigenvectors = ComplexMatrix::from_fn(n, n, |i, j| {
            if order[j] == i {
                c64::new(1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        return Ok(SpectralDecomposition {
            eigenvalues: order.iter().map(|&k| diag[k]).collect(),
            eigenvectors,
        });
    }
    let fail = |_| LinalgError::NonConvergence { dim: n };
    let (eigenvalues, eigenvectors) = if mat.is_real() {
        let real = Mat::<f64>::from_fn(n, n, |i, j| mat[(i, j)].re);
        let evd = real.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let u = evd.U();
        (
            evd.S().column_vector().iter().copied().collect::<Vec<f64>>(),
            ComplexMatrix::from_fn(n, n, |i, j| c64::new(u[(i, j)], 0.0)),
        )
    } else {
        let evd = mat.as_faer().self_adjoint_eigen(Side::Lower).map_err(fail)?;
        (
            evd.S().column_vector().iter().map(|z| z.re).collect(),
            ComplexMatrix::from_faer(evd.U().to_owned()),
        )
    };
    if eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(LinalgError::NonConvergence { dim: n });
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Largest singular value.
pub fn operator_norm(m: &ComplexMatrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    if m.nrows() == 0 || m.ncols() == 0 || m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let sv = if m.is_real() {
        Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re).singular_values()
    } else {
        m.as_faer().singular_values()
    }
    .map_err(|_| LinalgError::SvdNonConvergence {
        rows: m.nrows(),
        cols: m.ncols(),
    })?;
    Ok(sv.into_iter().fold(0.0, f64::max))
}

/// Largest absolute eigenvalue of a certified-Hermitian operator.
pub fn hermitian_norm(m: &HermitianOperator) -> Result<f64> {
    Ok(m.eigenvalues()?.into_iter().fold(0.0, |acc, l| acc.max(l.abs())))
}

/// `e^{-iHt} = U e^{-iλt} U†`.
pub fn propagator(spec: &SpectralDecomposition, t: f64) -> ComplexMatrix {
    spec.apply(|l| c64::cis(-l * t))
}

/// Heisenberg-style conjugation `U O U†`.
pub fn conjugate(u: &ComplexMatrix, o: &ComplexMatrix) -> Result<ComplexMatrix> {
    if u.ncols() != o.nrows() || o.ncols() != o.nrows() {
        return Err(LinalgError::DimensionMismatch {
            left: u.shape(),
            right: o.shape(),
        });
    }
    Ok(u.try_matmul(o)?.matmul_adjoint(u))
}

/// `e^T` for anti-Hermitian `T`, via the spectral decomposition of the
/// Hermitian matrix `iT`.
pub fn exp_antihermitian(t: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !t.is_square() {
        return Err(LinalgError::NotSquare {
            rows: t.nrows(),
            cols: t.ncols(),
        });
    }
    let sum = t + &t.adjoint();
    let defect = operator_norm(&sum)?;
    let tolerance = 1e-10 * operator_norm(t)?.max(1.0);
    if defect > tolerance {
        return Err(LinalgError::NotAntiHermitian { defect, tolerance });
    }
    let it = t.scale(c64::new(0.0, 1.0));
    let herm = HermitianOperator::from_hermitian_part(&it)?;
    let spec = eig_hermitian(&herm)?;
    // T = -i (iT), so e^T = W e^{-iμ} W†.
    Ok(spec.apply(|mu| c64::cis(-mu)))
}

/// `AB − BA`.
pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(&(a * b) - &(b * a))
}

/// Pauli matrices in the `(|g⟩, |e⟩)` basis with `σ^z|e⟩ = +|e⟩`.
pub mod pauli {
    use super::{c64, ComplexMatrix};

    fn m(entries: [[c64; 2]; 2]) -> ComplexMatrix {
        ComplexMatrix::from_fn(2, 2, |i, j| entries[i][j])
    }

    const O: c64 = c64 { re: 0.0, im: 0.0 };
    const ONE: c64 = c64 { re: 1.0, im: 0.0 };
    const I: c64 = c64 { re: 0.0, im: 1.0 };

    pub fn x() -> ComplexMatrix {
        m([[O, ONE], [ONE, O]])
    }

    /// `σ^y = i(|g⟩⟨e| − |e⟩⟨g|)`.
    pub fn y() -> ComplexMatrix {
        m([[O, I], [-I, O]])
    }

    pub fn z() -> ComplexMatrix {
        m([[-ONE, O], [O, ONE]])
    }

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        operator_norm(&(a - b)).unwrap()
    }

    fn herm(m: ComplexMatrix) -> HermitianOperator {
        HermitianOperator::new(m).unwrap()
    }

    #[test]
    fn eig_of_diagonal_sorts_and_permutes() {
        let m = herm(ComplexMatrix::from_real_diagonal(&[3.0, 1.0, 2.0]));
        let spec = eig_hermitian(&m).unwrap();
        assert_eq!(spec.eigenvalues(), &[1.0, 2.0, 3.0]);
        let u = spec.eigenvectors();
        assert_eq!(u[(1, 0)], c64::new(1.0, 0.0));
        assert_eq!(u[(2, 1)], c64::new(1.0, 0.0));
        assert_eq!(u[(0, 2)], c64::new(1.0, 0.0));
    }

    #[test]
    fn eig_of_sigma_x() {
        let spec = eig_hermitian(&herm(pauli::x())).unwrap();
        assert_abs_diff_eq!(spec.eigenvalues()[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(spec.eigenvalues()[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eig_reconstructs_gue_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = gue(&mut rng, 8);
        let spec = eig_hermitian(&m).unwrap();
        let norm = m.norm().unwrap();
        assert!(spec.reconstruction_defect(&m) < 1e-10 * norm);
        assert!(spec.unitarity_defect() < 1e-10);
        assert!(spec.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn real_symmetric_path_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = gaussian_matrix(&mut rng, 10, 10);
        let real = ComplexMatrix::from_fn(10, 10, |i, j| c64::new(g[(i, j)].re + g[(j, i)].re, 0.0));
        let m = herm(real);
        let spec = eig_hermitian(&m).unwrap();
        assert!(spec.eigenvectors().is_real());
        assert!(spec.reconstruction_defect(&m) < 1e-10 * m.norm().unwrap());
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = ComplexMatrix::from_rows(&[
            vec![c64::new(0.0, 0.0), c64::new(1.0, 0.0)],
            vec![c64::new(0.0, 0.0), c64::new(0.0, 0.0)],
        ]);
        assert!(matches!(HermitianOperator::new(m), Err(LinalgError::NotHermitian { .. })));
    }

    #[test]
    fn norms_of_simple_matrices() {
        assert_abs_diff_eq!(operator_norm(&ComplexMatrix::identity(5)).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(operator_norm(&pauli::x()).unwrap(), 1.0, epsilon = 1e-14);
        // σ_max = sqrt(max eig of M†M) = sqrt(4).
        let nil = ComplexMatrix::from_rows(&[
            vec![c64::new(0.0, 0.0), c64::new(2.0, 0.0)],
            vec![c64::new(0.0, 0.0), c64::new(0.0, 0.0)],
        ]);
        assert_abs_diff_eq!(operator_norm(&nil).unwrap(), 2.0, epsilon = 1e-14);
        let mut bad = ComplexMatrix::identity(2);
        bad[(0, 1)] = c64::new(f64::NAN, 0.0);
        assert_eq!(operator_norm(&bad), Err(LinalgError::NonFinite));
    }

    #[test]
    fn hermitian_norm_matches_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gue(&mut rng, 9);
        assert_abs_diff_eq!(m.norm().unwrap(), operator_norm(m.matrix()).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn propagator_identity_and_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = eig_hermitian(&gue(&mut rng, 6)).unwrap();
        assert!(dist(&propagator(&spec, 0.0), &ComplexMatrix::identity(6)) < 1e-12);

        // H = (Δ₀/2)σ^z at t = 2π/Δ₀ gives diag(e^{iπ}, e^{-iπ}) = −1.
        let delta0 = 7.5;
        let h = herm(pauli::z().scale_real(delta0 / 2.0));
        let u = propagator(&eig_hermitian(&h).unwrap(), 2.0 * std::f64::consts::PI / delta0);
        assert!(dist(&u, &ComplexMatrix::identity(2).scale_real(-1.0)) < 1e-14);

        let fwd = propagator(&spec, 0.37);
        let back = propagator(&spec, -0.37);
        assert!(dist(&(&fwd * &back), &ComplexMatrix::identity(6)) < 1e-12);
    }

    #[test]
    fn conjugation_examples() {
        let o = pauli::z();
        assert_eq!(conjugate(&ComplexMatrix::identity(2), &o).unwrap(), o);
        let flipped = conjugate(&pauli::x(), &o).unwrap();
        assert!(dist(&flipped, &o.scale_real(-1.0)) < 1e-15);
        assert!(matches!(
            conjugate(&ComplexMatrix::identity(3), &o),
            Err(LinalgError::DimensionMismatch { .. })
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_unitary(&mut rng, 7);
        let o = gaussian_matrix(&mut rng, 7, 7);
        let c = conjugate(&u, &o).unwrap();
        assert_abs_diff_eq!(operator_norm(&c).unwrap(), operator_norm(&o).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn exponential_of_antihermitian() {
        assert!(dist(&exp_antihermitian(&ComplexMatrix::zeros(3, 3)).unwrap(), &ComplexMatrix::identity(3)) < 1e-15);

        // e^{iπσ^x/2} = cos(π/2) + i sin(π/2) σ^x = iσ^x.
        let t = pauli::x().scale(c64::new(0.0, std::f64::consts::FRAC_PI_2));
        let expected = pauli::x().scale(c64::new(0.0, 1.0));
        assert!(dist(&exp_antihermitian(&t).unwrap(), &expected) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = gaussian_matrix(&mut rng, 5, 5);
        let anti = (&g - &g.adjoint()).scale_real(0.3);
        let s = exp_antihermitian(&anti).unwrap();
        let s_inv = exp_antihermitian(&anti.scale_real(-1.0)).unwrap();
        assert!(dist(&(&s * &s_inv), &ComplexMatrix::identity(5)) < 1e-10);
        assert!(dist(&s.adjoint_matmul(&s), &ComplexMatrix::identity(5)) < 1e-10);

        assert!(matches!(exp_antihermitian(&pauli::x()), Err(LinalgError::NotAntiHermitian { .. })));
    }

    #[test]
    fn commutator_examples() {
        let xy = commutator(&pauli::x(), &pauli::y()).unwrap();
        // With σ^y = i(|g⟩⟨e| − |e⟩⟨g|) and σ^z = |e⟩⟨e| − |g⟩⟨g|, [σ^x, σ^y] = 2iσ^z.
        assert!(dist(&xy, &pauli::z().scale(c64::new(0.0, 2.0))) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = gaussian_matrix(&mut rng, 4, 4);
        assert_eq!(commutator(&a, &a).unwrap().max_abs(), 0.0);
        assert!(commutator(&a, &ComplexMatrix::identity(3)).is_err());
    }

    #[test]
    fn split_products_match_direct_complex_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = gaussian_matrix(&mut rng, 5, 3);
        let b = gaussian_matrix(&mut rng, 3, 4);
        let direct = ComplexMatrix::from_faer(a.as_faer() * b.as_faer());
        assert!(dist(&(&a * &b), &direct) < 1e-12);
        let imag = ComplexMatrix::from_fn(4, 3, |i, j| c64::new(0.0, b[(j, i)].im));
        let direct = ComplexMatrix::from_faer(a.as_faer() * imag.as_faer().adjoint());
        assert!(dist(&a.matmul_adjoint(&imag), &direct) < 1e-12);
        let direct = ComplexMatrix::from_faer(a.as_faer().adjoint() * a.as_faer());
        assert!(dist(&a.adjoint_matmul(&a), &direct) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn propagator_group_property(seed in any::<u64>(), s in -1e3f64..1e3, t in -1e3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = eig_hermitian(&gue(&mut rng, 5)).unwrap();
            let lhs = &propagator(&spec, s) * &propagator(&spec, t);
            let rhs = propagator(&spec, s + t);
            prop_assert!(dist(&lhs, &rhs) < 1e-9);
            prop_assert!(spec.unitarity_defect() < 1e-10);
        }

        #[test]
        fn norm_submultiplicative_and_unitarily_invariant(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = gaussian_matrix(&mut rng, n, n);
            let b = gaussian_matrix(&mut rng, n, n);
            let u = random_unitary(&mut rng, n);
            let na = operator_norm(&a).unwrap();
            let nb = operator_norm(&b).unwrap();
            prop_assert!(operator_norm(&(&a * &b)).unwrap() <= na * nb + 1e-9);
            prop_assert!((operator_norm(&(&u * &a)).unwrap() - na).abs() < 1e-9);
            prop_assert!((operator_norm(&conjugate(&u, &a).unwrap()).unwrap() - na).abs() < 1e-9);
            let c = commutator(&a, &b).unwrap();
            prop_assert!(operator_norm(&c).unwrap() <= 2.0 * na * nb + 1e-9);
        }
    }

    #[test]
    fn sparse_isometry_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = gaussian_matrix(&mut rng, 4, 4);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = SparseIsometry::new(
            4,
            vec![vec![(0, c64::new(h, 0.0)), (3, c64::new(0.0, h))], vec![(1, c64::new(1.0, 0.0))]],
        )
        .unwrap();
        let dense = ComplexMatrix::from_fn(4, 2, |i, j| match (i, j) {
            (0, 0) => c64::new(h, 0.0),
            (3, 0) => c64::new(0.0, h),
            (1, 1) => c64::new(1.0, 0.0),
            _ => c64::new(0.0, 0.0),
        });
        assert!(dist(&a.compress(&m, &a), &dense.adjoint_matmul(&(&m * &dense))) < 1e-14);
        assert!(dist(&a.adjoint_apply(&m), &dense.adjoint_matmul(&m)) < 1e-14);
        let small = gaussian_matrix(&mut rng, 2, 3);
        assert!(dist(&a.apply(&small), &(&dense * &small)) < 1e-14);
    }

    #[test]
    fn sparse_isometry_rejects_overlapping_columns() {
        let columns = vec![vec![(0, c64::new(1.0, 0.0))], vec![(0, c64::new(0.6, 0.0)), (1, c64::new(0.8, 0.0))]];
        assert!(matches!(SparseIsometry::new(2, columns), Err(LinalgError::NotIsometry { .. })));
    }
}
