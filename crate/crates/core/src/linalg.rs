//! Dense real symmetric linear algebra.
//!
//! Everything downstream goes through the types here, so the ordering and
//! sign conventions are fixed once:
//!
//! * eigenvalues are sorted descending, ties keep the original column order;
//! * every eigenvector (and right singular vector) is flipped so that its
//!   entry of largest magnitude is non-negative. When several entries share
//!   the largest magnitude (within `SIGN_TIE_TOL`) the first one decides.
//!
//! Degenerate eigenspaces make individual eigenvectors non-identifiable; only
//! the spanned subspace is meaningful there.

use nalgebra::DMatrix;
use serde::ser::{Serialize, SerializeSeq, Serializer};

use crate::error::{Error, Result};

/// Largest dimension accepted by the dense routines.
pub const MAX_DIM: usize = 5000;
/// Maximum tolerated `|a_ij - a_ji|` relative to `max(1, max|a|)`.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Cyclic Jacobi sweep budget.
pub const MAX_SWEEPS: usize = 100;
/// Jacobi stops once the off-diagonal Frobenius mass is below this times `‖A‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;
/// Cholesky pivots at or below this value are rejected.
pub const PIVOT_FLOOR: f64 = 1e-12;

const SIGN_TIE_TOL: f64 = 1e-12;

/// A dense symmetric matrix. Entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    a: DMatrix<f64>,
}

impl SymMatrix {
    /// Validates and symmetrizes `a` via `(A + Aᵀ)/2`.
    pub fn new(mut a: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = a.shape();
        if rows != cols {
            return Err(Error::input(format!(
                "symmetric matrix must be square, got {rows}x{cols}"
            )));
        }
        if rows == 0 {
            return Err(Error::input("symmetric matrix must have dimension >= 1"));
        }
        if rows > MAX_DIM {
            return Err(Error::Capacity {
                dim: rows,
                limit: MAX_DIM,
            });
        }
        if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite entry at ({}, {})",
                pos % rows,
                pos / rows
            )));
        }
        let scale = a.amax().max(1.0);
        for i in 0..rows {
            for j in (i + 1)..rows {
                let (x, y) = (a[(i, j)], a[(j, i)]);
                if (x - y).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::input(format!(
                        "matrix is not symmetric at ({i}, {j}): {x} vs {y}"
                    )));
                }
                let m = 0.5 * (x + y);
                a[(i, j)] = m;
                a[(j, i)] = m;
            }
        }
        Ok(SymMatrix { a })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::input("matrix rows must all have length p"));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix {
            a: DMatrix::identity(p, p),
        }
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix {
            a: DMatrix::zeros(p, p),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        let p = d.len();
        Self::new(DMatrix::from_fn(p, p, |i, j| if i == j { d[i] } else { 0.0 }))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.a
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[(i, j)]
    }

    /// `‖A‖_max`, the largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.a.amax()
    }

    pub fn frobenius(&self) -> f64 {
        self.a.norm()
    }

    pub fn trace(&self) -> f64 {
        self.a.trace()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.a.row(i).iter().copied().collect())
            .collect()
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_same_dim(other)?;
        Ok(SymMatrix {
            a: &self.a - &other.a,
        })
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_same_dim(other)?;
        Ok(SymMatrix {
            a: &self.a + &other.a,
        })
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix { a: &self.a * c }
    }

    /// `A + c·I`.
    pub fn shift(&self, c: f64) -> SymMatrix {
        let mut a = self.a.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += c;
        }
        SymMatrix { a }
    }

    fn check_same_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Alignment(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.dim()))?;
        for row in self.to_rows() {
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

/// Ordered eigendecomposition `A = Q Λ Qᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues, descending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Orthogonal matrix whose column `k` pairs with `values()[k]`.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Zero-based eigenvector `k` as an owned vector.
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().copied().collect()
    }

    /// First `r` eigenvectors as a `p × r` matrix.
    pub fn leading(&self, r: usize) -> DMatrix<f64> {
        self.vectors.columns(0, r).into_owned()
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let q = &self.vectors;
        let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * self.values[j]);
        scaled * q.transpose()
    }

    /// Replaces eigenvalues in `[-tol, 0)` by zero; returns how many changed.
    pub(crate) fn clamp_small_negatives(&mut self, tol: f64) -> usize {
        let mut changed = 0;
        for v in &mut self.values {
            if *v < 0.0 && *v >= -tol {
                *v = 0.0;
                changed += 1;
            }
        }
        changed
    }
}

/// Flip so that the first entry of (near-)largest magnitude is non-negative.
fn needs_flip(col: impl Iterator<Item = f64> + Clone) -> bool {
    let max = col.clone().fold(0.0_f64, |m, v| m.max(v.abs()));
    col.into_iter()
        .find(|v| v.abs() >= max - SIGN_TIE_TOL * max.max(1.0))
        .map(|v| v < 0.0)
        .unwrap_or(false)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigendecompose(a: &SymMatrix) -> Result<EigenSystem> {
    let n = a.dim();
    // row-major working copy
    let mut m: Vec<f64> = (0..n * n).map(|idx| a.a[(idx / n, idx % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm_f = a.frobenius();
    let target = JACOBI_TOL * norm_f;

    let off_mass = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off_mass(&m) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let g = 100.0 * apq.abs();
                if app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                let tau = s / (1.0 + c);

                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = m[r * n + p];
                    let h = m[r * n + q];
                    let gp = g - s * (h + g * tau);
                    let hq = h + s * (g - h * tau);
                    m[r * n + p] = gp;
                    m[p * n + r] = gp;
                    m[r * n + q] = hq;
                    m[q * n + r] = hq;
                }
                for r in 0..n {
                    let g = v[r * n + p];
                    let h = v[r * n + q];
                    v[r * n + p] = g - s * (h + g * tau);
                    v[r * n + q] = h + s * (g - h * tau);
                }
            }
        }
    }
    if !converged {
        let residual = off_mass(&m);
        if residual > target {
            return Err(Error::NoConvergence {
                iterations: MAX_SWEEPS,
                residual,
            });
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep original index order
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));

    let values: Vec<f64> = order.iter().map(|&k| diag[k]).collect();
    let mut vectors = DMatrix::from_fn(n, n, |i, j| v[i * n + order[j]]);
    for j in 0..n {
        if needs_flip(vectors.column(j).iter().copied()) {
            vectors.column_mut(j).neg_mut();
        }
    }
    Ok(EigenSystem { values, vectors })
}

/// `max_k |λ_k(A)|`.
pub fn spectral_norm(a: &SymMatrix) -> Result<f64> {
    let eig = symmetric_eigendecompose(a)?;
    Ok(spectral_norm_of(&eig))
}

pub(crate) fn spectral_norm_of(eig: &EigenSystem) -> f64 {
    eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Thin singular value decomposition `M = U Σ Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    /// Non-negative, descending.
    pub singular_values: Vec<f64>,
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub left: DMatrix<f64>,
    /// `cols × k` with orthonormal columns.
    pub right: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi SVD, intended for small matrices.
pub fn small_svd(m: &DMatrix<f64>) -> Result<Svd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite entry in SVD input"));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::input("SVD input must be non-empty"));
    }
    if m.nrows() < m.ncols() {
        let t = small_svd(&m.transpose())?;
        // sign convention is defined on the right vectors, so re-normalize
        return Ok(canonical_signs(Svd {
            singular_values: t.singular_values,
            left: t.right,
            right: t.left,
        }));
    }
    let (rows, cols) = m.shape();
    let mut u = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let alpha = u.column(i).norm_squared();
                let beta = u.column(j).norm_squared();
                let gamma = u.column(i).dot(&u.column(j));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + zeta.hypot(1.0))
                };
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                for r in 0..rows {
                    let (a, b) = (u[(r, i)], u[(r, j)]);
                    u[(r, i)] = c * a - s * b;
                    u[(r, j)] = s * a + c * b;
                }
                for r in 0..cols {
                    let (a, b) = (v[(r, i)], v[(r, j)]);
                    v[(r, i)] = c * a - s * b;
                    v[(r, j)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_SWEEPS,
            residual: f64::NAN,
        });
    }

    let norms: Vec<f64> = (0..cols).map(|j| u.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));
    let singular_values: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    let right = DMatrix::from_fn(cols, cols, |r, c| v[(r, order[c])]);

    let smax = singular_values[0];
    let tiny = smax * 1e-14 * (rows.max(cols) as f64);
    let mut left = DMatrix::<f64>::zeros(rows, cols);
    let mut filled: Vec<usize> = Vec::new();
    for (c, &k) in order.iter().enumerate() {
        if norms[k] > tiny && norms[k] > 0.0 {
            let col = u.column(k) / norms[k];
            left.set_column(c, &col);
            filled.push(c);
        }
    }
    // complete the left basis for (numerically) zero singular values
    let mut basis_idx = 0;
    for c in 0..cols {
        if filled.contains(&c) {
            continue;
        }
        loop {
            let mut e = nalgebra::DVector::<f64>::zeros(rows);
            e[basis_idx % rows] = 1.0;
            basis_idx += 1;
            for &f in &filled {
                let proj = left.column(f).dot(&e);
                e -= left.column(f) * proj;
            }
            let n = e.norm();
            if n > 1e-8 {
                left.set_column(c, &(e / n));
                filled.push(c);
                break;
            }
            if basis_idx > 2 * rows + cols {
                return Err(Error::NoConvergence {
                    iterations: basis_idx,
                    residual: n,
                });
            }
        }
    }
    Ok(canonical_signs(Svd {
        singular_values,
        left,
        right,
    }))
}

fn canonical_signs(mut svd: Svd) -> Svd {
    for k in 0..svd.singular_values.len() {
        if needs_flip(svd.right.column(k).iter().copied()) {
            svd.right.column_mut(k).neg_mut();
            svd.left.column_mut(k).neg_mut();
        }
    }
    svd
}

/// Lower-triangular `L` with `L Lᵀ = A`.
pub fn cholesky(a: &SymMatrix) -> Result<DMatrix<f64>> {
    let n = a.dim();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a.a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_FLOOR) {
            return Err(Error::RankDeficient { index: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a.a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// `L⁻¹ A L⁻ᵀ` for symmetric `A`, symmetrized.
pub fn whiten(l: &DMatrix<f64>, a: &SymMatrix) -> Result<SymMatrix> {
    let y = solve_lower(l, &a.a);
    let w = solve_lower(l, &y.transpose());
    SymMatrix::new(w)
}

/// Largest absolute entry of `A - B`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Largest deviation of `QᵀQ` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    max_abs_diff(&g, &DMatrix::identity(g.nrows(), g.ncols()))
}
