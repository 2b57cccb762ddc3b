//! Dense linear-algebra helpers shared by the design modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Full singular value decomposition `m = u * diag(s) * v^T`.
///
/// `u` is `rows x rows`, `v` is `cols x cols` (both orthogonal) and `s`
/// holds the `min(rows, cols)` singular values in nonincreasing order.
///
/// Computed with faer: nalgebra's bidiagonal SVD loses accuracy on exactly
/// rank-deficient matrices, which is the normal case for Hankel data.
#[derive(Debug, Clone)]
pub struct FullSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn full_svd(m: &DMatrix<f64>) -> FullSvd {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return FullSvd {
            u: DMatrix::identity(rows, rows),
            s: DVector::zeros(0),
            v: DMatrix::identity(cols, cols),
        };
    }
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.svd().expect("SVD iteration converges for finite input");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    FullSvd {
        u: DMatrix::from_fn(rows, rows, |i, j| u[(i, j)]),
        s: DVector::from_fn(p, |i, _| s[i]),
        v: DMatrix::from_fn(cols, cols, |i, j| v[(i, j)]),
    }
}

/// Number of singular values above `rank_tol * sigma_max`.
pub fn rank_from_singular_values(s: &DVector<f64>, rank_tol: f64) -> usize {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rank_tol * smax).count()
}

pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    rank_from_singular_values(&singular_values(m), rank_tol)
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let s = fm.singular_values().expect("SVD iteration converges for finite input");
    DVector::from_vec(s)
}

/// Truncated Moore-Penrose pseudoinverse with the relative rank policy.
pub fn pinv(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = full_svd(m);
    let r = rank_from_singular_values(&svd.s, rank_tol);
    let mut out = DMatrix::zeros(cols, rows);
    for k in 0..r {
        out += svd.v.column(k) * svd.u.column(k).transpose() / svd.s[k];
    }
    out
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    assert!(a.is_square(), "spectral radius of a non-square matrix");
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.rows_mut(r, b.nrows()).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Stacks vectors into one column.
pub fn stack_vectors<'a, I>(vs: I) -> DVector<f64>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let parts: Vec<f64> = vs.into_iter().flat_map(|v| v.iter().cloned()).collect();
    DVector::from_vec(parts)
}

/// `||a - b||_F / max(||b||_F, tiny)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / scale
}

/// Result of Gauss-Jordan elimination with partial pivoting: `e * m = rref`.
#[derive(Debug, Clone)]
pub struct Echelon {
    pub rref: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub rank: usize,
    pub pivots: Vec<usize>,
}

/// Reduced row echelon form of `m`, tracking the accumulated row operations.
///
/// Entries below `tol * max|m|` are treated as zero when choosing pivots.
pub fn gauss_jordan(m: &DMatrix<f64>, tol: f64) -> Echelon {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut e = DMatrix::<f64>::identity(rows, rows);
    let scale = m.amax();
    let thresh = tol * scale.max(f64::MIN_POSITIVE);
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let (best, best_val) = (row..rows)
            .map(|i| (i, a[(i, col)].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_val <= thresh {
            for i in row..rows {
                a[(i, col)] = 0.0;
            }
            continue;
        }
        a.swap_rows(row, best);
        e.swap_rows(row, best);
        let p = a[(row, col)];
        a.row_mut(row).scale_mut(1.0 / p);
        e.row_mut(row).scale_mut(1.0 / p);
        for i in 0..rows {
            if i != row {
                let f = a[(i, col)];
                if f != 0.0 {
                    let ar = a.row(row).clone_owned();
                    let er = e.row(row).clone_owned();
                    let new_a = a.row(i) - ar * f;
                    let new_e = e.row(i) - er * f;
                    a.set_row(i, &new_a);
                    e.set_row(i, &new_e);
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    Echelon {
        rref: a,
        e,
        rank: row,
        pivots,
    }
}
