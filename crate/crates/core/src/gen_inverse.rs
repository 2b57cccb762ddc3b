//! Numerical rank, null spaces, and the SVD parametrization of all
//! generalized inverses `{G : H G H = H}`.
//!
//! With `H = U [S 0; 0 0] V^T` every generalized inverse is
//! `G(F) = V ([S^-1 0; 0 0] + F) U^T` for some `F` whose upper-left
//! `n_S x n_S` block is zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{full_svd, rank_from_singular_values};

/// Default relative rank tolerance for design-time decompositions.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Full SVD of a matrix together with its numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdRank {
    /// `rows x rows` orthogonal.
    pub u: DMatrix<f64>,
    /// All `min(rows, cols)` singular values, nonincreasing.
    pub singular_values: DVector<f64>,
    /// `cols x cols` orthogonal.
    pub v: DMatrix<f64>,
    /// Number of singular values above `rank_tol * sigma_max`.
    pub rank: usize,
}

impl SvdRank {
    /// The retained positive singular values (diagonal of `S`).
    pub fn s(&self) -> DVector<f64> {
        self.singular_values.rows(0, self.rank).clone_owned()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    /// `[S^-1 0; 0 0]`, shaped `cols x rows`.
    pub fn sigma_pinv(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.cols(), self.rows());
        for i in 0..self.rank {
            out[(i, i)] = 1.0 / self.singular_values[i];
        }
        out
    }

    /// Orthonormal basis of the numerical null space (trailing columns of `V`).
    pub fn null_basis(&self) -> DMatrix<f64> {
        self.v.columns(self.rank, self.cols() - self.rank).clone_owned()
    }
}

pub fn svd_with_rank(m: &DMatrix<f64>, rank_tol: f64) -> Result<SvdRank> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidParameter("cannot decompose an empty matrix".into()));
    }
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidParameter("rank_tol must be positive".into()));
    }
    let f = full_svd(m);
    let rank = rank_from_singular_values(&f.s, rank_tol);
    Ok(SvdRank {
        u: f.u,
        singular_values: f.s,
        v: f.v,
        rank,
    })
}

/// One member `G(F)` of the generalized-inverse set of a decomposed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GInverseParam {
    svd: SvdRank,
    free: DMatrix<f64>,
}

impl GInverseParam {
    /// `free` must be `cols x rows` of the decomposed matrix. Its upper-left
    /// `n_S x n_S` block is overwritten with zeros.
    pub fn new(svd: SvdRank, free: DMatrix<f64>) -> Result<Self> {
        check_dim("free matrix rows", svd.cols(), free.nrows())?;
        check_dim("free matrix columns", svd.rows(), free.ncols())?;
        let mut free = free;
        let n_s = svd.rank;
        free.view_mut((0, 0), (n_s, n_s)).fill(0.0);
        Ok(Self { svd, free })
    }

    /// The `F = 0` member, i.e. the truncated Moore-Penrose pseudoinverse.
    pub fn pseudoinverse(svd: SvdRank) -> Self {
        let free = DMatrix::zeros(svd.cols(), svd.rows());
        Self { svd, free }
    }

    pub fn svd(&self) -> &SvdRank {
        &self.svd
    }

    pub fn free(&self) -> &DMatrix<f64> {
        &self.free
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        &self.svd.v * (self.svd.sigma_pinv() + &self.free) * self.svd.u.transpose()
    }
}

/// `G(F) = V ([S^-1 0; 0 0] + F) U^T`.
pub fn materialize_g(p: &GInverseParam) -> DMatrix<f64> {
    p.materialize()
}

/// `||H G H - H||_F / ||H||_F`.
pub fn g_inverse_residual(h: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let scale = h.norm().max(f64::MIN_POSITIVE);
    (h * g * h - h).norm() / scale
}

/// Orthonormal basis of the numerical null space of `m`.
pub fn null_space_basis(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    Ok(svd_with_rank(m, rank_tol)?.null_basis())
}

/// `||H_u Z||_F` for an orthonormal null-space basis `Z` of `H`.
pub fn null_inclusion_gap(h: &DMatrix<f64>, h_u: &DMatrix<f64>, rank_tol: f64) -> Result<f64> {
    check_dim("H_u columns", h.ncols(), h_u.ncols())?;
    let z = null_space_basis(h, rank_tol)?;
    Ok((h_u * z).norm())
}

/// Whether `Null(H)` is contained in `Null(H_u)`, judged by
/// `||H_u Z|| <= rank_tol * max(1, ||H_u||)`.
pub fn null_inclusion(h: &DMatrix<f64>, h_u: &DMatrix<f64>, rank_tol: f64) -> Result<bool> {
    let gap = null_inclusion_gap(h, h_u, rank_tol)?;
    Ok(gap <= rank_tol * h_u.norm().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_error;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_low_rank(rng: &mut ChaCha8Rng, r: usize, c: usize, rank: usize) -> DMatrix<f64> {
        random_matrix(rng, r, rank) * random_matrix(rng, rank, c)
    }

    fn reconstruct(p: &SvdRank) -> DMatrix<f64> {
        let mut sigma = DMatrix::zeros(p.rows(), p.cols());
        for i in 0..p.singular_values.len() {
            sigma[(i, i)] = p.singular_values[i];
        }
        &p.u * sigma * p.v.transpose()
    }

    #[test]
    fn identity_and_zero_ranks() {
        let id = svd_with_rank(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(id.rank, 3);
        assert_relative_eq!(id.s(), DVector::from_element(3, 1.0), epsilon = 1e-14);
        let zero = svd_with_rank(&DMatrix::zeros(3, 4), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(zero.rank, 0);
        assert!(svd_with_rank(&DMatrix::zeros(0, 4), DEFAULT_RANK_TOL).is_err());
    }

    #[test]
    fn outer_product_has_rank_one() {
        let u = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let p = svd_with_rank(&(&u * v.transpose()), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(p.rank, 1);
        assert_relative_eq!(p.singular_values[0], 15.0, max_relative = 1e-13);
    }

    #[test]
    fn svd_reconstructs_and_factors_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c, k) in [(6, 9, 4), (9, 6, 3), (5, 5, 5)] {
            let m = random_low_rank(&mut rng, r, c, k);
            let p = svd_with_rank(&m, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(p.rank, k);
            assert!(relative_error(&reconstruct(&p), &m) < 1e-10);
            assert!((p.u.transpose() * &p.u - DMatrix::identity(r, r)).amax() < 1e-10);
            assert!((p.v.transpose() * &p.v - DMatrix::identity(c, c)).amax() < 1e-10);
            let s = p.s();
            assert!(s.iter().all(|&x| x > 0.0));
            assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn zero_free_matrix_is_the_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_low_rank(&mut rng, 7, 10, 4);
        let g = GInverseParam::pseudoinverse(svd_with_rank(&m, DEFAULT_RANK_TOL).unwrap()).materialize();
        // The four Penrose conditions characterize the pseudoinverse uniquely.
        assert!(relative_error(&(&m * &g * &m), &m) < 1e-10);
        assert!(relative_error(&(&g * &m * &g), &g) < 1e-10);
        let mg = &m * &g;
        let gm = &g * &m;
        assert!((&mg - mg.transpose()).amax() < 1e-10);
        assert!((&gm - gm.transpose()).amax() < 1e-10);
    }

    #[test]
    fn invertible_matrix_has_a_unique_generalized_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 4, 4) + DMatrix::identity(4, 4) * 3.0;
        let svd = svd_with_rank(&m, DEFAULT_RANK_TOL).unwrap();
        let p = GInverseParam::new(svd, random_matrix(&mut rng, 4, 4)).unwrap();
        assert!(p.free().amax() == 0.0);
        let inv = m.clone().try_inverse().unwrap();
        assert!(relative_error(&p.materialize(), &inv) < 1e-10);
    }

    #[test]
    fn free_matrix_block_is_zeroed_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_low_rank(&mut rng, 5, 8, 3);
        let svd = svd_with_rank(&m, DEFAULT_RANK_TOL).unwrap();
        assert!(GInverseParam::new(svd.clone(), DMatrix::zeros(5, 8)).is_err());
        let p = GInverseParam::new(svd, DMatrix::from_element(8, 5, 1.0)).unwrap();
        assert_eq!(p.free().view((0, 0), (3, 3)).amax(), 0.0);
        assert_eq!(p.free()[(3, 0)], 1.0);
        assert_eq!(p.free()[(0, 3)], 1.0);
    }

    #[test]
    fn null_space_examples() {
        let z = null_space_basis(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.ncols(), 0);

        let z = null_space_basis(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.ncols(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(z[(0, 0)].abs(), s, epsilon = 1e-14);
        assert_relative_eq!(z[(0, 0)], -z[(1, 0)], epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_low_rank(&mut rng, 6, 11, 4);
        let z = null_space_basis(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(z.ncols(), 7);
        assert!((&m * &z).amax() < 1e-10);
        assert!((z.transpose() * &z - DMatrix::identity(7, 7)).amax() < 1e-10);
    }

    #[test]
    fn null_inclusion_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_low_rank(&mut rng, 4, 9, 3);
        assert!(null_inclusion(&h, &DMatrix::zeros(2, 9), DEFAULT_RANK_TOL).unwrap());
        let tall = random_matrix(&mut rng, 9, 5);
        assert!(null_inclusion(&tall, &random_matrix(&mut rng, 2, 5), DEFAULT_RANK_TOL).unwrap());
        // Rows in the row space of H are annihilated by Null(H); generic rows are not.
        let inside = random_matrix(&mut rng, 2, 4) * &h;
        assert!(null_inclusion(&h, &inside, DEFAULT_RANK_TOL).unwrap());
        assert!(!null_inclusion(&h, &random_matrix(&mut rng, 2, 9), DEFAULT_RANK_TOL).unwrap());
        assert!(null_inclusion(&h, &DMatrix::zeros(2, 8), DEFAULT_RANK_TOL).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn every_parametrized_member_is_a_generalized_inverse(
                seed in 0u64..10_000,
                rows in 2usize..9,
                cols in 2usize..12,
                rank_frac in 0.2f64..1.0,
                f_scale in 0.01f64..100.0,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rank = ((rows.min(cols) as f64 * rank_frac).ceil() as usize).max(1);
                let h = random_low_rank(&mut rng, rows, cols, rank);
                let svd = svd_with_rank(&h, DEFAULT_RANK_TOL).unwrap();
                prop_assert!(relative_error(&reconstruct(&svd), &h) < 1e-10);
                let f = random_matrix(&mut rng, cols, rows) * f_scale;
                let g = GInverseParam::new(svd, f).unwrap().materialize();
                prop_assert!(g_inverse_residual(&h, &g) < 1e-8);
            }
        }
    }
}
