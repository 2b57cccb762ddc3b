//! Block Hankel matrices and the partitioned design stack.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{full_svd, numerical_rank, rank_from_singular_values, vstack};
use crate::lti::IoTrajectory;

/// Relative rank tolerance used when projecting onto a Hankel column span.
pub const MEMBERSHIP_RANK_TOL: f64 = 1e-10;

/// Depth-`depth` block Hankel matrix; column `j` stacks `s_j, ..., s_{j+depth-1}`.
pub fn build_hankel(signal: &[DVector<f64>], depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 {
        return Err(Error::InvalidParameter("Hankel depth must be at least 1".into()));
    }
    if depth > signal.len() {
        return Err(Error::InsufficientData {
            needed: depth,
            got: signal.len(),
        });
    }
    let n_s = signal[0].len();
    let cols = signal.len() - depth + 1;
    let mut h = DMatrix::zeros(depth * n_s, cols);
    for j in 0..cols {
        for i in 0..depth {
            let s = &signal[i + j];
            check_dim("signal sample", n_s, s.len())?;
            h.view_mut((i * n_s, j), (n_s, 1)).copy_from(s);
        }
    }
    Ok(h)
}

/// `[H_L(u); H_L(y)]` for a recorded trajectory.
pub fn io_hankel(data: &IoTrajectory, depth: usize) -> Result<DMatrix<f64>> {
    let hu = build_hankel(data.inputs(), depth)?;
    let hy = build_hankel(data.outputs(), depth)?;
    Ok(vstack(&[&hu, &hy]))
}

/// `[u_{1:L}; y_{1:L}]`, the vector form of an L-step trajectory.
pub fn stacked_trajectory(traj: &IoTrajectory) -> DVector<f64> {
    crate::linalg::stack_vectors(traj.inputs().iter().chain(traj.outputs()))
}

/// True iff `H_order(u)` has full row rank.
pub fn is_persistently_exciting(u: &[DVector<f64>], order: usize, rank_tol: f64) -> Result<bool> {
    if order == 0 {
        return Err(Error::InvalidParameter("excitation order must be at least 1".into()));
    }
    if u.len() < order {
        return Err(Error::InsufficientData {
            needed: order,
            got: u.len(),
        });
    }
    let n_u = u[0].len();
    if order * n_u > u.len() - order + 1 {
        return Ok(false);
    }
    let h = build_hankel(u, order)?;
    Ok(numerical_rank(&h, rank_tol) == h.nrows())
}

/// Largest order for which `u` is persistently exciting (0 if none).
pub fn persistency_order(u: &[DVector<f64>], rank_tol: f64) -> usize {
    let mut order = 0;
    while order < u.len() {
        match is_persistently_exciting(u, order + 1, rank_tol) {
            Ok(true) => order += 1,
            _ => break,
        }
    }
    order
}

/// Result of projecting a trajectory onto a Hankel column span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub residual: f64,
    pub relative: f64,
    pub member: bool,
}

/// Least-squares distance of `traj` from `colspan(h)`.
///
/// Membership is declared when the residual is at most `res_tol * ||traj||`.
pub fn trajectory_membership(h: &DMatrix<f64>, traj: &DVector<f64>, res_tol: f64) -> Result<Membership> {
    check_dim("trajectory vector", h.nrows(), traj.len())?;
    let svd = full_svd(h);
    let rank = rank_from_singular_values(&svd.s, MEMBERSHIP_RANK_TOL);
    let basis = svd.u.columns(0, rank);
    let coeff = basis.transpose() * traj;
    let residual = (traj - basis * coeff).norm();
    let scale = traj.norm();
    let relative = if scale > 0.0 { residual / scale } else { residual };
    Ok(Membership {
        residual,
        relative,
        member: residual <= res_tol * scale,
    })
}

/// The partitioned Hankel matrices used by both estimator designs.
///
/// With `L = n_init + n_est` and a single depth-`L` Hankel pass over the data:
///
/// * `h = [H_init(u); H_init(y); H_est(y)]`
/// * `h_u` = first `n_u` rows of `H_est(u)`
/// * `h_hat = [H_init(u); H_est(u) first n_u rows; H_init(y)]`
/// * `h_y` = first `n_y` rows of `H_est(y)`
#[derive(Debug, Clone, PartialEq)]
pub struct HankelDesignStack {
    pub h: DMatrix<f64>,
    pub h_u: DMatrix<f64>,
    pub h_hat: DMatrix<f64>,
    pub h_y: DMatrix<f64>,
    pub n_init: usize,
    pub n_est: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_c: usize,
}

impl HankelDesignStack {
    pub fn depth(&self) -> usize {
        self.n_init + self.n_est
    }

    /// Length of the stacked input estimate `z`.
    pub fn z_dim(&self) -> usize {
        self.n_init * self.n_u
    }

    /// Length of the output window `d`.
    pub fn d_dim(&self) -> usize {
        self.depth() * self.n_y
    }
}

pub fn build_design_stack(data: &IoTrajectory, n_init: usize, n_est: usize) -> Result<HankelDesignStack> {
    if n_init == 0 || n_est == 0 {
        return Err(Error::InvalidParameter("n_init and n_est must be at least 1".into()));
    }
    let depth = n_init + n_est;
    if data.len() < depth {
        return Err(Error::InsufficientData {
            needed: depth,
            got: data.len(),
        });
    }
    let (n_u, n_y) = (data.n_u(), data.n_y());
    let hu = build_hankel(data.inputs(), depth)?;
    let hy = build_hankel(data.outputs(), depth)?;
    let hu_init = hu.rows(0, n_init * n_u).clone_owned();
    let hy_init = hy.rows(0, n_init * n_y).clone_owned();
    let hy_est = hy.rows(n_init * n_y, n_est * n_y).clone_owned();
    let h_u = hu.rows(n_init * n_u, n_u).clone_owned();
    let h_y = hy.rows(n_init * n_y, n_y).clone_owned();
    Ok(HankelDesignStack {
        h: vstack(&[&hu_init, &hy_init, &hy_est]),
        h_hat: vstack(&[&hu_init, &h_u, &hy_init]),
        h_u,
        h_y,
        n_init,
        n_est,
        n_u,
        n_y,
        n_c: hu.ncols(),
    })
}

/// Hankel partition for multi-step output prediction:
/// `lhs = [H_init(u); H_init(y); H_pred(u)]`, `pred_y = H_pred(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorStack {
    pub lhs: DMatrix<f64>,
    pub pred_y: DMatrix<f64>,
    pub n_init: usize,
    pub n_pred: usize,
    pub n_u: usize,
    pub n_y: usize,
}

pub fn build_predictor_stack(data: &IoTrajectory, n_init: usize, n_pred: usize) -> Result<PredictorStack> {
    if n_init == 0 || n_pred == 0 {
        return Err(Error::InvalidParameter("n_init and n_pred must be at least 1".into()));
    }
    let depth = n_init + n_pred;
    let (n_u, n_y) = (data.n_u(), data.n_y());
    let hu = build_hankel(data.inputs(), depth)?;
    let hy = build_hankel(data.outputs(), depth)?;
    let lhs = vstack(&[
        &hu.rows(0, n_init * n_u).clone_owned(),
        &hy.rows(0, n_init * n_y).clone_owned(),
        &hu.rows(n_init * n_u, n_pred * n_u).clone_owned(),
    ]);
    Ok(PredictorStack {
        lhs,
        pred_y: hy.rows(n_init * n_y, n_pred * n_y).clone_owned(),
        n_init,
        n_pred,
        n_u,
        n_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::random_excitation;
    use crate::workflow::reference_system;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn scalar_hankel_depth_two() {
        let h = build_hankel(&scalars(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn depth_one_lays_signal_out_columnwise() {
        let s: Vec<DVector<f64>> = (0..4)
            .map(|i| DVector::from_vec(vec![i as f64, -(i as f64)]))
            .collect();
        let h = build_hankel(&s, 1).unwrap();
        assert_eq!(h.shape(), (2, 4));
        for (j, sj) in s.iter().enumerate() {
            assert_eq!(h.column(j).clone_owned(), *sj);
        }
    }

    #[test]
    fn vector_hankel_enumerated_windows() {
        let s = vec![
            DVector::from_vec(vec![1.0, 10.0]),
            DVector::from_vec(vec![2.0, 20.0]),
            DVector::from_vec(vec![3.0, 30.0]),
        ];
        let h = build_hankel(&s, 2).unwrap();
        let expected = DMatrix::from_row_slice(4, 2, &[
            1.0, 2.0, //
            10.0, 20.0, //
            2.0, 3.0, //
            20.0, 30.0,
        ]);
        assert_eq!(h, expected);
    }

    #[test]
    fn depth_beyond_length_is_an_error() {
        assert!(matches!(
            build_hankel(&scalars(&[1.0, 2.0]), 3),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn hankel_shift_structure() {
        let s = random_excitation(20, 3, 11, 1.0).unwrap();
        let depth = 5;
        let h = build_hankel(&s, depth).unwrap();
        for i in 1..depth {
            for j in 0..h.ncols() - 1 {
                assert_eq!(h.view((i * 3, j), (3, 1)), h.view(((i - 1) * 3, j + 1), (3, 1)));
            }
        }
    }

    #[test]
    fn persistency_examples() {
        let constant = scalars(&[2.0; 30]);
        assert!(!is_persistently_exciting(&constant, 2, 1e-9).unwrap());
        assert!(is_persistently_exciting(&constant, 1, 1e-9).unwrap());

        let u = random_excitation(50, 2, 3, 1.0).unwrap();
        assert!(is_persistently_exciting(&u, 9, 1e-9).unwrap());
        // 17 * 2 = 34 rows > 50 - 17 + 1 = 34 columns is fine; 18 * 2 = 36 > 33 is not.
        assert!(!is_persistently_exciting(&u, 18, 1e-9).unwrap());
        assert!(is_persistently_exciting(&u[..5], 6, 1e-9).is_err());
        assert_eq!(persistency_order(&u, 1e-9), 17);
    }

    #[test]
    fn tiny_stack_sliced_by_hand() {
        let u = scalars(&[1.0, 2.0, 3.0]);
        let y = scalars(&[10.0, 20.0, 30.0]);
        let data = IoTrajectory::new(u, y).unwrap();
        let st = build_design_stack(&data, 1, 1).unwrap();
        assert_eq!(st.n_c, 2);
        assert_eq!(st.h, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 10.0, 20.0, 20.0, 30.0]));
        assert_eq!(st.h_u, DMatrix::from_row_slice(1, 2, &[2.0, 3.0]));
        assert_eq!(st.h_hat, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 10.0, 20.0]));
        assert_eq!(st.h_y, DMatrix::from_row_slice(1, 2, &[20.0, 30.0]));
    }

    #[test]
    fn stack_dimensions_and_partition_consistency() {
        let sys = reference_system(1.0);
        let u = random_excitation(50, 2, 5, 1.0).unwrap();
        let data = sys.simulate(&DVector::zeros(3), &u).unwrap();
        let st = build_design_stack(&data, 5, 1).unwrap();
        assert_eq!(st.n_c, 45);
        assert_eq!(st.h.nrows(), 5 * 2 + 6 * 2);
        assert_eq!(st.h_hat.nrows(), 5 * 2 + 2 + 5 * 2);
        for m in [&st.h, &st.h_u, &st.h_hat, &st.h_y] {
            assert_eq!(m.ncols(), 45);
        }
        let full = io_hankel(&data, 6).unwrap();
        let hu_init = full.rows(0, 10);
        let hu_est = full.rows(10, 2);
        let hy = full.rows(12, 12);
        assert_eq!(st.h, vstack(&[&hu_init.clone_owned(), &hy.clone_owned()]));
        assert_eq!(st.h_u, hu_est.clone_owned());
        assert_eq!(st.h_y, full.rows(22, 2).clone_owned());
        assert!(build_design_stack(&data.window(0, 5).unwrap(), 5, 1).is_err());
    }

    #[test]
    fn membership_of_own_columns_and_foreign_vectors() {
        let sys = reference_system(0.0);
        let k = sys.lqr_gain(1.0, 1.0).unwrap();
        let w = random_excitation(60, 2, 1, 1.0).unwrap();
        let data = sys.simulate_with_feedback(&k, &DVector::zeros(3), &w).unwrap();
        let h = io_hankel(&data, 4).unwrap();
        let col = h.column(7).clone_owned();
        let m = trajectory_membership(&h, &col, 1e-8).unwrap();
        assert!(m.member && m.relative < 1e-12);

        let fresh_u = random_excitation(4, 2, 99, 1.0).unwrap();
        let fresh = sys
            .simulate(&DVector::from_vec(vec![0.3, -0.2, 0.5]), &fresh_u)
            .unwrap();
        let m = trajectory_membership(&h, &stacked_trajectory(&fresh), 1e-8).unwrap();
        assert!(m.member, "relative residual {}", m.relative);

        let other = reference_system(1.0);
        let foreign = other.simulate(&DVector::zeros(3), &fresh_u).unwrap();
        let m = trajectory_membership(&h, &stacked_trajectory(&foreign), 1e-8).unwrap();
        assert!(!m.member && m.relative > 1e-3);

        assert!(trajectory_membership(&h, &DVector::zeros(3), 1e-8).is_err());
    }
}
