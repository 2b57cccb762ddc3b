//! Closed-loop (Luenberger-type) UIE synthesis.
//!
//! The open-loop candidate `(A_hat, B_hat)` built from `G` is corrected with
//! the innovation between the measured output `y_{t+1} = T_y d_t` and its
//! one-step data-driven prediction `C_eff z_t + D_eff d_t`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gen_inverse::{g_inverse_residual, svd_with_rank, GInverseParam};
use crate::hankel::{HankelDesignStack, PredictorStack};
use crate::linalg::{pinv, spectral_radius};
use crate::op_uie::candidate_blocks;
use crate::realization::{ClosedLoopParts, DesignOptions, DesignReport, SolverStatus, UieKind, UieRealization};
use crate::sdp::{self, AffineExpr, LmiProblem, SdpOptions, SdpOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct ClDesignBlocks {
    /// `[I 0; H_u G_u  H_u G_y; 0 [I 0]]`.
    pub p_of_g: DMatrix<f64>,
    pub c_eff: DMatrix<f64>,
    pub d_eff: DMatrix<f64>,
    /// Selects `y_{t+1}` from the output window.
    pub t_y: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Builds `P(G)`, the effective predictor matrices and `T_y`; the gain is left
/// at zero.
pub fn build_cl_blocks(
    stack: &HankelDesignStack,
    g: &DMatrix<f64>,
    g_hat: &DMatrix<f64>,
    res_tol: f64,
) -> Result<ClDesignBlocks> {
    check_dim("G rows", stack.n_c, g.nrows())?;
    check_dim("G columns", stack.h.nrows(), g.ncols())?;
    check_dim("G_hat rows", stack.n_c, g_hat.nrows())?;
    check_dim("G_hat columns", stack.h_hat.nrows(), g_hat.ncols())?;
    for (h, gi) in [(&stack.h, g), (&stack.h_hat, g_hat)] {
        let residual = g_inverse_residual(h, gi);
        if !(residual <= res_tol) {
            return Err(Error::NotGeneralizedInverse { residual, tol: res_tol });
        }
    }
    let (k, d, n_u, n_y) = (stack.z_dim(), stack.d_dim(), stack.n_u, stack.n_y);
    let init_y = stack.n_init * n_y;
    let mut p = DMatrix::zeros(k + n_u + init_y, k + d);
    p.view_mut((0, 0), (k, k)).fill_with_identity();
    p.view_mut((k, 0), (n_u, k + d)).copy_from(&(&stack.h_u * g));
    p.view_mut((k + n_u, k), (init_y, init_y)).fill_with_identity();

    let pred = &stack.h_y * g_hat * &p;
    let mut t_y = DMatrix::zeros(n_y, d);
    t_y.view_mut((0, init_y), (n_y, n_y)).fill_with_identity();
    Ok(ClDesignBlocks {
        c_eff: pred.columns(0, k).clone_owned(),
        d_eff: pred.columns(k, d).clone_owned(),
        p_of_g: p,
        t_y,
        gain: DMatrix::zeros(k, n_y),
    })
}

/// Finds `L` with `A_hat - L C_eff` Schur stable through the dual Lyapunov
/// LMI `[W, W A_hat - Y C_eff; *, W] >= eps I`, `L = W^-1 Y`.
pub fn design_gain(a_hat: &DMatrix<f64>, c_eff: &DMatrix<f64>, opts: &DesignOptions) -> Result<DMatrix<f64>> {
    opts.validate()?;
    let k = a_hat.nrows();
    check_dim("A_hat columns", k, a_hat.ncols())?;
    check_dim("C_eff columns", k, c_eff.ncols())?;
    let n_y = c_eff.nrows();

    let mut p = LmiProblem::new();
    let w = p.symmetric("W", k);
    let y = p.matrix("Y", k, n_y);
    let off = p.var(w).mul_right(a_hat)? - p.var(y).mul_right(c_eff)?;
    let block = AffineExpr::block(vec![vec![p.var(w), off.clone()], vec![off.transpose(), p.var(w)]])?;
    p.require_psd("observer", block)?;
    p.bound_trace(w, opts.trace_cap)?;
    let sdp_opts = SdpOptions {
        margin: opts.absolute_margin(k),
        ..SdpOptions::default()
    };
    match sdp::solve_feasibility(&p, &sdp_opts)? {
        SdpOutcome::Feasible(sol) => {
            let w_val = sol.assignment.get(w).clone();
            let chol = w_val
                .cholesky()
                .ok_or_else(|| Error::Numerical("certified W is not positive definite".into()))?;
            let gain = chol.solve(sol.assignment.get(y));
            let rho = spectral_radius(&(a_hat - &gain * c_eff));
            if !(rho < 1.0) {
                return Err(Error::Numerical(format!("certified gain gave spectral radius {rho:.6}")));
            }
            Ok(gain)
        }
        SdpOutcome::Infeasible { best_margin } => Err(Error::NoStabilizingGain(format!(
            "observer LMI infeasible (best margin {best_margin:.3e}); the pair is not detectable under this parametrization"
        ))),
        SdpOutcome::NumericalFailure { reason } => Err(Error::Numerical(reason)),
    }
}

/// `A_uie = A_hat - L C_eff`, `B_uie = B_hat + L (T_y - D_eff)`.
pub fn assemble_cl(
    stack: &HankelDesignStack,
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    blocks: &ClDesignBlocks,
) -> Result<UieRealization> {
    let (k, d) = (stack.z_dim(), stack.d_dim());
    check_dim("A_hat rows", k, a_hat.nrows())?;
    check_dim("B_hat columns", d, b_hat.ncols())?;
    check_dim("gain rows", k, blocks.gain.nrows())?;
    let l = &blocks.gain;
    let a = a_hat - l * &blocks.c_eff;
    let b = b_hat + l * (&blocks.t_y - &blocks.d_eff);
    let mut real = UieRealization::new(a, b, stack.n_init, stack.n_est, stack.n_u, stack.n_y, UieKind::ClosedLoop)?;
    real.closed_loop = Some(ClosedLoopParts {
        gain: l.clone(),
        c_eff: blocks.c_eff.clone(),
        d_eff: blocks.d_eff.clone(),
    });
    Ok(real)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClDesign {
    pub realization: UieRealization,
    pub report: DesignReport,
    pub blocks: ClDesignBlocks,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
}

/// Closed-loop design with `G`, `G_hat` the (rank-truncated) pseudoinverses.
pub fn design_cl_uie(stack: &HankelDesignStack, opts: &DesignOptions) -> Result<ClDesign> {
    opts.validate()?;
    let mut report = DesignReport::new();
    let svd = svd_with_rank(&stack.h, opts.rank_tol)?;
    report.n_s = svd.rank;
    let g = GInverseParam::pseudoinverse(svd.clone()).materialize();
    let gap = (&stack.h_u * svd.null_basis()).norm();
    report.residuals.insert("null_inclusion_gap".into(), gap);
    report.null_inclusion_ok = gap <= opts.rank_tol * stack.h_u.norm().max(1.0);
    let g_hat = pinv(&stack.h_hat, opts.rank_tol);
    report.residuals.insert("g_inverse".into(), g_inverse_residual(&stack.h, &g));
    report.residuals.insert("g_hat_inverse".into(), g_inverse_residual(&stack.h_hat, &g_hat));

    let fail = |status: SolverStatus, reason: String, mut report: DesignReport| {
        report.solver_status = status;
        Error::DesignFailed {
            status,
            reason,
            report: Box::new(report),
        }
    };
    let mut blocks = match build_cl_blocks(stack, &g, &g_hat, opts.res_tol) {
        Ok(b) => b,
        Err(e) => return Err(fail(SolverStatus::Infeasible, e.to_string(), report)),
    };
    let (a_hat, b_hat) = candidate_blocks(stack, &g);
    blocks.gain = match design_gain(&a_hat, &blocks.c_eff, opts) {
        Ok(l) => l,
        Err(Error::NoStabilizingGain(reason)) => return Err(fail(SolverStatus::Infeasible, reason, report)),
        Err(e) => return Err(fail(SolverStatus::NumericalFailure, e.to_string(), report)),
    };
    let realization = assemble_cl(stack, &a_hat, &b_hat, &blocks)?;
    report.spectral_radius = Some(realization.spectral_radius);
    report.solver_status = SolverStatus::Feasible;
    Ok(ClDesign {
        realization,
        report,
        blocks,
        a_hat,
        b_hat,
    })
}

/// Multi-step output prediction `H_pred(y) g` with `g` a least-squares
/// solution of `[H_init(u); H_init(y); H_pred(u)] g = [u_init; y_init; u_future]`.
pub fn predict_outputs(
    stack: &PredictorStack,
    u_init: &[DVector<f64>],
    y_init: &[DVector<f64>],
    u_future: &[DVector<f64>],
    res_tol: f64,
) -> Result<Vec<DVector<f64>>> {
    check_dim("initial input window", stack.n_init, u_init.len())?;
    check_dim("initial output window", stack.n_init, y_init.len())?;
    check_dim("future input window", stack.n_pred, u_future.len())?;
    let mut rhs = Vec::with_capacity(stack.lhs.nrows());
    for (seq, dim) in [(u_init, stack.n_u), (y_init, stack.n_y), (u_future, stack.n_u)] {
        for v in seq {
            check_dim("sample dimension", dim, v.len())?;
            rhs.extend(v.iter().copied());
        }
    }
    let rhs = DVector::from_vec(rhs);
    let g = pinv(&stack.lhs, crate::hankel::MEMBERSHIP_RANK_TOL) * &rhs;
    let residual = (&stack.lhs * &g - &rhs).norm() / rhs.norm().max(1.0);
    if !(residual <= res_tol) {
        return Err(Error::Inconsistent { residual, tol: res_tol });
    }
    let flat = &stack.pred_y * g;
    Ok((0..stack.n_pred)
        .map(|i| flat.rows(i * stack.n_y, stack.n_y).clone_owned())
        .collect())
}
