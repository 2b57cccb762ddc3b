//! Open-loop UIE synthesis.
//!
//! Every generalized inverse `G = [G_u G_y]` of `H` yields a candidate
//! `A_uie = [0 I; H_u G_u]`, `B_uie = [0; H_u G_y]`. Writing `G = G(F)` makes
//! `A_uie(F) = N1 + N2 F N3` affine in `F`, and the substitution
//! `F = N M^-1 T2 T1` turns the Lyapunov condition into an LMI in `(W, M, N)`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::gen_inverse::{g_inverse_residual, null_inclusion_gap, svd_with_rank, GInverseParam, SvdRank};
use crate::hankel::HankelDesignStack;
use crate::linalg::{full_svd, gauss_jordan, rank_from_singular_values, singular_values, spectral_radius};
use crate::realization::{shift_matrix, DesignOptions, DesignReport, SolverStatus, UieKind, UieRealization};
use crate::sdp::{self, AffineExpr, LmiProblem, SdpOptions, SdpOutcome};

/// Accepted relative residual of `H G H = H` in [`assemble_op_candidate`].
pub const G_RESIDUAL_TOL: f64 = 1e-6;

/// Largest accepted condition number of the recovered `M`.
pub const MAX_M_CONDITION: f64 = 1e12;

/// `A_uie = [0 I; H_u G_u]`, `B_uie = [0; H_u G_y]`.
pub fn assemble_op_candidate(stack: &HankelDesignStack, g: &DMatrix<f64>, res_tol: f64) -> Result<UieRealization> {
    check_dim("G rows", stack.n_c, g.nrows())?;
    check_dim("G columns", stack.h.nrows(), g.ncols())?;
    let residual = g_inverse_residual(&stack.h, g);
    if !(residual <= res_tol) {
        return Err(Error::NotGeneralizedInverse { residual, tol: res_tol });
    }
    let (a, b) = candidate_blocks(stack, g);
    UieRealization::new(a, b, stack.n_init, stack.n_est, stack.n_u, stack.n_y, UieKind::OpenLoop)
}

/// The candidate matrices without the residual check.
pub(crate) fn candidate_blocks(stack: &HankelDesignStack, g: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = stack.z_dim();
    let n_u = stack.n_u;
    let hg = &stack.h_u * g;
    let mut a = shift_matrix(k, n_u);
    a.rows_mut(k - n_u, n_u).copy_from(&hg.columns(0, k));
    let mut b = DMatrix::zeros(k, stack.d_dim());
    b.rows_mut(k - n_u, n_u).copy_from(&hg.columns(k, stack.d_dim()));
    (a, b)
}

/// Affine parametrization `A_uie(F) = N1 + N2 F N3` and the row selectors of
/// the LMI substitution.
#[derive(Debug, Clone)]
pub struct LmiData {
    pub svd: SvdRank,
    pub n1: DMatrix<f64>,
    pub n2: DMatrix<f64>,
    pub n3: DMatrix<f64>,
    pub t1: DMatrix<f64>,
    pub t2: DMatrix<f64>,
    /// Rank of `T1 N3`.
    pub r: usize,
}

impl LmiData {
    /// `K = T2 T1 N3`, full row rank `r`.
    pub fn k_matrix(&self) -> DMatrix<f64> {
        &self.t2 * &self.t1 * &self.n3
    }

    pub fn a_of(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        &self.n1 + &self.n2 * f * &self.n3
    }
}

pub fn build_lmi_data(stack: &HankelDesignStack, rank_tol: f64) -> Result<LmiData> {
    let svd = svd_with_rank(&stack.h, rank_tol)?;
    let (n_h, n_s) = (svd.rows(), svd.rank);
    let (k, n_u) = (stack.z_dim(), stack.n_u);

    let mut lower = DMatrix::zeros(k, n_u);
    lower.rows_mut(k - n_u, n_u).fill_with_identity();
    let n2 = lower * &stack.h_u * &svd.v;
    let n3 = svd.u.transpose().columns(0, k).clone_owned();
    let n1 = shift_matrix(k, n_u) + &n2 * svd.sigma_pinv() * &n3;

    let mut t1 = DMatrix::zeros(n_h - n_s, n_h);
    t1.columns_mut(n_s, n_h - n_s).fill_with_identity();
    let t1n3 = &t1 * &n3;
    let (t2, r) = if t1n3.nrows() == 0 {
        (DMatrix::zeros(0, 0), 0)
    } else {
        let ech = gauss_jordan(&t1n3, rank_tol);
        (ech.e.rows(0, ech.rank).clone_owned(), ech.rank)
    };
    Ok(LmiData { svd, n1, n2, n3, t1, t2, r })
}

/// Largest eigenvalue modulus.
pub fn schur_radius(a: &DMatrix<f64>) -> f64 {
    spectral_radius(a)
}

/// Lyapunov certificate recovered from a feasible LMI solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCertificate {
    pub w: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// Absolute PSD margin the LMI was solved with.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpDesign {
    pub realization: UieRealization,
    pub report: DesignReport,
    /// `None` when there was no design freedom and no solve was needed.
    pub certificate: Option<OpCertificate>,
}

fn fail(status: SolverStatus, reason: impl Into<String>, report: DesignReport) -> Error {
    let mut report = report;
    report.solver_status = status;
    Error::DesignFailed {
        status,
        reason: reason.into(),
        report: Box::new(report),
    }
}

pub fn design_op_uie(stack: &HankelDesignStack, opts: &DesignOptions) -> Result<OpDesign> {
    opts.validate()?;
    let mut report = DesignReport::new();
    let gap = null_inclusion_gap(&stack.h, &stack.h_u, opts.rank_tol)?;
    report.residuals.insert("null_inclusion_gap".into(), gap);
    report.null_inclusion_ok = gap <= opts.rank_tol * stack.h_u.norm().max(1.0);
    let data = build_lmi_data(stack, opts.rank_tol)?;
    report.n_s = data.svd.rank;
    report.r = data.r;
    if !report.null_inclusion_ok {
        return Err(fail(
            SolverStatus::Infeasible,
            "Null(H) is not contained in Null(H_u); the input is not identifiable with this N_est",
            report,
        ));
    }

    let k = stack.z_dim();
    if data.r == 0 {
        let rho = spectral_radius(&data.n1);
        report.spectral_radius = Some(rho);
        if rho >= 1.0 {
            return Err(fail(
                SolverStatus::Infeasible,
                format!("no design freedom (r = 0) and the fixed candidate has spectral radius {rho:.6}"),
                report,
            ));
        }
        let g = GInverseParam::pseudoinverse(data.svd.clone()).materialize();
        let realization = assemble_op_candidate(stack, &g, opts.res_tol)?;
        report.residuals.insert("g_inverse".into(), g_inverse_residual(&stack.h, &g));
        report.solver_status = SolverStatus::Feasible;
        return Ok(OpDesign {
            realization,
            report,
            certificate: None,
        });
    }

    // N only enters through H_u V N, so it is restricted to the row space of
    // H_u V without losing any candidate.
    let huv = &stack.h_u * &data.svd.v;
    let huv_svd = full_svd(&huv);
    let q_rank = rank_from_singular_values(&huv_svd.s, opts.rank_tol);
    let q = huv_svd.v.columns(0, q_rank).clone_owned();
    let kmat = data.k_matrix();
    let eps = opts.absolute_margin(k);

    let mut p = LmiProblem::new();
    let w = p.symmetric("W", k);
    let m = p.matrix("M", data.r, data.r);
    let nt = p.matrix("N", q_rank.max(1), data.r);
    let n2q = if q_rank == 0 {
        DMatrix::zeros(k, 1)
    } else {
        &data.n2 * &q
    };
    let aw = p.var(w).mul_left(&data.n1)? + p.var(nt).mul_left(&n2q)?.mul_right(&kmat)?;
    let block = AffineExpr::block(vec![vec![p.var(w), aw.clone()], vec![aw.transpose(), p.var(w)]])?;
    p.require_psd("lyapunov", block)?;
    p.require_zero("KW = MK", p.var(w).mul_left(&kmat)? - p.var(m).mul_right(&kmat)?)?;
    p.bound_trace(w, opts.trace_cap)?;

    let sdp_opts = SdpOptions {
        margin: eps,
        ..SdpOptions::default()
    };
    let sol = match sdp::solve_feasibility(&p, &sdp_opts)? {
        SdpOutcome::Feasible(sol) => sol,
        SdpOutcome::Infeasible { best_margin } => {
            report.residuals.insert("best_margin".into(), best_margin);
            return Err(fail(
                SolverStatus::Infeasible,
                format!("LMI infeasible: best margin {best_margin:.3e} below {eps:.3e} (inconclusive about existence)"),
                report,
            ));
        }
        SdpOutcome::NumericalFailure { reason } => {
            return Err(fail(SolverStatus::NumericalFailure, reason, report));
        }
    };
    report.residuals.insert("lmi_min_eigenvalue".into(), sol.verification.min_eigenvalues[0]);
    report.residuals.insert("lmi_equality".into(), sol.verification.equality_residual);

    let w_val = sol.assignment.get(w).clone();
    let m_val = sol.assignment.get(m).clone();
    let sv = singular_values(&m_val);
    let cond = sv.max() / sv.min();
    report.residuals.insert("m_condition".into(), cond);
    if !(cond <= MAX_M_CONDITION) {
        return Err(fail(
            SolverStatus::NumericalFailure,
            format!("recovered M is ill-conditioned (condition {cond:.3e})"),
            report,
        ));
    }
    let n_val = if q_rank == 0 {
        DMatrix::zeros(stack.n_c, data.r)
    } else {
        &q * sol.assignment.get(nt)
    };
    let m_inv = m_val.clone().try_inverse().ok_or_else(|| Error::Numerical("M is singular".into()))?;
    let f = &n_val * m_inv * &data.t2 * &data.t1;
    let n_s = data.svd.rank;
    report.residuals.insert("f_zero_block".into(), f.view((0, 0), (n_s, n_s)).amax());
    let param = GInverseParam::new(data.svd.clone(), f.clone())?;
    let g = param.materialize();
    report.residuals.insert("g_inverse".into(), g_inverse_residual(&stack.h, &g));
    let realization = match assemble_op_candidate(stack, &g, opts.res_tol) {
        Ok(r) => r,
        Err(e) => return Err(fail(SolverStatus::NumericalFailure, e.to_string(), report)),
    };
    report.spectral_radius = Some(realization.spectral_radius);
    if !(realization.spectral_radius < 1.0) {
        return Err(fail(
            SolverStatus::NumericalFailure,
            format!(
                "certified LMI point gave spectral radius {:.6}",
                realization.spectral_radius
            ),
            report,
        ));
    }
    report.solver_status = SolverStatus::Feasible;
    Ok(OpDesign {
        realization,
        report,
        certificate: Some(OpCertificate {
            w: w_val,
            m: m_val,
            n: n_val,
            f: param.free().clone(),
            margin: eps,
        }),
    })
}
