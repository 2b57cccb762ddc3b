//! Estimator realizations, design options and design reports.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::spectral_radius;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UieKind {
    OpenLoop,
    ClosedLoop,
}

/// Diagnostics persisted with closed-loop realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopParts {
    #[serde(rename = "L", with = "crate::serde_matrix")]
    pub gain: DMatrix<f64>,
    #[serde(rename = "C_eff", with = "crate::serde_matrix")]
    pub c_eff: DMatrix<f64>,
    #[serde(rename = "D_eff", with = "crate::serde_matrix")]
    pub d_eff: DMatrix<f64>,
}

/// `z_{t+1} = A_uie z_t + B_uie d_t`, `u_hat_t = [0 I] z_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UieRealization {
    #[serde(rename = "A_uie", with = "crate::serde_matrix")]
    pub a_uie: DMatrix<f64>,
    #[serde(rename = "B_uie", with = "crate::serde_matrix")]
    pub b_uie: DMatrix<f64>,
    #[serde(rename = "N_init")]
    pub n_init: usize,
    #[serde(rename = "N_est")]
    pub n_est: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub kind: UieKind,
    pub spectral_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_loop: Option<ClosedLoopParts>,
}

impl UieRealization {
    /// Validates shapes and records the spectral radius of `a_uie`.
    pub fn new(
        a_uie: DMatrix<f64>,
        b_uie: DMatrix<f64>,
        n_init: usize,
        n_est: usize,
        n_u: usize,
        n_y: usize,
        kind: UieKind,
    ) -> Result<Self> {
        if n_init == 0 || n_est == 0 || n_u == 0 || n_y == 0 {
            return Err(Error::InvalidParameter("realization dimensions must be positive".into()));
        }
        let k = n_init * n_u;
        check_dim("A_uie rows", k, a_uie.nrows())?;
        check_dim("A_uie columns", k, a_uie.ncols())?;
        check_dim("B_uie rows", k, b_uie.nrows())?;
        check_dim("B_uie columns", (n_init + n_est) * n_y, b_uie.ncols())?;
        let rho = spectral_radius(&a_uie);
        Ok(Self {
            a_uie,
            b_uie,
            n_init,
            n_est,
            n_u,
            n_y,
            kind,
            spectral_radius: rho,
            closed_loop: None,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.n_init * self.n_u
    }

    pub fn d_dim(&self) -> usize {
        (self.n_init + self.n_est) * self.n_y
    }

    pub fn recompute_spectral_radius(&self) -> f64 {
        spectral_radius(&self.a_uie)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: UieRealization = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        // Re-validate: files may be hand-edited.
        let mut checked = UieRealization::new(r.a_uie, r.b_uie, r.n_init, r.n_est, r.n_u, r.n_y, r.kind)?;
        checked.closed_loop = r.closed_loop;
        Ok(checked)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("realization serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub pe_order_checked: Option<usize>,
    pub null_inclusion_ok: bool,
    #[serde(rename = "n_S")]
    pub n_s: usize,
    pub r: usize,
    pub solver_status: SolverStatus,
    pub spectral_radius: Option<f64>,
    pub residuals: BTreeMap<String, f64>,
}

impl DesignReport {
    pub fn new() -> Self {
        Self {
            pe_order_checked: None,
            null_inclusion_ok: false,
            n_s: 0,
            r: 0,
            solver_status: SolverStatus::Infeasible,
            spectral_radius: None,
            residuals: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl Default for DesignReport {
    fn default() -> Self {
        Self::new()
    }
}

/// Tolerances shared by both designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Relative rank tolerance for SVDs and the null-space inclusion test.
    pub rank_tol: f64,
    /// Accepted relative residual of `H G H = H`.
    pub res_tol: f64,
    /// PSD margin relative to the scale of the Lyapunov variable.
    pub psd_margin: f64,
    /// Cap on `trace(W)`.
    pub trace_cap: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            rank_tol: crate::gen_inverse::DEFAULT_RANK_TOL,
            res_tol: 1e-6,
            psd_margin: 1e-6,
            trace_cap: 1e6,
        }
    }
}

impl DesignOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_tol", self.rank_tol),
            ("res_tol", self.res_tol),
            ("psd_margin", self.psd_margin),
            ("trace_cap", self.trace_cap),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Absolute margin `eps` for LMIs in a `dim x dim` Lyapunov variable:
    /// `psd_margin` times the average eigenvalue permitted by the trace cap.
    pub fn absolute_margin(&self, dim: usize) -> f64 {
        self.psd_margin * self.trace_cap / dim.max(1) as f64
    }
}

/// Shift block `[0 I; 0 0]` of size `k` with block width `n_u`.
pub fn shift_matrix(k: usize, n_u: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(k, k);
    for i in 0..k.saturating_sub(n_u) {
        s[(i, i + n_u)] = 1.0;
    }
    s
}
