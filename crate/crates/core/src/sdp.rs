//! Small dense semidefinite feasibility solver.
//!
//! Problems are stated over named matrix variables with affine matrix
//! expressions (`sum_k L_k X_k R_k + C`). Each PSD block is required to satisfy
//! `block >= eps * I`, each equality `expr = 0`, and trace caps bound selected
//! variables.
//!
//! Linear equalities are eliminated through a null-space parametrization.
//! Directions that leave every inequality unchanged are projected out. The
//! reduced problem `maximize t s.t. block_j - t I >= 0` is then solved with a
//! primal barrier path-following method (damped Newton centering). A point is
//! reported feasible only if the best margin reaches `eps` and an independent
//! re-evaluation of every constraint passes.

use std::fmt::Write as _;
use std::ops::{Add, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{full_svd, min_sym_eigenvalue, rank_from_singular_values};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
}

#[derive(Debug, Clone)]
struct Term {
    left: DMatrix<f64>,
    var: VarId,
    transposed: bool,
    right: DMatrix<f64>,
}

/// Affine matrix expression in the problem variables.
#[derive(Debug, Clone)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `m * self`.
    pub fn mul_left(mut self, m: &DMatrix<f64>) -> Result<Self> {
        check_dim("left factor columns", self.rows, m.ncols())?;
        self.constant = m * &self.constant;
        for t in &mut self.terms {
            t.left = m * &t.left;
        }
        self.rows = m.nrows();
        Ok(self)
    }

    /// `self * m`.
    pub fn mul_right(mut self, m: &DMatrix<f64>) -> Result<Self> {
        check_dim("right factor rows", self.cols, m.nrows())?;
        self.constant = &self.constant * m;
        for t in &mut self.terms {
            t.right = &t.right * m;
        }
        self.cols = m.ncols();
        Ok(self)
    }

    pub fn transpose(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .into_iter()
                .map(|t| Term {
                    left: t.right.transpose(),
                    var: t.var,
                    transposed: !t.transposed,
                    right: t.left.transpose(),
                })
                .collect(),
        }
    }

    pub fn scale(mut self, k: f64) -> Self {
        self.constant *= k;
        for t in &mut self.terms {
            t.left *= k;
        }
        self
    }

    pub fn try_add(mut self, other: AffineExpr) -> Result<Self> {
        check_dim("summand rows", self.rows, other.rows)?;
        check_dim("summand columns", self.cols, other.cols)?;
        self.constant += other.constant;
        self.terms.extend(other.terms);
        Ok(self)
    }

    /// Assembles a block matrix from a grid of expressions.
    pub fn block(grid: Vec<Vec<AffineExpr>>) -> Result<Self> {
        if grid.is_empty() || grid[0].is_empty() {
            return Err(Error::IllFormed("empty block grid".into()));
        }
        let heights: Vec<usize> = grid.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|e| e.cols).collect();
        let (total_r, total_c) = (heights.iter().sum(), widths.iter().sum());
        let mut out = AffineExpr::zeros(total_r, total_c);
        let mut r0 = 0;
        for (bi, row) in grid.into_iter().enumerate() {
            check_dim("block grid row length", widths.len(), row.len())?;
            let mut c0 = 0;
            for (bj, e) in row.into_iter().enumerate() {
                check_dim("block height", heights[bi], e.rows)?;
                check_dim("block width", widths[bj], e.cols)?;
                out.constant.view_mut((r0, c0), (e.rows, e.cols)).copy_from(&e.constant);
                for t in e.terms {
                    let mut left = DMatrix::zeros(total_r, t.left.ncols());
                    left.rows_mut(r0, e.rows).copy_from(&t.left);
                    let mut right = DMatrix::zeros(t.right.nrows(), total_c);
                    right.columns_mut(c0, e.cols).copy_from(&t.right);
                    out.terms.push(Term {
                        left,
                        var: t.var,
                        transposed: t.transposed,
                        right,
                    });
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        Ok(out)
    }

    /// Direct evaluation at an assignment.
    pub fn eval(&self, values: &Assignment) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let x = &values.values[t.var.0];
            if t.transposed {
                out += &t.left * x.transpose() * &t.right;
            } else {
                out += &t.left * x * &t.right;
            }
        }
        out
    }

    /// Upper bound on the magnitude of the expression at an assignment.
    fn magnitude(&self, values: &Assignment) -> f64 {
        self.constant.norm()
            + self
                .terms
                .iter()
                .map(|t| t.left.norm() * values.values[t.var.0].norm() * t.right.norm())
                .sum::<f64>()
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(self, rhs: AffineExpr) -> AffineExpr {
        self.try_add(rhs).expect("shape mismatch in expression sum")
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + (-rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    TraceAtMost { var: VarId, cap: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    vars: Vec<VarDecl>,
    psd: Vec<(String, AffineExpr)>,
    equalities: Vec<(String, AffineExpr)>,
    bounds: Vec<Bound>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> VarId {
        self.declare(name, n, n, true)
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.declare(name, rows, cols, false)
    }

    fn declare(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> VarId {
        self.vars.push(VarDecl {
            name: name.to_string(),
            rows,
            cols,
            symmetric,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn decl(&self, id: VarId) -> &VarDecl {
        &self.vars[id.0]
    }

    /// The variable itself as an expression.
    pub fn var(&self, id: VarId) -> AffineExpr {
        let d = &self.vars[id.0];
        AffineExpr {
            rows: d.rows,
            cols: d.cols,
            constant: DMatrix::zeros(d.rows, d.cols),
            terms: vec![Term {
                left: DMatrix::identity(d.rows, d.rows),
                var: id,
                transposed: false,
                right: DMatrix::identity(d.cols, d.cols),
            }],
        }
    }

    fn check_expr(&self, e: &AffineExpr) -> Result<()> {
        for t in &e.terms {
            let d = self
                .vars
                .get(t.var.0)
                .ok_or_else(|| Error::IllFormed("expression references an undeclared variable".into()))?;
            let (vr, vc) = if t.transposed { (d.cols, d.rows) } else { (d.rows, d.cols) };
            if t.left.ncols() != vr || t.right.nrows() != vc || t.left.nrows() != e.rows || t.right.ncols() != e.cols {
                return Err(Error::IllFormed(format!(
                    "term dimensions inconsistent with variable '{}'",
                    d.name
                )));
            }
        }
        Ok(())
    }

    /// Requires `expr >= eps * I` (expr must be square and symmetric).
    pub fn require_psd(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.check_expr(&expr)?;
        if expr.rows != expr.cols || expr.rows == 0 {
            return Err(Error::IllFormed(format!("PSD block '{name}' is not square")));
        }
        self.psd.push((name.to_string(), expr));
        Ok(())
    }

    /// Requires `expr = 0`.
    pub fn require_zero(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.check_expr(&expr)?;
        self.equalities.push((name.to_string(), expr));
        Ok(())
    }

    pub fn bound_trace(&mut self, var: VarId, cap: f64) -> Result<()> {
        let d = self.decl(var);
        if d.rows != d.cols {
            return Err(Error::IllFormed(format!("trace bound on non-square '{}'", d.name)));
        }
        self.bounds.push(Bound::TraceAtMost { var, cap });
        Ok(())
    }

    /// Plain-text dump of the problem data for offline debugging.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mat = |s: &mut String, label: &str, m: &DMatrix<f64>| {
            let _ = writeln!(s, "  {label} {} {}", m.nrows(), m.ncols());
            for r in m.row_iter() {
                let line: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
                let _ = writeln!(s, "    {}", line.join(" "));
            }
        };
        for (i, d) in self.vars.iter().enumerate() {
            let kind = if d.symmetric { "symmetric" } else { "general" };
            let _ = writeln!(s, "var {i} {} {} {} {kind}", d.name, d.rows, d.cols);
        }
        for (kind, list) in [("psd", &self.psd), ("zero", &self.equalities)] {
            for (name, e) in list.iter() {
                let _ = writeln!(s, "{kind} {name} {} {}", e.rows, e.cols);
                mat(&mut s, "constant", &e.constant);
                for t in &e.terms {
                    let tr = if t.transposed { "T" } else { "N" };
                    let _ = writeln!(s, " term var {} {tr}", t.var.0);
                    mat(&mut s, "left", &t.left);
                    mat(&mut s, "right", &t.right);
                }
            }
        }
        for b in &self.bounds {
            let Bound::TraceAtMost { var, cap } = b;
            let _ = writeln!(s, "bound trace var {} <= {cap:.17e}", var.0);
        }
        s
    }

    // ---- coordinates -------------------------------------------------

    fn coordinates(&self) -> Vec<(VarId, usize, usize)> {
        let mut coords = Vec::new();
        for (k, d) in self.vars.iter().enumerate() {
            if d.symmetric {
                for j in 0..d.cols {
                    for i in 0..=j {
                        coords.push((VarId(k), i, j));
                    }
                }
            } else {
                for j in 0..d.cols {
                    for i in 0..d.rows {
                        coords.push((VarId(k), i, j));
                    }
                }
            }
        }
        coords
    }

    fn unpack(&self, coords: &[(VarId, usize, usize)], x: &DVector<f64>) -> Assignment {
        let mut values: Vec<DMatrix<f64>> = self.vars.iter().map(|d| DMatrix::zeros(d.rows, d.cols)).collect();
        for (c, &(v, i, j)) in coords.iter().enumerate() {
            values[v.0][(i, j)] = x[c];
            if self.vars[v.0].symmetric {
                values[v.0][(j, i)] = x[c];
            }
        }
        Assignment { values }
    }

    /// Vectorized linear image of every coordinate: `(rows*cols) x ncoords`.
    fn linear_images(&self, e: &AffineExpr, coords: &[(VarId, usize, usize)]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(e.rows * e.cols, coords.len());
        for (c, &(v, i, j)) in coords.iter().enumerate() {
            let sym = self.vars[v.0].symmetric && i != j;
            let mut img = DMatrix::zeros(e.rows, e.cols);
            for t in e.terms.iter().filter(|t| t.var == v) {
                // unit E_ij (plus E_ji when symmetric); transposition swaps roles.
                let (a, b) = if t.transposed { (j, i) } else { (i, j) };
                img += t.left.column(a) * t.right.row(b);
                if sym {
                    img += t.left.column(b) * t.right.row(a);
                }
            }
            out.set_column(c, &DVector::from_column_slice(img.as_slice()));
        }
        out
    }
}

/// Values for every declared variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<DMatrix<f64>>,
}

impl Assignment {
    pub fn get(&self, id: VarId) -> &DMatrix<f64> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: VarId, value: DMatrix<f64>) {
        self.values[id.0] = value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    /// Required PSD margin `eps` in `block >= eps * I`.
    pub margin: f64,
    /// Scaled equality residual accepted by the post-check.
    pub equality_tol: f64,
    /// Relative duality-gap proxy (`barrier dimension / tau`) at termination.
    pub gap_tol: f64,
    pub max_newton_steps: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            equality_tol: 1e-7,
            gap_tol: 1e-9,
            max_newton_steps: 2000,
        }
    }
}

/// Independent re-check of an assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    /// Minimum eigenvalue of each PSD block, in declaration order.
    pub min_eigenvalues: Vec<f64>,
    /// Largest scaled equality residual.
    pub equality_residual: f64,
    /// Largest trace-cap violation (`<= 0` when satisfied).
    pub bound_violation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    /// Largest achieved margin `t` in `block >= t * I`.
    pub margin: f64,
    pub verification: Verification,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpOutcome {
    Feasible(Solution),
    Infeasible { best_margin: f64 },
    NumericalFailure { reason: String },
}

/// Re-evaluates every constraint of `p` at `a` by direct matrix products.
pub fn verify(p: &LmiProblem, a: &Assignment, opts: &SdpOptions) -> Verification {
    let min_eigenvalues: Vec<f64> = p.psd.iter().map(|(_, e)| min_sym_eigenvalue(&e.eval(a))).collect();
    let equality_residual = p
        .equalities
        .iter()
        .map(|(_, e)| e.eval(a).norm() / e.magnitude(a).max(1.0))
        .fold(0.0, f64::max);
    let bound_violation = p
        .bounds
        .iter()
        .map(|b| {
            let Bound::TraceAtMost { var, cap } = *b;
            (a.get(var).trace() - cap) / cap.abs().max(1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let symmetric_ok = p.psd.iter().all(|(_, e)| {
        let m = e.eval(a);
        (&m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0)
    });
    let passed = symmetric_ok
        && min_eigenvalues.iter().all(|&l| l >= opts.margin / 2.0)
        && equality_residual <= opts.equality_tol
        && bound_violation <= 1e-9;
    Verification {
        min_eigenvalues,
        equality_residual,
        bound_violation: bound_violation.max(if p.bounds.is_empty() { 0.0 } else { f64::NEG_INFINITY }),
        passed,
    }
}

/// One constraint of the reduced problem: `c + sum_i eta_i A_i (- t I) >= 0`.
struct ReducedBlock {
    n: usize,
    c: DVector<f64>,
    a: DMatrix<f64>,
    margin: bool,
}

impl ReducedBlock {
    fn matrix(&self, eta: &DVector<f64>, t: f64, with_t: bool) -> DMatrix<f64> {
        let v = &self.c + &self.a * eta;
        let mut m = DMatrix::from_column_slice(self.n, self.n, v.as_slice());
        m = (&m + m.transpose()) * 0.5;
        if with_t {
            for i in 0..self.n {
                m[(i, i)] -= t;
            }
        }
        m
    }
}

pub fn solve_feasibility(p: &LmiProblem, opts: &SdpOptions) -> Result<SdpOutcome> {
    if p.psd.is_empty() {
        return Err(Error::IllFormed("problem has no PSD block".into()));
    }
    if !(opts.margin > 0.0) {
        return Err(Error::IllFormed("PSD margin must be positive".into()));
    }
    let coords = p.coordinates();
    let ncoord = coords.len();

    // Symmetry of every PSD block.
    let mut blocks_full: Vec<(usize, DVector<f64>, DMatrix<f64>, bool)> = Vec::new();
    for (name, e) in &p.psd {
        let imgs = p.linear_images(e, &coords);
        let n = e.rows;
        let scale = e.constant.amax().max(imgs.amax()).max(1.0);
        let asym = |v: &[f64]| -> f64 {
            let m = DMatrix::from_column_slice(n, n, v);
            (&m - m.transpose()).amax()
        };
        let mut worst = asym(e.constant.as_slice());
        for c in 0..ncoord {
            worst = worst.max(asym(imgs.column(c).as_slice()));
        }
        if worst > 1e-10 * scale {
            return Err(Error::IllFormed(format!("PSD block '{name}' is not symmetric")));
        }
        blocks_full.push((n, DVector::from_column_slice(e.constant.as_slice()), imgs, true));
    }
    for b in &p.bounds {
        let Bound::TraceAtMost { var, cap } = *b;
        let mut row = DMatrix::zeros(1, ncoord);
        for (c, &(v, i, j)) in coords.iter().enumerate() {
            if v == var && i == j {
                row[(0, c)] = -1.0;
            }
        }
        blocks_full.push((1, DVector::from_element(1, cap), row, false));
    }

    // Equalities: x = x0 + Z xi.
    let (x0, z) = if p.equalities.is_empty() {
        (DVector::zeros(ncoord), DMatrix::identity(ncoord, ncoord))
    } else {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (_, e) in &p.equalities {
            rows.push(p.linear_images(e, &coords));
            rhs.extend(e.constant.iter().map(|v| -v));
        }
        let total: usize = rows.iter().map(|m| m.nrows()).sum();
        let mut a_eq = DMatrix::zeros(total, ncoord);
        let mut r0 = 0;
        for m in &rows {
            a_eq.rows_mut(r0, m.nrows()).copy_from(m);
            r0 += m.nrows();
        }
        let b_eq = DVector::from_vec(rhs);
        let svd = full_svd(&a_eq);
        let rank = rank_from_singular_values(&svd.s, 1e-12);
        let mut x0 = DVector::zeros(ncoord);
        for k in 0..rank {
            let coef = svd.u.column(k).dot(&b_eq) / svd.s[k];
            x0 += svd.v.column(k) * coef;
        }
        let resid = (&a_eq * &x0 - &b_eq).norm();
        if resid > 1e-9 * b_eq.norm().max(1.0) {
            return Ok(SdpOutcome::Infeasible {
                best_margin: f64::NEG_INFINITY,
            });
        }
        (x0, svd.v.columns(rank, ncoord - rank).clone_owned())
    };

    // Project out directions invisible to every inequality.
    let total_rows: usize = blocks_full.iter().map(|b| b.2.nrows()).sum();
    let mut phi = DMatrix::zeros(total_rows, z.ncols());
    let mut r0 = 0;
    for b in &blocks_full {
        let img = &b.2 * &z;
        phi.rows_mut(r0, img.nrows()).copy_from(&img);
        r0 += img.nrows();
    }
    let reduce = if z.ncols() == 0 {
        DMatrix::zeros(ncoord, 0)
    } else {
        let svd = full_svd(&phi);
        let keep = rank_from_singular_values(&svd.s, 1e-11);
        &z * svd.v.columns(0, keep)
    };
    let m = reduce.ncols();

    let blocks: Vec<ReducedBlock> = blocks_full
        .iter()
        .map(|(n, c, a, margin)| ReducedBlock {
            n: *n,
            c: c + a * &x0,
            a: a * &reduce,
            margin: *margin,
        })
        .collect();

    let mut steps = 0usize;
    let mut eta = DVector::zeros(m);

    // Phase I: strict feasibility of the bounds (the margin blocks take t).
    let bound_mask: Vec<bool> = blocks.iter().map(|b| !b.margin).collect();
    if bound_mask.iter().any(|&b| b) {
        let worst = blocks
            .iter()
            .filter(|b| !b.margin)
            .map(|b| min_sym_eigenvalue(&b.matrix(&eta, 0.0, false)))
            .fold(f64::INFINITY, f64::min);
        if worst <= 0.0 {
            let scale = blocks.iter().filter(|b| !b.margin).map(|b| b.c.amax()).fold(1.0, f64::max);
            match barrier_maximize(&blocks, &bound_mask, eta.clone(), opts, Some(1e-6 * scale), Some(0.0), &mut steps) {
                Ok((e, s)) if s > 0.0 => eta = e,
                Ok(_) => return Ok(SdpOutcome::Infeasible { best_margin: f64::NEG_INFINITY }),
                Err(reason) => return Ok(SdpOutcome::NumericalFailure { reason }),
            }
        }
    }

    // Phase II: maximize the margin on the PSD blocks.
    let margin_mask: Vec<bool> = blocks.iter().map(|b| b.margin).collect();
    let (eta, t) = match barrier_maximize(&blocks, &margin_mask, eta, opts, None, Some(opts.margin), &mut steps) {
        Ok(v) => v,
        Err(reason) => return Ok(SdpOutcome::NumericalFailure { reason }),
    };
    if t < opts.margin {
        return Ok(SdpOutcome::Infeasible { best_margin: t });
    }
    let x = &x0 + &reduce * &eta;
    let assignment = p.unpack(&coords, &x);
    let verification = verify(p, &assignment, opts);
    if !verification.passed {
        return Ok(SdpOutcome::NumericalFailure {
            reason: format!("post-verification rejected the solver point: {verification:?}"),
        });
    }
    Ok(SdpOutcome::Feasible(Solution {
        assignment,
        margin: t,
        verification,
        newton_steps: steps,
    }))
}

/// Maximizes `t` subject to `block_j(eta) - [mask_j] t I > 0` by the barrier
/// method, from a point strictly feasible for the unmasked blocks.
fn barrier_maximize(
    blocks: &[ReducedBlock],
    mask: &[bool],
    eta0: DVector<f64>,
    opts: &SdpOptions,
    stop_above: Option<f64>,
    give_up_below: Option<f64>,
    steps: &mut usize,
) -> std::result::Result<(DVector<f64>, f64), String> {
    let m = eta0.len();
    let dim = m + 1;
    let p_total: usize = blocks.iter().map(|b| b.n).sum();

    let t0 = blocks
        .iter()
        .zip(mask)
        .filter(|(_, &on)| on)
        .map(|(b, _)| min_sym_eigenvalue(&b.matrix(&eta0, 0.0, false)))
        .fold(f64::INFINITY, f64::min);
    if !t0.is_finite() {
        return Err("barrier problem has no margin block".into());
    }
    let mut y = DVector::zeros(dim);
    y.rows_mut(0, m).copy_from(&eta0);
    y[m] = t0 - 1.0 - 0.1 * t0.abs();

    let split = |y: &DVector<f64>| (y.rows(0, m).clone_owned(), y[m]);

    // Barrier value; None when some block is not positive definite.
    let objective = |y: &DVector<f64>, tau: f64| -> Option<f64> {
        let (eta, t) = split(y);
        let mut f = -tau * t;
        for (b, &on) in blocks.iter().zip(mask) {
            let s = b.matrix(&eta, t, on);
            let chol = s.cholesky()?;
            f -= 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        }
        Some(f)
    };

    if objective(&y, 1.0).is_none() {
        return Err("starting point is not strictly feasible".into());
    }

    // Start the path at a weight matched to the magnitude of the data (for
    // example a large trace cap), so the first centering is not far off-path.
    let scale = blocks.iter().map(|b| b.c.amax()).fold(0.0, f64::max);
    let mut tau = p_total as f64 / (1.0 + y[m].abs() + scale);
    let mu = 8.0;
    loop {
        // Centering.
        loop {
            if *steps >= opts.max_newton_steps {
                return Err(format!("Newton iteration limit ({}) reached", opts.max_newton_steps));
            }
            *steps += 1;
            let (eta, t) = split(&y);
            let mut g = DVector::zeros(dim);
            let mut h = DMatrix::zeros(dim, dim);
            g[m] = -tau;
            for (b, &on) in blocks.iter().zip(mask) {
                let s = b.matrix(&eta, t, on);
                let sinv = s
                    .cholesky()
                    .ok_or_else(|| "iterate left the interior".to_string())?
                    .inverse();
                // Column i of `a_full` is vec(A_i); t contributes -vec(I).
                let n = b.n;
                let mut a_full = DMatrix::zeros(n * n, dim);
                a_full.columns_mut(0, m).copy_from(&b.a);
                if on {
                    for i in 0..n {
                        a_full[(i * n + i, m)] = -1.0;
                    }
                }
                let sinv_vec = DVector::from_column_slice(sinv.as_slice());
                g -= a_full.transpose() * &sinv_vec;
                let mut w = DMatrix::zeros(n * n, dim);
                for i in 0..dim {
                    let ai = DMatrix::from_column_slice(n, n, a_full.column(i).as_slice());
                    if ai.amax() == 0.0 {
                        continue;
                    }
                    let ai = (&ai + ai.transpose()) * 0.5;
                    let pi = &sinv * ai * &sinv;
                    w.set_column(i, &DVector::from_column_slice(pi.as_slice()));
                }
                h += a_full.transpose() * w;
            }
            let h = (&h + h.transpose()) * 0.5;
            let ridge = 1e-13 * h.diagonal().amax().max(1e-300);
            let mut hr = h.clone();
            for i in 0..dim {
                hr[(i, i)] += ridge;
            }
            let step = match hr.cholesky() {
                Some(c) => -c.solve(&g),
                None => return Err("singular Newton system".into()),
            };
            let decrement = -g.dot(&step);
            if !decrement.is_finite() {
                return Err("non-finite Newton decrement".into());
            }
            if decrement / 2.0 <= 1e-9 {
                break;
            }
            let f0 = objective(&y, tau).ok_or("iterate left the interior")?;
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let cand = &y + &step * alpha;
                if let Some(f1) = objective(&cand, tau) {
                    if f1 <= f0 - 0.25 * alpha * decrement {
                        // Steps lost in rounding count as converged.
                        accepted = (&cand - &y).amax() > 1e-15 * (1.0 + y.amax()) && f1 < f0;
                        y = cand;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if let Some(stop) = stop_above {
                if y[m] > stop {
                    return Ok(split(&y));
                }
            }
            if y[m] > 1e12 {
                // Unbounded margin: any point this deep is feasible.
                return Ok(split(&y));
            }
            if !accepted {
                break;
            }
        }
        let gap = p_total as f64 / tau;
        if gap <= opts.gap_tol * (1.0 + y[m].abs()) {
            return Ok(split(&y));
        }
        // On the central path `t* <= t + gap`, which settles hopeless cases.
        if let Some(floor) = give_up_below {
            if y[m] + gap < floor {
                return Ok(split(&y));
            }
        }
        if let Some(stop) = stop_above {
            if gap <= opts.gap_tol * (1.0 + stop.abs()) {
                return Ok(split(&y));
            }
        }
        tau *= mu;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn solve(p: &LmiProblem) -> SdpOutcome {
        solve_feasibility(p, &SdpOptions::default()).unwrap()
    }

    #[test]
    fn bounded_identity_margin_is_feasible() {
        let mut p = LmiProblem::new();
        let w = p.symmetric("W", 3);
        p.require_psd("W", p.var(w)).unwrap();
        p.bound_trace(w, 1.0).unwrap();
        match solve(&p) {
            SdpOutcome::Feasible(sol) => {
                // Optimum is W = I/3.
                assert_relative_eq!(sol.margin, 1.0 / 3.0, epsilon = 1e-6);
                assert_relative_eq!(sol.assignment.get(w).clone(), DMatrix::identity(3, 3) / 3.0, epsilon = 1e-5);
                assert!(sol.verification.passed);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn contradictory_scalar_bounds_are_infeasible() {
        let mut p = LmiProblem::new();
        let w = p.symmetric("W", 1);
        let shifted = p.var(w) - AffineExpr::constant(DMatrix::identity(1, 1));
        p.require_psd("W - I", shifted).unwrap();
        p.bound_trace(w, 0.5).unwrap();
        assert!(matches!(solve(&p), SdpOutcome::Infeasible { .. }));
    }

    fn lyapunov_problem(a: &DMatrix<f64>, cap: f64, scale: f64) -> (LmiProblem, VarId) {
        let n = a.nrows();
        let mut p = LmiProblem::new();
        let w = p.symmetric("W", n);
        let aw = p.var(w).mul_left(a).unwrap();
        let block = AffineExpr::block(vec![vec![p.var(w), aw.clone()], vec![aw.transpose(), p.var(w)]])
            .unwrap()
            .scale(scale);
        p.require_psd("lyapunov", block).unwrap();
        p.bound_trace(w, cap).unwrap();
        (p, w)
    }

    #[test]
    fn lyapunov_block_for_stable_diagonal() {
        // [c, c/2; c/2, c] has eigenvalues c/2 and 3c/2.
        let a = DMatrix::from_element(1, 1, 0.5);
        let (p, w) = lyapunov_problem(&a, 2.0, 1.0);
        match solve(&p) {
            SdpOutcome::Feasible(sol) => {
                let c = sol.assignment.get(w)[(0, 0)];
                assert_relative_eq!(c, 2.0, epsilon = 1e-6);
                assert_relative_eq!(sol.margin, c / 2.0, epsilon = 1e-6);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn lyapunov_block_for_unstable_matrix_is_infeasible() {
        let a = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.0, 0.4]);
        let (p, _) = lyapunov_problem(&a, 10.0, 1.0);
        assert!(matches!(solve(&p), SdpOutcome::Infeasible { .. }));
    }

    #[test]
    fn scaling_blocks_does_not_flip_feasibility() {
        let stable = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, -0.3, 0.2]);
        let unstable = DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.2, 0.3]);
        for scale in [0.1, 1.0, 10.0] {
            let (p, _) = lyapunov_problem(&stable, 10.0, scale);
            assert!(matches!(solve(&p), SdpOutcome::Feasible(_)), "scale {scale}");
            let (p, _) = lyapunov_problem(&unstable, 10.0, scale);
            assert!(matches!(solve(&p), SdpOutcome::Infeasible { .. }), "scale {scale}");
        }
    }

    #[test]
    fn equalities_are_honoured() {
        // W >= eps I, trace(W) <= 4, W[0,1] = 0.5 through a selector equality.
        let mut p = LmiProblem::new();
        let w = p.symmetric("W", 2);
        let m = p.matrix("M", 1, 1);
        p.require_psd("W", p.var(w)).unwrap();
        p.bound_trace(w, 4.0).unwrap();
        let e0 = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let e1 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let pick = p.var(w).mul_left(&e0).unwrap().mul_right(&e1).unwrap();
        p.require_zero("pick", pick - p.var(m)).unwrap();
        p.require_zero("M", p.var(m) - AffineExpr::constant(DMatrix::from_element(1, 1, 0.5))).unwrap();
        match solve(&p) {
            SdpOutcome::Feasible(sol) => {
                assert_relative_eq!(sol.assignment.get(w)[(0, 1)], 0.5, epsilon = 1e-9);
                assert!(sol.verification.equality_residual < 1e-9);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = LmiProblem::new();
        let w = p.symmetric("W", 1);
        p.require_psd("W", p.var(w)).unwrap();
        p.bound_trace(w, 1.0).unwrap();
        p.require_zero("a", p.var(w) - AffineExpr::constant(DMatrix::from_element(1, 1, 0.2))).unwrap();
        p.require_zero("b", p.var(w) - AffineExpr::constant(DMatrix::from_element(1, 1, 0.3))).unwrap();
        assert!(matches!(solve(&p), SdpOutcome::Infeasible { .. }));
    }

    #[test]
    fn broken_assignment_is_rejected_by_verification() {
        let (p, w) = lyapunov_problem(&DMatrix::from_element(1, 1, 0.5), 2.0, 1.0);
        let SdpOutcome::Feasible(sol) = solve(&p) else {
            panic!("expected feasible");
        };
        let opts = SdpOptions::default();
        assert!(verify(&p, &sol.assignment, &opts).passed);
        let mut broken = sol.assignment.clone();
        broken.set(w, DMatrix::from_element(1, 1, -1.0));
        let v = verify(&p, &broken, &opts);
        assert!(!v.passed && v.min_eigenvalues[0] < 0.0);
    }

    #[test]
    fn asymmetric_block_is_ill_formed() {
        let mut p = LmiProblem::new();
        let x = p.matrix("X", 2, 2);
        p.require_psd("X", p.var(x)).unwrap();
        assert!(matches!(solve_feasibility(&p, &SdpOptions::default()), Err(Error::IllFormed(_))));
        let mut q = LmiProblem::new();
        let y = q.matrix("Y", 2, 3);
        assert!(q.require_psd("Y", q.var(y)).is_err());
    }

    #[test]
    fn dump_lists_variables_and_blocks() {
        let (p, _) = lyapunov_problem(&DMatrix::from_element(1, 1, 0.5), 2.0, 1.0);
        let text = p.dump();
        assert!(text.starts_with("var 0 W 1 1 symmetric"));
        assert!(text.contains("psd lyapunov 2 2"));
        assert!(text.contains("bound trace var 0"));
    }
}
