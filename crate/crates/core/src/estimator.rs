//! Runtime execution of a UIE realization over an output stream.
//!
//! Outputs are pushed as `y_0, y_1, ...`. Once the window holds the last
//! `N_init + N_est` outputs (after pushing `y_k`), the estimator emits
//! `u_hat_t` for `t = k - N_est` from the current stack `z` and then advances
//! `z <- A_uie z + B_uie d`. The first estimate targets `t = N_init - 1`, and
//! slot `i` of `z` always holds the estimate for time `t - N_init + 1 + i`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::realization::UieRealization;

/// An input estimate labelled with the time step it reconstructs.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    /// Target time step.
    pub t: usize,
    /// Time step of the newest output used, `t + N_est`.
    pub emitted_at: usize,
    pub u_hat: DVector<f64>,
}

/// Mask predicate: `true` forces the estimate for that time step to zero.
pub type Mask<'a> = dyn Fn(usize) -> bool + 'a;

#[derive(Debug, Clone)]
pub struct EstimatorState {
    real: UieRealization,
    z: DVector<f64>,
    window: VecDeque<DVector<f64>>,
    /// Number of outputs pushed so far.
    pushed: usize,
}

impl EstimatorState {
    pub fn init(real: &UieRealization, z0: &DVector<f64>) -> Result<Self> {
        check_dim("z0", real.z_dim(), z0.len())?;
        Ok(Self {
            real: real.clone(),
            z: z0.clone(),
            window: VecDeque::with_capacity(real.n_init + real.n_est),
            pushed: 0,
        })
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn is_warm(&self) -> bool {
        self.window.len() == self.real.n_init + self.real.n_est
    }

    pub fn push_output(&mut self, y: &DVector<f64>) -> Result<Option<Estimate>> {
        self.push_masked(y, None)
    }

    /// Like [`push_output`](Self::push_output), but zeroes the stacked
    /// estimates of masked time steps before emitting and updating.
    pub fn push_output_masked(&mut self, y: &DVector<f64>, mask: &Mask<'_>) -> Result<Option<Estimate>> {
        self.push_masked(y, Some(mask))
    }

    fn push_masked(&mut self, y: &DVector<f64>, mask: Option<&Mask<'_>>) -> Result<Option<Estimate>> {
        check_dim("output sample", self.real.n_y, y.len())?;
        let depth = self.real.n_init + self.real.n_est;
        if self.window.len() == depth {
            self.window.pop_front();
        }
        self.window.push_back(y.clone());
        let k = self.pushed;
        self.pushed += 1;
        if self.window.len() < depth {
            return Ok(None);
        }
        let t = k - self.real.n_est;
        let n_u = self.real.n_u;
        if let Some(mask) = mask {
            let first = t + 1 - self.real.n_init;
            for i in 0..self.real.n_init {
                if mask(first + i) {
                    self.z.rows_mut(i * n_u, n_u).fill(0.0);
                }
            }
        }
        let u_hat = self.z.rows(self.z.len() - n_u, n_u).clone_owned();
        let d = DVector::from_iterator(
            self.real.d_dim(),
            self.window.iter().flat_map(|v| v.iter().copied()),
        );
        self.z = &self.real.a_uie * &self.z + &self.real.b_uie * d;
        Ok(Some(Estimate {
            t,
            emitted_at: k,
            u_hat,
        }))
    }
}

/// Result of [`run_batch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRun {
    pub estimates: Vec<Estimate>,
    /// Set when the stream was too short to produce any estimate.
    pub warning: Option<String>,
}

pub fn run_batch(real: &UieRealization, outputs: &[DVector<f64>], z0: &DVector<f64>) -> Result<BatchRun> {
    run_batch_masked(real, outputs, z0, None)
}

pub fn run_batch_masked(
    real: &UieRealization,
    outputs: &[DVector<f64>],
    z0: &DVector<f64>,
    mask: Option<&Mask<'_>>,
) -> Result<BatchRun> {
    let mut state = EstimatorState::init(real, z0)?;
    let mut estimates = Vec::new();
    for y in outputs {
        if let Some(e) = state.push_masked(y, mask)? {
            estimates.push(e);
        }
    }
    let needed = real.n_init + real.n_est;
    let warning = (outputs.len() < needed)
        .then(|| format!("stream has {} outputs; at least {needed} are needed for one estimate", outputs.len()));
    Ok(BatchRun { estimates, warning })
}

/// Infinity-norm error of each estimate against the true inputs.
pub fn estimate_errors(estimates: &[Estimate], truth: &[DVector<f64>]) -> Vec<(usize, f64)> {
    estimates
        .iter()
        .filter(|e| e.t < truth.len())
        .map(|e| (e.t, (&e.u_hat - &truth[e.t]).amax()))
        .collect()
}

/// Mean absolute error over all estimated entries with known truth.
pub fn mean_absolute_error(estimates: &[Estimate], truth: &[DVector<f64>]) -> Option<f64> {
    let (sum, count) = estimates
        .iter()
        .filter(|e| e.t < truth.len())
        .flat_map(|e| (&e.u_hat - &truth[e.t]).iter().map(|v| v.abs()).collect::<Vec<_>>())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// `[0 I] A^steps delta`: propagated effect of an initial-stack difference.
pub fn propagated_difference(a_uie: &DMatrix<f64>, n_u: usize, delta: &DVector<f64>, steps: usize) -> DVector<f64> {
    let mut v = delta.clone();
    for _ in 0..steps {
        v = a_uie * v;
    }
    v.rows(v.len() - n_u, n_u).clone_owned()
}
