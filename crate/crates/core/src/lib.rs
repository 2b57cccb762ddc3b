//! Data-driven unknown input estimators (UIEs) for discrete-time LTI systems.
//!
//! Estimators are synthesized directly from an offline input/output record
//! through block Hankel matrices, without identifying a state-space model.
//! Two designs are provided:
//!
//! * [`op_uie`]: open-loop estimators, stabilized by choosing a generalized
//!   inverse of the data matrix through an LMI feasibility problem.
//! * [`cl_uie`]: closed-loop estimators that correct the whole stacked input
//!   estimate with a Luenberger-type output innovation gain.
//!
//! Both produce a [`UieRealization`] that the runtime [`estimator`] executes on
//! output-only streams.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cl_uie;
pub mod error;
pub mod estimator;
pub mod gen_inverse;
pub mod hankel;
pub mod linalg;
pub mod lti;
pub mod op_uie;
pub mod realization;
pub mod sdp;
pub mod serde_matrix;
pub mod workflow;

pub use error::{Error, Result};
pub use hankel::HankelDesignStack;
pub use lti::{IoTrajectory, LtiSystem};
pub use realization::{DesignReport, SolverStatus, UieKind, UieRealization};
