//! Ground-truth LTI systems: simulation, lag, and excitation signals.
//!
//! Design modules never see states; they consume [`IoTrajectory`] values only.
//! The simulator doubles as the reference oracle for data-driven tests.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{numerical_rank, vstack};

/// Default relative rank tolerance for observability checks.
pub const DEFAULT_LAG_RANK_TOL: f64 = 1e-9;

/// `x_{t+1} = A x_t + B u_t`, `y_t = C x_t + D u_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemFile", into = "SystemFile")]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    #[serde(rename = "A", with = "crate::serde_matrix")]
    a: DMatrix<f64>,
    #[serde(rename = "B", with = "crate::serde_matrix")]
    b: DMatrix<f64>,
    #[serde(rename = "C", with = "crate::serde_matrix")]
    c: DMatrix<f64>,
    #[serde(rename = "D", with = "crate::serde_matrix")]
    d: DMatrix<f64>,
}

impl TryFrom<SystemFile> for LtiSystem {
    type Error = Error;
    fn try_from(f: SystemFile) -> Result<Self> {
        LtiSystem::new(f.a, f.b, f.c, f.d)
    }
}

impl From<LtiSystem> for SystemFile {
    fn from(s: LtiSystem) -> Self {
        SystemFile {
            a: s.a,
            b: s.b,
            c: s.c,
            d: s.d,
        }
    }
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n_x = a.nrows();
        if n_x == 0 {
            return Err(Error::InvalidParameter("state dimension must be at least 1".into()));
        }
        check_dim("A columns", n_x, a.ncols())?;
        check_dim("B rows", n_x, b.nrows())?;
        check_dim("C columns", n_x, c.ncols())?;
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidParameter("need at least one input and one output".into()));
        }
        check_dim("D rows", c.nrows(), d.nrows())?;
        check_dim("D columns", b.ncols(), d.ncols())?;
        Ok(Self { a, b, c, d })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system serializes")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Runs the system from `x0` under the given input sequence.
    pub fn simulate(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<IoTrajectory> {
        check_dim("initial state", self.n_x(), x0.len())?;
        let mut x = x0.clone();
        let mut outputs = Vec::with_capacity(inputs.len());
        for u in inputs {
            check_dim("input sample", self.n_u(), u.len())?;
            outputs.push(&self.c * &x + &self.d * u);
            x = &self.a * &x + &self.b * u;
        }
        IoTrajectory::new(inputs.to_vec(), outputs)
    }

    /// Runs the system under state feedback plus excitation, `u_t = K x_t + w_t`.
    ///
    /// The recorded inputs are the applied `u_t`, so the result is an ordinary
    /// trajectory of the plant. Used to collect bounded data from unstable plants.
    pub fn simulate_with_feedback(
        &self,
        gain: &DMatrix<f64>,
        x0: &DVector<f64>,
        excitation: &[DVector<f64>],
    ) -> Result<IoTrajectory> {
        check_dim("feedback gain rows", self.n_u(), gain.nrows())?;
        check_dim("feedback gain columns", self.n_x(), gain.ncols())?;
        check_dim("initial state", self.n_x(), x0.len())?;
        let mut x = x0.clone();
        let mut inputs = Vec::with_capacity(excitation.len());
        let mut outputs = Vec::with_capacity(excitation.len());
        for w in excitation {
            check_dim("excitation sample", self.n_u(), w.len())?;
            let u = gain * &x + w;
            outputs.push(&self.c * &x + &self.d * &u);
            x = &self.a * &x + &self.b * &u;
            inputs.push(u);
        }
        IoTrajectory::new(inputs, outputs)
    }

    /// `O_l = [C; CA; ...; CA^{l-1}]`.
    pub fn observability_matrix(&self, depth: usize) -> DMatrix<f64> {
        let mut blocks = Vec::with_capacity(depth);
        let mut ca = self.c.clone();
        for _ in 0..depth {
            blocks.push(ca.clone());
            ca = &ca * &self.a;
        }
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        vstack(&refs)
    }

    /// Smallest depth whose observability matrix has rank `n_x`.
    pub fn lag(&self, rank_tol: f64) -> Result<usize> {
        if !(rank_tol > 0.0) {
            return Err(Error::InvalidParameter("rank_tol must be positive".into()));
        }
        let n_x = self.n_x();
        let mut rank = 0;
        for depth in 1..=n_x {
            rank = numerical_rank(&self.observability_matrix(depth), rank_tol);
            if rank == n_x {
                return Ok(depth);
            }
        }
        Err(Error::Unobservable { rank, n_x })
    }

    /// Discrete-time LQR gain `K` (for `u = K x`) by Riccati iteration.
    pub fn lqr_gain(&self, state_weight: f64, input_weight: f64) -> Result<DMatrix<f64>> {
        if !(state_weight > 0.0 && input_weight > 0.0) {
            return Err(Error::InvalidParameter("LQR weights must be positive".into()));
        }
        let q = DMatrix::<f64>::identity(self.n_x(), self.n_x()) * state_weight;
        let r = DMatrix::<f64>::identity(self.n_u(), self.n_u()) * input_weight;
        let (a, b) = (&self.a, &self.b);
        let mut p = q.clone();
        for _ in 0..100_000 {
            let btp = b.transpose() * &p;
            let gram = &r + &btp * b;
            let k = gram
                .clone()
                .lu()
                .solve(&(&btp * a))
                .ok_or_else(|| Error::Numerical("singular Riccati gram matrix".into()))?;
            let next = &q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
            let next = (&next + next.transpose()) * 0.5;
            let delta = (&next - &p).amax();
            p = next;
            if !p.iter().all(|v| v.is_finite()) {
                break;
            }
            if delta <= 1e-12 * p.amax().max(1.0) {
                return Ok(-k);
            }
        }
        Err(Error::Numerical("Riccati iteration did not converge (unstabilizable pair?)".into()))
    }
}

/// Time-aligned input and output samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IoTrajectory {
    inputs: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
}

impl IoTrajectory {
    pub fn new(inputs: Vec<DVector<f64>>, outputs: Vec<DVector<f64>>) -> Result<Self> {
        check_dim("trajectory length", inputs.len(), outputs.len())?;
        if inputs.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        for (name, seq) in [("input", &inputs), ("output", &outputs)] {
            let n = seq[0].len();
            if n == 0 {
                return Err(Error::InvalidParameter(format!("{name} dimension must be at least 1")));
            }
            for s in seq.iter() {
                check_dim(&format!("{name} sample"), n, s.len())?;
            }
        }
        Ok(Self { inputs, outputs })
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }
    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }
    pub fn len(&self) -> usize {
        self.inputs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }
    pub fn n_y(&self) -> usize {
        self.outputs[0].len()
    }

    /// Samples `[start, start + len)` as a new trajectory.
    pub fn window(&self, start: usize, len: usize) -> Result<IoTrajectory> {
        if start + len > self.len() || len == 0 {
            return Err(Error::InsufficientData {
                needed: start + len.max(1),
                got: self.len(),
            });
        }
        IoTrajectory::new(
            self.inputs[start..start + len].to_vec(),
            self.outputs[start..start + len].to_vec(),
        )
    }

    /// Adds i.i.d. Gaussian noise of standard deviation `sigma` to the outputs.
    pub fn with_output_noise(&self, sigma: f64, seed: u64) -> IoTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outputs = self
            .outputs
            .iter()
            .map(|y| y.map(|v| v + sigma * standard_normal(&mut rng)))
            .collect();
        IoTrajectory {
            inputs: self.inputs.clone(),
            outputs,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let unit = Uniform::new(f64::EPSILON, 1.0).expect("valid range");
    let (u1, u2) = (unit.sample(rng), unit.sample(rng));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// i.i.d. inputs uniform on `[-scale, scale]`, reproducible from `seed`
/// (ChaCha8 stream seeded with `seed_from_u64`).
pub fn random_excitation(len: usize, n_u: usize, seed: u64, scale: f64) -> Result<Vec<DVector<f64>>> {
    if len == 0 || n_u == 0 {
        return Err(Error::InvalidParameter("length and input dimension must be positive".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("excitation scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-scale, scale).expect("valid range");
    Ok((0..len)
        .map(|_| DVector::from_fn(n_u, |_, _| dist.sample(&mut rng)))
        .collect())
}
