//! Command-line workflow: condition checks, design, estimation and the
//! reference simulation.
//!
//! Exit codes: 0 on success, 1 when the data fail the design conditions or
//! the design is infeasible, 2 on I/O, format or usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;
use uie_core::estimator::{run_batch_masked, Estimate, Mask};
use uie_core::realization::DesignOptions;
use uie_core::workflow::{self, CheckReport, DesignKind, NEstChoice};
use uie_core::{Error as CoreError, LtiSystem, UieRealization};

pub mod io;
pub mod mask;

use mask::PeriodicMask;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Usage(String),
    /// Conditions or design failed; the payload is a JSON report.
    #[error("{message}")]
    Infeasible { message: String, report: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible { .. } => 1,
            CliError::Core(CoreError::DesignFailed { .. } | CoreError::NoStabilizingGain(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "uie", version, about = "Data-driven unknown input estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check persistency of excitation and search N_est.
    Check(CheckArgs),
    /// Design an estimator from an input/output dataset.
    Design(DesignArgs),
    /// Run a designed estimator on an output stream.
    Estimate(EstimateArgs),
    /// Reproduce the reference simulation and write error curves.
    ReproSim(ReproArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NEstArg {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for NEstArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(NEstArg::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(NEstArg::Fixed(n)),
            _ => Err(format!("expected 'auto' or a positive integer, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Op,
    Cl,
}

impl From<KindArg> for DesignKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Op => DesignKind::Op,
            KindArg::Cl => DesignKind::Cl,
        }
    }
}

/// Search parameters and tolerances shared by `check` and `design`.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long, default_value_t = workflow::REF_N_INIT)]
    pub n_init: usize,
    /// A positive integer or `auto`.
    #[arg(long, default_value = "auto")]
    pub n_est: NEstArg,
    #[arg(long, default_value_t = workflow::DEFAULT_MAX_N_EST)]
    pub max_n_est: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rank_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub res_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub psd_margin: f64,
    /// Reference model (JSON with A, B, C, D) for lag guidance on N_init.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl RunConfig {
    pub fn options(&self) -> Result<DesignOptions, CliError> {
        if self.n_init == 0 || self.max_n_est == 0 {
            return Err(CliError::Usage("--n-init and --max-n-est must be at least 1".into()));
        }
        let opts = DesignOptions {
            rank_tol: self.rank_tol,
            res_tol: self.res_tol,
            psd_margin: self.psd_margin,
            ..DesignOptions::default()
        };
        opts.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(opts)
    }

    fn choice(&self) -> NEstChoice {
        match self.n_est {
            NEstArg::Auto => NEstChoice::Auto,
            NEstArg::Fixed(n) => NEstChoice::Fixed(n),
        }
    }

    fn load_model(&self) -> Result<Option<LtiSystem>, CliError> {
        self.model
            .as_deref()
            .map(|p| LtiSystem::from_json(&read_text(p)?).map_err(|e| CliError::Format(format!("{}: {e}", p.display()))))
            .transpose()
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Dataset CSV with columns t, u_.., y_..
    pub data: PathBuf,
    #[command(flatten)]
    pub config: RunConfig,
    /// Write the diagnostics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub config: RunConfig,
    #[arg(long, value_enum, default_value = "op")]
    pub kind: KindArg,
    /// Realization JSON output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Design report JSON output path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Realization JSON written by `design`.
    pub realization: PathBuf,
    /// Output stream CSV with columns t, y_.. (u_ columns are ignored).
    pub outputs: PathBuf,
    /// Initial stack, comma separated; zeros when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub z0: Option<String>,
    /// CSV with true inputs (t, u_..) for per-step errors and MAE.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Zero the estimates of masked steps, e.g. `24:20-6`.
    #[arg(long)]
    pub mask: Option<PeriodicMask>,
    /// Estimates CSV output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Feedthrough scale, 0 or 1.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of the fresh evaluation trajectory.
    #[arg(long, default_value_t = workflow::DEFAULT_HORIZON)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub rank_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub psd_margin: f64,
    /// Output directory for error curves and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if let CliError::Infeasible { report, .. } = &e {
                if !report.is_empty() {
                    let _ = writeln!(stdout, "{report}");
                }
            }
            e.exit_code()
        }
    }
}

pub fn run(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Check(a) => cmd_check(&a, stdout),
        Command::Design(a) => cmd_design(&a, stdout, stderr),
        Command::Estimate(a) => cmd_estimate(&a, stdout, stderr),
        Command::ReproSim(a) => cmd_repro_sim(&a, stdout),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => write_text(p, text),
        None => writeln!(stdout, "{text}").map_err(|e| CliError::Io(e.to_string())),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn checked(cfg: &RunConfig, data: &uie_core::IoTrajectory, opts: &DesignOptions) -> Result<CheckReport, CliError> {
    let model = cfg.load_model()?;
    Ok(workflow::check_conditions(
        data,
        cfg.n_init,
        cfg.choice(),
        cfg.max_n_est,
        opts.rank_tol,
        model.as_ref(),
    )?)
}

pub fn cmd_check(a: &CheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let opts = a.config.options()?;
    let data = io::read_dataset(&a.data)?;
    let report = checked(&a.config, &data, &opts)?;
    let text = to_json(&report);
    emit(a.out.as_deref(), &text, stdout)?;
    if !report.pe_ok {
        return Err(CliError::Infeasible {
            message: format!(
                "input is persistently exciting of order {} but {} is required",
                report.pe_order, report.pe_required
            ),
            report: String::new(),
        });
    }
    if report.selected_n_est.is_none() {
        return Err(CliError::Infeasible {
            message: "no candidate N_est passed the null-space inclusion test".into(),
            report: String::new(),
        });
    }
    Ok(())
}

pub fn cmd_design(a: &DesignArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let opts = a.config.options()?;
    let data = io::read_dataset(&a.data)?;
    let check = checked(&a.config, &data, &opts)?;
    if let Some(w) = &check.n_init_warning {
        let _ = writeln!(stderr, "warning: {w}");
    }
    if !check.pe_ok {
        let _ = writeln!(
            stderr,
            "warning: input is persistently exciting of order {} but {} is required",
            check.pe_order, check.pe_required
        );
    }
    let n_est = match (a.config.n_est, check.selected_n_est) {
        (NEstArg::Fixed(n), _) => n,
        (NEstArg::Auto, Some(n)) => n,
        (NEstArg::Auto, None) => {
            return Err(CliError::Infeasible {
                message: format!("no N_est up to {} passed the null-space inclusion test", a.config.max_n_est),
                report: to_json(&check),
            })
        }
    };
    let result = workflow::design_from_data(&data, a.config.n_init, n_est, a.kind.into(), &opts);
    let report = match &result {
        Ok((_, report)) => report.to_json(),
        Err(CoreError::DesignFailed { report, .. }) => report.to_json(),
        Err(_) => String::new(),
    };
    if !report.is_empty() {
        emit(a.report.as_deref(), &report, stdout)?;
    }
    let (real, _) = result?;
    write_text(&a.out, &real.to_json())
}

fn parse_z0(text: &str, dim: usize) -> Result<DVector<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| CliError::Usage(format!("--z0 must be comma separated numbers, got '{text}'")))?;
    if vals.len() != dim {
        return Err(CliError::Usage(format!("--z0 has {} entries, the realization needs {dim}", vals.len())));
    }
    Ok(DVector::from_vec(vals))
}

fn check_consecutive(t: &[usize], path: &Path) -> Result<(), CliError> {
    if t.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(CliError::Format(format!("{}: time steps must be consecutive", path.display())));
    }
    Ok(())
}

pub fn cmd_estimate(a: &EstimateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let real = UieRealization::from_json(&read_text(&a.realization)?)
        .map_err(|e| CliError::Format(format!("{}: {e}", a.realization.display())))?;
    let table = io::read_table(&a.outputs)?;
    check_consecutive(&table.t, &a.outputs)?;
    if table.n_y != real.n_y {
        return Err(CliError::Format(format!(
            "{}: {} output columns, the realization expects {}",
            a.outputs.display(),
            table.n_y,
            real.n_y
        )));
    }
    let z0 = match &a.z0 {
        Some(s) => parse_z0(s, real.z_dim())?,
        None => DVector::zeros(real.z_dim()),
    };
    let t0 = table.t[0];
    let shifted;
    let mask: Option<&Mask<'_>> = match &a.mask {
        Some(m) => {
            shifted = move |i: usize| m.contains(t0 + i);
            Some(&shifted)
        }
        None => None,
    };
    let run = run_batch_masked(&real, &table.y, &z0, mask)?;
    if let Some(w) = run.warning {
        return Err(CliError::Format(format!("{}: {w}", a.outputs.display())));
    }
    let estimates: Vec<Estimate> = run
        .estimates
        .into_iter()
        .map(|e| Estimate {
            t: e.t + t0,
            emitted_at: e.emitted_at + t0,
            ..e
        })
        .collect();
    let truth = match &a.truth {
        Some(p) => {
            let tt = io::read_table(p)?;
            if tt.n_u != real.n_u {
                return Err(CliError::Format(format!(
                    "{}: {} input columns, the realization expects {}",
                    p.display(),
                    tt.n_u,
                    real.n_u
                )));
            }
            Some(tt.t.into_iter().zip(tt.u).collect::<BTreeMap<_, _>>())
        }
        None => None,
    };
    match &a.out {
        Some(p) => io::write_estimates(
            fs::File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
            real.n_u,
            &estimates,
            truth.as_ref(),
        )?,
        None => io::write_estimates(&mut *stdout, real.n_u, &estimates, truth.as_ref())?,
    }
    if let Some(truth) = &truth {
        let abs: Vec<f64> = estimates
            .iter()
            .filter_map(|e| truth.get(&e.t).map(|u| (&e.u_hat - u).abs()))
            .flat_map(|d| d.iter().copied().collect::<Vec<_>>())
            .collect();
        if abs.is_empty() {
            let _ = writeln!(stderr, "MAE: n/a (truth covers no estimated step)");
        } else {
            let _ = writeln!(stderr, "MAE: {}", abs.iter().sum::<f64>() / abs.len() as f64);
        }
    }
    Ok(())
}

pub fn cmd_repro_sim(a: &ReproArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if a.gamma != 0.0 && a.gamma != 1.0 {
        return Err(CliError::Usage(format!("--gamma must be 0 or 1, got {}", a.gamma)));
    }
    let opts = DesignOptions {
        rank_tol: a.rank_tol,
        psd_margin: a.psd_margin,
        ..DesignOptions::default()
    };
    opts.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = match workflow::repro_sim(a.gamma, a.seed, a.horizon, &opts) {
        Ok(s) => s,
        Err(CoreError::Precondition(m)) => {
            return Err(CliError::Infeasible {
                message: m,
                report: String::new(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    fs::create_dir_all(&a.out).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    io::write_error_curve(&a.out.join("op_errors.csv"), &summary.op.errors)?;
    io::write_error_curve(&a.out.join("cl_errors.csv"), &summary.cl.errors)?;
    let text = to_json(&summary);
    write_text(&a.out.join("summary.json"), &text)?;
    if summary.success {
        writeln!(stdout, "{text}").map_err(|e| CliError::Io(e.to_string()))
    } else {
        Err(CliError::Infeasible {
            message: format!("design infeasible for seeds {:?}", summary.seeds_tried),
            report: text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n_est_argument() {
        assert_eq!("auto".parse::<NEstArg>(), Ok(NEstArg::Auto));
        assert_eq!("3".parse::<NEstArg>(), Ok(NEstArg::Fixed(3)));
        assert!("0".parse::<NEstArg>().is_err());
        assert!("x".parse::<NEstArg>().is_err());
    }

    #[test]
    fn z0_parsing() {
        assert_eq!(parse_z0("1, -2.5", 2).unwrap().as_slice(), &[1.0, -2.5]);
        assert!(parse_z0("1,2", 3).is_err());
        assert!(parse_z0("1,a", 2).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Format("x".into()).exit_code(), 2);
        assert_eq!(CliError::Io("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::Infeasible {
                message: String::new(),
                report: String::new()
            }
            .exit_code(),
            1
        );
        assert_eq!(CliError::Core(CoreError::NoStabilizingGain("x".into())).exit_code(), 1);
        assert_eq!(CliError::Core(CoreError::InvalidParameter("x".into())).exit_code(), 2);
    }

    #[test]
    fn config_rejects_bad_tolerances() {
        let cli = Cli::try_parse_from(["uie", "check", "d.csv", "--rank-tol", "0"]).unwrap();
        let Command::Check(a) = cli.command else { panic!() };
        assert!(a.config.options().is_err());
    }
}
